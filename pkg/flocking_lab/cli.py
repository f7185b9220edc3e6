"""
フロッキングラボのシナリオランナー

使用方法:
  uv run flocking-lab run --config scenarios/cs1d_subcritical.json
  uv run flocking-lab bisect --config scenarios/cs1d_bisect.json --threads 4
  uv run flocking-lab scan --config scenarios/cs2d_scan.json --out runs/scan
  uv run flocking-lab report --out runs/cs1d_subcritical
  uv run flocking-lab agents --config scenarios/cs1d_subcritical.json

終了コード: 0 成功、1 設定エラー、2 ブラケットエラー、3 数値的な失敗
"""

import argparse
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from flocking_lab import flockdiag, hydro1d, hydro2d, microdyn
from flocking_lab.config import (
    EXIT_BRACKET_ERROR,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    LOG_FORMAT,
)
from flocking_lab.exceptions import BracketError, ConfigError, FlockingLabError
from flocking_lab.kernels import Model, flock_geometry
from flocking_lab.records import write_csv_rows
from flocking_lab.runconfig import RunConfig, load_config, save_config
from flocking_lab.verdict import RunOutcome, ThresholdVerdict

logger = logging.getLogger(__name__)

SCAN_COLUMNS = ("p1", "p2", "verdict", "outcome", "t_blow")
BISECT_RUN_COLUMNS = ("a", "outcome", "t_blow")
QUANTITIES_1D = ("V",)
QUANTITIES_2D = ("V", "max_eta_S", "max_abs_omega", "max_abs_div")
DEFAULT_AGENT_DT = 0.01


@dataclass
class Simulation:
    verdict: ThresholdVerdict
    outcome: RunOutcome
    result: hydro1d.Run1D | hydro2d.Run2D
    kappa: float


def main(argv: list[str] | None = None) -> int:
    """CLI エントリーポイント（終了コードを返す）"""
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler()],
        force=True,
    )
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except BracketError as e:
        logger.error(f"❌ Bracket error: {e}")
        return EXIT_BRACKET_ERROR
    except FlockingLabError as e:
        logger.error(f"❌ Numerical failure: {type(e).__name__}: {e}")
        return EXIT_NUMERICAL_FAILURE


def cmd_run(args: argparse.Namespace) -> int:
    """初期状態を作り、判定を出力し、対応するソルバーを実行して成果物を書き出す"""
    config = _load(args)
    out = _out_dir(args, config)
    logger.info(f"🚀 Running {config.model} {config.dim}D scenario into {out}")
    save_config(out / "config.json", config)

    sim = simulate(config)
    _write_verdict(out / "verdict.json", sim.verdict, sim.outcome, sim.kappa)
    sim.result.table.write_csv(out / "diagnostics.csv")
    _write_states(out, config, sim.result)
    rows = _summarize(sim.result.table, sim.kappa, QUANTITIES_1D if config.dim == 1 else QUANTITIES_2D)
    flockdiag.write_rate_summary(out / "summary.csv", rows)

    print(f"verdict: {sim.verdict.verdict} (divergence margin {sim.verdict.divergence_margin:.6g})")
    print(f"outcome: {sim.outcome}")
    logger.info(f"✅ Artifacts written to {out}")
    return EXIT_OK


def cmd_bisect(args: argparse.Namespace) -> int:
    """1D の振幅族 u₀ = −a·s で経験的な臨界振幅 a* を求め、解析値 a_c と比較"""
    config = _load(args)
    if config.dim != 1 or config.bisect is None:
        raise ConfigError("bisect needs a 1D config with a 'bisect' section")
    out = _out_dir(args, config)
    save_config(out / "config.json", config)

    density, velocity, kernel = config.build_density(), config.build_velocity(), config.build_kernel()

    def family(a: float) -> hydro1d.ParticleState1D:
        return hydro1d.from_profiles(density, velocity.scaled(a), config.particles, config.model, kernel)

    spec = config.bisect
    result = hydro1d.bisect_threshold(
        family,
        spec.a_lo,
        spec.a_hi,
        spec.tol,
        config.time.t_end,
        threads=args.threads,
        dt_max=config.dt_max,
        eps_blow=config.thresholds.eps_blow,
    )
    a_c = hydro1d.critical_amplitude(density, velocity.scaled(1.0), kernel, model=config.model)
    gap = abs(result.a_star - a_c) / a_c if math.isfinite(a_c) and a_c > 0 else None
    report = {
        "a_star": result.a_star,
        "a_lo": result.a_lo,
        "a_hi": result.a_hi,
        "iterations": result.iterations,
        "a_c": a_c if math.isfinite(a_c) else None,
        "relative_gap": gap,
    }
    with (out / "bisect.json").open("w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    write_csv_rows(
        out / "bisect_runs.csv",
        ({"a": a, "outcome": o.kind.value, "t_blow": o.t_blow} for a, o in result.runs),
        BISECT_RUN_COLUMNS,
    )
    gap_text = "n/a" if gap is None else f"{gap:.3%}"
    print(f"a_star: {result.a_star:.6g}  a_c: {a_c:.6g}  relative gap: {gap_text}")
    logger.info(f"✅ Bisection finished after {result.iterations} runs")
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    """パラメータ格子の各点で判定と実行結果を求め、相図 CSV を書き出す"""
    config = _load(args)
    if config.scan is None:
        raise ConfigError("scan needs a 'scan' section with at least 'p1'")
    out = _out_dir(args, config)
    save_config(out / "config.json", config)

    p1, p2 = config.scan.p1, config.scan.p2
    values2 = p2.values if p2 is not None else (None,)
    points = list(itertools.product(p1.values, values2))
    # 全点の設定を先に検証してから並列実行
    configs = []
    for v1, v2 in points:
        point = config.with_override(p1.path, v1)
        if p2 is not None:
            point = point.with_override(p2.path, v2)
        configs.append(point)

    logger.info(f"🚀 Scanning {len(points)} points with {args.threads} threads")
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(simulate, configs))

    rows = (
        {
            "p1": v1,
            "p2": v2,
            "verdict": sim.verdict.verdict.value,
            "outcome": sim.outcome.kind.value,
            "t_blow": sim.outcome.t_blow,
        }
        for (v1, v2), sim in zip(points, results)
    )
    path = write_csv_rows(out / "scan.csv", rows, SCAN_COLUMNS)
    logger.info(f"✅ Scan written to {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """実行ディレクトリの diagnostics.csv と verdict.json から summary.csv を書き直す"""
    out = Path(args.out) if args.out else _load(args).out_dir
    diagnostics = out / "diagnostics.csv"
    if not diagnostics.exists():
        raise ConfigError(f"No diagnostics.csv in {out}")
    kappa = 0.0
    verdict_path = out / "verdict.json"
    if verdict_path.exists():
        with verdict_path.open(encoding="utf-8") as f:
            kappa = json.load(f).get("kappa") or 0.0
    series = flockdiag.read_diagnostics_csv(diagnostics)
    quantities = [q for q in QUANTITIES_2D if q in series]
    rows = flockdiag.rate_summary(series, kappa, quantities)
    flockdiag.write_rate_summary(out / "summary.csv", rows)
    for row in rows:
        rate = "n/a" if row.fitted_rate is None else f"{row.fitted_rate:.4g}"
        print(f"{row.quantity}: {rate} (kappa {row.bound_kappa:.4g})")
    return EXIT_OK


def cmd_agents(args: argparse.Namespace) -> int:
    """設定の初期データから単一速度閉包でエージェントを標本化して実行"""
    config = _load(args)
    if config.particles is None:
        raise ConfigError("agents needs 'particles' in the config")
    out = _out_dir(args, config)
    save_config(out / "config.json", config)

    kernel = config.build_kernel()
    ensemble = microdyn.sample_from_macro(
        config.build_density(), config.build_velocity(), config.particles, config.seed, config.model, kernel
    )
    dt = config.time.dt or DEFAULT_AGENT_DT
    every = max(1, round((config.time.output_interval or dt) / dt))
    result = microdyn.run(ensemble, config.time.t_end, dt, record_every=every)
    result.table.write_csv(out / "diagnostics.csv")
    if config.outputs.csv:
        microdyn.write_trajectory_csv(out / "trajectory.csv", result.snapshots)

    D0, V0 = microdyn.diameters(ensemble)
    kappa = _kappa(kernel, config.model, ensemble.mass, D0, V0)
    flockdiag.write_rate_summary(out / "summary.csv", _summarize(result.table, kappa, ("V",)))
    print(f"agents: {ensemble.size}, final V: {result.table.last()['V']:.6g}")
    return EXIT_OK


def simulate(config: RunConfig) -> Simulation:
    """設定に対応するソルバーで判定と実行を行う（成果物は書かない）"""
    kernel = config.build_kernel()
    density, velocity = config.build_density(), config.build_velocity()
    if config.dim == 1:
        state0 = hydro1d.from_profiles(density, velocity, config.particles, config.model, kernel)
        verdict = hydro1d.classify_threshold_1d(state0)
        result = hydro1d.run(
            state0,
            config.time.t_end,
            dt_max=config.dt_max,
            eps_blow=config.thresholds.eps_blow,
            output_interval=config.time.output_interval,
        )
    else:
        grid = hydro2d.Grid(config.L, config.n)
        state0 = hydro2d.from_profiles(density, velocity, grid, config.model, kernel, config.thresholds.rho_tol)
        verdict = hydro2d.threshold_report(state0)
        result = hydro2d.run(
            state0,
            config.time.t_end,
            cfl=config.time.cfl,
            dt_max=config.dt_max,
            output_interval=config.time.output_interval,
            grad_cap=config.thresholds.grad_cap,
            eps_blow=config.thresholds.eps_blow,
        )
    kappa = verdict.geometry.kappa(config.model) if verdict.geometry is not None else 0.0
    return Simulation(verdict, result.outcome, result, kappa)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Scenario JSON file")
    common.add_argument("--out", type=Path, help="Output directory (overrides outputs.dir)")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    common.add_argument("--threads", type=int, default=2, help="Parallel runs for bisect and scan")

    parser = argparse.ArgumentParser(description="Euler alignment flocking lab")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, handler, text in (
        ("run", cmd_run, "Run one scenario and write its artifacts"),
        ("bisect", cmd_bisect, "Bisect the critical amplitude of a 1D family"),
        ("scan", cmd_scan, "Scan a parameter grid into a phase-diagram CSV"),
        ("report", cmd_report, "Rewrite summary.csv for a run directory"),
        ("agents", cmd_agents, "Run the agent-based model sampled from the scenario"),
    ):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.set_defaults(handler=handler)
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return load_config(args.config)


def _out_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    out = Path(args.out) if args.out else config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_verdict(path: Path, verdict: ThresholdVerdict, outcome: RunOutcome, kappa: float) -> None:
    data = verdict.to_dict()
    data["kappa"] = kappa
    data["outcome"] = {"kind": outcome.kind.value, "t_blow": outcome.t_blow, "reason": outcome.reason}
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def _write_states(out: Path, config: RunConfig, result) -> None:
    if config.dim == 1:
        if config.outputs.csv:
            for k, state in enumerate(result.snapshots):
                hydro1d.write_snapshot_csv(out / "snapshots" / f"snapshot_{k:04d}.csv", state)
    elif config.outputs.checkpoints:
        for k, state in enumerate(result.snapshots):
            hydro2d.write_checkpoint(out / "checkpoints" / f"checkpoint_{k:04d}.flck", state)


def _summarize(table, kappa: float, quantities) -> list[flockdiag.RateRow]:
    series = {name: flockdiag.TimeSeries(table.column("t"), table.column(name), name) for name in quantities}
    return flockdiag.rate_summary(series, kappa, quantities)


def _kappa(kernel, model: Model, m0: float, D0: float, V0: float) -> float:
    try:
        return flock_geometry(kernel, m0, D0, V0).kappa(model)
    except FlockingLabError as e:
        logger.warning(f"⚠️ No decay rate bound: {e}")
        return 0.0


if __name__ == "__main__":
    raise SystemExit(main())
