"""
1D オイラー整列系のラグランジュ粒子ソルバー

粒子は質量を運ぶので連続の式は厳密で、密度格子は存在しません。
各粒子は速度勾配 d_i = ∂ₓu(x_i) を特性線に沿った厳密な勾配方程式で運びます:

- CS: u̇ = φ*(ρu) − u·h、ḋ = −d² − h·d + R、R = φ'*(ρu) − u·φ'*ρ
- MT: u̇ = φ*(ρu)/h − u、ḋ = −d² − d + r、r = ∂ₓ(φ*(ρu)/h)

ここで h = φ*ρ（自己項 m_i φ(0) を含む）。畳み込みはすべて φ と φ' の粒子和です。
CS では e = d + h が e' = e(h − e) を厳密に満たします。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from flocking_lab.config import DT_MAX_1D, DT_MIN, EPS_BLOW, RHO_FLOOR_FACTOR, STEP_THETA
from flocking_lab.exceptions import BracketError, DomainError, NoFiniteFlockDiameter, VacuumDivision
from flocking_lab.integrators import rk4_step
from flocking_lab.kernels import InfluenceKernel, Model, check_variation_bound, flock_geometry
from flocking_lab.profiles import DensityProfile, VelocityProfile, quantile_midpoints
from flocking_lab.records import SeriesTable, write_csv_rows
from flocking_lab.verdict import RunOutcome, ThresholdVerdict

logger = logging.getLogger(__name__)

RUN_COLUMNS = ("t", "V", "D", "min_e", "min_d", "mass", "momentum")
SNAPSHOT_COLUMNS = ("i", "x", "u", "m", "d")

# 特性レートの下限（dt の上限は dt_max が決める）
_RATE_FLOOR = 1e-3


@dataclass(frozen=True)
class ParticleState1D:
    x: np.ndarray
    u: np.ndarray
    m: np.ndarray
    d: np.ndarray
    model: Model
    kernel: InfluenceKernel
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        arrays = {name: np.broadcast_to(np.asarray(getattr(self, name), dtype=float), x.shape).copy()
                  for name in ("u", "m", "d")}
        if x.ndim != 1 or len(x) == 0:
            raise DomainError("Particle positions must be a non-empty 1D array")
        if np.any(np.diff(x) <= 0):
            raise DomainError("Particle positions must be strictly increasing")
        if np.any(arrays["m"] <= 0):
            raise DomainError("Particle masses must be positive")
        object.__setattr__(self, "x", x)
        for name, value in arrays.items():
            object.__setattr__(self, name, value)
        object.__setattr__(self, "model", Model(self.model))

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def mass(self) -> float:
        return float(self.m.sum())

    @property
    def momentum(self) -> float:
        return float(self.m @ self.u)


@dataclass
class Run1D:
    table: SeriesTable
    outcome: RunOutcome
    final: ParticleState1D
    snapshots: list[ParticleState1D] = field(default_factory=list)


@dataclass(frozen=True)
class BisectionResult:
    a_star: float
    a_lo: float
    a_hi: float
    iterations: int
    runs: tuple[tuple[float, RunOutcome], ...]


def from_profiles(
    density: DensityProfile,
    velocity: VelocityProfile,
    N: int,
    model: Model,
    kernel: InfluenceKernel,
) -> ParticleState1D:
    """等質量の分位点中点に粒子を置き、d_i = u₀'(x_i) を解析的に与える"""
    x = quantile_midpoints(density, N)
    return ParticleState1D(x, velocity.value_1d(x), density.mass / N, velocity.deriv_1d(x), model, kernel)


def conv_density(state: ParticleState1D, x) -> np.ndarray | float:
    """(φ*ρ)(x) = Σ_j m_j φ(|x − x_j|)"""
    points = np.atleast_1d(np.asarray(x, dtype=float))
    values = state.kernel.eval(np.abs(points[:, None] - state.x[None, :])) @ state.m
    return float(values[0]) if np.ndim(x) == 0 else values


def rhs(state: ParticleState1D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (ẋ, u̇, ḋ) を返す

    Raises:
        VacuumDivision: MT で φ*ρ が下限以下
    """
    return _rhs_arrays(state.x, state.u, state.d, state.m, state.model, state.kernel)


def e_series(state: ParticleState1D) -> np.ndarray:
    """e_i = d_i + (φ*ρ)(x_i)（CS）または d_i + 1（MT）"""
    if state.model is Model.MT:
        return state.d + 1.0
    return state.d + conv_density(state, state.x)


def velocity_at(state: ParticleState1D, x) -> np.ndarray:
    """粒子間の区分線形（単調）補間。端の外側は端の値で一定"""
    return np.interp(x, state.x, state.u)


def classify_threshold_1d(state0: ParticleState1D) -> ThresholdVerdict:
    """
    1D の臨界閾値を判定

    CS: min_i (d_i + φ*ρ(x_i)) ≥ 0 が必要十分（鋭い閾値）。
    MT: min_i d_i ≥ −1 かつ V0 < m0·min{|φ|₁, φ∞/(4|φ'|∞)}。厳密な1D法則
    e' = e(1 − e) + r が {e ≥ 0} を保つかの参考値として min e₀ − e₋(r_max) も記録します。
    """
    m0 = state0.mass
    D0 = float(state0.x[-1] - state0.x[0])
    V0 = float(state0.u.max() - state0.u.min())
    e0 = e_series(state0)
    i_min = int(np.argmin(e0))
    location = (float(state0.x[i_min]),)

    if state0.model is Model.CS:
        geometry = _geometry_or_none(state0.kernel, m0, D0, V0)
        return ThresholdVerdict.classify(
            Model.CS, float(e0[i_min]), 0.0, math.inf, math.inf, True, location, geometry=geometry
        )

    notes: list[str] = []
    try:
        bound = check_variation_bound(state0.kernel, Model.MT, m0, D0, V0, one_dimensional=True)
        slack, holds = bound.margin, bound.holds
        geometry = flock_geometry(state0.kernel, m0, D0, V0)
        if bound.phi_inf > 0:
            r_max = bound.dphi_max * V0 / bound.phi_inf
            e_minus = 0.5 * (1.0 - math.sqrt(max(1.0 - 4.0 * r_max, 0.0)))
            notes.append(f"strict_margin={float(e0.min()) - e_minus:.6g}")
    except NoFiniteFlockDiameter as e:
        slack, holds, geometry = -math.inf, False, None
        notes.append(str(e))
    return ThresholdVerdict.classify(
        Model.MT, float(e0[i_min]), 0.0, math.inf, slack, holds, location, geometry=geometry, notes=tuple(notes)
    )


def run(
    state0: ParticleState1D,
    t_end: float,
    dt_max: float = DT_MAX_1D,
    eps_blow: float = EPS_BLOW,
    theta: float = STEP_THETA,
    output_interval: float | None = None,
) -> Run1D:
    """
    適応 RK4 で t_end まで進める

    dt = min(dt_max, θ / max(max|d|, max h))。次のいずれかでブローアップと判定し積分を止めます:
    min d < −1/eps_blow、粒子の順序の崩壊、θ / レート < DT_MIN、非有限値。
    出力時刻と t_end から DT_MIN·max(1, |t_end|) 以内に着地するステップはその時刻に揃えます。
    """
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    m, model, kernel = state0.m, state0.model, state0.kernel
    table = SeriesTable(RUN_COLUMNS)
    snapshots = [state0]
    next_output = state0.t + output_interval if output_interval else math.inf
    snap = DT_MIN * max(1.0, abs(t_end))

    def packed_rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return np.stack(_rhs_arrays(y[0], y[1], y[2], m, model, kernel))

    t = state0.t
    y = np.stack([state0.x, state0.u, state0.d])
    _record_1d(table, t, y, m, model, kernel)
    outcome = RunOutcome.completed()

    while t_end - t > snap:
        h_max = float(_conv(y[0], y[0], m, kernel).max())
        rate = max(float(np.abs(y[2]).max()), h_max, _RATE_FLOOR)
        if theta / rate < DT_MIN:
            outcome = RunOutcome.blew_up(t, "step size collapse")
            break
        stop = min(t_end, next_output)
        target = t + min(dt_max, theta / rate)
        if target >= stop - snap:
            target = stop
        dt = target - t
        try:
            y_new = rk4_step(y, t, dt, packed_rhs)
        except VacuumDivision:
            outcome = RunOutcome.blew_up(t, "vacuum division")
            break

        reason = _blowup_reason(y_new, eps_blow)
        if reason:
            outcome = RunOutcome.blew_up(target, reason)
            break
        t, y = target, y_new
        _record_1d(table, t, y, m, model, kernel)
        if t >= next_output - snap:
            snapshots.append(replace(state0, x=y[0], u=y[1], d=y[2], t=t))
            next_output += output_interval

    if outcome.is_blowup:
        logger.info(f"⚠️ 1D run stopped: {outcome}")
    # ブローアップ時は最後の正常な状態
    final = replace(state0, x=y[0], u=y[1], d=y[2], t=t)
    return Run1D(table, outcome, final, snapshots)


def critical_amplitude(
    density: DensityProfile,
    shape: VelocityProfile,
    kernel: InfluenceKernel,
    resolution: int = 2001,
    model: Model = Model.CS,
) -> float:
    """
    族 u₀ = −a·s(x) の解析的な臨界振幅

    CS: a_c = min_{s'>0} (φ*ρ₀)/s'（min(u₀' + φ*ρ₀) = 0 となる振幅）
    MT: a_c = 1 / max s'（min u₀' = −1 となる振幅）

    shape は振幅 1 の速度プロファイル（u = −s）。φ*ρ₀ は台の上の密な台形則で
    粒子ソルバーとは独立に計算します。
    """
    c, radius = density.center[0], density.support_radius
    grid = np.linspace(c - radius, c + radius, resolution)
    rho = density(grid)
    weights = np.full(resolution, grid[1] - grid[0])
    weights[[0, -1]] *= 0.5
    slope = -shape.deriv_1d(grid)

    inside = (rho > 0) & (slope > 0)
    if not np.any(inside):
        return math.inf
    if Model(model) is Model.MT:
        return float(1.0 / slope[inside].max())
    points = grid[inside]
    h = np.empty(len(points))
    for start in range(0, len(points), 256):
        block = points[start:start + 256]
        h[start:start + 256] = kernel.eval(np.abs(block[:, None] - grid[None, :])) @ (weights * rho)
    return float(np.min(h / slope[inside]))


def bisect_threshold(
    family: Callable[[float], ParticleState1D],
    a_lo: float,
    a_hi: float,
    tol: float,
    t_end: float,
    threads: int = 2,
    **run_options,
) -> BisectionResult:
    """
    振幅 a の二分法で経験的な臨界振幅 a* を求める

    ブラケットの両端は並列に実行します。最終ブラケットの中点を返すので、
    tol を半分にしても a* は前回の tol 以内しか動きません。

    Raises:
        BracketError: run(a_lo) が Completed でない、または run(a_hi) が BlewUp でない
    """
    if not tol > 0:
        raise DomainError(f"Bisection tolerance must be positive, got {tol}")

    def outcome_of(a: float) -> RunOutcome:
        return run(family(a), t_end, **run_options).outcome

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        lo_outcome, hi_outcome = pool.map(outcome_of, [a_lo, a_hi])
    runs = [(a_lo, lo_outcome), (a_hi, hi_outcome)]
    if lo_outcome.is_blowup or not hi_outcome.is_blowup:
        raise BracketError(f"Invalid bracket: run({a_lo}) -> {lo_outcome}, run({a_hi}) -> {hi_outcome}")

    logger.info(f"🚀 Bisecting amplitude in [{a_lo}, {a_hi}] to tol={tol}")
    iterations = 0
    while a_hi - a_lo > tol:
        a_mid = 0.5 * (a_lo + a_hi)
        outcome = outcome_of(a_mid)
        runs.append((a_mid, outcome))
        iterations += 1
        if outcome.is_blowup:
            a_hi = a_mid
        else:
            a_lo = a_mid
        logger.debug(f"a={a_mid:.6g} -> {outcome}")
    a_star = 0.5 * (a_lo + a_hi)
    logger.info(f"✅ Empirical critical amplitude a*={a_star:.6g} after {iterations} runs")
    return BisectionResult(a_star, a_lo, a_hi, iterations, tuple(runs))


def write_run_csv(path: Path, result: Run1D) -> Path:
    return result.table.write_csv(path)


def write_snapshot_csv(path: Path, state: ParticleState1D) -> Path:
    rows = (
        {"i": i, "x": x, "u": u, "m": m, "d": d}
        for i, (x, u, m, d) in enumerate(zip(state.x, state.u, state.m, state.d))
    )
    return write_csv_rows(path, rows, SNAPSHOT_COLUMNS)


def _conv(points: np.ndarray, x: np.ndarray, weights: np.ndarray, kernel: InfluenceKernel) -> np.ndarray:
    return kernel.eval(np.abs(points[:, None] - x[None, :])) @ weights


def _rhs_arrays(x, u, d, m, model: Model, kernel: InfluenceKernel):
    separation = x[:, None] - x[None, :]
    distance = np.abs(separation)
    phi = kernel.eval(distance)
    # φ'(|x_i − x_j|)·sgn(x_i − x_j)（自己項は sgn(0) = 0 で消える）
    dphi = kernel.eval_deriv(distance) * np.sign(separation)

    h = phi @ m
    flux = phi @ (m * u)
    if model is Model.CS:
        du = flux - h * u
        residual = dphi @ (m * u) - u * (dphi @ m)
        dd = -d * d - h * d + residual
    else:
        floor = RHO_FLOOR_FACTOR * float(m.sum())
        if np.any(h <= floor):
            raise VacuumDivision(f"phi*rho fell to {h.min():.3e} <= floor {floor:.3e}")
        mean = flux / h
        du = mean - u
        # 商の微分: ∂ₓ(P/h) = Σ m_j φ' sgn (u_j − Ā_i) / h_i
        residual = (dphi @ (m * u) - mean * (dphi @ m)) / h
        dd = -d * d - d + residual
    return u.copy(), du, dd


def _blowup_reason(y: np.ndarray, eps_blow: float) -> str:
    if not np.all(np.isfinite(y)):
        return "non-finite state"
    if float(y[2].min()) < -1.0 / eps_blow:
        return "gradient blowup"
    if np.any(np.diff(y[0]) <= 0):
        return "particle crossing"
    return ""


def _record_1d(table: SeriesTable, t: float, y: np.ndarray, m: np.ndarray, model: Model, kernel) -> None:
    x, u, d = y
    e = d + 1.0 if model is Model.MT else d + _conv(x, x, m, kernel)
    table.append({
        "t": t,
        "V": float(u.max() - u.min()),
        "D": float(x[-1] - x[0]),
        "min_e": float(e.min()),
        "min_d": float(d.min()),
        "mass": float(m.sum()),
        "momentum": float(m @ u),
    })


def _geometry_or_none(kernel: InfluenceKernel, m0: float, D0: float, V0: float):
    try:
        return flock_geometry(kernel, m0, D0, V0)
    except NoFiniteFlockDiameter as e:
        logger.warning(f"⚠️ {e}")
        return None
