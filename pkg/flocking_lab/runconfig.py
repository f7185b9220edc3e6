"""
シナリオ設定ファイル（JSON）の読み込みと検証

スキーマ:
  {"model": "cs"|"mt", "dim": 1|2,
   "kernel": {"family", "params", "horizon"},
   "domain": {"L", "n"}（2D）| "particles": N（1D / エージェント）,
   "init": {"density": {"name", ...}, "velocity": {"name", ...}, "u_inf": [...]},
   "time": {"t_end", "cfl", "dt_max", "output_interval", "dt"},
   "thresholds": {"grad_cap", "eps_blow", "rho_tol"},
   "outputs": {"dir", "csv", "checkpoints"},
   "seed": 0,
   "bisect": {"a_lo", "a_hi", "tol"},
   "scan": {"p1": {"path", "values"}, "p2": {"path", "values"}}}
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from flocking_lab.config import DEFAULT_CFL, DT_MAX_1D, EPS_BLOW, GRAD_CAP
from flocking_lab.exceptions import BracketError, ConfigError
from flocking_lab.kernels import InfluenceKernel, Model
from flocking_lab.profiles import DensityProfile, VelocityProfile, density_from_spec, velocity_from_spec

logger = logging.getLogger(__name__)

# 正であるべき形状パラメータ
_POSITIVE_PROFILE_KEYS = ("mass", "sigma", "separation", "radius", "width", "cutoff")


@dataclass(frozen=True)
class KernelSpec:
    family: str
    params: dict
    horizon: float | None = None

    def build(self) -> InfluenceKernel:
        return InfluenceKernel.from_spec({"family": self.family, "params": self.params, "horizon": self.horizon})


@dataclass(frozen=True)
class ProfileSpec:
    density: dict
    velocity: dict

    def build_density(self, dim: int) -> DensityProfile:
        return density_from_spec(self.density, dim)

    def build_velocity(self, dim: int) -> VelocityProfile:
        return velocity_from_spec(self.velocity, dim)


@dataclass(frozen=True)
class TimeSpec:
    t_end: float
    cfl: float = DEFAULT_CFL
    dt_max: float | None = None
    output_interval: float | None = None
    dt: float | None = None


@dataclass(frozen=True)
class ThresholdSpec:
    grad_cap: float = GRAD_CAP
    eps_blow: float = EPS_BLOW
    rho_tol: float | None = None


@dataclass(frozen=True)
class OutputSpec:
    dir: Path = Path("runs/default")
    csv: bool = True
    checkpoints: bool = True


@dataclass(frozen=True)
class BisectSpec:
    a_lo: float
    a_hi: float
    tol: float


@dataclass(frozen=True)
class ScanAxis:
    path: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ScanSpec:
    p1: ScanAxis
    p2: ScanAxis | None = None


@dataclass(frozen=True)
class RunConfig:
    """検証済みのシナリオ設定（raw は元の辞書のディープコピー）"""

    model: Model
    dim: int
    kernel: KernelSpec
    init: ProfileSpec
    time: TimeSpec
    thresholds: ThresholdSpec = field(default_factory=ThresholdSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    L: float | None = None
    n: int | None = None
    particles: int | None = None
    seed: int = 0
    bisect: BisectSpec | None = None
    scan: ScanSpec | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """
        Raises:
            ConfigError: 欠けたキー、範囲外の値、未知のプロファイル名
            BracketError: bisect の a_lo < a_hi が成り立たない
        """
        raw = copy.deepcopy(dict(data))
        try:
            config = _parse(raw)
        except (ConfigError, BracketError):
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config: {type(e).__name__}: {e}") from e
        # プロファイルとカーネルを一度構築して名前とパラメータを検証
        config.build_kernel()
        config.build_density()
        config.build_velocity()
        return config

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_override(self, path: str, value: Any) -> "RunConfig":
        """ドット区切りのパス（例: "init.velocity.amplitude"）の値を置き換えた設定"""
        data = self.to_dict()
        *parents, leaf = path.split(".")
        node = data
        for key in parents:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"Override path '{path}' does not name a config entry")
            node = node[key]
        node[leaf] = value
        return RunConfig.from_dict(data)

    def build_kernel(self) -> InfluenceKernel:
        return self.kernel.build()

    def build_density(self) -> DensityProfile:
        return self.init.build_density(self.dim)

    def build_velocity(self) -> VelocityProfile:
        return self.init.build_velocity(self.dim)

    @property
    def out_dir(self) -> Path:
        return self.outputs.dir

    @property
    def dt_max(self) -> float:
        if self.time.dt_max is not None:
            return self.time.dt_max
        return DT_MAX_1D if self.dim == 1 else float("inf")


def load_config(path: Path) -> RunConfig:
    """JSON のシナリオ設定を読み込んで検証"""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    config = RunConfig.from_dict(data)
    logger.info(f"Loaded {config.model} {config.dim}D config from {path}")
    return config


def save_config(path: Path, config: RunConfig) -> Path:
    """設定のエコー（config.json）を書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
    return path


def _parse(raw: dict) -> RunConfig:
    try:
        model = Model(str(raw["model"]).lower())
    except ValueError as e:
        raise ConfigError(f"model must be 'cs' or 'mt', got {raw['model']!r}") from e
    dim = int(raw["dim"])
    if dim not in (1, 2):
        raise ConfigError(f"dim must be 1 or 2, got {dim}")

    kernel_raw = raw["kernel"]
    kernel = KernelSpec(
        str(kernel_raw["family"]),
        dict(kernel_raw.get("params", {})),
        _optional_positive(kernel_raw, "horizon"),
    )

    init_raw = raw["init"]
    density = dict(init_raw["density"])
    velocity = dict(init_raw["velocity"])
    if "u_inf" in init_raw:
        velocity.setdefault("u_inf", init_raw["u_inf"])
    for key in _POSITIVE_PROFILE_KEYS:
        if key in density:
            _require_positive(f"init.density.{key}", density[key])
    if "width" in velocity:
        _require_positive("init.velocity.width", velocity["width"])

    time_raw = raw["time"]
    time = TimeSpec(
        t_end=_require_positive("time.t_end", time_raw["t_end"]),
        cfl=_require_positive("time.cfl", time_raw.get("cfl", DEFAULT_CFL)),
        dt_max=_optional_positive(time_raw, "dt_max", "time."),
        output_interval=_optional_positive(time_raw, "output_interval", "time."),
        dt=_optional_positive(time_raw, "dt", "time."),
    )
    if time.cfl > 1:
        raise ConfigError(f"time.cfl must be <= 1, got {time.cfl}")

    thresholds_raw = raw.get("thresholds", {})
    thresholds = ThresholdSpec(
        grad_cap=_require_positive("thresholds.grad_cap", thresholds_raw.get("grad_cap", GRAD_CAP)),
        eps_blow=_require_positive("thresholds.eps_blow", thresholds_raw.get("eps_blow", EPS_BLOW)),
        rho_tol=_optional_positive(thresholds_raw, "rho_tol", "thresholds."),
    )

    outputs_raw = raw.get("outputs", {})
    outputs = OutputSpec(
        dir=Path(outputs_raw.get("dir", OutputSpec.dir)),
        csv=bool(outputs_raw.get("csv", True)),
        checkpoints=bool(outputs_raw.get("checkpoints", True)),
    )

    L = n = particles = None
    if dim == 2:
        domain = raw["domain"]
        L = _require_positive("domain.L", domain["L"])
        n = int(domain["n"])
        if n < 4 or n & (n - 1):
            raise ConfigError(f"domain.n must be a power of two >= 4, got {n}")
    if "particles" in raw:
        particles = int(raw["particles"])
        if particles < 1:
            raise ConfigError(f"particles must be >= 1, got {particles}")
    elif dim == 1:
        raise ConfigError("1D configs need 'particles'")

    return RunConfig(
        model=model,
        dim=dim,
        kernel=kernel,
        init=ProfileSpec(density, velocity),
        time=time,
        thresholds=thresholds,
        outputs=outputs,
        L=L,
        n=n,
        particles=particles,
        seed=int(raw.get("seed", 0)),
        bisect=_parse_bisect(raw.get("bisect")),
        scan=_parse_scan(raw.get("scan")),
        raw=raw,
    )


def _parse_bisect(raw: Mapping[str, Any] | None) -> BisectSpec | None:
    if raw is None:
        return None
    spec = BisectSpec(float(raw["a_lo"]), float(raw["a_hi"]), _require_positive("bisect.tol", raw["tol"]))
    if not spec.a_lo < spec.a_hi:
        raise BracketError(f"bisect needs a_lo < a_hi, got [{spec.a_lo}, {spec.a_hi}]")
    return spec


def _parse_scan(raw: Mapping[str, Any] | None) -> ScanSpec | None:
    if raw is None:
        return None

    def axis(entry: Mapping[str, Any]) -> ScanAxis:
        values = tuple(float(v) for v in entry["values"])
        return ScanAxis(str(entry["path"]), values)

    return ScanSpec(axis(raw["p1"]), axis(raw["p2"]) if raw.get("p2") else None)


def _require_positive(name: str, value: Any) -> float:
    number = float(value)
    if not number > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return number


def _optional_positive(raw: Mapping[str, Any], key: str, prefix: str = "") -> float | None:
    value = raw.get(key)
    return None if value is None else _require_positive(prefix + key, value)
