"""
全ソルバー共通のフロッキング診断

- 直径 (D, V)（エージェント、1D 粒子、2D 格子の状態を受け付ける）
- 指数減衰率のフィット（−log(値) の時間に対する最小二乗の傾き）
- 進行波プロファイルへの収束（共動座標系での連続スナップショット間の L¹ 距離）
- 極限速度 ū の推定
"""

import logging
import math
from dataclasses import dataclass
from functools import singledispatch
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import shift as shift_field
from scipy.stats import linregress

from flocking_lab.config import VELOCITY_EPS
from flocking_lab.exceptions import DomainError, EmptySupport, ShapeError
from flocking_lab.hydro1d import ParticleState1D
from flocking_lab.hydro2d import GridState2D, support_diameters
from flocking_lab.kernels import Model
from flocking_lab.microdyn import AgentEnsemble
from flocking_lab.microdyn import diameters as agent_diameters
from flocking_lab.records import SeriesTable, write_csv_rows

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("quantity", "fitted_rate", "r_squared", "bound_kappa", "ratio")


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ShapeError(f"Series '{self.label}' has {times.shape} times and {values.shape} values")
        if np.any(np.diff(times) <= 0):
            raise DomainError(f"Series '{self.label}' times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)

    def window(self, t_a: float, t_b: float) -> "TimeSeries":
        keep = (self.times >= t_a) & (self.times <= t_b)
        return TimeSeries(self.times[keep], self.values[keep], self.label)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    window: tuple[float, float]


@dataclass(frozen=True)
class RateRow:
    quantity: str
    fitted_rate: float | None
    r_squared: float | None
    bound_kappa: float
    ratio: float | None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in SUMMARY_COLUMNS}


@dataclass(frozen=True)
class DensitySnapshot:
    """時刻 t の密度場（1D または 2D、格子幅 delta）"""

    t: float
    rho: np.ndarray
    delta: float


@singledispatch
def diameters(state) -> tuple[float, float]:
    """(D, V): 台の直径と台の上の速度直径"""
    raise TypeError(f"No diameter rule for {type(state).__name__}")


@diameters.register
def _(state: AgentEnsemble) -> tuple[float, float]:
    return agent_diameters(state)


@diameters.register
def _(state: ParticleState1D) -> tuple[float, float]:
    return float(state.x[-1] - state.x[0]), float(np.ptp(state.u))


@diameters.register
def _(state: GridState2D) -> tuple[float, float]:
    return support_diameters(state)


def fit_decay_rate(series: TimeSeries, window: tuple[float, float] | None = None) -> DecayFit:
    """
    窓の上で −log(値) を時間に対して最小二乗フィットした傾きを減衰率とする

    既定の窓は実行の後半（初期の過渡を除くため）。

    Raises:
        DomainError: 窓の中の点が2つ未満、または値が正でない
    """
    if len(series) == 0:
        raise DomainError(f"Series '{series.label}' is empty")
    if window is None:
        t0, t1 = float(series.times[0]), float(series.times[-1])
        window = (0.5 * (t0 + t1), t1)
    part = series.window(*window)
    if len(part) < 2:
        raise DomainError(f"Window {window} holds {len(part)} samples of '{series.label}', need at least 2")
    if np.any(part.values <= 0):
        raise DomainError(f"Series '{series.label}' has nonpositive values on {window}; shrink the window")

    logs = -np.log(part.values)
    if np.ptp(logs) == 0:
        return DecayFit(0.0, 1.0, window)
    fit = linregress(part.times, logs)
    return DecayFit(float(fit.slope), float(fit.rvalue**2), window)


def traveling_profile_residual(
    snapshots: Sequence[GridState2D | DensitySnapshot],
    u_bar,
) -> TimeSeries:
    """
    共動座標系での連続スナップショット間の L¹ 距離

    各スナップショットを ρ(· + t·ū, t) にずらし（線形補間、領域外は 0）、
    隣り合う組の ∫|差| を後の時刻に記録します。

    Raises:
        DomainError: スナップショットが2つ未満
        ShapeError: 格子が一致しない
    """
    frames = [_as_snapshot(s) for s in snapshots]
    if len(frames) < 2:
        raise DomainError(f"Need at least 2 snapshots, got {len(frames)}")
    reference = frames[0]
    for frame in frames[1:]:
        if frame.rho.shape != reference.rho.shape or not math.isclose(frame.delta, reference.delta):
            raise ShapeError(f"Snapshot grid {frame.rho.shape}/{frame.delta} differs from {reference.rho.shape}/{reference.delta}")

    velocity = np.broadcast_to(np.asarray(u_bar, dtype=float), (reference.rho.ndim,))
    cell = reference.delta**reference.rho.ndim
    comoving = [
        shift_field(f.rho, -f.t * velocity / f.delta, order=1, mode="constant", cval=0.0) for f in frames
    ]
    residuals = [float(np.abs(b - a).sum() * cell) for a, b in zip(comoving, comoving[1:])]
    return TimeSeries(np.array([f.t for f in frames[1:]]), np.array(residuals), "traveling_residual")


@singledispatch
def estimate_u_bar(state) -> np.ndarray:
    """
    極限速度 ū の推定（質量重み付き平均速度）

    状態の列を渡すと、CS は最初の状態（運動量保存）、MT は最後の状態を使います。
    """
    raise TypeError(f"Cannot estimate u_bar from {type(state).__name__}")


@estimate_u_bar.register
def _(state: AgentEnsemble) -> np.ndarray:
    return state.momentum / state.mass


@estimate_u_bar.register
def _(state: ParticleState1D) -> np.ndarray:
    return np.array([state.momentum / state.mass])


@estimate_u_bar.register
def _(state: GridState2D) -> np.ndarray:
    weights = np.where(state.support, state.rho, 0.0)
    total = float(weights.sum())
    if not total > 0:
        raise EmptySupport(f"No cell has rho > {state.support_tol:.3e}")
    return np.array([(weights * state.u1).sum() / total, (weights * state.u2).sum() / total])


@estimate_u_bar.register(list)
@estimate_u_bar.register(tuple)
def _(states) -> np.ndarray:
    if not states:
        raise EmptySupport("No states to estimate u_bar from")
    chosen = states[0] if states[0].model is Model.CS else states[-1]
    return estimate_u_bar(chosen)


def read_diagnostics_csv(path: Path) -> dict[str, TimeSeries]:
    """診断 CSV（先頭列 t）を列ごとの TimeSeries に読み込む"""
    table = SeriesTable.read_csv(path)
    if "t" not in table.columns:
        raise ShapeError(f"{path}: diagnostics CSV needs a 't' column, found {table.columns}")
    times = table.column("t")
    return {name: TimeSeries(times, table.column(name), name) for name in table.columns if name != "t"}


def rate_summary(
    series: Mapping[str, TimeSeries],
    kappa: float,
    quantities: Iterable[str] = ("V",),
    window: tuple[float, float] | None = None,
) -> list[RateRow]:
    """
    各量の減衰率フィットと理論レート κ との比

    窓の中で値がほぼ 0（既にフロック済み）またはフィット不能な量は空のレートになります。
    """
    rows = []
    for name in quantities:
        if name not in series:
            logger.warning(f"⚠️ Quantity '{name}' is not in the diagnostics; skipped")
            continue
        try:
            fit = _fit_or_flocked(series[name], window)
        except DomainError as e:
            logger.warning(f"⚠️ Could not fit '{name}': {e}")
            fit = None
        if fit is None:
            rows.append(RateRow(name, None, None, kappa, None))
            continue
        ratio = fit.rate / kappa if kappa > 0 else None
        rows.append(RateRow(name, fit.rate, fit.r_squared, kappa, ratio))
        logger.info(f"Fitted {name} decay rate {fit.rate:.4g} (r²={fit.r_squared:.4f}) vs kappa {kappa:.4g}")
    return rows


def write_rate_summary(path: Path, rows: Iterable[RateRow]) -> Path:
    return write_csv_rows(path, (row.as_dict() for row in rows), SUMMARY_COLUMNS)


def _fit_or_flocked(series: TimeSeries, window: tuple[float, float] | None) -> DecayFit | None:
    if len(series) and float(np.abs(series.values).max()) <= VELOCITY_EPS:
        logger.info(f"'{series.label}' is identically zero: already flocked")
        return None
    return fit_decay_rate(series, window)


def _as_snapshot(state: GridState2D | DensitySnapshot) -> DensitySnapshot:
    if isinstance(state, GridState2D):
        return DensitySnapshot(state.t, state.rho, state.grid.delta)
    return DensitySnapshot(float(state.t), np.asarray(state.rho, dtype=float), float(state.delta))
