"""
比較ダイナミクス: 正則性の証明で使われる事前評価を実行可能な形にしたもの

1. 交換子残差の上限 |R_ij| と η_S の強制項 q の上限
2. η_S と ω の事前エンベロープ
3. e の Riccati 下側・上側エンベロープ（tanh 型の閉形式解）
4. (e, η, ω) の閉じたラグランジュ ODE ラボ（係数は与えられた関数で凍結）

ODE ラボは PDE の閉包ではありません。2D の残差は (e, η, ω) で閉じないので、
強制項はすべて外から与えます。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Callable

import numpy as np

from flocking_lab.exceptions import DomainError, EnvelopeInvalid
from flocking_lab.integrators import rk4_step
from flocking_lab.kernels import Model
from flocking_lab.records import write_csv_rows

logger = logging.getLogger(__name__)

LAB_COLUMNS = ("t", "e", "eta", "omega", "lower_env", "upper_env")

# これを超えた |e| は有限時間ブローアップとみなして積分を打ち切る
_LAB_BLOWUP = 1e12


class EnvelopeKind(StrEnum):
    ETA_S = "EtaS"
    VORTICITY = "Vorticity"
    E_LOWER = "ELower"
    E_UPPER = "EUpper"


class LabForm(StrEnum):
    STRICT_1D = "Strict1D"
    REDUCED_TRACE = "ReducedTrace"
    TWO_D_FROZEN = "TwoD_Frozen"


@dataclass(frozen=True)
class KernelStats:
    phi_inf: float
    dphi_max: float
    kappa: float


@dataclass(frozen=True)
class EnvelopeParams:
    """エンベロープの入力（初期データの最大値・最小値とカーネル由来の定数）"""

    model: Model
    m0: float
    phi_inf: float
    V0: float
    dphi_max: float
    eta0_max: float = 0.0
    omega0_max: float = 0.0
    e0_min: float = 0.0
    e0_max: float = 0.0
    kappa: float | None = None
    l1_norm: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if not (self.m0 > 0 and 0 < self.phi_inf <= 1):
            raise DomainError(f"Need m0 > 0 and 0 < phi_inf <= 1, got m0={self.m0}, phi_inf={self.phi_inf}")
        if self.kappa is None:
            rate = self.m0 * self.phi_inf if self.model is Model.CS else self.phi_inf
            object.__setattr__(self, "kappa", rate)

    @property
    def stats(self) -> KernelStats:
        return KernelStats(self.phi_inf, self.dphi_max, self.kappa)


@dataclass(frozen=True)
class ResidualBound:
    entry: float
    q: float


@dataclass(frozen=True)
class BoundEnvelope:
    kind: EnvelopeKind
    params: EnvelopeParams
    limit: float
    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, t):
        values = self.evaluate(np.asarray(t, dtype=float))
        return float(values) if np.ndim(t) == 0 else values


@dataclass(frozen=True)
class ForcingSpec:
    """凍結係数: h = φ*ρ(t)、q(t)、MT の r(t)、渦度の強制 jr(t)、任意で e(t) を固定"""

    h: Callable[[float], float] = lambda t: 1.0
    q: Callable[[float], float] = lambda t: 0.0
    r: Callable[[float], float] = lambda t: 0.0
    jr: Callable[[float], float] = lambda t: 0.0
    e: Callable[[float], float] | None = None


@dataclass
class LabTrajectory:
    t: np.ndarray
    e: np.ndarray
    eta: np.ndarray
    omega: np.ndarray
    blew_up: bool = False


def residual_bound(model: Model, m0: float, V0: float, stats: KernelStats, t: float) -> ResidualBound:
    """
    残差成分の上限とギャップ強制項の上限 q = 2·成分

    CS: |R_ij| ≤ |φ'|∞ m0 V0 e^{−κt}
    MT: |R_ij| ≤ (|φ'|∞/φ∞) V0 e^{−κt}
    """
    if t < 0:
        raise DomainError(f"Time must be >= 0, got {t}")
    decay = math.exp(-stats.kappa * t)
    if Model(model) is Model.CS:
        entry = stats.dphi_max * m0 * V0 * decay
    else:
        entry = stats.dphi_max / stats.phi_inf * V0 * decay
    return ResidualBound(entry, 2.0 * entry)


def eta_envelope(model: Model, params: EnvelopeParams) -> BoundEnvelope:
    """
    η_S(t) ≤ max|η_S0| + ∫₀ᵗ q-bound（t → ∞ で max|η_S0| + q(0)/κ）

    Raises:
        EnvelopeInvalid: 初期速度変動の上限が破れている（定理の仮定外）
    """
    model = Model(model)
    _require_variation_bound(model, params)
    q0 = residual_bound(model, params.m0, params.V0, params.stats, 0.0).q
    kappa = params.kappa
    eta0 = params.eta0_max

    if kappa > 0:
        limit = eta0 + q0 / kappa

        def evaluate(t):
            return eta0 + q0 * (1.0 - np.exp(-kappa * t)) / kappa
    else:
        limit = math.inf if q0 > 0 else eta0

        def evaluate(t):
            return eta0 + q0 * t

    return BoundEnvelope(EnvelopeKind.ETA_S, params, limit, evaluate)


def vorticity_envelope(params: EnvelopeParams) -> BoundEnvelope:
    """一定の上限 ω_max: CS は max|ω₀| + ½m0φ∞、MT は max|ω₀| + (|φ'|∞/φ∞²)V0"""
    if params.model is Model.CS:
        bound = params.omega0_max + 0.5 * params.m0 * params.phi_inf
    else:
        bound = params.omega0_max + params.dphi_max * params.V0 / params.phi_inf**2
    return BoundEnvelope(EnvelopeKind.VORTICITY, params, bound, lambda t: np.full(np.shape(t), bound))


def e_envelopes(model: Model, params: EnvelopeParams) -> tuple[BoundEnvelope, BoundEnvelope]:
    """
    e の下側・上側 Riccati エンベロープ

    下側は e' = ½(c²_min − e²)、e(0) = min e₀。上側は e' = ½(cap² − e²)、e(0) = max e₀。
    CS: c²_min = (m0φ∞)² − η²_lim、cap² = m0² + 4ω²_max
    MT: c²_min = 1 − η²_lim − 2r_max、cap² = 1 + 2r_max + 4ω²_max（r_max = 2·残差成分の上限）

    Raises:
        EnvelopeInvalid: c²_min ≤ 0
    """
    model = Model(model)
    eta_limit = eta_envelope(model, params).limit
    omega_max = vorticity_envelope(params).limit
    if model is Model.CS:
        c_min_sq = (params.m0 * params.phi_inf) ** 2 - eta_limit**2
        cap_sq = params.m0**2 + 4.0 * omega_max**2
    else:
        r_max = residual_bound(model, params.m0, params.V0, params.stats, 0.0).q
        c_min_sq = 1.0 - eta_limit**2 - 2.0 * r_max
        cap_sq = 1.0 + 2.0 * r_max + 4.0 * omega_max**2
    if not c_min_sq > 0:
        raise EnvelopeInvalid(f"c_min^2 = {c_min_sq:.6g} <= 0 for {model}; the invariant region is empty")

    c_min, cap = math.sqrt(c_min_sq), math.sqrt(cap_sq)
    lower = BoundEnvelope(
        EnvelopeKind.E_LOWER, params, c_min, lambda t: riccati_solution(params.e0_min, c_min, t)
    )
    upper = BoundEnvelope(
        EnvelopeKind.E_UPPER, params, cap, lambda t: riccati_solution(params.e0_max, cap, t)
    )
    return lower, upper


def riccati_solution(e0: float, c: float, t):
    """
    e' = ½(c² − e²)、e(0) = e0 の閉形式解

    c > 0: e(t) = c(e0 + c·tanh(ct/2)) / (c + e0·tanh(ct/2))。
    e0 < −c では t* = (2/c)·artanh(−c/e0) で −∞ に発散し、それ以降は −∞ を返します。
    """
    t_arr = np.asarray(t, dtype=float)
    if c < 0:
        raise DomainError(f"Riccati constant must be >= 0, got {c}")
    if c == 0:
        denom = 1.0 + 0.5 * e0 * t_arr
        with np.errstate(divide="ignore"):
            values = np.where(denom > 0, e0 / np.where(denom > 0, denom, 1.0), -np.inf)
    else:
        tanh = np.tanh(0.5 * c * t_arr)
        denom = c + e0 * tanh
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(denom > 0, c * (e0 + c * tanh) / np.where(denom > 0, denom, 1.0), -np.inf)
    return float(values) if np.ndim(t) == 0 else values


def lagrangian_lab(
    model: Model,
    form: LabForm,
    init: tuple[float, float, float],
    forcing: ForcingSpec,
    t_end: float,
    dt: float = 1e-3,
) -> LabTrajectory:
    """
    (e, η, ω) の閉じた ODE を RK4 で積分

    - Strict1D:    CS e' = e(h − e)、MT e' = e(1 − e) + r
    - ReducedTrace: CS e' = ½(h² − e²)、MT e' = ½(1 + 2r − e²)
    - TwoD_Frozen: CS e' = ½(h² + 4ω² − η² − e²)、MT e' = ½(1 − η² + 2r − e² + 4ω²)、
                   η' = q − eη、ω' = jr − eω
    forcing.e が与えられた場合 e はその関数に固定されます。
    """
    model, form = Model(model), LabForm(form)
    if not (t_end > 0 and dt > 0):
        raise DomainError(f"Need t_end > 0 and dt > 0, got {t_end}, {dt}")

    def derivative(t: float, y: np.ndarray) -> np.ndarray:
        e, eta, omega = y
        if forcing.e is not None:
            e = forcing.e(t)
            de = 0.0
        else:
            de = _e_rate(model, form, e, eta, omega, t, forcing)
        if form is LabForm.TWO_D_FROZEN:
            return np.array([de, forcing.q(t) - e * eta, forcing.jr(t) - e * omega])
        return np.array([de, 0.0, 0.0])

    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    h = t_end / n_steps
    times = np.linspace(0.0, t_end, n_steps + 1)
    states = np.empty((n_steps + 1, 3))
    y = np.array(init, dtype=float)
    if forcing.e is not None:
        y[0] = forcing.e(0.0)
    states[0] = y
    blew_up = False
    last = n_steps
    for k in range(n_steps):
        y = rk4_step(y, times[k], h, derivative)
        if forcing.e is not None:
            y[0] = forcing.e(times[k + 1])
        if not np.all(np.isfinite(y)) or abs(y[0]) > _LAB_BLOWUP:
            blew_up, last = True, k
            logger.info(f"⚠️ Lagrangian lab trajectory blew up near t={times[k + 1]:.6g}")
            break
        states[k + 1] = y
    return LabTrajectory(times[: last + 1], states[: last + 1, 0], states[: last + 1, 1], states[: last + 1, 2], blew_up)


def write_lab_csv(
    path: Path,
    trajectory: LabTrajectory,
    lower: BoundEnvelope | None = None,
    upper: BoundEnvelope | None = None,
) -> Path:
    lower_values = lower(trajectory.t) if lower is not None else [None] * len(trajectory.t)
    upper_values = upper(trajectory.t) if upper is not None else [None] * len(trajectory.t)
    rows = (
        dict(zip(LAB_COLUMNS, values))
        for values in zip(trajectory.t, trajectory.e, trajectory.eta, trajectory.omega, lower_values, upper_values)
    )
    return write_csv_rows(path, rows, LAB_COLUMNS)


def _e_rate(model: Model, form: LabForm, e: float, eta: float, omega: float, t: float, forcing: ForcingSpec) -> float:
    match form, model:
        case LabForm.STRICT_1D, Model.CS:
            return e * (forcing.h(t) - e)
        case LabForm.STRICT_1D, Model.MT:
            return e * (1.0 - e) + forcing.r(t)
        case LabForm.REDUCED_TRACE, Model.CS:
            return 0.5 * (forcing.h(t) ** 2 - e * e)
        case LabForm.REDUCED_TRACE, Model.MT:
            return 0.5 * (1.0 + 2.0 * forcing.r(t) - e * e)
        case LabForm.TWO_D_FROZEN, Model.CS:
            return 0.5 * (forcing.h(t) ** 2 + 4.0 * omega**2 - eta**2 - e * e)
        case LabForm.TWO_D_FROZEN, Model.MT:
            return 0.5 * (1.0 - eta**2 + 2.0 * forcing.r(t) - e * e + 4.0 * omega**2)


def _require_variation_bound(model: Model, params: EnvelopeParams) -> None:
    if params.dphi_max > 0:
        if model is Model.CS:
            second = params.phi_inf**2 / (4.0 * params.dphi_max)
        else:
            second = params.phi_inf**2 / (4.0 * params.dphi_max * (1.0 + 2.0 * params.phi_inf))
    else:
        second = math.inf
    bound = params.m0 * min(params.l1_norm, second)
    if params.V0 > bound:
        raise EnvelopeInvalid(f"V0={params.V0:.6g} exceeds the variation bound {bound:.6g} for {model}")
