"""
影響関数 φ とそこから導かれるスカラー量

このモジュールは以下を提供します:
1. 3つの閉形式ファミリー（指数、べき乗、コンパクトバンプ）と任意のホライズン切断
2. 裾積分 ∫_a^b φ、フロック直径 D∞ の根探索、大域条件
3. 初期速度変動 V0 の上限（CS / MT）と指数減衰率 κ

主要な規約:
- φ(0) = 1 かつ φ は [0, ∞) で非増加
- 非可積分な裾は math.inf で表現する（大きな浮動小数点数は使わない）
"""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, Mapping

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect, minimize_scalar

from flocking_lab.config import ROOT_MAXITER, ROOT_RTOL, ROOT_XTOL
from flocking_lab.exceptions import ConfigError, DomainError, NoFiniteFlockDiameter

logger = logging.getLogger(__name__)


class Model(StrEnum):
    """整列モデル: Cucker-Smale（対称）または Motsch-Tadmor（正規化）"""

    CS = "cs"
    MT = "mt"


class KernelFamily(StrEnum):
    EXPONENTIAL = "exponential"
    POWER_LAW = "power_law"
    COMPACT_BUMP = "compact_bump"


# 各ファミリーのパラメータ名（設定ファイルのキー）
_PARAM_NAMES = {
    KernelFamily.EXPONENTIAL: "length_scale",
    KernelFamily.POWER_LAW: "beta",
    KernelFamily.COMPACT_BUMP: "radius",
}


@dataclass(frozen=True)
class InfluenceKernel:
    """
    放射状の影響関数 φ

    - EXPONENTIAL: φ(r) = exp(-r/ℓ)
    - POWER_LAW:   φ(r) = (1 + r)^(-β)、β = 0 は全対全カーネル φ ≡ 1
    - COMPACT_BUMP: φ(r) = exp(1 - 1/(1 - (r/R)²))、r ≥ R で 0

    horizon が設定されている場合、r > horizon で φ = 0 となります。
    """

    family: KernelFamily
    param: float
    horizon: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.param):
            raise DomainError(f"Kernel parameter must be finite, got {self.param}")
        if self.family is KernelFamily.POWER_LAW:
            if self.param < 0:
                raise DomainError(f"PowerLaw exponent must be >= 0, got {self.param}")
        elif self.param <= 0:
            raise DomainError(f"{self.family} parameter must be > 0, got {self.param}")
        if self.horizon is not None and not self.horizon > 0:
            raise DomainError(f"Horizon must be positive, got {self.horizon}")

    @classmethod
    def exponential(cls, length_scale: float, horizon: float | None = None) -> "InfluenceKernel":
        return cls(KernelFamily.EXPONENTIAL, float(length_scale), horizon)

    @classmethod
    def power_law(cls, beta: float, horizon: float | None = None) -> "InfluenceKernel":
        return cls(KernelFamily.POWER_LAW, float(beta), horizon)

    @classmethod
    def compact_bump(cls, radius: float, horizon: float | None = None) -> "InfluenceKernel":
        return cls(KernelFamily.COMPACT_BUMP, float(radius), horizon)

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> "InfluenceKernel":
        """設定ファイルの {family, params, horizon} からカーネルを構築"""
        try:
            family = KernelFamily(spec["family"])
            params = spec.get("params", {})
            param = float(params[_PARAM_NAMES[family]])
            horizon = spec.get("horizon")
            return cls(family, param, None if horizon is None else float(horizon))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid kernel spec {dict(spec)!r}: {e}") from e

    def to_spec(self) -> dict:
        return {
            "family": self.family.value,
            "params": {_PARAM_NAMES[self.family]: self.param},
            "horizon": self.horizon,
        }

    def with_horizon(self, horizon: float | None) -> "InfluenceKernel":
        """有限ホライズン版を返す（r > horizon の値は力学に寄与しない）"""
        return InfluenceKernel(self.family, self.param, horizon)

    @property
    def support_radius(self) -> float:
        radius = self.param if self.family is KernelFamily.COMPACT_BUMP else math.inf
        if self.horizon is not None:
            radius = min(radius, self.horizon)
        return radius

    def eval(self, r):
        """
        φ(r) を評価（スカラーまたは numpy 配列）

        Raises:
            DomainError: r < 0 または NaN
        """
        r_arr = _checked_radius(r)
        match self.family:
            case KernelFamily.EXPONENTIAL:
                values = np.exp(-r_arr / self.param)
            case KernelFamily.POWER_LAW:
                values = np.power(1.0 + r_arr, -self.param)
            case KernelFamily.COMPACT_BUMP:
                s = (r_arr / self.param) ** 2
                inside = s < 1.0
                gap = np.where(inside, 1.0 - s, 1.0)
                values = np.where(inside, np.exp(1.0 - 1.0 / gap), 0.0)
        if self.horizon is not None:
            values = np.where(r_arr > self.horizon, 0.0, values)
        return _like_input(r, values)

    def eval_deriv(self, r):
        """φ'(r) を評価（ホライズンの外では 0）"""
        r_arr = _checked_radius(r)
        match self.family:
            case KernelFamily.EXPONENTIAL:
                values = -np.exp(-r_arr / self.param) / self.param
            case KernelFamily.POWER_LAW:
                values = -self.param * np.power(1.0 + r_arr, -self.param - 1.0)
            case KernelFamily.COMPACT_BUMP:
                R = self.param
                s = (r_arr / R) ** 2
                inside = s < 1.0
                gap = np.where(inside, 1.0 - s, 1.0)
                phi = np.where(inside, np.exp(1.0 - 1.0 / gap), 0.0)
                values = np.where(inside, -phi * 2.0 * r_arr / (R * R * gap * gap), 0.0)
        if self.horizon is not None:
            values = np.where(r_arr > self.horizon, 0.0, values)
        return _like_input(r, values)

    def tail_integral(self, a: float, b: float = math.inf) -> float:
        """
        ∫_a^b φ(s) ds を計算

        名前付きファミリーは閉形式、バンプは適応求積を使います。
        非可積分な裾（β ≤ 1 のべき乗で b = ∞）は math.inf を返します。

        Raises:
            DomainError: a < 0 または a > b
        """
        if not (a >= 0):
            raise DomainError(f"Lower limit must be >= 0, got {a}")
        if a > b:
            raise DomainError(f"Lower limit {a} exceeds upper limit {b}")
        upper = b if self.horizon is None else min(b, self.horizon)
        if a >= upper:
            return 0.0

        match self.family:
            case KernelFamily.EXPONENTIAL:
                ell = self.param
                return ell * (math.exp(-a / ell) - math.exp(-upper / ell))
            case KernelFamily.POWER_LAW:
                beta = self.param
                if math.isinf(upper):
                    if beta <= 1.0:
                        return math.inf
                    return (1.0 + a) ** (1.0 - beta) / (beta - 1.0)
                if beta == 0.0:
                    return upper - a
                if beta == 1.0:
                    return math.log1p(upper) - math.log1p(a)
                return ((1.0 + a) ** (1.0 - beta) - (1.0 + upper) ** (1.0 - beta)) / (beta - 1.0)
            case KernelFamily.COMPACT_BUMP:
                upper = min(upper, self.param)
                if a >= upper:
                    return 0.0
                value, _ = quad(self.eval, a, upper, epsabs=1e-15, epsrel=1e-13, limit=200)
                return value

    def l1_norm(self) -> float:
        """|φ|₁ = ∫_0^∞ φ"""
        return self.tail_integral(0.0, math.inf)

    def max_abs_deriv(self, D: float) -> float:
        """|φ'|∞ を [0, D] 上で計算"""
        if D < 0:
            raise DomainError(f"Range end must be >= 0, got {D}")
        match self.family:
            case KernelFamily.EXPONENTIAL:
                return 1.0 / self.param
            case KernelFamily.POWER_LAW:
                return self.param
            case KernelFamily.COMPACT_BUMP:
                end = min(D, self.support_radius)
                if end <= 0.0:
                    return 0.0
                # |φ'| は 0 から単峰なので有界 Brent 法で十分
                result = minimize_scalar(
                    lambda r: self.eval_deriv(r),
                    bounds=(0.0, end),
                    method="bounded",
                    options={"xatol": 1e-12},
                )
                return float(max(-result.fun, -self.eval_deriv(end)))


@dataclass(frozen=True)
class FlockGeometry:
    """フロック直径 D∞ と指数減衰率をまとめた結果"""

    m0: float
    D0: float
    V0: float
    D_inf: float
    phi_inf: float
    kappa_cs: float
    kappa_mt: float

    def kappa(self, model: Model) -> float:
        return self.kappa_cs if Model(model) is Model.CS else self.kappa_mt


@dataclass(frozen=True)
class VariationBound:
    holds: bool
    margin: float
    bound: float
    D_inf: float
    phi_inf: float
    dphi_max: float


def check_global_condition(kernel: InfluenceKernel, m0: float, D0: float, V0: float) -> bool:
    """大域条件 V0 < m0 ∫_{D0}^∞ φ（裾が無限なら常に真）"""
    if not m0 > 0:
        raise DomainError(f"Total mass must be positive, got {m0}")
    if V0 < 0:
        raise DomainError(f"Velocity variation must be >= 0, got {V0}")
    tail = kernel.tail_integral(D0, math.inf)
    return math.isinf(tail) or V0 < m0 * tail


def solve_flock_diameter(kernel: InfluenceKernel, m0: float, D0: float, V0: float) -> float:
    """
    m0 ∫_{D0}^{D∞} φ(s) ds = V0 の根 D∞ ≥ D0 を二分法で求める

    Raises:
        NoFiniteFlockDiameter: 大域条件が破れている場合
    """
    if not check_global_condition(kernel, m0, D0, V0):
        raise NoFiniteFlockDiameter(
            f"V0={V0} >= m0·∫φ from D0={D0}: no finite flock diameter for {kernel}"
        )
    if V0 == 0:
        return float(D0)

    def residual(D: float) -> float:
        return m0 * kernel.tail_integral(D0, D) - V0

    # 右端を倍々に広げてブラケットを作る
    width = max(1.0, D0)
    hi = D0 + width
    for _ in range(ROOT_MAXITER):
        if residual(hi) >= 0:
            break
        width *= 2.0
        hi = D0 + width
    else:
        raise NoFiniteFlockDiameter(f"Could not bracket D_inf for V0={V0}, m0={m0}, D0={D0}")

    if residual(hi) == 0:
        return hi
    D_inf = bisect(residual, D0, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL, maxiter=ROOT_MAXITER)
    logger.debug(f"Solved D_inf={D_inf:.12g} for m0={m0}, D0={D0}, V0={V0}")
    return float(D_inf)


def check_variation_bound(
    kernel: InfluenceKernel,
    model: Model,
    m0: float,
    D0: float,
    V0: float,
    one_dimensional: bool = False,
) -> VariationBound:
    """
    初期速度変動の上限を事後的に検証

    CS: V0 ≤ m0·min{|φ|₁, φ∞²/(4|φ'|∞)}
    MT: V0 ≤ m0·min{|φ|₁, φ∞²/(4|φ'|∞(1 + 2φ∞))}
    MT（1D の注記形）: V0 < m0·min{|φ|₁, φ∞/(4|φ'|∞)}

    φ∞ と |φ'|∞ は解いた D∞ で評価します（D∞ は V0 に依存するため一回の事後チェック）。
    """
    model = Model(model)
    D_inf = solve_flock_diameter(kernel, m0, D0, V0)
    phi_inf = float(kernel.eval(D_inf))
    dphi_max = kernel.max_abs_deriv(D_inf)

    if model is Model.MT and one_dimensional:
        numerator, denominator = phi_inf, 4.0 * dphi_max
    elif model is Model.MT:
        numerator, denominator = phi_inf**2, 4.0 * dphi_max * (1.0 + 2.0 * phi_inf)
    else:
        numerator, denominator = phi_inf**2, 4.0 * dphi_max
    second = numerator / denominator if denominator > 0 else math.inf

    bound = m0 * min(kernel.l1_norm(), second)
    margin = bound - V0
    holds = margin > 0 if (model is Model.MT and one_dimensional) else margin >= 0
    return VariationBound(holds, margin, bound, D_inf, phi_inf, dphi_max)


def decay_rate(model: Model, m0: float, phi_inf: float) -> float:
    """κ = m0·φ∞（CS）または φ∞（MT、質量に依存しない）"""
    if not m0 > 0:
        raise DomainError(f"Total mass must be positive, got {m0}")
    if not 0 < phi_inf <= 1:
        raise DomainError(f"phi_inf must lie in (0, 1], got {phi_inf}")
    return m0 * phi_inf if Model(model) is Model.CS else phi_inf


def flock_geometry(kernel: InfluenceKernel, m0: float, D0: float, V0: float) -> FlockGeometry:
    D_inf = solve_flock_diameter(kernel, m0, D0, V0)
    phi_inf = float(kernel.eval(D_inf))
    if phi_inf <= 0:
        # D∞ がカーネルの台の外: 指数レートの保証なし
        logger.warning(f"⚠️ phi(D_inf) = 0 at D_inf={D_inf:.6g}; decay rates are zero")
        kappa_cs = kappa_mt = 0.0
    else:
        kappa_cs = decay_rate(Model.CS, m0, phi_inf)
        kappa_mt = decay_rate(Model.MT, m0, phi_inf)
    return FlockGeometry(m0, D0, V0, D_inf, phi_inf, kappa_cs, kappa_mt)


def _checked_radius(r) -> np.ndarray:
    r_arr = np.asarray(r, dtype=float)
    if np.any(np.isnan(r_arr)) or np.any(r_arr < 0):
        raise DomainError("Kernel evaluated at a negative or NaN radius")
    return r_arr


def _like_input(r, values: np.ndarray):
    return float(values) if np.ndim(r) == 0 else values
