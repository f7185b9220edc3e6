"""
名前付き初期プロファイルのライブラリ

密度: gaussian_bump, double_bump, uniform_disk
速度: constant, linear_compression(δ), rigid_rotation(Ω), shear(s), bump_compression(a)

速度は u(x) = u∞ + χ(|x − c|)·w(x) の形で、任意の滑らかなテーパー χ（r0 の内側で 1、
r1 の外側で 0）により遠方で u∞ に戻ります。1D では解析的な導関数 u₀'(x) も提供します。
"""

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import erf

from flocking_lab.exceptions import ConfigError, DomainError

DENSITY_NAMES = ("gaussian_bump", "double_bump", "uniform_disk")
VELOCITY_NAMES = ("constant", "linear_compression", "rigid_rotation", "shear", "bump_compression")


@dataclass(frozen=True)
class DensityProfile:
    """質量 mass に正規化された初期密度 ρ₀"""

    name: str
    dim: int
    mass: float
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.name not in DENSITY_NAMES:
            raise ConfigError(f"Unknown density profile '{self.name}'")
        if self.dim not in (1, 2):
            raise ConfigError(f"Profiles support dim 1 or 2, got {self.dim}")
        if not self.mass > 0:
            raise ConfigError(f"Density mass must be positive, got {self.mass}")

    @property
    def center(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.params.get("center", 0.0), dtype=float), (self.dim,))

    @property
    def support_radius(self) -> float:
        """中心から見た台の半径"""
        p = self.params
        match self.name:
            case "gaussian_bump":
                return p["sigma"] * p.get("cutoff", 3.0)
            case "double_bump":
                return 0.5 * p["separation"] + p["sigma"] * p.get("cutoff", 3.0)
            case "uniform_disk":
                return p["radius"]

    def __call__(self, *coords) -> np.ndarray:
        """1D は ρ₀(x)、2D は ρ₀(x₁, x₂)"""
        if len(coords) != self.dim:
            raise ConfigError(f"Expected {self.dim} coordinate arrays, got {len(coords)}")
        shifted = [np.asarray(x, dtype=float) - c for x, c in zip(coords, self.center)]
        p = self.params
        match self.name:
            case "gaussian_bump":
                return self.mass * _truncated_gaussian(shifted, p["sigma"], p.get("cutoff", 3.0))
            case "double_bump":
                half = 0.5 * p["separation"]
                left = [shifted[0] + half, *shifted[1:]]
                right = [shifted[0] - half, *shifted[1:]]
                sigma, cutoff = p["sigma"], p.get("cutoff", 3.0)
                return 0.5 * self.mass * (
                    _truncated_gaussian(left, sigma, cutoff) + _truncated_gaussian(right, sigma, cutoff)
                )
            case "uniform_disk":
                radius = p["radius"]
                r2 = sum(s * s for s in shifted)
                volume = 2.0 * radius if self.dim == 1 else math.pi * radius**2
                return np.where(r2 <= radius**2, self.mass / volume, 0.0)


@dataclass(frozen=True)
class VelocityProfile:
    """初期速度 u₀ = u∞ + χ·w"""

    name: str
    dim: int
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.name not in VELOCITY_NAMES:
            raise ConfigError(f"Unknown velocity profile '{self.name}'")
        if self.dim == 1 and self.name in ("rigid_rotation", "shear"):
            raise ConfigError(f"Velocity profile '{self.name}' needs dim = 2")
        taper = self.params.get("taper")
        if taper is not None and not (0 <= taper[0] < taper[1]):
            raise ConfigError(f"Taper must satisfy 0 <= r0 < r1, got {taper}")

    @property
    def center(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.params.get("center", 0.0), dtype=float), (self.dim,))

    @property
    def far_field(self) -> np.ndarray:
        """u∞（constant プロファイルではその値そのもの）"""
        key = "value" if self.name == "constant" else "u_inf"
        return np.broadcast_to(np.asarray(self.params.get(key, 0.0), dtype=float), (self.dim,)).copy()

    def scaled(self, amplitude: float) -> "VelocityProfile":
        """振幅パラメータ（δ, Ω, s, a）を置き換えたコピー"""
        key = _AMPLITUDE_KEYS.get(self.name)
        if key is None:
            raise ConfigError(f"Profile '{self.name}' has no amplitude parameter")
        return VelocityProfile(self.name, self.dim, {**self.params, key: amplitude})

    def value_1d(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=float) - self.center[0]
        chi, _ = self._taper(np.abs(y))
        return self.far_field[0] + chi * self._perturbation_1d(y)

    def deriv_1d(self, x) -> np.ndarray:
        """u₀'(x) の解析形"""
        y = np.asarray(x, dtype=float) - self.center[0]
        chi, dchi = self._taper(np.abs(y))
        return dchi * np.sign(y) * self._perturbation_1d(y) + chi * self._perturbation_deriv_1d(y)

    def value_2d(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        c1, c2 = self.center
        y1 = np.asarray(x1, dtype=float) - c1
        y2 = np.asarray(x2, dtype=float) - c2
        p = self.params
        planar = self.name == "bump_compression" and p.get("axis") is not None
        if planar:
            chi, _ = self._taper(np.abs(y1 if p["axis"] == 0 else y2))
        else:
            chi, _ = self._taper(np.hypot(y1, y2))

        zeros = np.zeros(np.broadcast(y1, y2).shape)
        match self.name:
            case "constant":
                w1, w2 = zeros, zeros
            case "linear_compression":
                # 任意の剛体回転 Ω を重ねられる（圧縮と回転の相図用）
                spin = p.get("omega", 0.0)
                w1 = -p["delta"] * y1 - spin * y2 + zeros
                w2 = -p["delta"] * y2 + spin * y1 + zeros
            case "rigid_rotation":
                w1, w2 = -p["omega"] * y2 + zeros, p["omega"] * y1 + zeros
            case "shear":
                w1, w2 = p["s"] * y2 + zeros, zeros
            case "bump_compression":
                a, width = p["amplitude"], p["width"]
                if planar:
                    along = y1 if p["axis"] == 0 else y2
                    w = -a * _sin_bump(along, width) + zeros
                    w1, w2 = (w, zeros) if p["axis"] == 0 else (zeros, w)
                else:
                    r = np.hypot(y1, y2)
                    safe = np.where(r > 0, r, 1.0)
                    radial = np.where(r > 0, _sin_bump(r, width) / safe, math.pi / width)
                    w1, w2 = -a * radial * y1, -a * radial * y2
        u_inf = self.far_field
        return u_inf[0] + chi * w1, u_inf[1] + chi * w2

    def _perturbation_1d(self, y: np.ndarray) -> np.ndarray:
        p = self.params
        match self.name:
            case "constant":
                return np.zeros_like(y)
            case "linear_compression":
                return -p["delta"] * y
            case "bump_compression":
                return -p["amplitude"] * _sin_bump(y, p["width"])

    def _perturbation_deriv_1d(self, y: np.ndarray) -> np.ndarray:
        p = self.params
        match self.name:
            case "constant":
                return np.zeros_like(y)
            case "linear_compression":
                return np.full_like(y, -p["delta"])
            case "bump_compression":
                return -p["amplitude"] * _sin_bump_deriv(y, p["width"])

    def _taper(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        taper = self.params.get("taper")
        if taper is None:
            return np.ones_like(r), np.zeros_like(r)
        return smooth_cutoff(r, taper[0], taper[1])


_AMPLITUDE_KEYS = {
    "linear_compression": "delta",
    "rigid_rotation": "omega",
    "shear": "s",
    "bump_compression": "amplitude",
}

_REQUIRED = {
    "gaussian_bump": ("sigma",),
    "double_bump": ("sigma", "separation"),
    "uniform_disk": ("radius",),
    "constant": (),
    "linear_compression": ("delta",),
    "rigid_rotation": ("omega",),
    "shear": ("s",),
    "bump_compression": ("amplitude", "width"),
}


def density_from_spec(spec: Mapping[str, Any], dim: int) -> DensityProfile:
    params = _params_from_spec(spec, DENSITY_NAMES)
    mass = float(params.pop("mass", 1.0))
    return DensityProfile(spec["name"], dim, mass, params)


def velocity_from_spec(spec: Mapping[str, Any], dim: int) -> VelocityProfile:
    params = _params_from_spec(spec, VELOCITY_NAMES)
    return VelocityProfile(spec["name"], dim, params)


def quantile_midpoints(density: DensityProfile, count: int, resolution: int = 20001) -> np.ndarray:
    """
    1D 密度の層別（分位点の中点）サンプル x_i = F⁻¹((i + ½)/N)

    累積分布は台の上の密な格子で台形則により作り、逆関数は線形補間で求めます。
    """
    if density.dim != 1:
        raise ConfigError("Quantile sampling needs a 1D density")
    if count < 1:
        raise DomainError(f"Sample count must be >= 1, got {count}")
    c, radius = density.center[0], density.support_radius
    grid = np.linspace(c - radius, c + radius, resolution)
    cdf = cumulative_trapezoid(density(grid), grid, initial=0.0)
    if not cdf[-1] > 0:
        raise DomainError("Density has zero mass")
    targets = (np.arange(count) + 0.5) / count * cdf[-1]
    return np.interp(targets, cdf, grid)


def smooth_cutoff(r, r0: float, r1: float) -> tuple[np.ndarray, np.ndarray]:
    """
    C∞ カットオフ χ(r) とその導関数

    r ≤ r0 で 1、r ≥ r1 で 0、間は exp(-1/t) 型の遷移。
    """
    r = np.asarray(r, dtype=float)
    tau = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    a, da = _bump_exp(1.0 - tau)
    b, db = _bump_exp(tau)
    total = a + b
    chi = a / total
    # dχ/dτ = -(f'(1-τ)f(τ) + f(1-τ)f'(τ)) / (f(τ)+f(1-τ))²
    dchi = -(da * b + a * db) / total**2 / (r1 - r0)
    return chi, dchi


def _bump_exp(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    positive = t > 0
    safe = np.where(positive, t, 1.0)
    f = np.where(positive, np.exp(-1.0 / safe), 0.0)
    df = np.where(positive, f / safe**2, 0.0)
    return f, df


def _sin_bump(y, width: float) -> np.ndarray:
    """s(y) = sin(πy/w)·cos²(πy/2w)、|y| ≥ w で 0（C¹ の正弦バンプ）"""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < width
    z = math.pi * y / width
    return np.where(inside, np.sin(z) * np.cos(0.5 * z) ** 2, 0.0)


def _sin_bump_deriv(y, width: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < width
    z = math.pi * y / width
    k = math.pi / width
    return np.where(inside, k * np.cos(z) * np.cos(0.5 * z) ** 2 - 0.5 * k * np.sin(z) ** 2, 0.0)


def _truncated_gaussian(shifted: list[np.ndarray], sigma: float, cutoff: float) -> np.ndarray:
    r2 = sum(s * s for s in shifted)
    if len(shifted) == 1:
        norm = sigma * math.sqrt(2.0 * math.pi) * erf(cutoff / math.sqrt(2.0))
    else:
        norm = 2.0 * math.pi * sigma**2 * (1.0 - math.exp(-0.5 * cutoff**2))
    return np.where(r2 <= (cutoff * sigma) ** 2, np.exp(-0.5 * r2 / sigma**2) / norm, 0.0)


def _params_from_spec(spec: Mapping[str, Any], names: tuple[str, ...]) -> dict:
    name = spec.get("name")
    if name not in names:
        raise ConfigError(f"Unknown profile '{name}', expected one of {names}")
    params = {k: v for k, v in spec.items() if k != "name"}
    missing = [k for k in _REQUIRED[name] if k not in params]
    if missing:
        raise ConfigError(f"Profile '{name}' is missing parameters {missing}")
    return params
