"""
2D オイラー整列系の格子ソルバー

- 密度: 保存形の有限体積法、局所 Lax-Friedrichs 流束、外周の面は流束ゼロ（閉じた箱）
- 速度: 原始変数形、1次風上差分の移流 + 整列力 F
- 時間積分: 2段 SSP-RK2、各段の後に最外周を u∞ に再固定
- 畳み込み: ゼロパディングした FFT（非周期）、求積重み Δ²

整列力は CS で F = φ*(ρu) − u(φ*ρ)、MT で F = φ*(ρu)/(φ*ρ) − u（ホライズンマスク上のみ）。
カーネルは整列半径 min(D∞, 台の半径) で切断します。
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields, replace
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt, map_coordinates
from scipy.signal import fftconvolve

from flocking_lab.config import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DEFAULT_CFL,
    DT_MIN,
    EPS_BLOW,
    GRAD_CAP,
    RHO_FLOOR_FACTOR,
    RHO_TOL_FACTOR,
    STEP_THETA,
    VELOCITY_EPS,
)
from flocking_lab.exceptions import (
    CheckpointError,
    DomainError,
    EmptySupport,
    NoFiniteFlockDiameter,
    StepSizeError,
    VacuumDivision,
)
from flocking_lab.geometry import point_set_diameter
from flocking_lab.integrators import rk4_step, ssprk2_step
from flocking_lab.kernels import (
    InfluenceKernel,
    Model,
    check_variation_bound,
    flock_geometry,
    solve_flock_diameter,
)
from flocking_lab.matrixcalc import VelGradDecomp, decompose, e_variable, gap_forcing, vorticity_forcing
from flocking_lab.profiles import DensityProfile, VelocityProfile
from flocking_lab.records import SeriesTable
from flocking_lab.verdict import RunOutcome, ThresholdVerdict

logger = logging.getLogger(__name__)

_MODEL_IDS = {Model.CS: 0, Model.MT: 1}
_RATE_FLOOR = 1e-3


@dataclass(frozen=True)
class Grid:
    """[−L/2, L/2]² 上の一様格子。配列の添字 [i, j] が (x₁, x₂) に対応"""

    L: float
    n: int

    def __post_init__(self):
        if not self.L > 0:
            raise DomainError(f"Domain side must be positive, got {self.L}")
        if self.n < 4:
            raise DomainError(f"Grid needs at least 4 cells per axis, got {self.n}")

    @property
    def delta(self) -> float:
        return self.L / self.n

    @property
    def centers(self) -> np.ndarray:
        return -0.5 * self.L + (np.arange(self.n) + 0.5) * self.delta

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.centers, self.centers, indexing="ij")


@dataclass(frozen=True)
class GridState2D:
    grid: Grid
    rho: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u_inf: tuple[float, float]
    model: Model
    kernel: InfluenceKernel
    t: float = 0.0
    alignment_radius: float | None = None
    rho_tol: float | None = None

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n)
        for name in ("rho", "u1", "u2"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise DomainError(f"Field {name} has shape {value.shape}, expected {shape}")
            object.__setattr__(self, name, value)
        if np.any(self.rho < 0):
            raise DomainError("Density must be non-negative")
        object.__setattr__(self, "u_inf", (float(self.u_inf[0]), float(self.u_inf[1])))
        object.__setattr__(self, "model", Model(self.model))

    @property
    def mass(self) -> float:
        return float(self.rho.sum() * self.grid.delta**2)

    @property
    def support_tol(self) -> float:
        """台の閾値 rho_tol（既定は 10⁻⁸·m0/L²）"""
        if self.rho_tol is not None:
            return self.rho_tol
        return RHO_TOL_FACTOR * self.mass / self.grid.L**2

    @cached_property
    def effective_kernel(self) -> InfluenceKernel:
        """整列半径で切断したカーネル"""
        if self.alignment_radius is None:
            return self.kernel
        horizon = min(self.kernel.horizon or math.inf, self.alignment_radius)
        return self.kernel.with_horizon(horizon)

    @property
    def support(self) -> np.ndarray:
        return self.rho > self.support_tol


@dataclass(frozen=True)
class DiagRow:
    t: float
    V: float
    D: float
    min_e: float
    max_e: float
    max_eta_S: float
    max_abs_omega: float
    max_abs_div: float
    max_grad_norm: float
    max_residual: float
    max_gap_forcing: float
    max_abs_vorticity_forcing: float
    max_trace_sq: float
    mass: float
    momentum1: float
    momentum2: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DIAG_COLUMNS = tuple(f.name for f in fields(DiagRow))


@dataclass
class Run2D:
    table: SeriesTable
    outcome: RunOutcome
    final: GridState2D
    snapshots: list[GridState2D] = field(default_factory=list)


@dataclass(frozen=True)
class CarriedGradients:
    """
    初期の台のセル中心から特性線に沿って運ぶ速度勾配

    y の行は (x₁, x₂, m11, m12, m21, m22)。M は DM/Dt = −M² − kM + R に従い、
    k は CS で φ*ρ、MT でホライズンマスクの指示関数です。
    1ステップの間、速度・k・R はステップ開始時の格子場を双線形補間した値で凍結します。
    """

    y: np.ndarray

    @classmethod
    def seed(cls, state: GridState2D) -> "CarriedGradients":
        support = state.support
        x1, x2 = state.grid.mesh()
        decomp = gradient_field(state)
        entries = [np.asarray(m)[support] for m in (decomp.m11, decomp.m12, decomp.m21, decomp.m22)]
        return cls(np.stack([x1[support], x2[support], *entries]))

    @property
    def rate(self) -> float:
        return float(np.abs(self.y[2:]).max()) if self.y.shape[1] else 0.0

    @property
    def min_divergence(self) -> float:
        return float((self.y[2] + self.y[5]).min()) if self.y.shape[1] else 0.0

    def advance(self, state: GridState2D, dt: float, h: np.ndarray | None = None) -> "CarriedGradients":
        """state の場を凍結して RK4 で dt だけ進める（h は CS の φ*ρ を再利用するとき）"""
        if state.model is Model.CS:
            damping = convolve(state.rho, state.effective_kernel, state.grid) if h is None else h
        else:
            damping = horizon_mask(state).astype(float)
        frozen = np.stack([state.u1, state.u2, damping, *residual_field(state)])

        def carried_rhs(_t: float, y: np.ndarray) -> np.ndarray:
            return _carried_rhs(y, frozen, state.grid)

        return CarriedGradients(rk4_step(self.y, state.t, dt, carried_rhs))

    def blowup_reason(self, eps_blow: float) -> str:
        if not np.all(np.isfinite(self.y)):
            return "non-finite carried gradient"
        d_min = self.min_divergence
        if d_min < -1.0 / eps_blow:
            return f"carried divergence {d_min:.3e} below {-1.0 / eps_blow:.3e}"
        return ""


def from_profiles(
    density: DensityProfile,
    velocity: VelocityProfile,
    grid: Grid,
    model: Model,
    kernel: InfluenceKernel,
    rho_tol: float | None = None,
) -> GridState2D:
    """
    プロファイルを格子のセル中心で標本化して初期状態を作る

    Σρ·Δ² が設定質量と一致するように ρ を再スケールし、最外周を u∞ に固定し、
    整列半径 min(D∞, 台の半径) を求めて保存します。
    """
    x1, x2 = grid.mesh()
    rho = density(x1, x2)
    sampled = float(rho.sum() * grid.delta**2)
    if not sampled > 0:
        raise EmptySupport("Density profile has no mass on the grid")
    rho = rho * (density.mass / sampled)
    u1, u2 = velocity.value_2d(x1, x2)
    u_inf = velocity.far_field
    state = GridState2D(grid, rho, u1, u2, (u_inf[0], u_inf[1]), model, kernel, rho_tol=rho_tol)
    state = replace(state, u1=_pin_ring(state.u1, u_inf[0]), u2=_pin_ring(state.u2, u_inf[1]))

    D0, V0 = support_diameters(state)
    try:
        D_inf = solve_flock_diameter(kernel, density.mass, D0, V0)
    except NoFiniteFlockDiameter as e:
        logger.warning(f"⚠️ {e}; alignment radius falls back to the kernel support")
        D_inf = math.inf
    radius = min(D_inf, kernel.support_radius)
    if 0.5 * D0 + radius > 0.5 * grid.L and math.isfinite(radius):
        logger.warning(f"⚠️ Support ({D0:.3g}) plus alignment radius ({radius:.3g}) exceeds the box L={grid.L}")
    return replace(state, alignment_radius=radius if math.isfinite(radius) else None)


def convolve(field_values: np.ndarray, kernel: InfluenceKernel, grid: Grid) -> np.ndarray:
    """(φ*f)(x_i) ≈ Σ_j f_j φ(|x_i − x_j|) Δ²（ゼロパディング FFT、非周期）"""
    stencil = _stencil(kernel, grid.n, grid.delta, "value")
    return fftconvolve(field_values, stencil, mode="same") * grid.delta**2


def convolve_direct(field_values: np.ndarray, kernel: InfluenceKernel, grid: Grid) -> np.ndarray:
    """直接の二重和による参照実装（O(n⁴)、小さな格子の検証用）"""
    x1, x2 = grid.mesh()
    out = np.zeros_like(x1)
    for i, j in zip(*np.nonzero(field_values)):
        out += field_values[i, j] * kernel.eval(np.hypot(x1 - x1[i, j], x2 - x2[i, j]))
    return out * grid.delta**2


def convolve_gradient(field_values: np.ndarray, kernel: InfluenceKernel, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(∂₁(φ*f), ∂₂(φ*f))。ステンシルは φ'(r)·z_k/r（r = 0 で 0）"""
    scale = grid.delta**2
    return (
        fftconvolve(field_values, _stencil(kernel, grid.n, grid.delta, "d1"), mode="same") * scale,
        fftconvolve(field_values, _stencil(kernel, grid.n, grid.delta, "d2"), mode="same") * scale,
    )


def horizon_mask(state: GridState2D) -> np.ndarray:
    """{x : dist(x, supp ρ) < 整列半径}（半径が無いときは格子全体）"""
    support = state.support
    if not np.any(support):
        return np.zeros_like(support)
    if state.alignment_radius is None:
        return np.ones_like(support)
    distance = distance_transform_edt(~support, sampling=state.grid.delta)
    return distance < state.alignment_radius


def alignment_force(state: GridState2D, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    整列力 (F1, F2)

    Raises:
        VacuumDivision: MT でマスク内の φ*ρ が下限 10⁻¹²·m0/L² を下回る
    """
    return _force(state.rho, state.u1, state.u2, state, horizon_mask(state) if mask is None else mask)


def step(state: GridState2D, dt: float, cfl: float = DEFAULT_CFL) -> GridState2D:
    """
    SSP-RK2 で dt だけ進める（ホライズンマスクはステップ開始時に固定）

    Raises:
        StepSizeError: dt > cfl·Δ/(max|u| + ε)
    """
    limit = cfl * state.grid.delta / (_max_speed(state.u1, state.u2) + VELOCITY_EPS)
    if not 0 < dt <= limit:
        raise StepSizeError(f"dt={dt:.3e} violates CFL limit {limit:.3e}")
    mask = horizon_mask(state)

    def packed_rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return _rhs(y, state, mask)

    def pin(y: np.ndarray) -> np.ndarray:
        y = y.copy()
        y[1] = _pin_ring(y[1], state.u_inf[0])
        y[2] = _pin_ring(y[2], state.u_inf[1])
        return y

    y = ssprk2_step(np.stack([state.rho, state.u1, state.u2]), state.t, dt, packed_rhs, limiter=pin)
    # 丸め誤差による −0 以下の値のみ除去（LLF + CFL は正値性を保つ）
    rho = np.maximum(y[0], 0.0)
    return replace(state, rho=rho, u1=y[1], u2=y[2], t=state.t + dt)


def gradient_field(state: GridState2D) -> VelGradDecomp:
    """
    セルごとの速度勾配 M_ij = ∂_j u_i の分解

    速度は格子全体で定義されているので内部は中心差分、格子の端は片側差分です。
    """
    d = state.grid.delta
    m11, m12 = np.gradient(state.u1, d, d)
    m21, m22 = np.gradient(state.u2, d, d)
    return decompose(m11, m12, m21, m22)


def residual_field(state: GridState2D) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    交換子残差 (R11, R12, R21, R22)

    CS: R_ij = ∂_j φ*(ρu_i) − u_i ∂_j φ*ρ
    MT: R_ij = (∂_j φ*(ρu_i) − Ā_i ∂_j φ*ρ)/φ*ρ（Ā = φ*(ρu)/φ*ρ、マスクの外は 0）
    """
    kernel, grid = state.effective_kernel, state.grid
    dh1, dh2 = convolve_gradient(state.rho, kernel, grid)
    dp11, dp12 = convolve_gradient(state.rho * state.u1, kernel, grid)
    dp21, dp22 = convolve_gradient(state.rho * state.u2, kernel, grid)
    if state.model is Model.CS:
        return (
            dp11 - state.u1 * dh1,
            dp12 - state.u1 * dh2,
            dp21 - state.u2 * dh1,
            dp22 - state.u2 * dh2,
        )
    mask = horizon_mask(state)
    h = convolve(state.rho, kernel, grid)
    safe_h = np.where(mask, h, 1.0)
    mean1 = convolve(state.rho * state.u1, kernel, grid) / safe_h
    mean2 = convolve(state.rho * state.u2, kernel, grid) / safe_h
    parts = (dp11 - mean1 * dh1, dp12 - mean1 * dh2, dp21 - mean2 * dh1, dp22 - mean2 * dh2)
    return tuple(np.where(mask, p / safe_h, 0.0) for p in parts)


def support_diameters(state: GridState2D) -> tuple[float, float]:
    """台の直径 D と台の上の速度直径 V"""
    support = state.support
    if not np.any(support):
        raise EmptySupport(f"No cell has rho > {state.support_tol:.3e}")
    x1, x2 = state.grid.mesh()
    D = point_set_diameter(np.column_stack([x1[support], x2[support]]))
    V = point_set_diameter(np.column_stack([state.u1[support], state.u2[support]]))
    return D, V


def diagnostics(state: GridState2D) -> DiagRow:
    """
    台 {rho > rho_tol} 上の診断量

    強制項の列は η_S の q、ω の ½(R21 − R12)、d の方程式に入る tr(M²) の台の上での極値です。
    """
    support = state.support
    D, V = support_diameters(state)
    decomp = gradient_field(state)
    h = convolve(state.rho, state.effective_kernel, state.grid) if state.model is Model.CS else 0.0
    e = np.asarray(e_variable(decomp, h, state.model))[support]
    residuals = residual_field(state)
    cell = state.grid.delta**2
    return DiagRow(
        t=state.t,
        V=V,
        D=D,
        min_e=float(e.min()),
        max_e=float(e.max()),
        max_eta_S=float(decomp.eta_s[support].max()),
        max_abs_omega=float(np.abs(decomp.omega[support]).max()),
        max_abs_div=float(np.abs(decomp.d[support]).max()),
        max_grad_norm=float(decomp.frobenius[support].max()),
        max_residual=float(max(np.abs(r[support]).max() for r in residuals)),
        max_gap_forcing=float(np.asarray(gap_forcing(decomp, *residuals))[support].max()),
        max_abs_vorticity_forcing=float(np.abs(vorticity_forcing(residuals[1], residuals[2]))[support].max()),
        max_trace_sq=float(np.asarray(decomp.trace_sq)[support].max()),
        mass=state.mass,
        momentum1=float((state.rho * state.u1).sum() * cell),
        momentum2=float((state.rho * state.u2).sum() * cell),
    )


def threshold_report(state0: GridState2D) -> ThresholdVerdict:
    """
    初期データに対する 2D 臨界閾値の条件を評価

    (i) 発散: div u₀ + φ*ρ₀ ≥ 0（CS）、div u₀ + 1 ≥ 0（MT）をホライズンマスク上で
    (ii) ギャップ: max η_S0 ≤ ½m0φ∞（CS）、≤ ½（MT）
    (iii) 初期速度変動の上限
    格子全体（ℝ² 全体の読み）の発散余裕も divergence_margin_global に記録します。
    台の外（真空）の速度が u∞ と異なる場合、LLF 流束で密度がそこへ届き得るので
    (iii) の V0 は格子全体の速度直径で評価します。
    """
    model = state0.model
    mask = horizon_mask(state0)
    decomp = gradient_field(state0)
    h = convolve(state0.rho, state0.effective_kernel, state0.grid) if model is Model.CS else 0.0
    e = np.asarray(e_variable(decomp, h, model)) + np.zeros_like(state0.rho)
    masked_e = np.where(mask, e, np.inf)
    flat = int(np.argmin(masked_e))
    i, j = np.unravel_index(flat, e.shape)
    centers = state0.grid.centers
    location = (float(centers[i]), float(centers[j]))
    gap_max = float(decomp.eta_s[mask].max())

    m0 = state0.mass
    D0, V0 = support_diameters(state0)
    notes: list[str] = []
    deviation = _vacuum_deviation(state0)
    if deviation > VELOCITY_EPS:
        V0 = max(V0, point_set_diameter(np.column_stack([state0.u1.ravel(), state0.u2.ravel()])))
        logger.warning(f"⚠️ Vacuum velocity differs from u_inf by {deviation:.3g}; V0 is taken over the grid ({V0:.4g})")
        notes.append(f"vacuum velocity differs from u_inf by {deviation:.6g}; V0 taken over the grid")
    try:
        bound = check_variation_bound(state0.kernel, model, m0, D0, V0)
        geometry = flock_geometry(state0.kernel, m0, D0, V0)
        slack, holds = bound.margin, bound.holds
        gap_bound = 0.5 * m0 * bound.phi_inf if model is Model.CS else 0.5
    except NoFiniteFlockDiameter as e_:
        notes.append(str(e_))
        geometry, slack, holds = None, -math.inf, False
        gap_bound = math.inf if model is Model.CS else 0.5

    verdict = ThresholdVerdict.classify(
        model,
        float(masked_e.flat[flat]),
        gap_max,
        gap_bound,
        slack,
        holds,
        location,
        divergence_margin_global=float(e.min()),
        geometry=geometry,
        notes=tuple(notes),
    )
    logger.info(
        f"Threshold report ({model}): {verdict.verdict}, divergence margin {verdict.divergence_margin:.4g}, "
        f"gap {gap_max:.4g}/{gap_bound:.4g}, variation slack {slack:.4g}"
    )
    return verdict


def run(
    state0: GridState2D,
    t_end: float,
    cfl: float = DEFAULT_CFL,
    dt_max: float = math.inf,
    output_interval: float | None = None,
    grad_cap: float = GRAD_CAP,
    eps_blow: float = EPS_BLOW,
    theta: float = STEP_THETA,
) -> Run2D:
    """
    CFL 制限付きステップを繰り返し、出力間隔ごとと t_end で診断量を記録

    初期の台のセルから特性線に沿って速度勾配 M を運び（CarriedGradients）、
    dt は θ / max|M| でも制限します。次のいずれかで BlewUp として停止します:
    非有限値、台が空になる、台の上で max|∇u| > grad_cap、運んだ tr M < −1/eps_blow、
    θ / max|M| < DT_MIN。判定は出力間隔にも診断行にも依存しません。
    """
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    interval = output_interval or t_end
    delta = state0.grid.delta
    table = SeriesTable(DIAG_COLUMNS)
    table.append(diagnostics(state0).as_dict())
    snapshots = [state0]
    next_output = state0.t + interval
    snap = DT_MIN * max(1.0, abs(t_end))
    state = state0
    carried = CarriedGradients.seed(state0)
    outcome = RunOutcome.completed()
    logger.info(f"🚀 Running 2D {state0.model} on {state0.grid.n}² grid to t={t_end}")

    while t_end - state.t > snap:
        h = convolve(state.rho, state.effective_kernel, state.grid)
        stiffness = float(h.max()) if state.model is Model.CS else 1.0
        gradient_step = theta / max(carried.rate, _RATE_FLOOR)
        if gradient_step < DT_MIN:
            outcome = RunOutcome.blew_up(state.t, "step size collapse")
            break
        stop = min(next_output, t_end)
        dt = min(
            cfl * delta / (_max_speed(state.u1, state.u2) + VELOCITY_EPS),
            cfl / max(stiffness, VELOCITY_EPS),
            dt_max,
            gradient_step,
            stop - state.t,
        )
        try:
            new_state = step(state, dt, cfl)
            carried = carried.advance(state, dt, h)
        except VacuumDivision as e:
            outcome = RunOutcome.blew_up(state.t, f"vacuum division: {e}")
            break
        if stop - new_state.t < snap:
            new_state = replace(new_state, t=stop)

        reason = _blowup_reason(new_state, grad_cap) or carried.blowup_reason(eps_blow)
        if reason:
            outcome = RunOutcome.blew_up(new_state.t, reason)
            break
        state = new_state
        if state.t >= next_output - snap or t_end - state.t <= snap:
            table.append(diagnostics(state).as_dict())
            snapshots.append(state)
            next_output += interval

    if outcome.is_blowup:
        logger.info(f"⚠️ 2D run stopped: {outcome}")
    else:
        logger.info(f"✅ 2D run completed at t={state.t:.6g}")
    return Run2D(table, outcome, state, snapshots)


def write_checkpoint(path: Path, state: GridState2D) -> Path:
    """
    バイナリチェックポイントを書き出す

    magic "FLCK", u32 version, u32 dim, u32 n, f64 L, f64 t, u32 model id,
    u32 長さ + カーネル仕様の UTF-8 JSON, u∞ (2×f64), 整列半径 f64（無ければ NaN）,
    最後に rho, u1, u2 を行優先のリトルエンディアン f64 で。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = json.dumps(state.kernel.to_spec(), sort_keys=True).encode("utf-8")
    radius = math.nan if state.alignment_radius is None else state.alignment_radius
    header = b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<IIIddI", CHECKPOINT_VERSION, 2, state.grid.n, state.grid.L, state.t, _MODEL_IDS[state.model]),
        struct.pack("<I", len(spec)),
        spec,
        struct.pack("<ddd", *state.u_inf, radius),
    ])
    with path.open("wb") as f:
        f.write(header)
        for values in (state.rho, state.u1, state.u2):
            f.write(np.ascontiguousarray(values, dtype="<f8").tobytes(order="C"))
    return path


def read_checkpoint(path: Path) -> GridState2D:
    """
    Raises:
        CheckpointError: magic・バージョン・長さの不一致
    """
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    offset = 4
    head = struct.calcsize("<IIIddI")
    version, dim, n, L, t, model_id = struct.unpack_from("<IIIddI", data, offset)
    if version != CHECKPOINT_VERSION or dim != 2:
        raise CheckpointError(f"{path}: unsupported version {version} / dim {dim}")
    offset += head
    (spec_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    kernel = InfluenceKernel.from_spec(json.loads(data[offset:offset + spec_len].decode("utf-8")))
    offset += spec_len
    u_inf1, u_inf2, radius = struct.unpack_from("<ddd", data, offset)
    offset += 24

    count = n * n
    if len(data) - offset != 3 * count * 8:
        raise CheckpointError(f"{path}: expected {3 * count * 8} field bytes, found {len(data) - offset}")
    rho, u1, u2 = np.frombuffer(data, dtype="<f8", count=3 * count, offset=offset).reshape(3, n, n)
    model = next(m for m, i in _MODEL_IDS.items() if i == model_id)
    return GridState2D(
        Grid(L, n), rho.copy(), u1.copy(), u2.copy(), (u_inf1, u_inf2), model, kernel, t,
        alignment_radius=None if math.isnan(radius) else radius,
    )


@lru_cache(maxsize=32)
def _stencil(kernel: InfluenceKernel, n: int, delta: float, kind: str) -> np.ndarray:
    offsets = np.arange(-(n - 1), n) * delta
    z1, z2 = np.meshgrid(offsets, offsets, indexing="ij")
    r = np.hypot(z1, z2)
    if kind == "value":
        stencil = kernel.eval(r)
    else:
        safe = np.where(r > 0, r, 1.0)
        z = z1 if kind == "d1" else z2
        stencil = np.where(r > 0, kernel.eval_deriv(r) * z / safe, 0.0)
    stencil.setflags(write=False)
    return stencil


def _force(rho, u1, u2, state: GridState2D, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kernel, grid = state.effective_kernel, state.grid
    h = convolve(rho, kernel, grid)
    p1 = convolve(rho * u1, kernel, grid)
    p2 = convolve(rho * u2, kernel, grid)
    if state.model is Model.CS:
        return p1 - u1 * h, p2 - u2 * h

    floor = RHO_FLOOR_FACTOR * state.mass / grid.L**2
    if np.any(mask) and float(h[mask].min()) < floor:
        raise VacuumDivision(f"phi*rho={float(h[mask].min()):.3e} below floor {floor:.3e} inside the horizon mask")
    safe_h = np.where(mask, h, 1.0)
    return np.where(mask, p1 / safe_h - u1, 0.0), np.where(mask, p2 / safe_h - u2, 0.0)


def _rhs(y: np.ndarray, state: GridState2D, mask: np.ndarray) -> np.ndarray:
    rho, u1, u2 = y
    delta = state.grid.delta
    f1, f2 = _force(rho, u1, u2, state, mask)

    flux1 = _llf_flux(rho, u1, axis=0)
    flux2 = _llf_flux(rho, u2, axis=1)
    drho = -(np.diff(flux1, axis=0) + np.diff(flux2, axis=1)) / delta

    du1 = -_upwind_advection(u1, u1, u2, delta) + f1
    du2 = -_upwind_advection(u2, u1, u2, delta) + f2
    return np.stack([drho, du1, du2])


def _carried_rhs(y: np.ndarray, frozen: np.ndarray, grid: Grid) -> np.ndarray:
    coords = (y[:2] + 0.5 * grid.L) / grid.delta - 0.5
    v1, v2, k, r11, r12, r21, r22 = (map_coordinates(f, coords, order=1, mode="nearest") for f in frozen)
    m11, m12, m21, m22 = y[2:]
    return np.stack([
        v1,
        v2,
        -(m11 * m11 + m12 * m21) - k * m11 + r11,
        -(m11 * m12 + m12 * m22) - k * m12 + r12,
        -(m21 * m11 + m22 * m21) - k * m21 + r21,
        -(m21 * m12 + m22 * m22) - k * m22 + r22,
    ])


def _llf_flux(rho: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    """軸方向の面流束（外周の面は 0）。形状は該当軸で n + 1"""
    lo = [slice(None)] * 2
    hi = [slice(None)] * 2
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    rho_l, rho_r = rho[tuple(lo)], rho[tuple(hi)]
    u_l, u_r = u[tuple(lo)], u[tuple(hi)]
    speed = np.maximum(np.abs(u_l), np.abs(u_r))
    interior = 0.5 * (rho_l * u_l + rho_r * u_r) - 0.5 * speed * (rho_r - rho_l)
    pad = [(0, 0)] * 2
    pad[axis] = (1, 1)
    return np.pad(interior, pad)


def _upwind_advection(q: np.ndarray, u1: np.ndarray, u2: np.ndarray, delta: float) -> np.ndarray:
    """u·∇q の1次風上近似（格子の外側は端の値を複製）"""
    padded = np.pad(q, 1, mode="edge")
    center = padded[1:-1, 1:-1]
    back1 = (center - padded[:-2, 1:-1]) / delta
    fwd1 = (padded[2:, 1:-1] - center) / delta
    back2 = (center - padded[1:-1, :-2]) / delta
    fwd2 = (padded[1:-1, 2:] - center) / delta
    return u1 * np.where(u1 > 0, back1, fwd1) + u2 * np.where(u2 > 0, back2, fwd2)


def _pin_ring(u: np.ndarray, value: float) -> np.ndarray:
    u = np.array(u, dtype=float, copy=True)
    u[0, :] = u[-1, :] = value
    u[:, 0] = u[:, -1] = value
    return u


def _max_speed(u1: np.ndarray, u2: np.ndarray) -> float:
    return float(np.sqrt(u1 * u1 + u2 * u2).max())


def _vacuum_deviation(state: GridState2D) -> float:
    vacuum = ~state.support
    if not np.any(vacuum):
        return 0.0
    return float(np.hypot(state.u1[vacuum] - state.u_inf[0], state.u2[vacuum] - state.u_inf[1]).max())


def _blowup_reason(state: GridState2D, grad_cap: float) -> str:
    if not (np.all(np.isfinite(state.rho)) and np.all(np.isfinite(state.u1)) and np.all(np.isfinite(state.u2))):
        return "non-finite field"
    support = state.support
    if not np.any(support):
        return "density left the grid"
    decomp = gradient_field(state)
    grad = float(decomp.frobenius[support].max())
    if grad > grad_cap:
        return f"gradient {grad:.3e} exceeds cap {grad_cap:.3e}"
    return ""
