"""
エージェントベースの整列モデル（1D / 2D）

dv_i/dt = (1/deg_i) Σ_j m_j φ(|x_i − x_j|)(v_j − v_i)

- CS: 重み m_j が 1/N を既に含むので deg_i ≡ 1（二体問題の整列レートは m0·φ）
- MT: deg_i = Σ_j m_j φ(|x_i − x_j|)（自己項 m_i φ(0) を含むので常に正）

直接 O(N²) のペア和で計算する小規模 N 向けのオラクルです。
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from flocking_lab.exceptions import DomainError
from flocking_lab.geometry import point_set_diameter
from flocking_lab.integrators import rk4_step
from flocking_lab.kernels import InfluenceKernel, Model
from flocking_lab.profiles import DensityProfile, VelocityProfile, quantile_midpoints
from flocking_lab.records import SeriesTable, write_csv_rows

logger = logging.getLogger(__name__)

AGENT_COLUMNS = ("t", "D", "V", "momentum1", "momentum2")


@dataclass(frozen=True)
class AgentEnsemble:
    """位置 x (N, dim)、速度 v (N, dim)、重み m (N,)"""

    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    model: Model
    kernel: InfluenceKernel
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        m = np.broadcast_to(np.asarray(self.m, dtype=float), (len(x),)).copy()
        if x.shape != v.shape or x.shape[1] not in (1, 2):
            raise DomainError(f"Positions {x.shape} and velocities {v.shape} must match with dim 1 or 2")
        if np.any(m <= 0):
            raise DomainError("Agent weights must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "model", Model(self.model))

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def mass(self) -> float:
        return float(self.m.sum())

    @property
    def momentum(self) -> np.ndarray:
        return self.m @ self.v


@dataclass
class AgentRun:
    table: SeriesTable
    snapshots: list[AgentEnsemble] = field(default_factory=list)
    final: AgentEnsemble | None = None


def rhs(ensemble: AgentEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """(dx/dt, dv/dt) を返す"""
    return ensemble.v.copy(), _acceleration(ensemble.x, ensemble.v, ensemble.m, ensemble.model, ensemble.kernel)


def step(ensemble: AgentEnsemble, dt: float) -> AgentEnsemble:
    """古典的 RK4 で dt だけ進める"""
    if not dt > 0:
        raise DomainError(f"Time step must be positive, got {dt}")
    m, model, kernel = ensemble.m, ensemble.model, ensemble.kernel

    def packed_rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return np.stack([y[1], _acceleration(y[0], y[1], m, model, kernel)])

    y = rk4_step(np.stack([ensemble.x, ensemble.v]), ensemble.t, dt, packed_rhs)
    return replace(ensemble, x=y[0], v=y[1], t=ensemble.t + dt)


def diameters(ensemble: AgentEnsemble) -> tuple[float, float]:
    """(D, V): 位置と速度の最大ペア距離（N = 1 では両方 0）"""
    return point_set_diameter(ensemble.x), point_set_diameter(ensemble.v)


def run(ensemble: AgentEnsemble, t_end: float, dt: float, record_every: int = 1) -> AgentRun:
    """
    固定ステップで t_end まで積分し、D・V・運動量の系列を記録

    ステップ数は ceil(t_end/dt) とし、t_end にちょうど到達するよう dt を縮めます。
    """
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    n_steps = max(1, int(np.ceil(t_end / dt - 1e-9)))
    dt_eff = t_end / n_steps
    table = SeriesTable(AGENT_COLUMNS)
    result = AgentRun(table, [ensemble])
    _record(table, ensemble)

    logger.info(f"🚀 Running {ensemble.size} agents ({ensemble.model}) to t={t_end} with dt={dt_eff:.3g}")
    current = ensemble
    t0 = ensemble.t
    for k in range(1, n_steps + 1):
        current = step(current, dt_eff)
        # 丸め誤差の蓄積を避けて時刻を再設定
        current = replace(current, t=t0 + k * dt_eff)
        if k % record_every == 0 or k == n_steps:
            _record(table, current)
            result.snapshots.append(current)
    result.final = current
    logger.info(f"✅ Agent run finished: V={table.last()['V']:.3e}")
    return result


def sample_from_macro(
    density: DensityProfile,
    velocity: VelocityProfile,
    N: int,
    seed: int,
    model: Model,
    kernel: InfluenceKernel,
) -> AgentEnsemble:
    """
    単一速度（monokinetic）閉包で巨視的初期データから N 体のアンサンブルを作る

    1D は分位点の中点による決定論的層別サンプリング、2D はスクランブル Sobol 点列による
    棄却法です。重みは全て m0/N、速度は v_i = u₀(x_i)。
    """
    if N < 1:
        raise DomainError(f"Agent count must be >= 1, got {N}")
    if density.dim == 1:
        x = quantile_midpoints(density, N)
        v = velocity.value_1d(x)
    else:
        x = _rejection_sample_2d(density, N, seed)
        v1, v2 = velocity.value_2d(x[:, 0], x[:, 1])
        v = np.column_stack([v1, v2])
    return AgentEnsemble(x, v, density.mass / N, model, kernel)


def write_trajectory_csv(path: Path, snapshots: list[AgentEnsemble]) -> Path:
    """列 t, i, x (または x1, x2), v (または v1, v2)"""
    dim = snapshots[0].dim
    names = ("x", "v") if dim == 1 else ("x1", "x2", "v1", "v2")
    fieldnames = ("t", "i", *names)

    def rows():
        for snap in snapshots:
            values = np.hstack([snap.x, snap.v])
            for i, row in enumerate(values):
                yield {"t": snap.t, "i": i, **dict(zip(names, row))}

    return write_csv_rows(path, rows(), fieldnames)


def _acceleration(x: np.ndarray, v: np.ndarray, m: np.ndarray, model: Model, kernel: InfluenceKernel) -> np.ndarray:
    weights = kernel.eval(cdist(x, x)) * m[None, :]
    degree = weights.sum(axis=1)
    force = weights @ v - degree[:, None] * v
    if model is Model.MT:
        return force / degree[:, None]
    return force


def _record(table: SeriesTable, ensemble: AgentEnsemble) -> None:
    D, V = diameters(ensemble)
    momentum = np.zeros(2)
    momentum[: ensemble.dim] = ensemble.momentum
    table.append({"t": ensemble.t, "D": D, "V": V, "momentum1": momentum[0], "momentum2": momentum[1]})


def _rejection_sample_2d(density: DensityProfile, N: int, seed: int) -> np.ndarray:
    c, radius = density.center, density.support_radius
    probe = np.linspace(-radius, radius, 257)
    p1, p2 = np.meshgrid(c[0] + probe, c[1] + probe, indexing="ij")
    rho_max = float(max(density(p1, p2).max(), density(np.array([c[0]]), np.array([c[1]]))[0]))
    if not rho_max > 0:
        raise DomainError("Density has zero mass")

    sobol = qmc.Sobol(d=2, scramble=True, seed=seed)
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    count = 0
    while count < N:
        points = c + radius * (2.0 * sobol.random(1024) - 1.0)
        keep = rng.random(len(points)) * rho_max < density(points[:, 0], points[:, 1])
        accepted.append(points[keep])
        count += int(keep.sum())
    return np.concatenate(accepted)[:N]
