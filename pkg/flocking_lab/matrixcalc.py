"""
2×2 速度勾配の点ごとの代数

M_ij = ∂_j u_i を発散 d、スケール渦度 ω = ½(∂₁u₂ − ∂₂u₁)、対称部 S の固有値 μ₁ ≤ μ₂、
スペクトルギャップ η_S = μ₂ − μ₁、符号付き η²_M = 2·tr(M²) − d² に分解します。
全ての関数はスカラーと numpy 配列の両方を受け付けます（配列の場合は格子全体の分解）。
"""

from dataclasses import dataclass

import numpy as np

from flocking_lab.exceptions import NumericError
from flocking_lab.kernels import Model


@dataclass(frozen=True)
class VelGradDecomp:
    """速度勾配の分解。各フィールドはスカラーまたは同形状の配列"""

    m11: np.ndarray | float
    m12: np.ndarray | float
    m21: np.ndarray | float
    m22: np.ndarray | float
    d: np.ndarray | float
    omega: np.ndarray | float
    mu1: np.ndarray | float
    mu2: np.ndarray | float
    eta_s: np.ndarray | float
    eta_m_sq: np.ndarray | float

    @property
    def trace_sq(self):
        """tr(M²) = (d² + η²_M)/2"""
        return self.m11**2 + 2.0 * self.m12 * self.m21 + self.m22**2

    @property
    def frobenius(self):
        return np.sqrt(self.m11**2 + self.m12**2 + self.m21**2 + self.m22**2)


def decompose(m11, m12, m21, m22) -> VelGradDecomp:
    """
    M = [[m11, m12], [m21, m22]] を分解

    η_S は閉形式 sqrt((m11 − m22)² + (m12 + m21)²) で計算し、反復固有値ソルバーは使いません。
    η²_M は複素固有値で負になり得るため符号付きスカラーのまま保持します。

    Raises:
        NumericError: 非有限の成分
    """
    entries = [np.asarray(m, dtype=float) for m in (m11, m12, m21, m22)]
    if not all(np.all(np.isfinite(m)) for m in entries):
        raise NumericError("Velocity gradient has non-finite entries")
    a, b, c, e = entries

    d = a + e
    omega = 0.5 * (c - b)
    eta_s = np.hypot(a - e, b + c)
    # 2·tr(M²) − d² を展開した形（相殺誤差を避ける）
    eta_m_sq = (a - e) ** 2 + 4.0 * b * c
    mu1 = 0.5 * (d - eta_s)
    mu2 = 0.5 * (d + eta_s)

    scalar = all(np.ndim(m) == 0 for m in (m11, m12, m21, m22))
    values = (a, b, c, e, d, omega, mu1, mu2, eta_s, eta_m_sq)
    if scalar:
        values = tuple(float(v) for v in values)
    return VelGradDecomp(*values)


def e_variable(decomp: VelGradDecomp, conv_rho=0.0, model: Model = Model.CS):
    """e = d + φ*ρ（CS）または e = d + 1（MT）"""
    if Model(model) is Model.MT:
        return decomp.d + 1.0
    return decomp.d + conv_rho


def gap_forcing(decomp: VelGradDecomp, r11, r12, r21, r22):
    """
    η_S の強制項 q = ⟨s₂, R_sym s₂⟩ − ⟨s₁, R_sym s₁⟩

    S の正規直交固有ベクトルを角度 θ で表すと q = (R11 − R22)cos2θ + (R12 + R21)sin2θ。
    η_S = 0 では固有ベクトルが不定なので上側微分 |(R11 − R22, R12 + R21)| を返します。
    """
    diff = np.asarray(r11, dtype=float) - np.asarray(r22, dtype=float)
    cross = np.asarray(r12, dtype=float) + np.asarray(r21, dtype=float)
    eta = np.asarray(decomp.eta_s, dtype=float)
    degenerate = eta <= 0.0
    safe_eta = np.where(degenerate, 1.0, eta)
    cos2 = (np.asarray(decomp.m11) - np.asarray(decomp.m22)) / safe_eta
    sin2 = (np.asarray(decomp.m12) + np.asarray(decomp.m21)) / safe_eta
    q = np.where(degenerate, np.hypot(diff, cross), diff * cos2 + cross * sin2)
    return float(q) if np.ndim(q) == 0 else q


def vorticity_forcing(r12, r21):
    """ω' + eω = ½(R21 − R12)（ω = ½(M21 − M12) と同じ符号規約）"""
    return 0.5 * (r21 - r12)
