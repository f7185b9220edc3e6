#!/usr/bin/env python3
"""2×2 速度勾配の分解のテスト"""

import math
import sys

import numpy as np
import pytest

from flocking_lab.exceptions import NumericError
from flocking_lab.kernels import Model
from flocking_lab.matrixcalc import decompose, e_variable, gap_forcing, vorticity_forcing


def test_diagonal_matrix():
    m = decompose(1.0, 0.0, 0.0, 3.0)
    assert (m.d, m.omega, m.eta_s, m.eta_m_sq) == (4.0, 0.0, 2.0, 4.0)
    assert (m.mu1, m.mu2) == (1.0, 3.0)
    assert isinstance(m.d, float)


def test_pure_rotation():
    m = decompose(0.0, -1.0, 1.0, 0.0)
    assert m.d == 0.0
    assert m.omega == 1.0
    assert m.eta_s == 0.0
    assert m.eta_m_sq == -4.0


def test_symmetric_matrix_by_hand():
    m = decompose(2.0, 1.0, 1.0, 0.0)
    assert m.d == 2.0
    assert m.omega == 0.0
    assert m.eta_s == pytest.approx(2.0 * math.sqrt(2.0))
    assert m.eta_m_sq == pytest.approx(8.0)
    assert (m.mu1, m.mu2) == pytest.approx((1.0 - math.sqrt(2.0), 1.0 + math.sqrt(2.0)))


def test_identities_on_random_matrices():
    rng = np.random.default_rng(1234)
    a, b, c, e = rng.uniform(-10.0, 10.0, size=(4, 100_000))
    m = decompose(a, b, c, e)
    scale = 1.0 + np.abs(a) + np.abs(b) + np.abs(c) + np.abs(e)

    np.testing.assert_array_less(np.abs(m.eta_m_sq - (m.eta_s**2 - 4.0 * m.omega**2)), 1e-10 * scale**2)
    np.testing.assert_array_less(np.abs(m.trace_sq - 0.5 * (m.d**2 + m.eta_m_sq)), 1e-10 * scale**2)
    np.testing.assert_array_less(np.abs(m.eta_s - np.sqrt((a - e) ** 2 + (b + c) ** 2)), 1e-10 * scale)
    np.testing.assert_array_less(np.abs(m.mu1 + m.mu2 - m.d), 1e-10 * scale)
    assert np.all(m.eta_s >= 0.0)
    assert np.all(m.mu1 <= m.mu2)


def test_symmetric_part_eigenvalues_match_numpy():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a, b, c, e = rng.uniform(-3.0, 3.0, size=4)
        m = decompose(a, b, c, e)
        sym = np.array([[a, 0.5 * (b + c)], [0.5 * (b + c), e]])
        np.testing.assert_allclose(np.linalg.eigvalsh(sym), [m.mu1, m.mu2], atol=1e-12)


def test_rotation_covariance():
    rng = np.random.default_rng(3)
    M = rng.uniform(-2.0, 2.0, size=(2, 2))
    base = decompose(*M.ravel())
    for theta in np.linspace(0.0, 2.0 * math.pi, 9):
        Q = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        rotated = decompose(*(Q @ M @ Q.T).ravel())
        for name in ("d", "omega", "eta_s", "eta_m_sq"):
            assert getattr(rotated, name) == pytest.approx(getattr(base, name), abs=1e-12)


def test_non_finite_entries_are_rejected():
    with pytest.raises(NumericError):
        decompose(1.0, math.nan, 0.0, 0.0)
    with pytest.raises(NumericError):
        decompose(np.array([1.0, math.inf]), 0.0, 0.0, 0.0)


def test_e_variable_cases():
    assert e_variable(decompose(-0.3, 0.0, 0.0, 0.0), 0.5, Model.CS) == pytest.approx(0.2)
    assert e_variable(decompose(-0.5, 0.0, 0.0, -0.5), 123.0, Model.MT) == pytest.approx(0.0)
    assert e_variable(decompose(0.0, 0.0, 0.0, 0.0), 0.7) == pytest.approx(0.7)


def test_gap_forcing_matches_eigenvector_projection():
    a, b, c, e = 1.0, 0.4, -0.2, -0.5
    m = decompose(a, b, c, e)
    R = np.array([[0.3, -0.1], [0.7, 0.2]])
    sym = np.array([[a, 0.5 * (b + c)], [0.5 * (b + c), e]])
    _, vectors = np.linalg.eigh(sym)
    s1, s2 = vectors[:, 0], vectors[:, 1]
    R_sym = 0.5 * (R + R.T)
    expected = s2 @ R_sym @ s2 - s1 @ R_sym @ s1
    assert gap_forcing(m, *R.ravel()) == pytest.approx(expected, abs=1e-12)


def test_gap_forcing_at_zero_gap_uses_upper_derivative():
    m = decompose(0.0, -1.0, 1.0, 0.0)
    assert gap_forcing(m, 0.5, 0.0, 0.0, 0.1) == pytest.approx(0.4)


def test_vorticity_forcing_sign():
    assert vorticity_forcing(0.2, 1.0) == pytest.approx(0.4)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
