#!/usr/bin/env python3
"""影響関数と D∞・変動上限のテスト"""

import math
import sys

import numpy as np
import pytest
from scipy.integrate import quad

from flocking_lab.exceptions import ConfigError, DomainError, NoFiniteFlockDiameter
from flocking_lab.kernels import (
    InfluenceKernel,
    KernelFamily,
    Model,
    check_global_condition,
    check_variation_bound,
    decay_rate,
    flock_geometry,
    solve_flock_diameter,
)

FAMILIES = [
    InfluenceKernel.exponential(1.0),
    InfluenceKernel.power_law(2.0),
    InfluenceKernel.power_law(0.5),
    InfluenceKernel.compact_bump(1.5),
]


@pytest.mark.parametrize("kernel", FAMILIES, ids=str)
def test_normalized_and_non_increasing(kernel):
    assert kernel.eval(0.0) == 1.0
    rng = np.random.default_rng(0)
    pairs = np.sort(rng.uniform(0.0, 5.0, size=(1000, 2)), axis=1)
    assert np.all(kernel.eval(pairs[:, 0]) >= kernel.eval(pairs[:, 1]))
    assert np.all(kernel.eval(pairs[:, 1]) >= 0.0)
    assert np.all(kernel.eval_deriv(pairs[:, 0]) <= 0.0)


def test_eval_cases():
    assert InfluenceKernel.exponential(1.0).eval(1.0) == pytest.approx(math.exp(-1.0))
    assert InfluenceKernel.power_law(2.0, horizon=3.0).eval(4.0) == 0.0
    values = InfluenceKernel.power_law(2.0).eval(np.array([0.0, 1.0]))
    np.testing.assert_allclose(values, [1.0, 0.25])


def test_negative_radius_is_rejected():
    with pytest.raises(DomainError):
        InfluenceKernel.exponential(1.0).eval(-0.1)


def test_tail_integral_cases():
    assert InfluenceKernel.exponential(1.0).tail_integral(0.0) == pytest.approx(1.0)
    assert math.isinf(InfluenceKernel.power_law(1.0).tail_integral(0.0))
    assert InfluenceKernel.power_law(2.0).tail_integral(0.0, 1.0) == pytest.approx(0.5)
    assert InfluenceKernel.power_law(0.0).tail_integral(1.0, 3.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        InfluenceKernel.exponential(1.0).tail_integral(2.0, 1.0)


@pytest.mark.parametrize("kernel", FAMILIES, ids=str)
def test_tail_integral_additive_and_matches_quadrature(kernel):
    a, b, c = 0.2, 0.9, 1.4
    total = kernel.tail_integral(a, c)
    assert total == pytest.approx(kernel.tail_integral(a, b) + kernel.tail_integral(b, c), abs=1e-12)
    reference, _ = quad(kernel.eval, a, c, epsabs=1e-13)
    assert total == pytest.approx(reference, rel=1e-9, abs=1e-12)


def test_horizon_truncates_tail_integral():
    kernel = InfluenceKernel.exponential(1.0, horizon=2.0)
    assert kernel.tail_integral(0.0) == pytest.approx(1.0 - math.exp(-2.0))
    assert kernel.support_radius == 2.0
    assert InfluenceKernel.exponential(1.0).support_radius == math.inf


def test_solve_flock_diameter_closed_forms():
    assert solve_flock_diameter(InfluenceKernel.power_law(2.0), 1.0, 0.0, 0.5) == pytest.approx(1.0, abs=1e-8)
    assert solve_flock_diameter(InfluenceKernel.exponential(1.0), 2.0, 0.0, 1.0) == pytest.approx(math.log(2.0), abs=1e-9)
    assert solve_flock_diameter(InfluenceKernel.compact_bump(1.0), 1.0, 0.3, 0.0) == 0.3


@pytest.mark.parametrize("kernel", FAMILIES, ids=str)
def test_flock_diameter_residual_and_monotonicity(kernel):
    m0, D0 = 1.0, 0.5
    previous = D0
    for V0 in (0.01, 0.05, 0.1, 0.15):
        D_inf = solve_flock_diameter(kernel, m0, D0, V0)
        assert D_inf >= previous
        assert abs(m0 * kernel.tail_integral(D0, D_inf) - V0) <= 1e-8 * max(V0, 1.0)
        previous = D_inf


def test_global_condition():
    assert check_global_condition(InfluenceKernel.power_law(1.0), 1.0, 0.0, 1e6)
    assert check_global_condition(InfluenceKernel.exponential(1.0), 1.0, 0.0, 0.9)
    bump = InfluenceKernel.compact_bump(1.0)
    assert not check_global_condition(bump, 1.0, 0.0, 2.0 * bump.l1_norm())
    with pytest.raises(NoFiniteFlockDiameter):
        solve_flock_diameter(InfluenceKernel.exponential(1.0), 1.0, 0.0, 1.5)


def test_variation_bound_cs_and_mt():
    kernel = InfluenceKernel.exponential(1.0)
    cs = check_variation_bound(kernel, Model.CS, 1.0, 0.0, 0.02)
    mt = check_variation_bound(kernel, Model.MT, 1.0, 0.0, 0.02)
    phi_inf = 0.98
    assert cs.D_inf == pytest.approx(-math.log(0.98), rel=1e-9)
    assert cs.phi_inf == pytest.approx(phi_inf, rel=1e-9)
    assert cs.bound == pytest.approx(min(1.0, phi_inf**2 / 4.0), rel=1e-9)
    assert cs.holds and mt.holds
    assert mt.bound == pytest.approx(cs.bound / (1.0 + 2.0 * phi_inf), rel=1e-9)
    assert mt.margin < cs.margin


def test_variation_bound_at_zero_variation():
    kernel = InfluenceKernel.compact_bump(2.0)
    result = check_variation_bound(kernel, Model.CS, 1.0, 0.5, 0.0)
    assert result.holds
    assert result.margin == pytest.approx(result.bound)


def test_one_dimensional_mt_variant_is_strict():
    kernel = InfluenceKernel.exponential(1.0)
    strict = check_variation_bound(kernel, Model.MT, 1.0, 0.0, 0.02, one_dimensional=True)
    assert strict.bound == pytest.approx(min(1.0, strict.phi_inf / 4.0), rel=1e-9)
    assert strict.holds


def test_max_abs_deriv():
    assert InfluenceKernel.exponential(2.0).max_abs_deriv(10.0) == pytest.approx(0.5)
    assert InfluenceKernel.power_law(3.0).max_abs_deriv(10.0) == pytest.approx(3.0)
    bump = InfluenceKernel.compact_bump(1.0)
    grid = np.linspace(0.0, 0.999, 20001)
    assert bump.max_abs_deriv(1.0) == pytest.approx(np.abs(bump.eval_deriv(grid)).max(), rel=1e-6)


def test_decay_rate_cases():
    assert decay_rate(Model.CS, 2.0, 0.25) == pytest.approx(0.5)
    assert decay_rate(Model.MT, 2.0, 0.25) == pytest.approx(0.25)
    assert decay_rate(Model.CS, 1.0, 1.0) == pytest.approx(1.0)


def test_flock_geometry_bundles_rates():
    geometry = flock_geometry(InfluenceKernel.power_law(2.0), 2.0, 0.0, 1.0)
    assert geometry.D_inf == pytest.approx(1.0, abs=1e-8)
    assert geometry.phi_inf == pytest.approx(0.25, rel=1e-8)
    assert geometry.kappa(Model.CS) == pytest.approx(0.5, rel=1e-8)
    assert geometry.kappa(Model.MT) == pytest.approx(0.25, rel=1e-8)


def test_kernel_spec_round_trip_and_errors():
    kernel = InfluenceKernel.compact_bump(1.5, horizon=1.0)
    assert InfluenceKernel.from_spec(kernel.to_spec()) == kernel
    assert InfluenceKernel.from_spec({"family": "power_law", "params": {"beta": 0}}).family is KernelFamily.POWER_LAW
    with pytest.raises(ConfigError):
        InfluenceKernel.from_spec({"family": "gaussian", "params": {}})
    with pytest.raises(ConfigError):
        InfluenceKernel.from_spec({"family": "exponential", "params": {"length_scale": -1}})


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
