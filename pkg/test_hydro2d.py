#!/usr/bin/env python3
"""2D オイラー整列系の格子ソルバーのテスト"""

import math
import sys
from dataclasses import replace

import numpy as np
import pytest

from flocking_lab import hydro1d, hydro2d
from flocking_lab.comparison import EnvelopeParams, eta_envelope, residual_bound, vorticity_envelope
from flocking_lab.config import ENVELOPE_SLACK_C
from flocking_lab.exceptions import CheckpointError, EmptySupport, StepSizeError
from flocking_lab.flockdiag import TimeSeries, estimate_u_bar, fit_decay_rate, traveling_profile_residual
from flocking_lab.hydro2d import Grid
from flocking_lab.kernels import InfluenceKernel, Model
from flocking_lab.profiles import DensityProfile, VelocityProfile
from flocking_lab.verdict import Verdict

EXPONENTIAL = InfluenceKernel.exponential(1.0)
ALL_TO_ALL = InfluenceKernel.power_law(0.0)
LONG_RANGE = InfluenceKernel.exponential(10.0)
GAUSSIAN = DensityProfile("gaussian_bump", 2, 1.0, {"sigma": 0.5})
WIDE = DensityProfile("gaussian_bump", 2, 1.0, {"sigma": 0.7})
DISK = DensityProfile("uniform_disk", 2, 1.0, {"radius": 2.0})
TAPER = [1.0, 1.8]
# 平面バンプ（振幅 1、幅 1.5）の Riccati 爆発時刻: e0 = 1 − π/1.5
PLANAR_E0 = 1.0 - math.pi / 1.5
PLANAR_T_STAR = math.log((1.0 - PLANAR_E0) / -PLANAR_E0)


def rotating_state(n: int = 64, model: Model = Model.CS, taper=None) -> hydro2d.GridState2D:
    params = {"omega": 0.2} if taper is None else {"omega": 0.2, "taper": list(taper)}
    velocity = VelocityProfile("rigid_rotation", 2, params)
    return hydro2d.from_profiles(GAUSSIAN, velocity, Grid(16.0, n), model, LONG_RANGE)


def constant_state(model: Model = Model.CS) -> hydro2d.GridState2D:
    velocity = VelocityProfile("constant", 2, {"value": [1.0, 0.5]})
    return hydro2d.from_profiles(GAUSSIAN, velocity, Grid(16.0, 64), model, LONG_RANGE)


def tapered(name: str, **params) -> VelocityProfile:
    return VelocityProfile(name, 2, {**params, "taper": TAPER})


def planar_state(n: int) -> hydro2d.GridState2D:
    velocity = VelocityProfile("bump_compression", 2, {"amplitude": 1.0, "width": 1.5, "axis": 0})
    return hydro2d.from_profiles(DISK, velocity, Grid(8.0, n), Model.CS, ALL_TO_ALL)


def all_to_all_run(velocity: VelocityProfile, t_end: float = 4.0):
    # 速度は台の内側で 0 に落ちるので運動量 0 の全結合カーネルでは台の外へ流束が出ない
    state = hydro2d.from_profiles(WIDE, velocity, Grid(16.0, 128), Model.CS, ALL_TO_ALL)
    verdict = hydro2d.threshold_report(state)
    return state, verdict, hydro2d.run(state, t_end=t_end, output_interval=0.25)


@pytest.mark.parametrize("n", [32, 64])
def test_fft_convolution_matches_direct_sum(n):
    grid = Grid(2.0, n)
    rng = np.random.default_rng(n)
    values = rng.uniform(0.0, 1.0, size=(n, n))
    kernel = InfluenceKernel.exponential(0.5)
    np.testing.assert_allclose(
        hydro2d.convolve(values, kernel, grid), hydro2d.convolve_direct(values, kernel, grid), rtol=1e-10, atol=1e-12
    )


def test_convolution_gradient_of_a_point_mass():
    grid = Grid(4.0, 16)
    values = np.zeros((16, 16))
    values[5, 9] = 1.0
    d1, d2 = hydro2d.convolve_gradient(values, EXPONENTIAL, grid)
    x1, x2 = grid.mesh()
    z1, z2 = x1 - x1[5, 9], x2 - x2[5, 9]
    r = np.hypot(z1, z2)
    safe = np.where(r > 0, r, 1.0)
    scale = EXPONENTIAL.eval_deriv(r) / safe * grid.delta**2
    np.testing.assert_allclose(d1, np.where(r > 0, scale * z1, 0.0), atol=1e-14)
    np.testing.assert_allclose(d2, np.where(r > 0, scale * z2, 0.0), atol=1e-14)


def test_from_profiles_normalizes_mass_and_pins_ring():
    state = rotating_state()
    assert state.mass == pytest.approx(1.0, rel=1e-12)
    assert np.all(state.u1[0, :] == 0.0) and np.all(state.u2[:, -1] == 0.0)
    assert state.alignment_radius is not None and math.isfinite(state.alignment_radius)


def test_empty_support_is_rejected():
    far_away = DensityProfile("gaussian_bump", 2, 1.0, {"sigma": 0.5, "center": [100.0, 100.0]})
    with pytest.raises(EmptySupport):
        hydro2d.from_profiles(far_away, VelocityProfile("constant", 2, {}), Grid(4.0, 16), Model.CS, EXPONENTIAL)


def test_horizon_mask_covers_support_only_nearby():
    state = replace(rotating_state(), alignment_radius=0.5)
    mask = hydro2d.horizon_mask(state)
    assert np.all(mask[state.support])
    assert not mask[0, 0]
    assert np.all(hydro2d.horizon_mask(replace(state, alignment_radius=None)))


def test_alignment_force_vanishes_for_constant_velocity():
    for model in (Model.CS, Model.MT):
        f1, f2 = hydro2d.alignment_force(constant_state(model))
        np.testing.assert_allclose(f1, 0.0, atol=1e-12)
        np.testing.assert_allclose(f2, 0.0, atol=1e-12)


def test_step_rejects_cfl_violation():
    state = rotating_state()
    with pytest.raises(StepSizeError):
        hydro2d.step(state, 10.0)
    with pytest.raises(StepSizeError):
        hydro2d.step(state, 0.0)


def test_mass_is_conserved_by_zero_flux_box():
    result = hydro2d.run(rotating_state(), t_end=1.0, output_interval=0.25)
    assert not result.outcome.is_blowup
    mass = result.table.column("mass")
    np.testing.assert_allclose(mass, mass[0], rtol=1e-12)
    assert len(result.snapshots) == 5


def test_threshold_report_for_constant_velocity_is_subcritical():
    for model in (Model.CS, Model.MT):
        verdict = hydro2d.threshold_report(constant_state(model))
        assert verdict.verdict is Verdict.SUB_CRITICAL
        assert verdict.divergence_margin > 0
        assert verdict.gap_max == pytest.approx(0.0, abs=1e-12)
        assert verdict.location is None


def test_threshold_report_flags_strong_compression():
    velocity = VelocityProfile("linear_compression", 2, {"delta": 2.0, "taper": [2.0, 3.0]})
    state = hydro2d.from_profiles(GAUSSIAN, velocity, Grid(16.0, 64), Model.CS, LONG_RANGE)
    verdict = hydro2d.threshold_report(state)
    assert verdict.verdict is Verdict.SUPER_CRITICAL
    assert verdict.divergence_margin < 0
    assert verdict.location is not None


def test_diagnostics_on_rigid_rotation():
    row = hydro2d.diagnostics(rotating_state())
    assert row.max_abs_omega == pytest.approx(0.2, rel=1e-9)
    assert row.max_abs_div == pytest.approx(0.0, abs=1e-12)
    assert row.max_eta_S == pytest.approx(0.0, abs=1e-12)
    assert row.min_e > 0
    assert row.max_trace_sq == pytest.approx(-2.0 * 0.2**2, rel=1e-9)
    assert set(row.as_dict()) == set(hydro2d.DIAG_COLUMNS)


def test_forcing_columns_follow_the_residual():
    state = rotating_state()
    row = hydro2d.diagnostics(state)
    r11, r12, r21, r22 = hydro2d.residual_field(state)
    support = state.support
    assert row.max_abs_vorticity_forcing == pytest.approx(float(np.abs(0.5 * (r21 - r12))[support].max()))
    assert row.max_gap_forcing <= float(np.hypot(r11 - r22, r12 + r21)[support].max()) + 1e-12
    assert row.max_residual > 0


def test_checkpoint_round_trip(tmp_path):
    state = replace(rotating_state(16), t=0.75)
    path = hydro2d.write_checkpoint(tmp_path / "checkpoint_0000.flck", state)
    loaded = hydro2d.read_checkpoint(path)
    np.testing.assert_array_equal(loaded.rho, state.rho)
    np.testing.assert_array_equal(loaded.u1, state.u1)
    np.testing.assert_array_equal(loaded.u2, state.u2)
    assert (loaded.t, loaded.model, loaded.kernel, loaded.grid) == (0.75, Model.CS, LONG_RANGE, state.grid)
    assert loaded.alignment_radius == state.alignment_radius


def test_checkpoint_rejects_corrupt_files(tmp_path):
    good = hydro2d.write_checkpoint(tmp_path / "good.flck", rotating_state(16))
    bad_magic = tmp_path / "bad.flck"
    bad_magic.write_bytes(b"XXXX" + good.read_bytes()[4:])
    with pytest.raises(CheckpointError):
        hydro2d.read_checkpoint(bad_magic)
    truncated = tmp_path / "short.flck"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        hydro2d.read_checkpoint(truncated)


@pytest.mark.parametrize("n", [64, 128])
def test_planar_blowup_does_not_depend_on_output_interval(n):
    times = []
    for interval in (None, 0.1, 0.25):
        result = hydro2d.run(planar_state(n), t_end=2.0, output_interval=interval)
        assert result.outcome.is_blowup, (interval, result.outcome)
        assert result.outcome.reason.startswith("carried divergence")
        times.append(result.outcome.t_blow)
    assert min(times) >= 0.95 * PLANAR_T_STAR
    assert max(times) <= 1.2 * PLANAR_T_STAR
    assert max(times) - min(times) <= 0.02 * PLANAR_T_STAR


def test_planar_run_matches_the_one_dimensional_solver():
    planar = hydro2d.run(planar_state(128), t_end=2.0, output_interval=0.2)
    density = DensityProfile("uniform_disk", 1, 1.0, {"radius": 2.0})
    velocity = VelocityProfile("bump_compression", 1, {"amplitude": 1.0, "width": 1.5})
    line = hydro1d.run(hydro1d.from_profiles(density, velocity, 400, Model.CS, ALL_TO_ALL), t_end=2.0, output_interval=0.2)
    assert planar.outcome.is_blowup and line.outcome.is_blowup
    assert planar.outcome.t_blow == pytest.approx(line.outcome.t_blow, rel=0.05)
    delta = planar.final.grid.delta
    for sheet, particles in zip(planar.snapshots[1:3], line.snapshots[1:3]):
        assert sheet.t == pytest.approx(particles.t)
        D, V = hydro2d.support_diameters(sheet)
        assert V == pytest.approx(float(np.ptp(particles.u)), rel=0.08)
        assert abs(D - float(particles.x[-1] - particles.x[0])) <= 3 * delta


def test_untapered_vacuum_velocity_blocks_a_subcritical_verdict():
    verdict = hydro2d.threshold_report(rotating_state())
    assert verdict.verdict is not Verdict.SUB_CRITICAL
    assert any(note.startswith("vacuum velocity differs") for note in verdict.notes)
    tapered_verdict = hydro2d.threshold_report(rotating_state(taper=TAPER))
    assert not any(note.startswith("vacuum velocity differs") for note in tapered_verdict.notes)


def test_tapered_rotation_flocks_inside_the_diameter_bound():
    state, verdict, result = all_to_all_run(tapered("rigid_rotation", omega=0.1))
    assert verdict.verdict is Verdict.SUB_CRITICAL, verdict.notes
    assert not result.outcome.is_blowup, result.outcome
    assert result.final.t == pytest.approx(4.0)
    geometry = verdict.geometry
    table = result.table
    assert np.all(table.column("D") <= geometry.D_inf + state.grid.delta)
    assert table.column("min_e").min() > 0
    V = TimeSeries(table.column("t"), table.column("V"), "V")
    assert fit_decay_rate(V).rate >= 0.9 * geometry.kappa(Model.CS)


def test_envelopes_bound_the_tapered_rotation():
    state, verdict, result = all_to_all_run(tapered("rigid_rotation", omega=0.1))
    table = result.table
    t = table.column("t")
    eta, omega = table.column("max_eta_S"), table.column("max_abs_omega")
    geometry = verdict.geometry
    params = EnvelopeParams(
        Model.CS, state.mass, geometry.phi_inf, geometry.V0, state.kernel.max_abs_deriv(geometry.D_inf),
        eta0_max=eta[0], omega0_max=omega[0],
    )
    slack = ENVELOPE_SLACK_C * state.grid.delta
    assert np.all(eta <= eta_envelope(Model.CS, params)(t) + slack)
    assert np.all(omega <= vorticity_envelope(params)(t) + slack)
    for k, t_k in enumerate(t):
        bound = residual_bound(Model.CS, state.mass, geometry.V0, params.stats, float(t_k))
        assert table.column("max_residual")[k] <= bound.entry + slack
        assert table.column("max_gap_forcing")[k] <= bound.q + slack
        assert table.column("max_abs_vorticity_forcing")[k] <= bound.entry + slack
    assert eta[-1] <= 0.1 * eta[0]
    assert omega[-1] <= 0.1 * omega[0]


def test_compression_divergence_decays_and_profile_settles():
    state, verdict, result = all_to_all_run(tapered("linear_compression", delta=0.1))
    assert verdict.verdict is Verdict.SUB_CRITICAL, verdict.notes
    assert not result.outcome.is_blowup, result.outcome
    div = result.table.column("max_abs_div")
    assert div[-1] <= 0.1 * div[0]
    residual = traveling_profile_residual(result.snapshots, estimate_u_bar(state))
    assert np.all(np.diff(residual.values) < 0)
    kappa = verdict.geometry.kappa(Model.CS)
    span = residual.times[-1] - residual.times[0]
    assert residual.values[-1] <= residual.values[0] * math.exp(-0.5 * kappa * span)


ACCEPTANCE_CASES = {
    "all_to_all_rotation": (WIDE, tapered("rigid_rotation", omega=0.1), ALL_TO_ALL),
    "all_to_all_compression": (WIDE, tapered("linear_compression", delta=0.1), ALL_TO_ALL),
    "all_to_all_shear": (WIDE, tapered("shear", s=0.08), ALL_TO_ALL),
    "long_range_rotation": (DISK, tapered("rigid_rotation", omega=0.05), LONG_RANGE),
    "long_range_compression": (DISK, tapered("linear_compression", delta=0.05), LONG_RANGE),
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(ACCEPTANCE_CASES))
def test_subcritical_runs_flock_on_the_fine_grid(name):
    density, velocity, kernel = ACCEPTANCE_CASES[name]
    state = hydro2d.from_profiles(density, velocity, Grid(16.0, 256), Model.CS, kernel)
    verdict = hydro2d.threshold_report(state)
    assert verdict.verdict is Verdict.SUB_CRITICAL, verdict.notes
    result = hydro2d.run(state, t_end=20.0, output_interval=0.5)
    assert not result.outcome.is_blowup, result.outcome
    assert result.final.t == pytest.approx(20.0)
    table = result.table
    assert table.column("min_e").min() >= -1e-3
    grad = table.column("max_grad_norm")
    assert grad.max() <= 2.0 * grad[0]
    V = TimeSeries(table.column("t"), table.column("V"), "V")
    assert fit_decay_rate(V, window=(5.0, 20.0)).rate >= 0.9 * verdict.geometry.kappa(Model.CS)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
