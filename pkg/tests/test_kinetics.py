import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from spinshelve import ParameterError, Populations
from spinshelve.kinetics import (
    LaserProfile,
    Trajectory,
    k_e_at,
    mw_mix,
    propagate_const,
    propagate_profile,
    rabi_mixing_fraction,
)
from spinshelve.model import NS, rate_matrix, thermal_populations

P0 = thermal_populations(2.0)


@st.composite
def simplex(draw):
    w = np.array([draw(st.floats(0.0, 1.0)) for _ in range(5)]) + 1e-3
    return w / w.sum()


@given(simplex(), st.floats(1e5, 1e10), st.floats(0.01, 5000))
def test_propagate_const_matches_scipy_expm(p0, k_e, dt):
    from spinshelve import default_config

    rates = default_config().rates
    exact = scipy.linalg.expm(rate_matrix(rates, k_e) * NS * dt) @ p0
    got = propagate_const(p0, rates, k_e, dt).as_array()
    assert np.allclose(got, exact, atol=1e-10)
    assert abs(got.sum() - 1) < 1e-9


def test_propagate_const_semigroup(rates):
    a = propagate_const(propagate_const(P0, rates, 2.7e7, 30.0), rates, 2.7e7, 70.0)
    b = propagate_const(P0, rates, 2.7e7, 100.0)
    assert np.allclose(a.as_array(), b.as_array(), atol=1e-13)


def test_propagate_const_zero_time_and_bad_dt(rates):
    assert propagate_const(P0, rates, 1e7, 0.0) == P0
    with pytest.raises(ParameterError):
        propagate_const(P0, rates, 1e7, -1.0)


def test_laser_profile_is_continuous():
    prof = LaserProfile(1e8, 2.0, 3.0, ((0.0, True), (5.0, False), (7.0, True)))
    for t in (5.0, 7.0):
        assert k_e_at(prof, t - 1e-9) == pytest.approx(k_e_at(prof, t + 1e-9), rel=1e-6)
    assert k_e_at(prof, -1.0) == 0.0
    assert k_e_at(prof, 5.0) == pytest.approx(1e8 * (1 - math.exp(-2.5)))
    assert k_e_at(prof, 1000.0) == pytest.approx(1e8)


def test_laser_profile_validation():
    with pytest.raises(ParameterError):
        LaserProfile(1e8, 1.0, 1.0, ((5.0, True), (5.0, False)))
    with pytest.raises(ParameterError):
        LaserProfile(1e8, -1.0)


def test_flank_integration_matches_adaptive_solver(rates):
    """RK4 on the flanks against scipy's adaptive integrator."""
    prof = LaserProfile(2.7e7, 0.79, 0.79, ((10.0, True), (60.0, False), (90.0, True)))
    traj = propagate_profile(P0, rates, prof, 0.0, 150.0, 0.5)

    def rhs(t, p):
        return rate_matrix(rates, k_e_at(prof, t)) * NS @ p

    ref = solve_ivp(rhs, (0, 150), P0.as_array(), t_eval=traj.times, rtol=1e-11, atol=1e-13,
                    method="DOP853", max_step=0.05)
    # the ramp is cut to a constant once within 1e-6 of its target
    assert np.max(np.abs(ref.y.T - traj.populations)) < 1e-7


def test_trajectory_conservation_and_pl(rates):
    prof = LaserProfile(2.7e7, 0.79, 0.79, ((0.0, True), (3000.0, False), (3150.0, True)))
    traj = propagate_profile(P0, rates, prof, 0.0, 6150.0, 1.0, pl_scale=1e6)
    assert np.max(np.abs(traj.populations.sum(axis=1) - 1)) < 1e-9
    expected = 1e6 * rates.k_r * NS * (traj.level("n_es0") + traj.level("n_es1"))
    assert np.allclose(traj.pl, expected)
    # overshoot right after the dark gap
    ro = traj.slice(3150.0, 6150.0)
    assert ro.pl[:60].max() > 1.05 * ro.pl[-100:].mean()


def test_force_rk4_agrees_with_exact(rates):
    prof = LaserProfile.constant(5e7)
    a = propagate_profile(P0, rates, prof, 0.0, 50.0, 1.0)
    b = propagate_profile(P0, rates, prof, 0.0, 50.0, 1.0, dt_max=0.01, force_rk4=True)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-9


def test_propagate_profile_validation(rates):
    prof = LaserProfile.constant(1e7)
    with pytest.raises(ParameterError):
        propagate_profile(P0, rates, prof, 0.0, 10.0, 0.0)
    with pytest.raises(ParameterError):
        propagate_profile(P0, rates, prof, 10.0, 10.0, 1.0)


def test_trajectory_csv_round_trip(rates):
    traj = propagate_profile(P0, rates, LaserProfile.constant(2.7e7), 0.0, 20.0, 0.5)
    back = Trajectory.from_csv(traj.to_csv())
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.populations, traj.populations)
    assert np.array_equal(back.pl, traj.pl)


@given(simplex(), st.floats(0, 1))
def test_mw_mix_conserves_and_composes(p0, f):
    out = mw_mix(p0, f).as_array()
    assert abs(out.sum() - 1) < 1e-12
    assert np.allclose(out[2:], p0[2:])
    # mixing is symmetric about one half
    assert np.allclose(mw_mix(out, 0.0).as_array(), out)
    full = mw_mix(p0, 1.0).as_array()
    assert full[0] == pytest.approx(p0[1]) and full[1] == pytest.approx(p0[0])


def test_mw_mix_rejects_bad_fraction():
    with pytest.raises(ParameterError):
        mw_mix(P0, 1.5)


def test_rabi_mixing_fraction():
    assert rabi_mixing_fraction(0.0, 40.0, 56.0) == 0.0
    assert rabi_mixing_fraction(20.0, 40.0, math.inf) == pytest.approx(1.0)
    assert rabi_mixing_fraction(20.0, 40.0, 56.0) == pytest.approx(0.5 * (1 + math.exp(-20 / 56)))
    assert rabi_mixing_fraction(1e6, 40.0, 56.0) == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        rabi_mixing_fraction(1.0, 0.0, 56.0)


@given(simplex())
def test_double_full_swap_is_identity(p0):
    p = Populations.from_array(p0)
    assert mw_mix(mw_mix(p, 1.0), 1.0) == p


def test_dark_relaxation_of_is_matches_kappa_sum(rates):
    from spinshelve.fitting import fit

    lit = propagate_const(P0, rates, 2.7e7, 3000.0)
    # let the excited state empty before fitting the IS decay
    prof = LaserProfile(0.0)
    traj = propagate_profile(propagate_const(lit, rates, 0.0, 10.0), rates, prof, 0.0, 200.0, 0.5)
    res = fit("exp_decay", traj.times, traj.level("n_is"))
    assert res["T"] == pytest.approx(rates.t_is, rel=1e-3)


def test_slow_flanks_reduce_the_overshoot(config):
    from spinshelve import pulseseq
    from spinshelve.detector import overshoot_ratio
    from spinshelve.experiments.simulate import readout_histogram, simulate_timeline

    tl = pulseseq.compile(pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"]), {"tau": 150})
    ratios = []
    for t_rise in (0.5, 13.6):
        cfg = config.replace(t_rise=t_rise)
        traj = simulate_timeline(cfg, tl, record=(3150.0, 6150.0))
        ratios.append(overshoot_ratio(readout_histogram(cfg, traj, 3150.0, 3000.0)))
    assert ratios[1] < ratios[0]


def test_small_negative_values_are_clamped_and_counted(rates, monkeypatch):
    import spinshelve.kinetics as kin

    real = kin._Propagator.apply
    monkeypatch.setattr(kin._Propagator, "apply", lambda self, p0, dts: real(self, p0, dts) - 5e-12)
    traj = propagate_profile(P0, rates, LaserProfile(0.0), 0.0, 5.0, 1.0)
    assert traj.clamped > 0 and traj.populations.min() >= 0


def test_large_negative_values_raise(rates, monkeypatch):
    import spinshelve.kinetics as kin
    from spinshelve import PositivityError

    real = kin._Propagator.apply
    monkeypatch.setattr(kin._Propagator, "apply", lambda self, p0, dts: real(self, p0, dts) - 1e-6)
    with pytest.raises(PositivityError):
        propagate_const(P0, rates, 0.0, 5.0)  # ES and IS stay exactly zero in the dark
