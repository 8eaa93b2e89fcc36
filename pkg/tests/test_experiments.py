import itertools
import math

import numpy as np
import pytest
from scipy.signal import find_peaks

from spinshelve import ConfigError, NotReachedError, ParameterError, default_config, pulseseq, steady_state
from spinshelve.errors import SequenceError
from spinshelve.experiments import (
    ExperimentReport,
    SimulationPlan,
    hyperfine_weights,
    initialization_scan,
    odmr_spectrum,
    pl_recovery_scan,
    rabi_buffer_scan,
    simulate_timeline,
    t1_scan,
    t95_time,
)
from spinshelve.experiments.protocols import DEFAULT_TAUS, init_trajectory
from spinshelve.experiments.spectrum import GAMMA_E
from spinshelve.kinetics import Trajectory
from spinshelve.model import GS0


def _synthetic(target, n0, tau, t_end=500.0, dt=0.01):
    t = np.arange(0, t_end + dt / 2, dt)
    g = target + (n0 - target) * np.exp(-t / tau)
    pops = np.zeros((len(t), 5))
    pops[:, GS0] = g
    pops[:, 1] = 1 - g
    return Trajectory(t, pops, np.zeros_like(t))


@pytest.mark.parametrize("n0, tau", [(0.3, 10.0), (0.2, 25.0), (0.35, 3.0)])
def test_t95_closed_form(rates, n0, tau):
    k = 2.7e7
    target = steady_state(rates, k).n_gs0
    traj = _synthetic(target, n0, tau)
    expected = tau * math.log(abs(n0 - target) / (0.05 * target))
    assert t95_time(traj, rates, k) == pytest.approx(expected, abs=1e-4)
    expected_change = tau * math.log(1 / 0.05)
    assert t95_time(traj, rates, k, reference="change") == pytest.approx(expected_change, abs=1e-4)


def test_t95_not_reached(rates):
    target = steady_state(rates, 2.7e7).n_gs0
    traj = _synthetic(target, 0.0, 1000.0, t_end=50.0)
    with pytest.raises(NotReachedError) as err:
        t95_time(traj, rates, 2.7e7)
    assert err.value.closest > 0


def test_t95_counts_the_last_entry_into_the_band(rates):
    target = steady_state(rates, 2.7e7).n_gs0
    t = np.arange(0, 100.0, 0.5)
    g = np.full_like(t, target)
    g[:20] = 0.0  # outside the band until 10 ns
    g[100:110] = 0.5 * target  # a later excursion from 50 to 55 ns
    pops = np.zeros((len(t), 5))
    pops[:, GS0] = g
    pops[:, 1] = 1 - g
    assert t95_time(Trajectory(t, pops, np.zeros_like(t)), rates, 2.7e7) > 54.0


def test_init_trajectory_polarizes(config):
    traj = init_trajectory(config)
    ss = steady_state(config.rates, config.k_exp)
    assert traj.populations[-1, GS0] == pytest.approx(ss.n_gs0, rel=1e-6)
    assert traj.populations[0, GS0] == pytest.approx(1 / 3)


def test_simulation_plan_cuts_mw_time():
    spec = pulseseq.parse(pulseseq.PROTOCOLS["rabi_buffer"])
    tl = pulseseq.compile(spec, {"buffer": 100, "tau": 30})
    plan = SimulationPlan.from_timeline(tl)
    assert plan.mw_events == ((3100.0, 30.0),)
    assert plan.laser_on_edges() == [0.0, 3100.0]
    assert plan.duration == tl.duration - 30
    kept = SimulationPlan.from_timeline(tl, mw_advances_time=True)
    assert kept.laser_on_edges() == [0.0, 3130.0]


def test_laser_edge_inside_mw_pulse_is_rejected():
    spec = pulseseq.parse("channels laser, mw\nblock laser on 10ns\nblock laser off 5ns\nblock laser on 10ns\n"
                          "block mw off 12ns\nblock mw on 5ns\n")
    with pytest.raises(SequenceError, match="inside a microwave pulse"):
        SimulationPlan.from_timeline(pulseseq.compile(spec))


def test_mw_pi_pulse_swaps_ground_state(config):
    spec = pulseseq.parse("channels laser, mw\nblock laser on 3000ns\nblock laser off 50ns\n"
                          "block mw off 3000ns\nblock mw on 20ns\nblock mw off 30ns\n")
    tl = pulseseq.compile(spec)
    with_mw = simulate_timeline(config.replace(t2rho=1e12), tl)
    without = simulate_timeline(config, tl, use_mw=False)
    i = np.searchsorted(with_mw.times, 3000.0)
    before = without.populations[i]
    after = with_mw.populations[i]  # the shared boundary sample is taken after the pulse
    assert after[0] == pytest.approx(before[1], abs=1e-3) and after[1] == pytest.approx(before[0], abs=1e-3)
    assert np.allclose(with_mw.populations.sum(axis=1), 1, atol=1e-9)


def test_small_pl_recovery_scan(config):
    rep = pl_recovery_scan(config, taus=range(5, 151, 10), k_e_levels=[config.k_exp])
    ratios = rep.metrics["overshoot_ratio_k0"]
    assert all(b >= a - 1e-9 for a, b in zip(ratios, ratios[1:]))
    assert rep.summary["t_is_ns"][0] == pytest.approx(24.0, abs=1.0)
    with pytest.raises(ParameterError):
        pl_recovery_scan(config, taus=[])


def test_initialization_scan_validation(config):
    with pytest.raises(ParameterError, match="3 decades"):
        initialization_scan(config, [1e6, 1e7, 1e8])
    with pytest.raises(ParameterError, match="insufficient"):
        initialization_scan(config, [1e6, 1e7, 1e8, 1e12, 1e13])


def test_jobs_do_not_change_results(config):
    grid = np.logspace(6, 10, 9)
    a = initialization_scan(config, grid, jobs=1)
    b = initialization_scan(config, grid, jobs=2)
    assert a.to_json() == b.to_json()


def test_small_rabi_scan_shape(config):
    rep = rabi_buffer_scan(config, buffers=[10, 60, 150], mw_durations=np.arange(0, 121, 4.0))
    amps = rep.metrics["rabi_amplitude"]
    assert amps[0] < amps[1] < amps[2]
    assert rep.summary["rabi_period_ns"] == pytest.approx(40.0, rel=0.02)
    with pytest.raises(ParameterError):
        rabi_buffer_scan(config, buffers=[10], mw_durations=[0, 4], normalization="bogus")


def test_t1_scan_flat_branch_is_reported_without_fit(config):
    cfg = config.with_rates(k_sl_0to1=0.0, k_sl_1to0=0.0)
    taus = [2, 10, 50, 100, 200, 1000, 2000, 5000, 10000, 20000]
    rep = t1_scan(cfg, taus, t_pi=18.5)
    assert rep.fits["long"] is None
    assert rep.summary["notes"]["long"].startswith("flat")
    assert rep.fits["short"] is not None


def test_noise_is_reproducible_and_seeded(config):
    noisy = config.replace(noise=True, shots=100)
    a = pl_recovery_scan(noisy, taus=[10, 50, 150], k_e_levels=[config.k_exp])
    b = pl_recovery_scan(noisy, taus=[10, 50, 150], k_e_levels=[config.k_exp])
    c = pl_recovery_scan(noisy.replace(seed=1), taus=[10, 50, 150], k_e_levels=[config.k_exp])
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_report_round_trip_and_files(config, tmp_path):
    rep = pl_recovery_scan(config, taus=range(10, 151, 20), k_e_levels=[config.k_exp])
    back = ExperimentReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    assert back.config_hash == config.config_hash()
    written = rep.write(tmp_path)
    assert {p.name for p in written} == {"report.json", "fig2c_overshoot_vs_tau.csv", "report.meta.json"}
    assert "started" not in (tmp_path / "report.json").read_text()
    assert not list(tmp_path.glob(".*tmp"))


def test_report_validates_metric_lengths():
    with pytest.raises(ValueError):
        ExperimentReport("x", "tau", [1, 2], {"m": [1.0]})


def test_rerun_from_embedded_config(config):
    rep = initialization_scan(config, np.logspace(6, 10, 9))
    again = initialization_scan(type(config).from_dict(rep.config), np.logspace(6, 10, 9))
    assert again.to_json() == rep.to_json()


# ---------------------------------------------------------------- spectrum

def test_hyperfine_weights_brute_force():
    counts = {}
    for triple in itertools.product((-1, 0, 1), repeat=3):
        counts[sum(triple)] = counts.get(sum(triple), 0) + 1
    brute = np.array([counts[m] for m in range(-3, 4)]) / 27
    w = hyperfine_weights(3, 1)
    assert np.array_equal(w * 27, np.array([1, 3, 6, 7, 6, 3, 1]))
    assert np.allclose(w, brute, rtol=0, atol=0)


def test_hyperfine_weights_half_integer_and_errors():
    assert np.allclose(hyperfine_weights(2, 0.5), [0.25, 0.5, 0.25])
    assert np.array_equal(hyperfine_weights(0, 1), [1.0])
    with pytest.raises(ParameterError):
        hyperfine_weights(2, 0.3)
    with pytest.raises(ParameterError):
        hyperfine_weights(-1, 1)


def test_odmr_requires_hyperfine_constant(config):
    with pytest.raises(ConfigError, match="hyperfine_a"):
        odmr_spectrum(config, [3.0], 10.0, 5.0, 0.05)


def test_odmr_spectrum_shows_seven_dips_per_group():
    cfg = default_config({"system.hyperfine_a": "47"})
    b = 0.3 / GAMMA_E * 1e3
    f = np.linspace(2.9, 4.1, 12001)
    s = odmr_spectrum(cfg, f, b, 5.0, 0.05)
    peaks, _ = find_peaks(-s, prominence=1e-4)
    assert len(peaks) == 14
    lo, hi = f[peaks[:7]], f[peaks[7:]]
    assert np.mean(lo) == pytest.approx(cfg.system.d_gs - 0.3, abs=1e-3)
    assert np.mean(hi) == pytest.approx(cfg.system.d_gs + 0.3, abs=1e-3)
    assert np.allclose(np.diff(lo), 0.047, atol=2e-4)
    # the centre line carries the largest weight
    depths = -s[peaks[:7]]
    assert np.argmax(depths) == 3


def test_odmr_zero_field_single_group():
    cfg = default_config({"system.hyperfine_a": "47"})
    f = np.linspace(3.2, 3.8, 6001)
    s = odmr_spectrum(cfg, f, 0.0, 5.0, 0.05)
    assert len(find_peaks(-s, prominence=1e-4)[0]) == 7


@pytest.mark.parametrize("t_is", [10.0, 15.0, 24.0, 40.0, 100.0])
def test_pl_recovery_recovers_configured_is_lifetime(config, t_is):
    # default dark-time grid stretched with the lifetime; below ~17 ns the
    # ES-fed rise of the IS population biases the single-exponential fit
    r = config.rates
    scale = r.t_is / t_is
    cfg = config.with_rates(kappa0=r.kappa0 * scale, kappa1=r.kappa1 * scale)
    taus = np.array(DEFAULT_TAUS) * t_is / r.t_is
    rep = pl_recovery_scan(cfg, taus=taus, k_e_levels=[config.k_exp])
    assert rep.summary["t_is_ns"][0] == pytest.approx(t_is, rel=0.02)


def test_t95_decreases_with_excitation_rate(config):
    rep = initialization_scan(config, np.logspace(6, 11, 11))
    t = rep.metrics["t95_ns"]
    # strictly decreasing until the flank- and lifetime-limited floor (~4 ns)
    above = t[t > 2 * t.min()]
    assert len(above) >= 5 and np.all(np.diff(above) < 0)


def test_t1_contrast_is_negative_after_pi_pulse(config):
    rep = t1_scan(config, [2, 5, 10, 1000, 2000], t_pi=18.5)
    assert np.all(rep.metrics["contrast"][:3] < 0)
