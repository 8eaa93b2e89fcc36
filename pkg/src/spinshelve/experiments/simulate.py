"""Run a compiled timeline through the rate model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import ExperimentConfig
from ..detector import TcspcHistogram, expected_counts, point_seed, sample_counts
from ..errors import ParameterError, SequenceError
from ..kinetics import LaserProfile, Trajectory, mw_mix, propagate_profile, rabi_mixing_fraction
from ..model import thermal_populations
from ..pulseseq import Timeline

COARSE_STEP = 10.0


@dataclass(frozen=True)
class SimulationPlan:
    """A timeline mapped onto simulation time.

    Unless microwave pulses advance the clock, every MW interval is cut out
    of the time axis: the pulse acts instantly and later edges move earlier
    by its length.
    """

    laser_edges: tuple[tuple[float, bool], ...]
    mw_events: tuple[tuple[float, float], ...]  # (sim time, pulse length)
    duration: float
    cuts: tuple[tuple[float, float], ...]

    @classmethod
    def from_timeline(cls, timeline: Timeline, mw_advances_time: bool = False) -> "SimulationPlan":
        mw = timeline.on_intervals("mw") if "mw" in timeline.edges else []
        cuts = () if mw_advances_time else tuple(mw)
        plan = cls((), (), 0.0, cuts)
        laser = timeline.edges.get("laser", ())
        for t, _ in laser:
            for a, b in cuts:
                if a < t < b:
                    raise SequenceError(f"laser edge at {t} ns falls inside a microwave pulse")
        edges = tuple((plan.to_sim(t), on) for t, on in laser)
        events = tuple((plan.to_sim(a), b - a) for a, b in mw)
        return cls(edges, events, plan.to_sim(timeline.duration), cuts)

    def to_sim(self, t: float) -> float:
        """Simulation time of sequence time ``t``."""
        removed = sum(max(0.0, min(t, b) - a) for a, b in self.cuts)
        return t - removed

    def laser_on_edges(self) -> list[float]:
        return [t for t, on in self.laser_edges if on]

    def laser_off_edges(self) -> list[float]:
        return [t for t, on in self.laser_edges if not on]


def laser_profile(config: ExperimentConfig, plan: SimulationPlan, k_e: float | None = None,
                  flanks: bool = True) -> LaserProfile:
    k = config.k_exp if k_e is None else k_e
    if flanks:
        return LaserProfile(k, config.t_rise, config.t_fall, plan.laser_edges)
    return LaserProfile(k, 0.0, 0.0, plan.laser_edges)


def _grid(a: float, b: float, dt: float, record) -> np.ndarray:
    """Output times in ``[a, b]``: ``dt`` spacing inside ``record``, coarse elsewhere."""
    if record is None:
        ra, rb = a, b
    else:
        ra, rb = max(a, record[0]), min(b, record[1])
    pts = [np.array([a])]
    if rb > ra:
        pts.append(np.arange(a, ra, COARSE_STEP))
        n = int(math.floor((rb - ra) / dt + 1e-9))
        pts.append(ra + dt * np.arange(n + 1))
        pts.append(np.arange(rb, b, COARSE_STEP))
    else:
        pts.append(np.arange(a, b, COARSE_STEP))
    pts.append(np.array([b]))
    g = np.unique(np.concatenate(pts))
    # drop near-duplicates created by float round-off
    keep = np.concatenate([[True], np.diff(g) > 1e-9 * max(1.0, abs(b))])
    g = g[keep]
    g[-1] = b
    return g


def simulate_timeline(
    config: ExperimentConfig,
    timeline: Timeline,
    *,
    k_e: float | None = None,
    use_mw: bool = True,
    initial=None,
    t_end: float | None = None,
    record: tuple[float, float] | None = None,
    flanks: bool = True,
    cache: dict | None = None,
    times=None,
) -> Trajectory:
    """Propagate the populations through ``timeline`` (times in simulation time).

    ``use_mw=False`` skips the population maps but keeps the time axis of
    the MW-on sequence, which gives a matched no-MW reference.  ``record``
    restricts dense sampling to a window and ``times`` replaces the output
    grid altogether; ``cache`` memoizes propagation pieces shared between
    sweep points.
    """
    plan = SimulationPlan.from_timeline(timeline, config.mw_advances_time)
    profile = laser_profile(config, plan, k_e, flanks)
    end = plan.duration if t_end is None else float(t_end)
    if not end > 0:
        raise ParameterError("simulation end time must be positive")
    p = thermal_populations(config.system.thermal_ratio).as_array() if initial is None else np.asarray(
        initial.as_array() if hasattr(initial, "as_array") else initial, dtype=float)

    bounds = sorted({0.0, end, *(t for t, _ in plan.mw_events if 0 < t < end)})
    events = {}
    for t, tau in plan.mw_events:
        events.setdefault(t, []).append(tau)
    traj = None
    rates = config.rates
    for a, b in zip(bounds[:-1], bounds[1:]):
        if use_mw and a in events:
            for tau in events[a]:
                p = mw_mix(p, rabi_mixing_fraction(tau, config.rabi_period, config.t2rho)).as_array()
        if times is None:
            grid = _grid(a, b, config.dt_sample, record)
        else:
            t = np.asarray(times, dtype=float)
            grid = np.concatenate([[a], t[(t > a + 1e-9) & (t < b - 1e-9)], [b]])
        key = None
        if cache is not None:
            key = (
                tuple(rates.to_dict().values()), profile.k_max, profile.t_rise, profile.t_fall,
                tuple(e for e in profile.edges if e[0] < b), a, b, p.tobytes(), grid.tobytes(),
                config.dt_sample, config.dt_max, config.pl_scale,
            )
            piece = cache.get(key)
        else:
            piece = None
        if piece is None:
            piece = propagate_profile(
                p, rates, profile, a, b, config.dt_sample, dt_max=config.dt_max, times=grid,
                pl_scale=config.pl_scale,
            )
            if key is not None:
                cache[key] = piece
        p = piece.populations[-1]
        traj = piece if traj is None else traj.concat(piece)
    return traj


def readout_histogram(
    config: ExperimentConfig, traj: Trajectory, t_start: float, length: float, index: int = 0
) -> TcspcHistogram:
    """Histogram of ``[t_start, t_start + length]`` with edges relative to ``t_start``.

    In noise mode the counts are Poisson draws seeded per sweep point.
    """
    hist = expected_counts(traj, config.bin_width, config.shots, config.efficiency, t_start, t_start + length)
    hist = TcspcHistogram(hist.bin_edges - t_start, hist.counts, hist.shots)
    if config.noise:
        hist = sample_counts(hist, point_seed(config.seed, index))
    return hist
