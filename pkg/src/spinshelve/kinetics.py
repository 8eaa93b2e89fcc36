"""Time propagation of level populations.

Constant-excitation stretches are solved exactly with a matrix exponential;
laser flanks (exponential ramps of the excitation rate) are integrated with
fixed-step RK4.  Microwave pulses act as instantaneous population maps on the
ground-state pair.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ParameterError, PositivityError
from .model import ES0, ES1, GS0, GS1, LEVELS, NS, Populations, RateParams, rate_matrix

EIG_COND_LIMIT = 1e12
NEG_HARD = -1e-9
NEG_SOFT = -1e-12
RAMP_REL_TOL = 1e-6
DT_MAX = 0.05


def _as_vector(pops) -> np.ndarray:
    if isinstance(pops, Populations):
        return pops.as_array()
    v = np.asarray(pops, dtype=float)
    if v.shape != (5,):
        raise ParameterError(f"expected 5 populations, got shape {v.shape}")
    return v


class _Propagator:
    """exp(M t) for one constant generator, evaluated at many times."""

    def __init__(self, m_ns: np.ndarray):
        self.m = m_ns
        w, v = np.linalg.eig(m_ns)
        cond = np.linalg.cond(v)
        if np.isfinite(cond) and cond < EIG_COND_LIMIT:
            self.w = w
            self.v = v
            self.vinv = np.linalg.inv(v)
        else:
            self.w = None

    def apply(self, p0: np.ndarray, dts) -> np.ndarray:
        """Rows are exp(M dt) @ p0 for every dt in ``dts``."""
        dts = np.atleast_1d(np.asarray(dts, dtype=float))
        if self.w is None:
            return np.array([scipy.linalg.expm(self.m * dt) @ p0 for dt in dts])
        c = self.vinv @ p0
        out = (np.exp(np.outer(dts, self.w)) * c) @ self.v.T
        return out.real


def _check_positive(p: np.ndarray) -> tuple[np.ndarray, int]:
    low = p.min()
    if low < NEG_HARD:
        raise PositivityError(f"population dropped to {low:.3e}")
    clamped = int(np.count_nonzero(p < NEG_SOFT))
    if low < 0:
        p = np.where(p < 0, 0.0, p)
    return p, clamped


def propagate_const(pops, params: RateParams, k_e: float, dt: float) -> Populations:
    """Exact evolution under constant excitation ``k_e`` (s^-1) for ``dt`` ns."""
    if not dt >= 0:
        raise ParameterError(f"dt must be >= 0, got {dt!r}")
    p0 = _as_vector(pops)
    if dt == 0:
        return Populations.from_array(p0)
    p = _Propagator(rate_matrix(params, k_e) * NS).apply(p0, [dt])[0]
    p, _ = _check_positive(p)
    return Populations.from_array(p)


@dataclass(frozen=True)
class LaserProfile:
    """Excitation rate with exponential flanks.

    ``edges`` is a sequence of ``(time_ns, on)`` with strictly increasing
    times.  After an on-edge the rate approaches ``k_max`` with constant
    ``t_rise``; after an off-edge it decays to zero with ``t_fall``.  The
    rate is continuous across edges.
    """

    k_max: float
    t_rise: float = 0.0
    t_fall: float = 0.0
    edges: tuple[tuple[float, bool], ...] = ()

    def __post_init__(self):
        if not self.k_max >= 0:
            raise ParameterError("k_max must be >= 0")
        if self.t_rise < 0 or self.t_fall < 0:
            raise ParameterError("flank time constants must be >= 0")
        edges = tuple((float(t), bool(s)) for t, s in self.edges)
        times = [t for t, _ in edges]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("laser edge times must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def constant(cls, k: float) -> "LaserProfile":
        return cls(k, 0.0, 0.0, ((-math.inf, True),)) if k > 0 else cls(0.0)

    def edge_levels(self) -> list[float]:
        """Excitation rate at the instant of each edge."""
        levels = []
        level = 0.0
        prev = None
        for t, on in self.edges:
            if prev is not None:
                level = self._approach(level, prev[1], t - prev[0])
            levels.append(level)
            prev = (t, on)
        return levels

    def _approach(self, start: float, on: bool, elapsed: float) -> float:
        target = self.k_max if on else 0.0
        tau = self.t_rise if on else self.t_fall
        if tau == 0 or math.isinf(elapsed):
            return target
        return target + (start - target) * math.exp(-elapsed / tau)

    def segments(self):
        """Yield ``(t_edge, level_at_edge, on)`` in time order."""
        return zip((t for t, _ in self.edges), self.edge_levels(), (s for _, s in self.edges))

    def settle_time(self, t_edge: float, level: float, on: bool) -> float:
        """Time after which the rate is within RAMP_REL_TOL * k_max of its target."""
        target = self.k_max if on else 0.0
        tau = self.t_rise if on else self.t_fall
        gap = abs(level - target)
        if tau == 0 or self.k_max == 0 or gap <= RAMP_REL_TOL * self.k_max:
            return t_edge
        return t_edge + tau * math.log(gap / (RAMP_REL_TOL * self.k_max))


def k_e_at(profile: LaserProfile, t: float) -> float:
    """Excitation rate (s^-1) of ``profile`` at time ``t`` (ns)."""
    level, on, t_edge = 0.0, False, None
    for te, lv, state in profile.segments():
        if te > t:
            break
        t_edge, level, on = te, lv, state
    if t_edge is None:
        return 0.0
    return profile._approach(level, on, t - t_edge)


@dataclass
class Trajectory:
    """Sampled populations and photoluminescence.

    ``pl`` is the emission rate ``pl_scale * k_r * (n_es0 + n_es1)`` in
    photons per ns.
    """

    times: np.ndarray
    populations: np.ndarray
    pl: np.ndarray
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.populations = np.asarray(self.populations, dtype=float)
        self.pl = np.asarray(self.pl, dtype=float)
        if self.populations.shape != (len(self.times), 5) or self.pl.shape != self.times.shape:
            raise ParameterError("trajectory arrays have inconsistent shapes")
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> Populations:
        return Populations.from_array(self.populations[i])

    def level(self, name: str) -> np.ndarray:
        return self.populations[:, LEVELS.index(name)]

    def slice(self, t_start: float, t_end: float, shift: bool = True) -> "Trajectory":
        """Samples with ``t_start <= t <= t_end``; times re-zeroed at ``t_start`` by default."""
        eps = 1e-9 * max(1.0, abs(t_end))
        sel = (self.times >= t_start - eps) & (self.times <= t_end + eps)
        times = self.times[sel] - (t_start if shift else 0.0)
        return Trajectory(times, self.populations[sel], self.pl[sel], self.clamped)

    def concat(self, other: "Trajectory") -> "Trajectory":
        """Append ``other``; a shared boundary sample is taken from ``other``."""
        keep = self.times < other.times[0] - 1e-12
        return Trajectory(
            np.concatenate([self.times[keep], other.times]),
            np.vstack([self.populations[keep], other.populations]),
            np.concatenate([self.pl[keep], other.pl]),
            self.clamped + other.clamped,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_ns", *LEVELS, "pl"])
        for t, p, y in zip(self.times, self.populations, self.pl):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in p), repr(float(y))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, 7)
        return cls(data[:, 0], data[:, 1:6], data[:, 6])


def _sample_grid(t0: float, t1: float, dt_sample: float) -> np.ndarray:
    n = int(math.floor((t1 - t0) / dt_sample + 1e-9))
    grid = t0 + dt_sample * np.arange(n + 1)
    if t1 - grid[-1] > 1e-9 * dt_sample:
        grid = np.append(grid, t1)
    return grid


def propagate_profile(
    pops,
    params: RateParams,
    profile: LaserProfile,
    t0: float,
    t1: float,
    dt_sample: float,
    *,
    dt_max: float = DT_MAX,
    times=None,
    pl_scale: float = 1.0,
    force_rk4: bool = False,
) -> Trajectory:
    """Integrate from ``t0`` to ``t1`` (ns) under a time-dependent laser.

    Segments where the excitation is constant to within ``RAMP_REL_TOL``
    relative to ``k_max`` use the exact propagator; laser flanks use RK4
    with step ``<= min(dt_sample, dt_max)`` (further reduced for stability
    at very high rates).  ``times`` overrides the uniform sampling grid;
    ``force_rk4`` integrates everything with RK4 (used to cross-check the
    exact path).
    """
    if not t1 > t0:
        raise ParameterError("t1 must exceed t0")
    if not dt_sample > 0:
        raise ParameterError("dt_sample must be positive")
    if not dt_max > 0:
        raise ParameterError("dt_max must be positive")
    if times is None:
        grid = _sample_grid(t0, t1, dt_sample)
    else:
        grid = np.asarray(times, dtype=float)
        if grid[0] != t0 or np.any(np.diff(grid) <= 0) or grid[-1] > t1:
            raise ParameterError("explicit sample times must start at t0, increase and stay <= t1")

    m_dark = rate_matrix(params, 0.0) * NS
    m_exc = rate_matrix(RateParams(0, 0, 0, 0, 0), 1.0)  # d M / d k_e

    # piecewise description: list of (start, end, kind, payload)
    pieces = []
    edge_info = list(profile.segments())
    bounds = [t0]
    for te, _, _ in edge_info:
        if t0 < te < t1:
            bounds.append(te)
    bounds.append(t1)
    for a, b in zip(bounds[:-1], bounds[1:]):
        prior = [(te, lv, on) for te, lv, on in edge_info if te <= a]
        if prior:
            te, lv, on = prior[-1]
            settle = profile.settle_time(te, lv, on)
            target = profile.k_max if on else 0.0
        else:
            settle, target = -math.inf, 0.0
        if force_rk4:
            pieces.append((a, b, "rk4"))
        elif settle > a:
            mid = min(settle, b)
            pieces.append((a, mid, "rk4"))
            if mid < b:
                pieces.append((mid, b, ("const", target)))
        else:
            pieces.append((a, b, ("const", target)))

    kmax_ns = profile.k_max * NS
    rate_scale = float(np.max(np.abs(np.diag(m_dark)))) + kmax_ns
    h_cap = min(dt_sample, dt_max)
    if rate_scale > 0:
        h_cap = min(h_cap, 1.0 / rate_scale)

    def k_ns(t):
        return k_e_at(profile, t) * NS

    def rhs(t, p):
        return m_dark @ p + k_ns(t) * (m_exc @ p)

    def rk4(p, ta, tb):
        n = max(1, int(math.ceil((tb - ta) / h_cap - 1e-9)))
        h = (tb - ta) / n
        t = ta
        for _ in range(n):
            k1 = rhs(t, p)
            k2 = rhs(t + h / 2, p + h / 2 * k1)
            k3 = rhs(t + h / 2, p + h / 2 * k2)
            k4 = rhs(t + h, p + h * k3)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        return p

    out = np.empty((len(grid), 5))
    p = _as_vector(pops).copy()
    out[0] = p
    clamped = 0
    props: dict[float, _Propagator] = {}
    for a, b, kind in pieces:
        inside = np.nonzero((grid > a) & (grid <= b))[0]
        if kind == "rk4":
            t = a
            for i in inside:
                p = rk4(p, t, grid[i])
                p, c = _check_positive(p)
                clamped += c
                out[i] = p
                t = grid[i]
            if t < b:
                p = rk4(p, t, b)
        else:
            k = kind[1]
            prop = props.get(k)
            if prop is None:
                prop = props[k] = _Propagator(rate_matrix(params, k) * NS)
            pts = np.append(grid[inside] - a, b - a)
            res = prop.apply(p, pts)
            res, c = _check_positive(res)
            clamped += c
            out[inside] = res[:-1]
            p = res[-1]
    pl = pl_scale * params.k_r * NS * (out[:, ES0] + out[:, ES1])
    return Trajectory(grid, out, pl, clamped)


def mw_mix(pops, p: float) -> Populations:
    """Exchange a fraction ``p`` of population between GS0 and GS1."""
    if not 0 <= p <= 1:
        raise ParameterError(f"mixing fraction must lie in [0, 1], got {p!r}")
    v = _as_vector(pops).copy()
    a, b = v[GS0], v[GS1]
    v[GS0] = (1 - p) * a + p * b
    v[GS1] = p * a + (1 - p) * b
    return Populations.from_array(v)


def rabi_mixing_fraction(tau_mw: float, rabi_period: float, t2rho: float) -> float:
    """Transferred fraction after a resonant pulse of length ``tau_mw`` (ns).

    Damped Rabi form ``(1 - exp(-tau/t2rho) cos(2 pi tau / period)) / 2``;
    ``t2rho = inf`` gives undamped oscillation.
    """
    if not rabi_period > 0 or not t2rho > 0:
        raise ParameterError("rabi_period and t2rho must be positive")
    if not tau_mw >= 0:
        raise ParameterError("tau_mw must be >= 0")
    if math.isinf(tau_mw):
        return 0.5
    damp = math.exp(-tau_mw / t2rho)
    p = 0.5 * (1 - damp * math.cos(2 * math.pi * tau_mw / rabi_period))
    return min(1.0, max(0.0, p))
