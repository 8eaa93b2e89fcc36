"""Photon-counting histograms and the scalar metrics read from them."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter as _median_filter

from .errors import ParameterError
from .kinetics import Trajectory

STEP_TOL = 1e-9


@dataclass(frozen=True)
class TcspcHistogram:
    """Counts per time bin.

    ``counts`` are expected values (floats) unless ``noisy`` is set, in
    which case they are Poisson draws stored as integers.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    shots: int
    seed: int | None = None
    noisy: bool = False

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64 if self.noisy else float)
        if edges.ndim != 1 or len(edges) != len(counts) + 1:
            raise ParameterError("histogram needs len(bin_edges) == len(counts) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ParameterError("bin edges must be strictly increasing")
        if np.any(counts < 0):
            raise ParameterError("histogram counts must be >= 0")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.counts)

    @property
    def bin_starts(self) -> np.ndarray:
        return self.bin_edges[:-1]

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))

    def scaled(self, factor: float) -> "TcspcHistogram":
        return TcspcHistogram(self.bin_edges, self.counts * float(factor), self.shots, self.seed, False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start_ns", "counts"])
        for t, c in zip(self.bin_starts, self.counts):
            w.writerow([repr(float(t)), int(c) if self.noisy else repr(float(c))])
        return buf.getvalue()


def expected_counts(
    traj: Trajectory,
    bin_width: float = 1.0,
    shots: int = 1,
    efficiency: float = 1.0,
    t_start: float | None = None,
    t_end: float | None = None,
) -> TcspcHistogram:
    """Mean counts per bin: ``shots * efficiency * integral of pl`` (trapezoidal).

    Bins start at ``t_start`` (default: first sample) and cover whole
    ``bin_width`` steps up to ``t_end`` (default: last sample).
    """
    if not bin_width > 0:
        raise ParameterError("bin_width must be positive")
    if shots < 1:
        raise ParameterError("shots must be >= 1")
    if not 0 < efficiency <= 1:
        raise ParameterError("efficiency must lie in (0, 1]")
    t, pl = traj.times, traj.pl
    if len(t) < 2:
        raise ParameterError("trajectory needs at least two samples")
    a = t[0] if t_start is None else float(t_start)
    b = t[-1] if t_end is None else float(t_end)
    if a < t[0] - STEP_TOL or b > t[-1] + STEP_TOL or not b > a:
        raise ParameterError("histogram range must lie inside the trajectory")
    lo = max(int(np.searchsorted(t, a, side="right")) - 1, 0)
    hi = min(int(np.searchsorted(t, b, side="left")), len(t) - 1)
    step = float(np.max(np.diff(t[lo:hi + 1]))) if hi > lo else float(t[-1] - t[0])
    if bin_width < step * (1 - STEP_TOL):
        raise ParameterError(f"bin width {bin_width} ns is below the sampling step {step:g} ns")
    n = int(np.floor((b - a) / bin_width + 1e-9))
    if n < 1:
        raise ParameterError("histogram range is shorter than one bin")
    edges = a + bin_width * np.arange(n + 1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (pl[1:] + pl[:-1]) * np.diff(t))])
    integral = np.diff(np.interp(edges, t, cum))
    counts = np.clip(shots * efficiency * integral, 0.0, None)
    return TcspcHistogram(edges, counts, shots)


def point_seed(base: int, index: int) -> int:
    """Seed for sweep point ``index`` derived from a run's ``base`` seed."""
    return int(base) ^ int(index)


def sample_counts(expected: TcspcHistogram, seed: int) -> TcspcHistogram:
    """Poisson draw of every bin of an expected-value histogram."""
    if expected.noisy:
        raise ParameterError("sample_counts needs an expected-value histogram")
    rng = np.random.default_rng(seed)
    return TcspcHistogram(expected.bin_edges, rng.poisson(expected.counts), expected.shots, seed, True)


def integrate_window(hist: TcspcHistogram, t_start: float, t_end: float) -> float:
    """Counts inside ``[t_start, t_end]``; partial bins contribute linearly."""
    edges = hist.bin_edges
    tol = STEP_TOL * max(1.0, abs(edges[-1]))
    if t_start > t_end:
        raise ParameterError("window start lies after its end")
    if t_start < edges[0] - tol or t_end > edges[-1] + tol:
        raise ParameterError(
            f"window [{t_start}, {t_end}] ns outside histogram range [{edges[0]}, {edges[-1]}] ns"
        )
    cum = np.concatenate([[0.0], np.cumsum(hist.counts, dtype=float)])
    return float(np.interp(t_end, edges, cum) - np.interp(t_start, edges, cum))


def contrast(signal, reference):
    """Relative change ``(signal - reference) / reference``."""
    s = np.asarray(signal, dtype=float)
    r = np.asarray(reference, dtype=float)
    if np.any(r <= 0):
        raise ParameterError("contrast needs a positive reference")
    out = (s - r) / r
    return float(out) if out.ndim == 0 else out


def overshoot_ratio(
    hist: TcspcHistogram, steady_window: tuple[float, float] = (2000.0, 3000.0), median: bool = True
) -> float:
    """Peak bin over the mean bin of the steady-state window.

    The peak is taken after a 3-bin median filter unless ``median`` is off.
    """
    a, b = steady_window
    if not a < b:
        raise ParameterError("steady window must have start < end")
    lo, hi = hist.bin_edges[:-1], hist.bin_edges[1:]
    sel = (lo >= a - STEP_TOL) & (hi <= b + STEP_TOL)
    if not np.any(sel):
        raise ParameterError(f"steady window [{a}, {b}] ns holds no complete bin")
    steady = float(np.mean(hist.counts[sel]))
    if not steady > 0:
        raise ParameterError("steady-state mean is zero")
    counts = np.asarray(hist.counts, dtype=float)
    if median and len(counts) >= 3:
        counts = _median_filter(counts, size=3, mode="nearest")
    return float(np.max(counts)) / steady


def metrics_to_json(**arrays) -> str:
    """Serialize named metric arrays, e.g. ``tau_ns``, ``overshoot_ratio``."""
    return json.dumps({k: [float(x) for x in np.atleast_1d(v)] for k, v in arrays.items()}, indent=1)
