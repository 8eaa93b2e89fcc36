"""Fit models, their parameter domains and initial-guess heuristics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import find_peaks, peak_widths

from ..errors import FitError

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class FitModel:
    """A named model ``f(x, *params)``.

    ``positive`` marks parameters constrained to ``> 0``; the engine fits
    their logarithm.
    """

    name: str
    params: tuple[str, ...]
    formula: str
    func: Callable
    positive: frozenset
    guesser: Callable
    canonical: Callable | None = None

    @property
    def n_params(self) -> int:
        return len(self.params)

    def __call__(self, x, p):
        return self.func(np.asarray(x, dtype=float), *p)

    def check_domain(self, p) -> None:
        if len(p) != self.n_params:
            raise FitError(f"{self.name} takes {self.n_params} parameters, got {len(p)}")
        for name, v in zip(self.params, p):
            if not np.isfinite(v):
                raise FitError(f"{self.name}: parameter {name} is not finite")
            if name in self.positive and not v > 0:
                raise FitError(f"{self.name}: parameter {name} must be > 0, got {v}")

    def canonicalize(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float).copy()
        return self.canonical(p) if self.canonical else p


@dataclass(frozen=True)
class Guess:
    values: np.ndarray
    flagged: bool = False
    note: str = ""


def _sorted(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x, kind="stable")
    return x[order], y[order]


# ---------------------------------------------------------------- exponentials

def _f_exp_decay(x, y0, a, t):
    return y0 + a * np.exp(-x / t)


def _f_exp_recovery(x, y0, a, t):
    return y0 - a * np.exp(-x / t)


def _exp_guess(x, y):
    """(y0, signed amplitude at x=0, T, flagged) for ``y0 + a exp(-x/T)``."""
    x, y = _sorted(x, y)
    span = x[-1] - x[0]
    tail = max(1, len(y) // 10)
    y0 = float(np.mean(y[-tail:]))
    a0 = float(y[0] - y0)
    if a0 == 0 or span <= 0:
        return float(np.mean(y)), 0.0, span / 3 if span > 0 else 1.0, True
    dev = np.abs(y - y0)
    below = np.nonzero(dev <= abs(a0) / math.e)[0]
    if len(below) == 0:
        t = span
    else:
        i = below[0]
        if i == 0:
            t = span / 10
        else:
            # interpolate the crossing between samples i-1 and i
            d0, d1 = dev[i - 1], dev[i]
            frac = (d0 - abs(a0) / math.e) / (d0 - d1) if d0 != d1 else 0.0
            t = x[i - 1] + frac * (x[i] - x[i - 1]) - x[0]
    t = max(t, span * 1e-3)
    # amplitude referred to x = 0
    a = a0 * math.exp(min(x[0] / t, 700.0))
    return y0, a, t, False


def _guess_exp_decay(x, y):
    y0, a, t, flag = _exp_guess(x, y)
    return Guess(np.array([y0, a, t]), flag, "constant data" if flag else "")


def _guess_exp_recovery(x, y):
    y0, a, t, flag = _exp_guess(x, y)
    amp = -a
    if amp <= 0:
        # decreasing data: keep the positivity domain, let the fit sort it out
        scale = float(np.ptp(y)) or abs(y0) or 1.0
        return Guess(np.array([y0, 1e-3 * scale, t]), True, "data not growing")
    return Guess(np.array([y0, amp, t]), flag)


# ---------------------------------------------------------------- damped sine

def _f_damped_sin(x, a, t2, period, tau0):
    return a * np.exp(-x / t2) * np.sin(2 * np.pi / period * (x - tau0))


def _f_damped_sin_offset(x, y0, a, t2, period, tau0):
    return y0 + _f_damped_sin(x, a, t2, period, tau0)


def _wrap_phase(a, period, tau0):
    if a < 0:
        a, tau0 = -a, tau0 + period / 2
    tau0 = (tau0 + period / 2) % period - period / 2
    return a, tau0


def _canon_damped_sin(p):
    p[0], p[3] = _wrap_phase(p[0], p[2], p[3])
    return p


def _canon_damped_sin_offset(p):
    p[1], p[4] = _wrap_phase(p[1], p[3], p[4])
    return p


def dominant_period(x, y) -> tuple[float, float, bool]:
    """Period and phase of the strongest spectral line (direct DFT).

    Returns ``(period, tau0, flagged)`` with ``y ~ sin(2 pi (x - tau0) / period)``.
    """
    x, y = _sorted(x, y)
    y = y - np.mean(y)
    span = x[-1] - x[0]
    if span <= 0 or not np.any(y):
        return (span if span > 0 else 1.0), 0.0, True
    dx = np.median(np.diff(x))
    f_lo, f_hi = 0.5 / span, 0.5 / dx
    freqs = np.linspace(f_lo, f_hi, max(64, 8 * len(x)))

    def power(f):
        ph = np.exp(-2j * np.pi * np.outer(np.atleast_1d(f), x))
        return np.abs(ph @ y) ** 2

    pw = power(freqs)
    k = int(np.argmax(pw))
    # golden-section refinement around the grid peak
    lo = freqs[max(k - 1, 0)]
    hi = freqs[min(k + 1, len(freqs) - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    for _ in range(60):
        if power(c)[0] > power(d)[0]:
            hi = d
        else:
            lo = c
        c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    f = 0.5 * (lo + hi)
    s = np.sum(y * np.exp(-2j * np.pi * f * x))
    omega = 2 * np.pi * f
    tau0 = -(np.angle(s) + np.pi / 2) / omega
    period = 1.0 / f
    tau0 = (tau0 + period / 2) % period - period / 2
    return period, tau0, False


def _guess_damped_sin(x, y):
    x, y = _sorted(x, y)
    period, tau0, flag = dominant_period(x, y)
    amp = float(np.ptp(y)) / 2 or 1.0
    span = x[-1] - x[0] if x[-1] > x[0] else 1.0
    # amplitude at x = 0 from the early envelope, damping from span
    return Guess(np.array([amp, span, period, tau0]), flag, "no oscillation found" if flag else "")


def _guess_damped_sin_offset(x, y):
    x, y = _sorted(x, y)
    y0 = float(np.mean(y))
    g = _guess_damped_sin(x, y - y0)
    return Guess(np.concatenate([[y0], g.values]), g.flagged, g.note)


# ---------------------------------------------------------------- double gaussian

def _f_double_gaussian(x, b, a1, mu1, s1, a2, mu2, s2):
    return (
        b
        + a1 * np.exp(-((x - mu1) ** 2) / (2 * s1**2))
        + a2 * np.exp(-((x - mu2) ** 2) / (2 * s2**2))
    )


def _canon_double_gaussian(p):
    if p[2] > p[5]:
        p[1:4], p[4:7] = p[4:7].copy(), p[1:4].copy()
    return p


def _guess_double_gaussian(x, y):
    x, y = _sorted(x, y)
    med = float(np.median(y))
    sign = 1.0 if (np.max(y) - med) >= (med - np.min(y)) else -1.0
    b = float(np.percentile(y, 10 if sign > 0 else 90))
    z = sign * (y - b)
    dx = float(np.median(np.diff(x))) if len(x) > 1 else 1.0
    span = x[-1] - x[0] if x[-1] > x[0] else 1.0
    peaks, props = find_peaks(z, prominence=0)
    flagged = False
    if len(peaks) >= 2:
        top = peaks[np.argsort(props["prominences"])[::-1][:2]]
    elif len(peaks) == 1:
        top = peaks
    else:
        top = np.array([int(np.argmax(z))])
    widths = peak_widths(z, top, rel_height=0.5)[0] if len(top) else np.array([])
    sig = [max(w * dx / FWHM_PER_SIGMA, dx / 2) for w in widths]
    mus = [float(x[i]) for i in top]
    amps = [float(z[i]) * sign for i in top]
    if len(top) == 1:
        flagged = True
        mus.append(mus[0] + 2 * sig[0] if mus[0] + 2 * sig[0] <= x[-1] else mus[0] - 2 * sig[0])
        amps.append(amps[0] / 2)
        sig.append(sig[0])
    sig = [s if s > 0 else span / 20 for s in sig]
    p = np.array([b, amps[0], mus[0], sig[0], amps[1], mus[1], sig[1]])
    return Guess(_canon_double_gaussian(p), flagged, "fewer than two peaks" if flagged else "")


# ---------------------------------------------------------------- power law, line

def _f_power_law(x, t0, b, a):
    return t0 + b * np.power(x, a)


def _guess_power_law(x, y):
    x, y = _sorted(x, y)
    if np.any(x <= 0):
        raise FitError("power_law needs x > 0")
    rng = float(np.ptp(y))
    eps = 0.05 * rng if rng > 0 else 1.0
    t0 = float(np.min(y)) - eps
    slope, icpt = np.polyfit(np.log(x), np.log(y - t0), 1)
    return Guess(np.array([t0, math.exp(icpt), slope]), rng == 0, "constant data" if rng == 0 else "")


def _f_linear(x, c0, c1):
    return c0 + c1 * x


def _guess_linear(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 1 or np.ptp(x) == 0:
        return Guess(np.array([float(np.mean(y)), 0.0]), True, "degenerate x")
    c1, c0 = np.polyfit(x, y, 1)
    return Guess(np.array([c0, c1]))


MODELS: dict[str, FitModel] = {
    m.name: m
    for m in (
        FitModel("exp_decay", ("y0", "A", "T"), "y0 + A*exp(-t/T)", _f_exp_decay,
                 frozenset({"T"}), _guess_exp_decay),
        FitModel("exp_recovery", ("y0", "A", "T"), "y0 - A*exp(-t/T)", _f_exp_recovery,
                 frozenset({"A", "T"}), _guess_exp_recovery),
        FitModel("damped_sin", ("A", "T2", "T", "tau0"), "A*exp(-t/T2)*sin(2*pi/T*(t - tau0))",
                 _f_damped_sin, frozenset({"T2", "T"}), _guess_damped_sin, _canon_damped_sin),
        FitModel("double_gaussian", ("b", "A1", "mu1", "sigma1", "A2", "mu2", "sigma2"),
                 "b + A1*exp(-(x-mu1)^2/(2*sigma1^2)) + A2*exp(-(x-mu2)^2/(2*sigma2^2))",
                 _f_double_gaussian, frozenset({"sigma1", "sigma2"}), _guess_double_gaussian,
                 _canon_double_gaussian),
        FitModel("power_law", ("t0", "b", "a"), "t0 + b*k^a", _f_power_law,
                 frozenset({"b"}), _guess_power_law),
        FitModel("linear", ("c0", "c1"), "c0 + c1*x", _f_linear, frozenset(), _guess_linear),
        # Rabi contrast oscillates about a nonzero baseline
        FitModel("damped_sin_offset", ("y0", "A", "T2", "T", "tau0"),
                 "y0 + A*exp(-t/T2)*sin(2*pi/T*(t - tau0))", _f_damped_sin_offset,
                 frozenset({"T2", "T"}), _guess_damped_sin_offset, _canon_damped_sin_offset),
    )
}

PAPER_MODELS = ("exp_decay", "exp_recovery", "damped_sin", "double_gaussian", "power_law", "linear")


def get_model(model) -> FitModel:
    if isinstance(model, FitModel):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise FitError(f"unknown model {model!r}; choose from {', '.join(MODELS)}") from None


def _as_vector(model: FitModel, params) -> np.ndarray:
    if isinstance(params, dict):
        try:
            return np.array([float(params[k]) for k in model.params])
        except KeyError as exc:
            raise FitError(f"{model.name}: missing parameter {exc.args[0]}") from None
    return np.asarray(params, dtype=float)


def model_eval(model, params, x) -> np.ndarray:
    """Evaluate ``model`` at ``x``; ``params`` is a sequence or a name mapping."""
    m = get_model(model)
    p = _as_vector(m, params)
    m.check_domain(p)
    return m(x, p)


def initial_guess(model, x, y) -> Guess:
    """Deterministic starting point for :func:`fit`."""
    m = get_model(model)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0 or len(x) != len(y):
        raise FitError("initial_guess needs nonempty x and y of equal length")
    return m.guesser(x, y)
