"""Five-level rate model of an optically pumped spin-triplet defect.

Level ordering used throughout the package::

    0  GS, m_s = 0
    1  GS, m_s = +-1 (merged)
    2  ES, m_s = 0
    3  ES, m_s = +-1 (merged)
    4  IS (singlet shelving state)

Rates are in s^-1 and times in ns unless a name says otherwise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import optimize

from .errors import CalibrationError, DegenerateSteadyStateError, ParameterError

LEVELS = ("n_gs0", "n_gs1", "n_es0", "n_es1", "n_is")
GS0, GS1, ES0, ES1, IS = range(5)
NS = 1e-9

SUM_TOL = 1e-9
COMPONENT_TOL = 1e-9


class RegimeWarning(UserWarning):
    """Rates outside the regime that produces m_s = 0 polarization."""


@dataclass(frozen=True)
class RateParams:
    """Transition rates of the 5-level model, all in s^-1."""

    k_r: float
    gamma0: float
    gamma1: float
    kappa0: float
    kappa1: float
    k_sl_0to1: float = 0.0
    k_sl_1to0: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"rate {f.name} must be finite and >= 0, got {value!r}")

    @property
    def t_is(self) -> float:
        """Intermediate-state lifetime 1/(kappa0 + kappa1) in ns (inf if both are zero)."""
        total = self.kappa0 + self.kappa1
        return math.inf if total == 0 else 1.0 / (total * NS)

    @property
    def t1(self) -> float:
        """Ground-state spin-lattice relaxation time in ns (inf without relaxation)."""
        total = self.k_sl_0to1 + self.k_sl_1to0
        return math.inf if total == 0 else 1.0 / (total * NS)

    def check_regime(self) -> list[str]:
        """Return (and warn about) violations of gamma0 < gamma1 and kappa0 > kappa1."""
        issues = []
        if not self.gamma0 < self.gamma1:
            issues.append(f"gamma0={self.gamma0:.4g} is not below gamma1={self.gamma1:.4g}")
        if not self.kappa0 > self.kappa1:
            issues.append(f"kappa0={self.kappa0:.4g} is not above kappa1={self.kappa1:.4g}")
        for msg in issues:
            warnings.warn(msg, RegimeWarning, stacklevel=2)
        return issues

    def replace(self, **changes) -> "RateParams":
        return RateParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Populations:
    """Occupation fractions of the five levels."""

    n_gs0: float
    n_gs1: float
    n_es0: float
    n_es1: float
    n_is: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ParameterError(f"populations must be finite, got {values}")
        if np.any(values < -COMPONENT_TOL) or np.any(values > 1 + COMPONENT_TOL):
            raise ParameterError(f"population components must lie in [0, 1], got {values}")
        if abs(values.sum() - 1.0) > SUM_TOL:
            raise ParameterError(f"populations must sum to 1, got sum {values.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.n_gs0, self.n_gs1, self.n_es0, self.n_es1, self.n_is], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Populations":
        v = np.asarray(values, dtype=float)
        if v.shape != (5,):
            raise ParameterError(f"expected 5 components, got shape {v.shape}")
        return cls(*(float(x) for x in v))

    @property
    def n_gs(self) -> float:
        return self.n_gs0 + self.n_gs1

    @property
    def n_es(self) -> float:
        return self.n_es0 + self.n_es1


@dataclass(frozen=True)
class SpinSystemConfig:
    """Rates plus the spectroscopic constants of the defect.

    ``hyperfine_a`` (MHz) has no default; ODMR spectra refuse to run without it.
    """

    rates: RateParams
    d_gs: float = 3.49
    d_es: float = 2.09
    hyperfine_a: float | None = None
    thermal_ratio: float = 2.0
    temperature_label: float | None = None
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not self.d_gs > 0 or not self.d_es > 0:
            raise ParameterError("zero-field splittings must be positive")
        if not self.thermal_ratio > 0:
            raise ParameterError(f"thermal_ratio must be positive, got {self.thermal_ratio!r}")
        if self.hyperfine_a is not None and not self.hyperfine_a > 0:
            raise ParameterError("hyperfine_a must be positive when given")
        r = self.rates
        if r.k_sl_0to1 > 0 or r.k_sl_1to0 > 0:
            if r.k_sl_1to0 == 0 or not math.isclose(
                r.k_sl_0to1 / r.k_sl_1to0, self.thermal_ratio, rel_tol=1e-9
            ):
                raise ParameterError(
                    "spin-lattice rates violate detailed balance: "
                    f"k_sl_0to1/k_sl_1to0 must equal thermal_ratio={self.thermal_ratio}"
                )


def spin_lattice_rates(t1_ns: float | None, thermal_ratio: float = 2.0) -> tuple[float, float]:
    """Split 1/T1 into (0 -> +-1, +-1 -> 0) rates obeying detailed balance.

    The ground-state polarization then relaxes toward ``thermal_ratio`` with
    time constant ``t1_ns``.
    """
    if t1_ns is None or math.isinf(t1_ns):
        return 0.0, 0.0
    if not t1_ns > 0:
        raise ParameterError(f"T1 must be positive, got {t1_ns!r}")
    total = 1.0 / (t1_ns * NS)
    return total * thermal_ratio / (1 + thermal_ratio), total / (1 + thermal_ratio)


def rate_matrix(params: RateParams, k_e: float) -> np.ndarray:
    """Generator ``M`` with ``d(pops)/dt = M @ pops`` (units s^-1).

    Column ``j`` holds the outflow of level ``j``; every column sums to zero.
    """
    if not np.isfinite(k_e) or k_e < 0:
        raise ParameterError(f"excitation rate must be finite and >= 0, got {k_e!r}")
    m = np.zeros((5, 5))
    couplings = (
        (GS0, ES0, k_e),
        (GS1, ES1, k_e),
        (ES0, GS0, params.k_r),
        (ES1, GS1, params.k_r),
        (ES0, IS, params.gamma0),
        (ES1, IS, params.gamma1),
        (IS, GS0, params.kappa0),
        (IS, GS1, params.kappa1),
        (GS0, GS1, params.k_sl_0to1),
        (GS1, GS0, params.k_sl_1to0),
    )
    for src, dst, rate in couplings:
        m[dst, src] += rate
        m[src, src] -= rate
    return m


def thermal_populations(thermal_ratio: float = 2.0) -> Populations:
    if not thermal_ratio > 0:
        raise ParameterError(f"thermal_ratio must be positive, got {thermal_ratio!r}")
    return Populations(1 / (1 + thermal_ratio), thermal_ratio / (1 + thermal_ratio), 0.0, 0.0, 0.0)


def _closed_classes(m: np.ndarray) -> list[tuple[str, ...]]:
    """Closed communicating classes of the transition graph of ``m``."""
    n = m.shape[0]
    reach = (m.T != 0) | np.eye(n, dtype=bool)  # reach[i, j]: i -> j in one step
    reach = reach.copy()
    for k in range(n):
        reach = reach | (reach[:, [k]] & reach[[k], :])
    classes = []
    seen = set()
    for i in range(n):
        if i in seen:
            continue
        members = tuple(j for j in range(n) if reach[i, j] and reach[j, i])
        seen.update(members)
        leaves = any(reach[i, j] and not reach[j, i] for j in range(n))
        if not leaves:
            classes.append(tuple(LEVELS[j] for j in members))
    return classes


def steady_state(params: RateParams, k_e: float) -> Populations:
    """Stationary populations of the generator at constant excitation ``k_e``.

    Raises
    ------
    DegenerateSteadyStateError
        When the null space is more than one-dimensional, e.g. no excitation
        and no spin-lattice relaxation, which leaves GS0 and GS1 disconnected.
    """
    m = rate_matrix(params, k_e) * NS
    classes = _closed_classes(m)
    if len(classes) != 1:
        names = " / ".join("{" + ", ".join(c) + "}" for c in classes)
        raise DegenerateSteadyStateError(
            f"rate matrix has {len(classes)} disconnected stationary subspaces: {names}",
            classes,
        )
    aug = np.vstack([m, np.ones((1, 5))])
    rhs = np.zeros(6)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    p = np.clip(p, 0.0, None)
    return Populations.from_array(p / p.sum())


def mean_isc_rate(params: RateParams, es_weights) -> float:
    """ISC rate averaged over the ES sublevels with weights ``(w0, w1)``."""
    w0, w1 = es_weights
    return (w0 * params.gamma0 + w1 * params.gamma1) / (w0 + w1)


def high_power_is_fraction(params: RateParams) -> float:
    """Closed-form IS occupancy in the limit of instantaneous GS re-excitation.

    With the GS emptied instantly the ES sublevels hold populations in the
    ratio kappa_i / gamma_i, which fixes the weights of the mean ISC rate.
    """
    if params.gamma0 == 0 or params.gamma1 == 0:
        return 1.0 if params.kappa0 + params.kappa1 == 0 else 0.0
    ksum = params.kappa0 + params.kappa1
    gbar = mean_isc_rate(params, (params.kappa0 / params.gamma0, params.kappa1 / params.gamma1))
    x = gbar / ksum
    return x / (1 + x)


@dataclass(frozen=True)
class CalibrationTargets:
    """Observables the default rate set is tuned to reproduce."""

    t_is: float  # ns
    tau_es: float  # ns
    is_fraction: float  # steady-state IS occupancy at k_exp
    k_exp: float  # s^-1

    def __post_init__(self):
        for name in ("t_is", "tau_es", "is_fraction", "k_exp"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"calibration target {name} must be positive")
        if not self.is_fraction < 1:
            raise ParameterError("is_fraction must be below 1")


def _es_weights(params: RateParams, k_e: float) -> tuple[float, float]:
    p = steady_state(params, k_e)
    return p.n_es0, p.n_es1


def es_lifetime(params: RateParams, k_e: float) -> float:
    """Population-weighted ES lifetime (ns) at the steady state of ``k_e``."""
    gbar = mean_isc_rate(params, _es_weights(params, k_e))
    return 1.0 / ((params.k_r + gbar) * NS)


def calibrate_rates(
    targets: CalibrationTargets,
    kappa_ratio: float,
    gamma_ratio: float,
    *,
    thermal_ratio: float = 2.0,
    t1: float | None = None,
) -> RateParams:
    """Find rates reproducing the measured observables.

    ``kappa0 + kappa1 = 1/T_IS`` is imposed exactly and the priors fix
    ``kappa0/kappa1`` and ``gamma1/gamma0``.  The remaining unknowns
    ``k_r`` and the ISC scale are solved so that the weighted ES lifetime
    equals ``tau_es`` and the steady-state IS fraction at ``k_exp`` equals
    the target.

    Raises
    ------
    CalibrationError
        If the target IS fraction exceeds what a vanishing radiative rate can
        deliver, or the solver does not meet the tolerances.
    """
    if not kappa_ratio > 0 or not gamma_ratio > 0:
        raise ParameterError("calibration priors must be positive")
    ksum = 1.0 / (targets.t_is * NS)
    kappa0 = ksum * kappa_ratio / (1 + kappa_ratio)
    kappa1 = ksum - kappa0
    sl01, sl10 = spin_lattice_rates(t1, thermal_ratio)
    inv_tau = 1.0 / (targets.tau_es * NS)

    def build(k_r, gamma0):
        return RateParams(k_r, gamma0, gamma0 * gamma_ratio, kappa0, kappa1, sl01, sl10)

    def gamma0_for(k_r):
        # gamma0 such that k_r + weighted ISC rate = 1/tau_es; weights depend on gamma0.
        def f(g0):
            return k_r + mean_isc_rate(build(k_r, g0), _es_weights(build(k_r, g0), targets.k_exp)) - inv_tau

        hi = (inv_tau - k_r) / min(1.0, gamma_ratio)
        lo = (inv_tau - k_r) / max(1.0, gamma_ratio)
        if math.isclose(lo, hi):
            return lo
        return optimize.brentq(f, lo * (1 - 1e-12), hi * (1 + 1e-12), xtol=1e-14 * hi, rtol=1e-15)

    def is_fraction(k_r):
        return steady_state(build(k_r, gamma0_for(k_r)), targets.k_exp).n_is

    ceiling = is_fraction(0.0)
    if targets.is_fraction >= ceiling:
        raise CalibrationError(
            f"IS fraction {targets.is_fraction:.4g} at k_exp={targets.k_exp:.3g} s^-1 is infeasible: "
            f"even with k_r = 0 the model reaches only {ceiling:.4g} "
            f"(T_IS={targets.t_is} ns, tau_es={targets.tau_es} ns)",
            {"is_fraction_ceiling": ceiling, "is_fraction_target": targets.is_fraction},
        )
    floor = is_fraction(inv_tau * (1 - 1e-9))
    if targets.is_fraction <= floor:
        raise CalibrationError(
            f"IS fraction {targets.is_fraction:.4g} is below the minimum {floor:.4g} "
            "reachable with positive ISC rates",
            {"is_fraction_floor": floor, "is_fraction_target": targets.is_fraction},
        )
    k_r = optimize.brentq(
        lambda kr: is_fraction(kr) - targets.is_fraction, 0.0, inv_tau * (1 - 1e-9), xtol=1e-6, rtol=1e-14
    )
    params = build(k_r, gamma0_for(k_r))

    residuals = {
        "t_is_ns": params.t_is - targets.t_is,
        "tau_es_rel": es_lifetime(params, targets.k_exp) / targets.tau_es - 1,
        "is_fraction": steady_state(params, targets.k_exp).n_is - targets.is_fraction,
    }
    if abs(residuals["tau_es_rel"]) > 1e-6 or abs(residuals["is_fraction"]) > 1e-3:
        raise CalibrationError(f"calibration did not converge: {residuals}", residuals)
    return params

