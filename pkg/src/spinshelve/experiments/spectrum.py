"""Continuous-wave ODMR spectrum with nuclear hyperfine structure."""
from __future__ import annotations

import math
from datetime import datetime, timezone

import numpy as np

from ..config import ExperimentConfig
from ..errors import ConfigError, ParameterError
from .report import ExperimentReport

GAMMA_E = 28.024  # electron gyromagnetic ratio, GHz/T
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def hyperfine_weights(n_nuclei: int, spin: float = 1.0) -> np.ndarray:
    """Probability of each total projection ``m_I`` of ``n_nuclei`` spins ``I``.

    Entries run from ``-n I`` to ``+n I`` in unit steps; the vector is the
    uniform ``2I + 1`` point distribution convolved ``n_nuclei`` times.
    """
    if int(n_nuclei) != n_nuclei or n_nuclei < 0:
        raise ParameterError("n_nuclei must be a nonnegative integer")
    two_i = 2 * float(spin)
    if not (two_i >= 1 and two_i == round(two_i)):
        raise ParameterError(f"nuclear spin must be a positive multiple of 1/2, got {spin}")
    base = np.ones(int(two_i) + 1, dtype=np.int64)
    counts = np.ones(1, dtype=np.int64)
    for _ in range(int(n_nuclei)):
        counts = np.convolve(counts, base)
    return counts / counts.sum()


def odmr_spectrum(
    config: ExperimentConfig,
    f_grid,
    b_field: float,
    linewidth: float,
    depth: float,
    n_nuclei: int = 3,
    spin: float = 1.0,
) -> np.ndarray:
    """Relative PL change versus microwave frequency.

    Two dip groups sit at ``D_gs -/+ gamma_e B`` (one group at ``B = 0``).
    Each group is ``-depth`` times a sum of unit-height Gaussians of FWHM
    ``linewidth`` at offsets ``m_I * A`` weighted by :func:`hyperfine_weights`.

    Parameters
    ----------
    f_grid : array_like
        Frequencies in GHz.
    b_field : float
        Magnetic field in mT along the defect axis.
    linewidth : float
        FWHM of a single hyperfine line in MHz.
    depth : float
        Scale of the summed dip (fraction).
    """
    a_hf = config.system.hyperfine_a
    if a_hf is None:
        raise ConfigError("missing config key system.hyperfine_a (hyperfine constant in MHz)")
    if not linewidth > 0:
        raise ParameterError("linewidth must be positive")
    if b_field < 0:
        raise ParameterError("b_field must be >= 0")
    f = np.asarray(f_grid, dtype=float)
    w = hyperfine_weights(n_nuclei, spin)
    m = np.arange(len(w)) - (len(w) - 1) / 2
    sigma = linewidth * 1e-3 / FWHM_PER_SIGMA
    shift = GAMMA_E * b_field * 1e-3
    centers = [config.system.d_gs] if shift == 0 else [config.system.d_gs - shift, config.system.d_gs + shift]
    dip = np.zeros_like(f)
    for c in centers:
        lines = c + m * a_hf * 1e-3
        dip += (w[:, None] * np.exp(-((f[None, :] - lines[:, None]) ** 2) / (2 * sigma**2))).sum(axis=0)
    return -depth * dip


def odmr_scan(
    config: ExperimentConfig,
    f_grid=None,
    b_field: float = 0.3 / GAMMA_E * 1e3,
    linewidth: float = 10.0,
    depth: float = 0.05,
    n_nuclei: int = 3,
    spin: float = 1.0,
) -> ExperimentReport:
    """Report wrapper around :func:`odmr_spectrum`."""
    started = datetime.now(timezone.utc)
    f = np.linspace(2.9, 4.1, 2401) if f_grid is None else np.asarray(f_grid, dtype=float)
    spec = odmr_spectrum(config, f, b_field, linewidth, depth, n_nuclei, spin)
    shift = GAMMA_E * b_field * 1e-3
    report = ExperimentReport(
        "odmr-spectrum", "f_ghz", list(f), {"contrast": spec}, {},
        {
            "b_field_mT": b_field, "linewidth_MHz": linewidth, "depth": depth,
            "group_centers_ghz": [config.system.d_gs - shift, config.system.d_gs + shift] if shift else [config.system.d_gs],
            "hyperfine_a_MHz": config.system.hyperfine_a,
            "weights": list(hyperfine_weights(n_nuclei, spin)),
        },
        {"fig1c_spectrum.csv": {"columns": ["f_ghz", "contrast"], "rows": [[a, b] for a, b in zip(f, spec)]}},
        config.to_dict(), config.config_hash(), config.seed,
    )
    report.stamp(started)
    return report
