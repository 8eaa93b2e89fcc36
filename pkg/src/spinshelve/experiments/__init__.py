"""Protocol orchestrators and their reports."""
from .protocols import (
    calibrate_pi,
    init_trajectory,
    initialization_scan,
    pl_recovery_scan,
    plateau_fraction,
    rabi_buffer_scan,
    t1_scan,
    t95_time,
)
from .report import ExperimentReport, atomic_write
from .simulate import SimulationPlan, readout_histogram, simulate_timeline
from .spectrum import hyperfine_weights, odmr_scan, odmr_spectrum

__all__ = [
    "ExperimentReport", "SimulationPlan", "atomic_write", "calibrate_pi", "hyperfine_weights",
    "init_trajectory", "initialization_scan", "odmr_scan", "odmr_spectrum", "pl_recovery_scan",
    "plateau_fraction", "rabi_buffer_scan", "readout_histogram", "simulate_timeline", "t1_scan",
    "t95_time",
]
