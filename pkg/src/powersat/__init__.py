"""Toolkit for motion control under instantaneous power-supply limits.

Covers the power-limit nonlinearity itself (exact and approximate forms),
its describing function, bandwidth limits it imposes on servo loops, and a
family of controllers that respect it: anti-windup linear control,
passivity-based control, finite-horizon optimal control with dynamic power
allocation, and CLF-QP control. A fixed-step simulator and a CLI reproduce
the benchmark scenarios end to end.
"""

from powersat.powerlim import PsatMode, PowerBudget, sat, motor_power, psat, psat_vector

__all__ = [
    "PsatMode",
    "PowerBudget",
    "sat",
    "motor_power",
    "psat",
    "psat_vector",
]

__version__ = "0.1.0"
