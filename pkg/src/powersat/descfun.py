"""Describing function of the power-limit nonlinearity.

For a torque input u = A sin(ωt) driving a plant with frequency response
X_G ∠ φ_G (torque to velocity), the velocity seen by the limiter is
q̇ = A X sin(ψ + φ) with X = X_G X_N and φ = φ_G + φ_N, so the first
harmonic of the limited torque depends on the describing function itself.
The gain and phase are therefore a fixed point, solved here by damped
Picard iteration with a finite-difference Newton fallback.

Required power over one period is P(ψ) = (A²X/2)(cos φ − cos(2ψ + φ)),
which has twice the excitation frequency; the limiter is active on a
single arc (ψ_l, ψ_u) ⊂ (0, π) where P exceeds the budget, and the
closed-form Fourier coefficients of the clipped wave follow from
integrating P_max / (A X sin(ψ + φ)) over that arc.
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "PlantFR",
    "DFPoint",
    "DFConvergenceError",
    "first_order_fr",
    "active_window",
    "fourier_coeffs",
    "describing_function",
    "df_sat",
    "nyquist_sweep",
    "df_sweep_to_csv",
]

PICARD_DAMPING = 0.5
MAX_ITER = 200
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class PlantFR:
    """Frequency response of the torque-to-velocity path."""

    magnitude_fn: Callable[[float], float]
    phase_fn: Callable[[float], float]

    def complex_at(self, omega: float) -> complex:
        return self.magnitude_fn(omega) * cmath.exp(1j * self.phase_fn(omega))


def first_order_fr(m: float, d: float) -> PlantFR:
    """G(s) = 1/(m s + d), torque in, velocity out."""
    if m <= 0 or d < 0:
        raise ValueError("need positive inertia and nonnegative damping")
    return PlantFR(
        magnitude_fn=lambda w: 1.0 / math.hypot(m * w, d),
        phase_fn=lambda w: -math.atan2(m * w, d))


@dataclass(frozen=True)
class DFPoint:
    """Converged describing-function value at one (amplitude, frequency)."""

    amplitude: float
    frequency: float
    gain: float
    phase: float
    window: Optional[Tuple[float, float]]
    iterations: int
    residual: float
    residual_history: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0 + 1e-9:
            raise ValueError("describing-function gain must lie in (0, 1]")
        if self.window is not None:
            lo, hi = self.window
            if not (-1e-12 <= lo < hi <= math.pi + 1e-12):
                raise ValueError("window must be an arc inside [0, pi]")

    def as_complex(self) -> complex:
        return self.gain * cmath.exp(1j * self.phase)


class DFConvergenceError(RuntimeError):
    """Fixed point not reached; carries the last residual."""

    def __init__(self, amplitude, frequency, residual):
        super().__init__(
            f"describing function did not converge at A={amplitude:g}, "
            f"omega={frequency:g} (residual {residual:.3e})")
        self.residual = residual


def _required_power(psi, a, x, phi, *, _half=0.5):
    return _half * a * a * x * (math.cos(phi) - math.cos(2.0 * psi + phi))


def active_window(a: float, x: float, phi: float,
                  p_max: float) -> Optional[Tuple[float, float]]:
    """Arc of scaled time where required power exceeds the budget.

    None when the peak power stays within budget (tangency included).
    """
    if a <= 0 or x <= 0:
        raise ValueError("amplitude and gain must be positive")
    peak = 0.5 * a * a * x * (math.cos(phi) + 1.0)
    if peak <= p_max:
        return None
    cstar = math.cos(phi) - 2.0 * p_max / (a * a * x)
    if abs(cstar) > 1.0 + 1e-12:
        raise ValueError("window equation has no real solution")
    alpha = math.acos(min(1.0, max(-1.0, cstar)))

    # both arccos branches, shifted into [0, pi]; the true window is the
    # unique ordered pair with over-budget power strictly inside
    candidates = set()
    for branch in (alpha, -alpha):
        base = 0.5 * (branch - phi)
        for k in (-2, -1, 0, 1, 2):
            v = base + k * math.pi
            if -1e-12 <= v <= math.pi + 1e-12:
                candidates.add(min(math.pi, max(0.0, v)))
    ordered = sorted(candidates)
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            lo, hi = ordered[i], ordered[j]
            if hi - lo < 1e-12:
                continue
            mid = 0.5 * (lo + hi)
            if _required_power(mid, a, x, phi) > p_max and \
                    abs(_required_power(lo, a, x, phi) - p_max) < 1e-6 * (1 + p_max) and \
                    abs(_required_power(hi, a, x, phi) - p_max) < 1e-6 * (1 + p_max):
                return lo, hi
    raise ValueError("no consistent active window found")


def fourier_coeffs(a: float, x: float, phi: float,
                   p_max: float) -> Tuple[float, float]:
    """First-harmonic (c_N, s_N) = (X_N cos φ_N, X_N sin φ_N) of the
    limited torque; (1, 0) when the limiter never engages."""
    window = active_window(a, x, phi, p_max)
    if window is None:
        return 1.0, 0.0
    return _coeffs_for_window(a, x, phi, p_max, window)


def _coeffs_for_window(a, x, phi, p_max, window):
    lo, hi = window
    sl = math.sin(lo + phi)
    su = math.sin(hi + phi)
    if sl <= 0.0 or su <= 0.0:
        raise ValueError(
            "velocity changes sign inside the active window; the "
            "closed-form coefficients are undefined there")
    dpsi = hi - lo
    lpsi = math.log(su / sl)
    y_n = dpsi * math.cos(phi) - lpsi * math.sin(phi)
    z_n = dpsi * math.sin(phi) + lpsi * math.cos(phi)
    scale = 2.0 * p_max / (math.pi * a * a * x)
    c_n = scale * y_n + (2.0 * (math.pi - dpsi)
                         + math.sin(2 * hi) - math.sin(2 * lo)) / (2 * math.pi)
    s_n = scale * z_n + (math.cos(2 * hi) - math.cos(2 * lo)) / (2 * math.pi)
    return c_n, s_n


def describing_function(a: float, omega: float, plant: PlantFR,
                        p_max: float) -> DFPoint:
    """Solve the self-consistent gain and phase of the limiter at (A, ω)."""
    if a <= 0 or omega <= 0:
        raise ValueError("amplitude and frequency must be positive")
    x_g = plant.magnitude_fn(omega)
    phi_g = plant.phase_fn(omega)
    if x_g <= 0:
        raise ValueError("plant magnitude must be positive")

    def picard_map(n: complex) -> complex:
        if abs(n) == 0.0:
            return 1.0 + 0.0j
        x = x_g * abs(n)
        phi = phi_g + cmath.phase(n)
        c, s = fourier_coeffs(a, x, phi, p_max)
        return complex(c, s)

    n = 1.0 + 0.0j
    history = []
    for it in range(1, MAX_ITER + 1):
        n_new = picard_map(n)
        residual = abs(n_new - n)
        history.append(residual)
        if residual < RESIDUAL_TOL:
            n = n_new
            break
        # still above tolerance after 20 damped steps: polish with a
        # finite-difference Newton solve, retried every 20 steps
        if it % 20 == 0:
            polished = _newton_fallback(picard_map, n)
            if polished is not None:
                n, residual = polished
                history.append(residual)
                it += 1
                break
        n = (1.0 - PICARD_DAMPING) * n + PICARD_DAMPING * n_new
    else:
        raise DFConvergenceError(a, omega, history[-1])

    gain = abs(n)
    phase = cmath.phase(n)
    window = active_window(a, x_g * gain, phi_g + phase, p_max)
    return DFPoint(a, omega, gain, phase, window, it, residual,
                   tuple(history))


def _newton_fallback(picard_map, n0: complex, max_iter: int = 30):
    def f(v):
        mapped = picard_map(complex(v[0], v[1]))
        return np.array([mapped.real - v[0], mapped.imag - v[1]])

    v = np.array([n0.real, n0.imag])
    for _ in range(max_iter):
        fv = f(v)
        res = float(np.hypot(*fv))
        if res < RESIDUAL_TOL:
            return complex(v[0], v[1]), res
        jac = np.empty((2, 2))
        h = 1e-8
        for j in range(2):
            dv = v.copy()
            dv[j] += h
            jac[:, j] = (f(dv) - fv) / h
        try:
            step = np.linalg.solve(jac, -fv)
        except np.linalg.LinAlgError:
            return None
        v = v + step
        if not np.all(np.isfinite(v)):
            return None
    return None


def df_sat(a: float, u_max: float) -> float:
    """Classical saturation describing function (purely real)."""
    if a <= 0 or u_max <= 0:
        raise ValueError("amplitude and torque limit must be positive")
    if a <= u_max:
        return 1.0
    r = u_max / a
    return (2.0 / math.pi) * (math.asin(r) + r * math.sqrt(1.0 - r * r))


def nyquist_sweep(kp: float, kd: float, plant: PlantFR, p_max: float,
                  a_list: Sequence[float], omega_list: Sequence[float]):
    """Open-loop points of the PD position loop, the limiter describing
    function, and their product, tabulated as (A, ω, Re, Im) rows."""
    if len(a_list) == 0 or len(omega_list) == 0:
        raise ValueError("amplitude and frequency lists must be nonempty")
    open_rows, n_rows, combined_rows = [], [], []
    for omega in omega_list:
        g = plant.complex_at(omega)
        loop = (kp + kd * 1j * omega) * g / (1j * omega)
        for a in a_list:
            n = describing_function(a, omega, plant, p_max).as_complex()
            open_rows.append((a, omega, loop.real, loop.imag))
            n_rows.append((a, omega, n.real, n.imag))
            ln = loop * n
            combined_rows.append((a, omega, ln.real, ln.imag))
    return {"open_loop": open_rows, "nonlinearity": n_rows,
            "combined": combined_rows}


def df_sweep_to_csv(points: Sequence[DFPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["A", "omega", "XN", "phiN", "psi_l", "psi_u",
                         "residual", "iterations"])
        for p in points:
            lo, hi = p.window if p.window is not None else ("", "")
            writer.writerow([p.amplitude, p.frequency, p.gain, p.phase,
                             lo, hi, p.residual, p.iterations])
