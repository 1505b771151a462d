"""Closed-form steady-state analysis of the converter under a phase-shifted input current.

The input current is assumed to be ``I_s sin(wt + rho - drho)``.  Substituting it
into the averaged model gives a linear first-order ODE for ``v**2`` whose periodic
solution is a DC level plus a second-harmonic ripple of amplitude ``A`` and phase
``eps``.  Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .plant import PlantParams

__all__ = [
    "PhaseShiftAnalysis",
    "StaticLawResult",
    "analyze_phase_shift",
    "d_coefficients",
    "dc_component",
    "energy_ode_rhs",
    "harmonic_descriptor",
    "integrate_energy_ode",
    "lagging_benefit",
    "lagging_boundary",
    "minimum_current",
    "ratio_sweep",
    "read_ratio_csv",
    "required_current",
    "static_law_steady_state",
    "simulate_static_law",
    "vs_squared",
    "vs_squared_fourier",
    "write_ratio_csv",
]


@dataclass(frozen=True)
class PhaseShiftAnalysis:
    delta_rho: float
    I_s: float
    d1: float
    d2: float
    A: float
    eps: float
    V_s: float


@dataclass(frozen=True)
class StaticLawResult:
    hbar: float
    amplitude: float
    phase_lag: float
    V_s: float


def _check_cos(delta_rho):
    if np.any(np.cos(delta_rho) <= 0):
        raise ValueError(f"cos(delta_rho) must be positive, got delta_rho={delta_rho!r}")


def d_coefficients(delta_rho, I_s, params: PlantParams):
    lw = params.L * params.omega
    d1 = 0.5 * I_s * (params.E * np.cos(delta_rho) - lw * I_s * np.sin(2 * delta_rho))
    d2 = 0.5 * I_s * (params.E * np.sin(delta_rho) + lw * I_s * np.cos(2 * delta_rho))
    return d1, d2


def harmonic_descriptor(delta_rho, I_s, params: PlantParams):
    """Amplitude ``A`` (V^2) and phase ``eps`` of the ``v**2`` second harmonic.

    The phase is taken from the two-argument arctangent of the sine and cosine
    coefficients of the ripple, so the compact and three-term forms agree in
    every quadrant.
    """
    d1, d2 = d_coefficients(delta_rho, I_s, params)
    G, cw = params.G, params.C * params.omega
    den = G**2 + cw**2
    A = np.sqrt((d1**2 + d2**2) / den)
    eps = np.arctan2(-(G * d1 - cw * d2), -(G * d2 + cw * d1))
    return A, eps


def vs_squared(t, delta_rho, I_s, params: PlantParams):
    A, eps = harmonic_descriptor(delta_rho, I_s, params)
    dc = params.E * I_s / (2 * params.G) * np.cos(delta_rho)
    return dc + A * np.sin(2 * params.omega * t + 2 * params.rho + eps)


def vs_squared_fourier(t, delta_rho, I_s, params: PlantParams):
    """Three-term Fourier form of the periodic ``v**2`` solution (ripple at ``2w``)."""
    d1, d2 = d_coefficients(delta_rho, I_s, params)
    G, cw = params.G, params.C * params.omega
    den = G**2 + cw**2
    psi2 = 2 * (params.omega * t + params.rho)
    dc = params.E * I_s / (2 * G) * np.cos(delta_rho)
    return dc - (G * d1 - cw * d2) / den * np.cos(psi2) - (G * d2 + cw * d1) / den * np.sin(psi2)


def dc_component(delta_rho, I_s, params: PlantParams):
    _check_cos(delta_rho)
    return np.sqrt(params.E * I_s * np.cos(delta_rho) / (2 * params.G))


def required_current(delta_rho, params: PlantParams, V_d: float):
    _check_cos(delta_rho)
    if np.any(np.asarray(V_d) <= 0):
        raise ValueError("V_d must be positive")
    return 2 * params.G * V_d**2 / (params.E * np.cos(delta_rho))


def minimum_current(params: PlantParams, V_d: float) -> float:
    return 2 * params.G * V_d**2 / params.E


def analyze_phase_shift(delta_rho: float, I_s: float, params: PlantParams) -> PhaseShiftAnalysis:
    if not -math.pi / 2 < delta_rho < math.pi / 2:
        raise ValueError("delta_rho must lie in (-pi/2, pi/2)")
    if I_s <= 0:
        raise ValueError("I_s must be positive")
    d1, d2 = d_coefficients(delta_rho, I_s, params)
    A, eps = harmonic_descriptor(delta_rho, I_s, params)
    return PhaseShiftAnalysis(
        delta_rho=delta_rho,
        I_s=I_s,
        d1=float(d1),
        d2=float(d2),
        A=float(A),
        eps=float(eps),
        V_s=float(dc_component(delta_rho, I_s, params)),
    )


def static_law_steady_state(K: float, params: PlantParams, V_d: float) -> StaticLawResult:
    """Steady state reached under a static proportional PFC law of gain ``K``.

    The current lags the source by ``atan(hbar)`` with ``hbar = L w / (K E)``,
    which leaves a DC error in the output.
    """
    if K <= 0:
        raise ValueError("K must be positive")
    hbar = params.L * params.omega / (K * params.E)
    scale = math.sqrt(1 + hbar**2)
    return StaticLawResult(
        hbar=hbar,
        amplitude=minimum_current(params, V_d) / scale,
        phase_lag=math.atan(hbar),
        V_s=V_d / scale,
    )


def lagging_benefit(delta_rho: float, params: PlantParams, I0: float) -> bool:
    """Closed-form test for ``A(delta_rho) < A(0)`` when the current is lagging."""
    E, lw = params.E, params.L * params.omega
    c = math.cos(delta_rho)
    lhs = math.sin(delta_rho) ** 2 / (E * lw * I0)
    rhs = (
        math.sin(2 * delta_rho)
        * (2 * c - math.cos(2 * delta_rho))
        / (E**2 * c**2 + lw**2 * I0**2 * (1 + c**2))
    )
    return lhs < rhs


def _ripple_ratio(delta_rho, E, params: PlantParams, V_d: float):
    p = params if E == params.E else replace(params, E=float(E))
    I0 = minimum_current(p, V_d)
    A, _ = harmonic_descriptor(delta_rho, required_current(delta_rho, p, V_d), p)
    A0, _ = harmonic_descriptor(0.0, I0, p)
    return A / A0


def ratio_sweep(delta_rho_grid: Sequence[float], E_grid: Sequence[float], params: PlantParams, V_d: float = 200.0):
    """Table of ``A(drho, E) / A(0, E)``, rows indexed by ``drho`` and columns by ``E``.

    At each ``E`` the current amplitude is the one that holds the output at ``V_d``
    for the given phase shift.
    """
    drho = np.asarray(delta_rho_grid, dtype=float)
    Es = np.asarray(E_grid, dtype=float)
    if drho.size == 0 or Es.size == 0:
        raise ValueError("sweep grids must be non-empty")
    if np.any(np.abs(drho) >= math.pi / 2):
        raise ValueError("delta_rho grid must lie in (-pi/2, pi/2)")
    if np.any(Es <= 0):
        raise ValueError("E grid must be positive")
    out = np.empty((drho.size, Es.size))
    for j, E in enumerate(Es):
        out[:, j] = _ripple_ratio(drho, E, params, V_d)
    return out


def write_ratio_csv(path, delta_rho_grid, E_grid, ratio) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_rho", "E", "ratio"])
        for a, dr in enumerate(delta_rho_grid):
            for b, E in enumerate(E_grid):
                w.writerow([repr(float(dr)), repr(float(E)), repr(float(ratio[a, b]))])


def read_ratio_csv(path):
    """Inverse of :func:`write_ratio_csv`; returns ``(delta_rho, E, ratio)`` flat arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ("delta_rho", "E", "ratio")
    return tuple(np.array([float(r[c]) for r in rows]) for c in cols)


def lagging_boundary(params: PlantParams, V_d: float = 200.0) -> float:
    """Largest lagging shift for which the ripple stays below its zero-shift value."""
    f = lambda x: _ripple_ratio(x, params.E, params, V_d) - 1.0
    grid = np.linspace(1e-6, math.pi / 2 - 1e-3, 4001)
    vals = f(grid)
    above = np.nonzero(vals >= 0)[0]
    if above.size == 0 or above[0] == 0:
        return 0.0
    k = above[0]
    return brentq(f, grid[k - 1], grid[k], xtol=1e-14)


# Energy form of the steady state: (C/2) d(v^2)/dt + G v^2 = p(t)

def _input_power(t, delta_rho, I_s, params: PlantParams):
    psi = params.omega * t + params.rho
    lw = params.L * params.omega
    return (
        params.E * I_s * np.sin(psi) * np.sin(psi - delta_rho)
        - 0.5 * lw * I_s**2 * np.sin(2 * psi - 2 * delta_rho)
    )


def energy_ode_rhs(t, y, delta_rho, I_s, params: PlantParams):
    """Derivative of ``y = v**2`` when the prescribed current is enforced."""
    return 2.0 / params.C * (_input_power(t, delta_rho, I_s, params) - params.G * y)


def integrate_energy_ode(delta_rho, I_s, params: PlantParams, periods: float = 10.0, samples_per_period: int = 400, y0=None):
    """Integrate the ``v**2`` ODE from ``y0`` (default: the closed form at t=0).

    Returns ``(t, y_numeric, y_closed_form)``.
    """
    T = params.period
    t = np.linspace(0.0, periods * T, int(round(periods * samples_per_period)) + 1)
    if y0 is None:
        y0 = float(vs_squared(0.0, delta_rho, I_s, params))
    sol = solve_ivp(
        lambda tt, yy: energy_ode_rhs(tt, yy, delta_rho, I_s, params),
        (0.0, t[-1]),
        [y0],
        t_eval=t,
        method="DOP853",
        rtol=1e-10,
        atol=1e-8,
    )
    return t, sol.y[0], vs_squared(t, delta_rho, I_s, params)


def closed_form_residual(delta_rho, I_s, params: PlantParams, periods: float = 10.0, skip_periods: float = 0.0, y0=None) -> float:
    """Max relative gap between the integrated ``v**2`` and the closed form."""
    t, y, yc = integrate_energy_ode(delta_rho, I_s, params, periods=periods, y0=y0)
    mask = t >= skip_periods * params.period
    return float(np.max(np.abs(y[mask] - yc[mask]) / np.abs(yc[mask])))


def simulate_static_law(K: float, params: PlantParams, V_d: float, periods: float = 30.0, avg_periods: int = 2, v0=None):
    """Drive the output capacitor with the static-law steady-state current.

    The duty ratio is chosen each instant so the inductor current equals the
    prescribed sinusoid; only ``v`` is integrated.  Returns the mean of ``v``
    over the last ``avg_periods`` line periods.
    """
    law = static_law_steady_state(K, params, V_d)
    I, lag = law.amplitude, law.phase_lag
    w, rho, L = params.omega, params.rho, params.L

    def rhs(t, y):
        v = y[0]
        psi = w * t + rho
        i = I * np.sin(psi - lag)
        u = (params.E * np.sin(psi) - L * w * I * np.cos(psi - lag)) / v
        return [(u * i - params.G * v) / params.C]

    T = params.period
    t_end = periods * T
    t_eval = np.linspace(t_end - avg_periods * T, t_end, avg_periods * 2000 + 1)
    sol = solve_ivp(rhs, (0.0, t_end), [law.V_s if v0 is None else v0], t_eval=t_eval,
                    method="DOP853", rtol=1e-10, atol=1e-8)
    v = sol.y[0]
    return float(np.trapezoid(v, t_eval) / (t_eval[-1] - t_eval[0]))
