"""Dynamic PFC control law with a resonant internal model at the line frequency.

Two variants share the same structure ``v u' = -(u^2/C) i + w``:

* IM: ``w`` filters the tracking error built from the measured source voltage
  and inductor current.
* CE: ``w_hat`` filters an amplitude-scaled error built only from the
  estimator outputs (``i_hat``, ``rho_hat``, ``E_hat``).

The internal model is ``gain (s^2 + a s + b) / (s^2 + w^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .estimator import EstimateBundle
from .plant import PlantParams

# Below these the control derivative / CE phase are not evaluated normally.
V_FLOOR = 1.0
E_FLOOR = 1.0


@dataclass(frozen=True)
class ControllerGains:
    a: float
    b: float
    c: float
    d: float
    k: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"controller gain {name} must be positive")

    @classmethod
    def default(cls, E: float = 150.0) -> "ControllerGains":
        d = 460.0 / 15.0
        return cls(a=1200.0, b=2e5, c=d * E, d=d, k=15.0)


class ControllerState(NamedTuple):
    u: float
    x: tuple


class CEError(NamedTuple):
    e_hat: float
    guarded: bool


def desired_current(t: float, params: PlantParams, V_d: float):
    """Reference ``i_d = I0 sin(wt + rho)`` and its time derivative."""
    if params.E <= 0:
        raise ValueError("E must be positive")
    I0 = 2.0 * params.G * V_d * V_d / params.E
    psi = params.omega * t + params.rho
    return I0 * math.sin(psi), I0 * params.omega * math.cos(psi)


def im_error(i: float, v: float, u: float, t: float, params: PlantParams, gains: ControllerGains, V_d: float) -> float:
    i_d, di_d = desired_current(t, params, V_d)
    v_i = params.E * math.sin(params.omega * t + params.rho)
    return v_i - params.L * di_d - gains.k * (i_d - i) - u * v


def resonant_filter_step(x, e_in: float, gain: float, gains: ControllerGains, omega: float):
    """Derivative of the filter state and its output for input ``e_in``.

    Realisation: ``x1' = x2``, ``x2' = -w^2 x1 + e_in``,
    ``out = gain ((b - w^2) x1 + a x2 + e_in)``.
    """
    x1, x2 = x
    w2 = omega * omega
    dx = (x2, -w2 * x1 + e_in)
    out = gain * ((gains.b - w2) * x1 + gains.a * x2 + e_in)
    return dx, out


def im_control_derivative(ctrl: ControllerState, i: float, v: float, w: float, params: PlantParams) -> float:
    if v <= V_FLOOR:
        return 0.0
    u = ctrl.u
    return (-(u * u) / params.C * i + w) / v


def ce_error(est: EstimateBundle, v: float, u: float, t: float, params: PlantParams, gains: ControllerGains, V_d: float) -> CEError:
    """Amplitude-scaled tracking error rebuilt from the estimates.

    Uses only ``L``, ``G`` and ``w`` from ``params``; the source amplitude and
    phase come from ``est``.  If ``E_hat`` is at or below ``E_FLOOR`` the phase
    estimate is meaningless and the reference is taken at zero phase.
    """
    E_hat = est.E_hat
    gv2 = 2.0 * params.G * V_d * V_d
    num = E_hat * E_hat - gains.k * gv2
    den = -gv2 * params.L * params.omega
    q = math.hypot(num, den)
    phi = math.atan2(num, den)
    guarded = E_hat <= E_FLOOR or est.phase_indeterminate
    rho_hat = 0.0 if guarded else est.rho_hat
    e_hat = q * math.cos(params.omega * t + rho_hat - phi) - E_hat * (u * v - gains.k * est.i_hat)
    return CEError(e_hat, guarded)


def ce_control_derivative(ctrl: ControllerState, est: EstimateBundle, v: float, w_hat: float, params: PlantParams) -> float:
    if v <= V_FLOOR:
        return 0.0
    u = ctrl.u
    return (-(u * u) / params.C * est.i_hat + w_hat) / v


def saturate(u: float) -> float:
    return min(max(u, -1.0), 1.0)


def project_rate(u: float, u_dot: float) -> float:
    """Zero the duty-ratio rate when it would push ``u`` further past +-1.

    The estimator needs the derivative of the duty ratio actually applied, and
    a duty ratio held at its limit does not move.
    """
    if (u >= 1.0 and u_dot > 0.0) or (u <= -1.0 and u_dot < 0.0):
        return 0.0
    return u_dot
