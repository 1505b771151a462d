"""Averaged model of the single-phase full-bridge boost converter.

State is the inductor current ``i`` and the output capacitor voltage ``v``;
the duty-cycle average ``u`` in [-1, 1] drives both equations directly.
An optional series resistance ``r`` models the AC-source internal drop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional


@dataclass(frozen=True)
class PlantParams:
    """Electrical constants of the converter and its AC source."""

    L: float
    C: float
    G: float
    r: float
    E: float
    omega: float
    rho: float
    i_limit: Optional[float] = None

    def __post_init__(self):
        for name in ("L", "C", "G", "r", "E", "omega", "rho"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.L <= 0 or self.C <= 0 or self.G <= 0:
            raise ValueError("L, C and G must be positive")
        if self.omega <= 0 or self.E <= 0:
            raise ValueError("omega and E must be positive")
        if self.r < 0:
            raise ValueError("r must be non-negative")
        if self.i_limit is not None and not self.i_limit > 0:
            raise ValueError("i_limit must be positive when given")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @classmethod
    def nominal(cls, **overrides) -> "PlantParams":
        """Reference converter: 150 V / 50 Hz source, 200 V target bus, 87 ohm load."""
        base = cls(
            L=2.13e-3,
            C=1100e-6,
            G=1.0 / 87.0,
            r=2.0,
            E=150.0,
            omega=100.0 * math.pi,
            rho=2.0 * math.pi / 3.0,
        )
        return replace(base, **overrides)


class PlantState(NamedTuple):
    i: float
    v: float


def input_voltage(t: float, params: PlantParams) -> float:
    return params.E * math.sin(params.omega * t + params.rho)


def plant_derivative(state: PlantState, u: float, t: float, params: PlantParams) -> PlantState:
    """Time derivative of ``(i, v)`` under averaged control ``u``.

    ``L di/dt = -u v + v_i(t) - r i`` and ``C dv/dt = u i - G v``.
    """
    i, v = state
    if not (math.isfinite(i) and math.isfinite(v) and math.isfinite(u) and math.isfinite(t)):
        raise ValueError(f"non-finite plant input at t={t!r}: i={i!r}, v={v!r}, u={u!r}")
    di = (-u * v + params.E * math.sin(params.omega * t + params.rho) - params.r * i) / params.L
    dv = (u * i - params.G * v) / params.C
    return PlantState(di, dv)


def apply_current_limit(state: PlantState, params: PlantParams) -> PlantState:
    lim = params.i_limit
    if lim is None:
        return state
    i = min(max(state.i, -lim), lim)
    return PlantState(i, state.v)


def stored_energy(state: PlantState, params: PlantParams) -> float:
    return 0.5 * params.L * state.i**2 + 0.5 * params.C * state.v**2
