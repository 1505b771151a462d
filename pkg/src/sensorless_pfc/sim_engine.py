"""Fixed-step closed-loop simulation of plant, estimator and controller.

The whole loop is one state vector
``(i, v, zeta1, zeta2_1, zeta2_2, mu1, mu2, u, x1, x2)`` advanced by classical
RK4.  ``dt`` is the macro step: events land on its boundaries and samples are
taken on it.  Each macro step is split into ``substeps`` equal RK4 steps,
because the estimator is stiff during start-up (its regressor filter grows
while ``u`` is small, and the error dynamics scale with ``(u/C)^2``).  The
current limiter and the duty-ratio saturation are applied after every RK4 step.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernel
from .controller import (
    E_FLOOR,
    V_FLOOR,
    ControllerGains,
    ControllerState,
    ce_control_derivative,
    ce_error,
    desired_current,
    im_control_derivative,
    im_error,
    project_rate,
    resonant_filter_step,
)
from .estimator import EstimatorGains, EstimatorState, estimates, estimator_derivative
from .plant import PlantParams, PlantState, input_voltage, plant_derivative

log = logging.getLogger(__name__)

MODES = ("im", "ce", "open")

STATE_NAMES = ("i", "v", "zeta1", "zeta2_1", "zeta2_2", "mu1", "mu2", "u", "x1", "x2")
AUX_NAMES = ("u_dot", "i_hat", "theta1_hat", "theta2_hat", "rho_hat", "E_hat", "v_i", "i_d", "e", "w", "guard")
PARAM_NAMES = ("E", "rho", "G", "r", "V_d")
FLAG_NAMES = ("sat", "limited")
COLUMNS = ("t",) + STATE_NAMES + AUX_NAMES + PARAM_NAMES + FLAG_NAMES

PLANT_EVENT_FIELDS = ("L", "C", "G", "r", "E", "omega", "rho", "i_limit")
CONTROLLER_EVENT_FIELDS = ("a", "b", "c", "d", "k")


class ScenarioError(ValueError):
    pass


class SimulationAborted(RuntimeError):
    """Raised when the state becomes non-finite; carries the partial trace."""

    def __init__(self, time: float, reason: str, trace: "Trace"):
        super().__init__(f"simulation aborted at t={time:.9g} s: {reason}")
        self.time = time
        self.reason = reason
        self.trace = trace


@dataclass(frozen=True)
class Event:
    time: float
    path: str
    value: float

    def __post_init__(self):
        section, _, name = self.path.partition(".")
        ok = (
            (section == "plant" and (name in PLANT_EVENT_FIELDS or name == "R_load"))
            or (section == "controller" and name in CONTROLLER_EVENT_FIELDS)
            or self.path == "reference.V_d"
        )
        if not ok:
            raise ScenarioError(f"unknown event path {self.path!r}")


@dataclass(frozen=True)
class Scenario:
    plant: PlantParams
    controller: ControllerGains
    estimator: EstimatorGains
    V_d: float = 200.0
    i0: float = 1.5
    v0: float = 100.0
    duration: float = 0.5
    dt: float = 1e-5
    mode: str = "ce"
    events: tuple = ()
    record_stride: int = 10
    u_open: float = 0.0
    name: str = "scenario"
    substeps: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            raise ScenarioError("record_stride must be a positive integer")
        if not (isinstance(self.substeps, int) and self.substeps >= 1):
            raise ScenarioError("substeps must be a positive integer")
        if not self.V_d > 0:
            raise ScenarioError("V_d must be positive")
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScenarioError("events must be sorted by time")
        if times and (times[0] <= 0 or times[-1] > self.duration):
            raise ScenarioError("event times must lie in (0, duration]")
        self.n_steps  # validates divisibility
        for e in self.events:
            self.step_of(e.time)

    def _steps(self, t: float, what: str) -> int:
        n = round(t / self.dt)
        if abs(n * self.dt - t) > 1e-9 * max(t, self.dt):
            raise ScenarioError(f"dt={self.dt!r} does not divide {what} {t!r}")
        return n

    @property
    def n_steps(self) -> int:
        return self._steps(self.duration, "duration")

    def step_of(self, t: float) -> int:
        return self._steps(t, "event time")

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)


def standard_scenario(dt: float = 1e-5, mode: str = "ce", record_stride: int = 10) -> Scenario:
    """Reference run: the nominal converter with a 2 ohm source resistance and a 14 A limiter.

    Four steps: source amplitude 150 -> 120 V at 0.5 s, source phase
    2pi/3 -> 0 at 0.9 s, reference 200 -> 160 V at 1.3 s and load
    87 -> 51 ohm at 1.7 s.
    """
    plant = PlantParams.nominal(i_limit=14.0)
    return Scenario(
        plant=plant,
        controller=ControllerGains.default(plant.E),
        estimator=EstimatorGains.default(),
        V_d=200.0,
        i0=1.5,
        v0=100.0,
        duration=2.1,
        dt=dt,
        mode=mode,
        events=(
            Event(0.5, "plant.E", 120.0),
            Event(0.9, "plant.rho", 0.0),
            Event(1.3, "reference.V_d", 160.0),
            Event(1.7, "plant.R_load", 51.0),
        ),
        record_stride=record_stride,
        name="standard",
    )


@dataclass
class Trace:
    """Uniformly sampled record of a run, one array per column of :data:`COLUMNS`."""

    columns: dict
    scenario: Optional[Scenario] = None
    final_state: Optional[np.ndarray] = None
    aborted: bool = False
    abort_time: float = math.nan
    abort_reason: str = ""
    counters: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.columns["t"])

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    @property
    def sample_dt(self) -> float:
        t = self.t
        return float((t[-1] - t[0]) / (len(t) - 1))

    @property
    def mode(self) -> str:
        return self.scenario.mode if self.scenario else ""


def _apply_event(ev: Event, plant: PlantParams, ctrl: ControllerGains, V_d: float):
    section, _, name = ev.path.partition(".")
    if section == "reference":
        return plant, ctrl, ev.value
    if section == "controller":
        return plant, replace(ctrl, **{name: ev.value}), V_d
    if name == "R_load":
        return replace(plant, G=1.0 / ev.value), ctrl, V_d
    return replace(plant, **{name: ev.value}), ctrl, V_d


def reference_rhs(t: float, y, plant: PlantParams, ctrl: ControllerGains, est_gains: EstimatorGains, V_d: float, mode: str):
    """State derivative and auxiliary outputs built from the public module functions.

    This is the readable definition of the closed loop; :func:`simulate` runs a
    compiled copy of it.  Returns ``(dy, aux)`` with ``aux`` ordered as
    :data:`AUX_NAMES`.
    """
    i, v, z1, z2a, z2b, m1, m2, u, x1, x2 = (float(x) for x in y)
    es = EstimatorState(z1, (z2a, z2b), (m1, m2))
    est = estimates(es, u, v, plant, est_gains)
    guard = v <= V_FLOOR
    if mode == "im":
        e = im_error(i, v, u, t, plant, ctrl, V_d)
        dx, w = resonant_filter_step((x1, x2), e, ctrl.c, ctrl, plant.omega)
        du = im_control_derivative(ControllerState(u, (x1, x2)), i, v, w, plant)
    elif mode == "ce":
        e, g = ce_error(est, v, u, t, plant, ctrl, V_d)
        guard = guard or g
        dx, w = resonant_filter_step((x1, x2), e, ctrl.d, ctrl, plant.omega)
        du = ce_control_derivative(ControllerState(u, (x1, x2)), est, v, w, plant)
    elif mode == "open":
        e = w = du = 0.0
        dx = (0.0, 0.0)
    else:
        raise ScenarioError(f"mode must be one of {MODES}, got {mode!r}")
    du = project_rate(u, du)
    di, dv = plant_derivative(PlantState(i, v), u, t, plant)
    dz1, (dz2a, dz2b), (dm1, dm2) = estimator_derivative(es, u, du, v, t, plant, est_gains)
    dy = np.array([di, dv, dz1, dz2a, dz2b, dm1, dm2, du, dx[0], dx[1]])
    th = est.theta_hat
    aux = np.array([du, est.i_hat, th[0], th[1], est.rho_hat, est.E_hat, input_voltage(t, plant),
                    desired_current(t, plant, V_d)[0], e, w, float(guard)])
    return dy, aux


def pack_params(plant: PlantParams, ctrl: ControllerGains, est_gains: EstimatorGains, V_d: float) -> np.ndarray:
    P = np.empty(_kernel.N_PARAMS)
    P[_kernel.P_L:_kernel.P_ILIM + 1] = (
        plant.L, plant.C, plant.G, plant.r, plant.E, plant.omega, plant.rho,
        math.inf if plant.i_limit is None else plant.i_limit,
    )
    P[_kernel.P_VD:_kernel.P_KE + 1] = (V_d, ctrl.a, ctrl.b, ctrl.c, ctrl.d, ctrl.k, est_gains.k)
    P[_kernel.P_GD:_kernel.P_GD + 4] = est_gains._GD
    P[_kernel.P_DM:_kernel.P_DM + 4] = est_gains._Dm
    P[_kernel.P_VFLOOR] = V_FLOOR
    P[_kernel.P_EFLOOR] = E_FLOOR
    return P


def compiled_rhs(t: float, y, plant: PlantParams, ctrl: ControllerGains, est_gains: EstimatorGains, V_d: float, mode: str):
    """Same contract as :func:`reference_rhs`, evaluated by the compiled kernel."""
    dy = np.empty(_kernel.N_STATE)
    aux = np.empty(_kernel.N_AUX)
    _kernel.rhs(float(t), np.asarray(y, dtype=float), pack_params(plant, ctrl, est_gains, V_d),
                MODES.index(mode), dy, aux)
    return dy, aux


def initial_state(sc: Scenario) -> np.ndarray:
    y = np.zeros(len(STATE_NAMES))
    y[0], y[1] = sc.i0, sc.v0
    y[7] = sc.u_open if sc.mode == "open" else 0.0
    return y


def _nonfinite_reason(y) -> str:
    bad = [f"{name}={val!r}" for name, val in zip(STATE_NAMES, y.tolist()) if not math.isfinite(val)]
    return "non-finite state " + ", ".join(bad)


def simulate(scenario: Scenario) -> Trace:
    """Integrate ``scenario`` and return the sampled trace.

    Raises :class:`SimulationAborted` (with the partial trace attached) as soon
    as the state stops being finite.
    """
    sc = scenario
    n_steps = sc.n_steps
    stride = sc.record_stride
    mode = MODES.index(sc.mode)
    events_at = {}
    for ev in sc.events:
        events_at.setdefault(sc.step_of(ev.time), []).append(ev)
    bounds = sorted(set(events_at) | {0, n_steps})
    segments = list(zip(bounds, bounds[1:]))
    if n_steps in events_at:
        # an event at the very end still shows up in the last recorded row
        segments.append((n_steps, n_steps))

    p, cg, V_d = sc.plant, sc.controller, sc.V_d
    y = initial_state(sc)
    rows = np.full((n_steps // stride + 1, len(COLUMNS)), np.nan)
    n_rec = 0
    flags = np.zeros(2)
    cnt = np.zeros(3, dtype=np.int64)

    def counters():
        return {"saturation": int(cnt[0]), "current_limit": int(cnt[1]), "guard": int(cnt[2])}

    def columns():
        return {c: rows[:n_rec, j].copy() for j, c in enumerate(COLUMNS)}

    for n0, n1 in segments:
        for ev in events_at.get(n0, ()):
            p, cg, V_d = _apply_event(ev, p, cg, V_d)
            log.debug("t=%.6g event %s=%r", n0 * sc.dt, ev.path, ev.value)
        final = n1 == n_steps and (n0 == n1 or n_steps not in events_at)
        P = pack_params(p, cg, sc.estimator, V_d)
        status, n_fail, n_rec = _kernel.run_segment(
            y, P, mode, n0, n1, n_steps if final else -1, sc.dt, sc.substeps, stride, rows, n_rec, flags, cnt)
        if status != _kernel.STATUS_OK:
            t_fail = (n_fail + 1) * sc.dt
            reason = _nonfinite_reason(y)
            log.error("simulation %s aborted at t=%.9g: %s", sc.name, t_fail, reason)
            tr = Trace(columns(), sc, y.copy(), True, t_fail, reason, counters())
            raise SimulationAborted(t_fail, reason, tr)

    c = counters()
    if c["saturation"]:
        log.info("%s/%s: duty ratio saturated on %d steps", sc.name, sc.mode, c["saturation"])
    return Trace(columns(), sc, y.copy(), counters=c)


def run_pair(scenario: Scenario):
    """Same scenario under the measured-signal and the estimator-based controller."""
    return simulate(replace(scenario, mode="im")), simulate(replace(scenario, mode="ce"))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = list(trace.columns)
        w.writerow(names)
        data = np.column_stack([trace.columns[c] for c in names]) if len(trace) else np.empty((0, len(names)))
        for row in data:
            w.writerow([_fmt(x) for x in row])
        if trace.aborted:
            fh.write(f"#ABORT,t={_fmt(trace.abort_time)},reason={trace.abort_reason.replace(',', ';')}\n")


def read_trace_csv(path) -> Trace:
    aborted, abort_t, reason = False, math.nan, ""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#ABORT"):
            aborted = True
            parts = dict(p.split("=", 1) for p in line.split(",")[1:])
            abort_t = float(parts.get("t", "nan"))
            reason = parts.get("reason", "")
        elif line and not line.startswith("#"):
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    values = np.array([[float(x) for x in row] for row in reader], dtype=float).reshape(-1, len(header))
    cols = {c: values[:, j] for j, c in enumerate(header)}
    return Trace(cols, aborted=aborted, abort_time=abort_t, abort_reason=reason)
