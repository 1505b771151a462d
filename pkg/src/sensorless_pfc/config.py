"""Line-based ``key = value`` scenario files.

Blank lines and ``#`` comments are ignored.  Keys are dotted paths::

    name = standard
    mode = ce
    duration = 2.1
    plant.rho = 2*pi/3
    plant.i_limit = 14          # or: none
    plant.R_load = 87           # alternative to plant.G
    estimator.Gamma = 10        # scalar times identity, or four comma-separated entries
    event.1.time = 0.5
    event.1.path = plant.E
    event.1.value = 120
    events = none               # drop the default event schedule

Numeric values may be arithmetic expressions over numbers and ``pi``.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import fields, replace

import numpy as np

from .controller import ControllerGains
from .estimator import EstimatorGains
from .plant import PlantParams
from .sim_engine import MODES, Event, Scenario, standard_scenario


class ConfigError(ValueError):
    """Bad configuration; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + message)


# line marker for entries that came from command-line overrides
OVERRIDE = "--set"


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi}


def eval_number(text: str) -> float:
    """Evaluate an arithmetic expression made of numbers, ``pi`` and ``+ - * / **``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(text.strip(), mode="eval")
        value = ev(tree)
    except (SyntaxError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"cannot evaluate {text!r}: {exc}") from None
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return value


def parse_lines(text: str, source: str = "<config>") -> dict:
    """Split config text into ``{key: (value_text, line_number)}``; later keys win."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        out[key] = (value, n)
    return out


def parse_override(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep or not key.strip() or not value.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}", source="--set")
    return key.strip(), value.strip()


_TOP_FLOAT = ("V_d", "i0", "v0", "duration", "dt", "u_open")
_TOP_INT = ("record_stride", "substeps")
_PLANT = tuple(f.name for f in fields(PlantParams))
_CTRL = ("a", "b", "c", "d", "k")


def _matrix(value: str) -> np.ndarray:
    parts = [eval_number(p) for p in value.split(",")]
    if len(parts) == 1:
        return parts[0] * np.eye(2)
    if len(parts) == 4:
        return np.array(parts).reshape(2, 2)
    raise ValueError("expected a scalar or four comma-separated entries")


def build_scenario(entries: dict, source: str = "<config>", base: Scenario | None = None) -> Scenario:
    """Build a scenario from parsed entries on top of ``base`` (default: the standard run).

    An explicit ``event.*`` key replaces the base event list entirely.
    """
    base = base if base is not None else standard_scenario()
    top, plant, ctrl, est, events = {}, {}, {}, {}, {}
    clear_events = False
    for key, (value, line) in entries.items():
        try:
            parts = key.split(".")
            if len(parts) == 1 and key in _TOP_FLOAT:
                top[key] = eval_number(value)
            elif len(parts) == 1 and key in _TOP_INT:
                x = eval_number(value)
                if x != int(x):
                    raise ValueError(f"{key} must be an integer")
                top[key] = int(x)
            elif key == "mode":
                if value not in MODES:
                    raise ValueError(f"mode must be one of {', '.join(MODES)}")
                top[key] = value
            elif key == "name":
                top[key] = value
            elif key == "events":
                if value.lower() != "none":
                    raise ValueError("'events' only accepts 'none'; list events with event.N.* keys")
                clear_events = True
            elif parts[0] == "plant" and len(parts) == 2 and (parts[1] in _PLANT or parts[1] == "R_load"):
                if parts[1] == "i_limit" and value.lower() == "none":
                    plant["i_limit"] = None
                elif parts[1] == "R_load":
                    plant["G"] = 1.0 / eval_number(value)
                else:
                    plant[parts[1]] = eval_number(value)
            elif parts[0] == "controller" and len(parts) == 2 and parts[1] in _CTRL:
                ctrl[parts[1]] = eval_number(value)
            elif key == "estimator.k":
                est["k"] = eval_number(value)
            elif key in ("estimator.Gamma", "estimator.D"):
                est[parts[1]] = _matrix(value)
            elif parts[0] == "event" and len(parts) == 3 and parts[2] in ("time", "path", "value"):
                if not parts[1].isdigit():
                    raise ValueError("event index must be a non-negative integer")
                slot = events.setdefault(int(parts[1]), {})
                slot[parts[2]] = (value if parts[2] == "path" else eval_number(value), line)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            if line == OVERRIDE:
                raise ConfigError(f"{key}: {exc}", source=OVERRIDE) from None
            raise ConfigError(str(exc), line, source) from None

    try:
        p = replace(base.plant, **plant)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"plant: {exc}", source=source) from None
    if "c" not in ctrl and "E" in plant:
        # the measured-signal filter gain is the estimator-based one times the nominal amplitude
        ctrl["c"] = ctrl.get("d", base.controller.d) * p.E
    try:
        cg = replace(base.controller, **ctrl)
        eg = EstimatorGains(k=est.get("k", base.estimator.k), Gamma=est.get("Gamma", base.estimator.Gamma),
                            D=est.get("D", base.estimator.D))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source=source) from None

    ev_list = () if clear_events else base.events
    if events:
        ev_list = []
        for idx in sorted(events):
            slot = events[idx]
            lines = [v[1] for v in slot.values() if v[1] != OVERRIDE]
            line = min(lines) if lines else None
            missing = {"time", "path", "value"} - set(slot)
            if missing:
                raise ConfigError(f"event {idx} lacks {', '.join(sorted(missing))}", line, source)
            try:
                ev_list.append(Event(slot["time"][0], slot["path"][0], slot["value"][0]))
            except ValueError as exc:
                raise ConfigError(str(exc), slot["path"][1], source) from None
        ev_list = tuple(sorted(ev_list, key=lambda e: e.time))
    try:
        return replace(base, plant=p, controller=cg, estimator=eg, events=ev_list, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source=source) from None


def load_scenario(path, overrides=(), base: Scenario | None = None) -> Scenario:
    """Read a scenario file and apply ``key=value`` overrides on top of it."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc.strerror}", source=str(path)) from None
    return scenario_from_text(text, overrides, source=str(path), base=base)


def scenario_from_text(text: str, overrides=(), source: str = "<config>", base: Scenario | None = None) -> Scenario:
    entries = parse_lines(text, source)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        if key == "events":
            entries = {k: v for k, v in entries.items() if not k.startswith("event.")}
        entries[key] = (value, OVERRIDE)
    return build_scenario(entries, source, base)


def _num(x: float) -> str:
    return repr(float(x))


def _mat(m) -> str:
    m = np.asarray(m)
    if m[0, 1] == 0 and m[1, 0] == 0 and m[0, 0] == m[1, 1]:
        return _num(m[0, 0])
    return ", ".join(_num(x) for x in m.ravel())


def scenario_to_text(sc: Scenario) -> str:
    """Serialise a scenario; :func:`scenario_from_text` reads it back exactly."""
    p, c, e = sc.plant, sc.controller, sc.estimator
    lines = [
        f"name = {sc.name}",
        f"mode = {sc.mode}",
        f"duration = {_num(sc.duration)}",
        f"dt = {_num(sc.dt)}",
        f"substeps = {sc.substeps}",
        f"record_stride = {sc.record_stride}",
        f"V_d = {_num(sc.V_d)}",
        f"i0 = {_num(sc.i0)}",
        f"v0 = {_num(sc.v0)}",
        f"u_open = {_num(sc.u_open)}",
    ]
    for name in _PLANT:
        val = getattr(p, name)
        lines.append(f"plant.{name} = {'none' if val is None else _num(val)}")
    lines += [f"controller.{name} = {_num(getattr(c, name))}" for name in _CTRL]
    lines += [f"estimator.k = {_num(e.k)}", f"estimator.Gamma = {_mat(e.Gamma)}", f"estimator.D = {_mat(e.D)}"]
    if not sc.events:
        lines.append("events = none")
    for n, ev in enumerate(sc.events, start=1):
        lines += [f"event.{n}.time = {_num(ev.time)}", f"event.{n}.path = {ev.path}", f"event.{n}.value = {_num(ev.value)}"]
    return "\n".join(lines) + "\n"
