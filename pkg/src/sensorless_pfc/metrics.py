"""Power-quality and regulation figures over steady-state windows of a trace.

Fourier coefficients are taken by trapezoidal quadrature over a window that
spans a whole number of line periods, so harmonics of the line frequency are
orthogonal on the sample grid up to quadrature error.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .sim_engine import PARAM_NAMES, Trace

SUMMARY_HEADER = ("scenario", "controller", "window_start", "displacement_deg", "thd_pct", "power_factor", "dc_error_V")

# A fundamental below this (A) is treated as absent.
DEGENERATE_AMPLITUDE = 1e-9


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class HarmonicReport:
    displacement: float  # degrees, phase of v_i minus phase of i
    thd: float  # fraction of the fundamental
    power_factor: float
    dc_error: float  # V
    window: tuple
    mean_v: float = math.nan
    degenerate: bool = False

    @property
    def thd_pct(self) -> float:
        return 100.0 * self.thd


def _omega(trace: Trace, omega: Optional[float]) -> float:
    if omega is not None:
        return float(omega)
    if trace.scenario is None:
        raise ValueError("trace carries no scenario; pass omega explicitly")
    return trace.scenario.plant.omega


def _window_samples(trace: Trace, window, omega: float, min_periods: int = 1):
    """Time samples and mask for ``window``; checks it is whole periods long and covered."""
    t0, t1 = map(float, window)
    T = 2.0 * math.pi / omega
    t = trace.t
    if len(t) < 2:
        raise WindowError("trace has fewer than two samples")
    tol = 1e-6 * trace.sample_dt + 1e-12
    periods = (t1 - t0) / T
    n_per = round(periods)
    if n_per < min_periods or abs(periods - n_per) * T > tol:
        raise WindowError(f"window {window!r} is not a whole number (>= {min_periods}) of line periods")
    if t0 < t[0] - tol or t1 > t[-1] + tol:
        raise WindowError(f"window {window!r} is not covered by the trace [{t[0]}, {t[-1]}]")
    mask = (t >= t0 - tol) & (t <= t1 + tol)
    ts = t[mask]
    # the quadrature relies on samples sitting on both window edges
    if abs(ts[0] - t0) > tol or abs(ts[-1] - t1) > tol:
        raise WindowError(f"window {window!r} edges do not fall on trace samples")
    return ts, mask


def _signal(trace: Trace, signal) -> np.ndarray:
    return trace[signal] if isinstance(signal, str) else np.asarray(signal, dtype=float)


def _mean(ts, x) -> float:
    return float(np.trapezoid(x, ts) / (ts[-1] - ts[0]))


def _phasor(ts, x, omega: float, n: int = 1):
    span = ts[-1] - ts[0]
    a = 2.0 / span * np.trapezoid(x * np.sin(n * omega * ts), ts)
    b = 2.0 / span * np.trapezoid(x * np.cos(n * omega * ts), ts)
    phase = math.atan2(b, a)
    if phase == -math.pi:
        phase = math.pi
    return math.hypot(a, b), phase


def fundamental_phasor(trace: Trace, signal, window, omega: Optional[float] = None):
    """Amplitude and phase of the line-frequency component of ``signal``.

    ``signal`` is a column name or an array aligned with ``trace.t``.  A
    signal ``A sin(w t + phi)`` gives ``(A, phi)`` with ``phi`` in (-pi, pi].
    """
    w = _omega(trace, omega)
    ts, mask = _window_samples(trace, window, w)
    return _phasor(ts, _signal(trace, signal)[mask], w)


def harmonic_amplitudes(trace: Trace, signal, window, max_harmonic: int = 50, omega: Optional[float] = None) -> np.ndarray:
    """Amplitudes of harmonics ``1..max_harmonic``; index 0 holds the mean."""
    w = _omega(trace, omega)
    ts, mask = _window_samples(trace, window, w)
    x = _signal(trace, signal)[mask]
    out = np.empty(max_harmonic + 1)
    out[0] = _mean(ts, x)
    for n in range(1, max_harmonic + 1):
        out[n] = _phasor(ts, x, w, n)[0]
    return out


def harmonic_report(trace: Trace, window, V_d: Optional[float] = None, max_harmonic: int = 50,
                    omega: Optional[float] = None, min_periods: int = 2) -> HarmonicReport:
    """Displacement, THD and power factor of the input current, and the output DC error.

    ``V_d`` defaults to the reference recorded in the trace at the window end.
    A vanishing current fundamental is reported with ``degenerate=True`` and
    NaN in the current-derived fields.
    """
    if max_harmonic < 2:
        raise ValueError("max_harmonic must be at least 2")
    w = _omega(trace, omega)
    ts, mask = _window_samples(trace, window, w, min_periods=min_periods)
    if V_d is None:
        V_d = float(trace["V_d"][mask][-1])
    i = trace["i"][mask]
    mean_v = _mean(ts, trace["v"][mask])
    dc_error = abs(V_d - mean_v)
    win = (float(window[0]), float(window[1]))

    amps = np.array([_phasor(ts, i, w, n)[0] for n in range(1, max_harmonic + 1)])
    A1, phi_i = _phasor(ts, i, w)
    if A1 <= DEGENERATE_AMPLITUDE:
        return HarmonicReport(math.nan, math.nan, math.nan, dc_error, win, mean_v, True)
    _, phi_v = _phasor(ts, trace["v_i"][mask], w)
    disp = math.remainder(phi_v - phi_i, 2.0 * math.pi)
    thd = float(np.sqrt(np.sum(amps[1:] ** 2)) / A1)
    i_rms = math.sqrt(_mean(ts, i * i))
    pf = math.cos(disp) * (A1 / math.sqrt(2.0)) / i_rms
    pf = min(max(pf, 0.0), 1.0)
    return HarmonicReport(math.degrees(disp), thd, pf, dc_error, win, mean_v, False)


def event_times(trace: Trace) -> list:
    """Times at which a recorded parameter changes (or the scenario's events)."""
    if trace.scenario is not None:
        return sorted({e.time for e in trace.scenario.events})
    t = trace.t
    changed = np.zeros(len(t), dtype=bool)
    for name in PARAM_NAMES:
        col = trace[name]
        changed[1:] |= col[1:] != col[:-1]
    return [float(x) for x in t[changed]]


def default_windows(trace: Trace, periods: int = 2, omega: Optional[float] = None) -> list:
    """``periods`` line periods ending one sample before each event, plus the end of the run.

    Windows that would start before the trace are dropped.
    """
    w = _omega(trace, omega)
    T = 2.0 * math.pi / w
    dt = trace.sample_dt
    t = trace.t
    ends = []
    for te in event_times(trace):
        k = int(np.searchsorted(t, te - 0.5 * dt))
        if 0 < k < len(t):
            ends.append(float(t[k - 1]))
    ends.append(float(t[-1]))
    out = []
    for end in ends:
        start = end - periods * T
        # snap to the sample grid so the window edges land on samples
        k0 = int(round((start - t[0]) / dt))
        if k0 < 0:
            continue
        start = float(t[k0])
        if abs((end - start) - periods * T) > 1e-6 * dt + 1e-12:
            raise WindowError(f"sample spacing {dt!r} does not divide {periods} line periods")
        out.append((start, end))
    return out


def dc_trend(trace: Trace, stride: int = 1, omega: Optional[float] = None):
    """Mean of ``v`` over consecutive blocks of ``stride`` line periods.

    Returns ``(t_start, mean_v)``; the trailing partial block is dropped.
    """
    w = _omega(trace, omega)
    T = stride * 2.0 * math.pi / w
    t = trace.t
    n = int(round(T / trace.sample_dt))
    if abs(n * trace.sample_dt - T) > 1e-6 * trace.sample_dt:
        raise WindowError("sample spacing does not divide the trend period")
    k = (len(t) - 1) // n
    v = trace["v"]
    starts = np.array([t[j * n] for j in range(k)])
    means = np.array([_mean(t[j * n:(j + 1) * n + 1], v[j * n:(j + 1) * n + 1]) for j in range(k)])
    return starts, means


def summary_row(scenario: str, controller: str, report: HarmonicReport) -> dict:
    return {
        "scenario": scenario,
        "controller": controller,
        "window_start": report.window[0],
        "displacement_deg": report.displacement,
        "thd_pct": report.thd_pct,
        "power_factor": report.power_factor,
        "dc_error_V": report.dc_error,
    }


def write_summary_csv(path, rows: Iterable[dict], append: bool = False) -> None:
    """Write summary rows; with ``append`` the header is only written to a new or empty file."""
    fresh = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a" if append else "w", newline="") as fh:
        wr = csv.writer(fh)
        if fresh:
            wr.writerow(SUMMARY_HEADER)
        for r in rows:
            wr.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in SUMMARY_HEADER])


def read_summary_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in SUMMARY_HEADER[2:]:
            r[c] = float(r[c])
    return rows


def format_reports(labelled: Sequence[tuple]) -> str:
    """Plain-text table of ``(label, HarmonicReport)`` pairs."""
    lines = [f"{'':<14}{'window':>20}{'disp (deg)':>12}{'THD (%)':>10}{'PF':>10}{'DC err (V)':>12}"]
    for label, r in labelled:
        win = f"{r.window[0]:.4f}-{r.window[1]:.4f}"
        lines.append(f"{label:<14}{win:>20}{r.displacement:>12.4f}{r.thd_pct:>10.4f}{r.power_factor:>10.6f}{r.dc_error:>12.4f}")
    return "\n".join(lines)
