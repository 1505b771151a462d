"""Five-state I&I estimator of the input current and the source phasor.

Only the output voltage ``v``, the control ``u`` and its derivative ``u_dot``
are used.  The unknown source is parametrised as
``theta = (E sin rho, E cos rho)`` so that ``v_i(t) = L phi(t)^T theta`` with
the known regressor ``phi(t) = (cos wt, sin wt) / L``.

The estimator state is ``(zeta1, zeta2, mu)``: ``zeta`` carries the off-manifold
part of the estimate of ``eta = (i - mu^T theta, theta)`` and ``mu`` is a
regressor filter.  2x2 algebra is written out in scalars because these
functions sit in the inner loop of the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .plant import PlantParams


class ThetaVector(NamedTuple):
    theta1: float
    theta2: float

    @classmethod
    def from_source(cls, E: float, rho: float) -> "ThetaVector":
        return cls(E * math.sin(rho), E * math.cos(rho))

    @property
    def amplitude(self) -> float:
        return math.hypot(self.theta1, self.theta2)


class EstimatorState(NamedTuple):
    zeta1: float
    zeta2: tuple
    mu: tuple

    @classmethod
    def zero(cls) -> "EstimatorState":
        return cls(0.0, (0.0, 0.0), (0.0, 0.0))


class EstimateBundle(NamedTuple):
    i_hat: float
    theta_hat: ThetaVector
    rho_hat: float
    E_hat: float
    phase_indeterminate: bool = False


def _spd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if not (m[0, 0] > 0 and np.linalg.det(m) > 0):
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True, eq=False)
class EstimatorGains:
    """Adaptation gain ``k`` and the SPD matrices ``Gamma`` and ``D``."""

    k: float
    Gamma: np.ndarray
    D: np.ndarray
    _GD: tuple = field(init=False, repr=False)
    _Dm: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        Gamma = _spd(self.Gamma, "Gamma")
        D = _spd(self.D, "D")
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "_GD", tuple((Gamma @ D).ravel()))
        object.__setattr__(self, "_Dm", tuple(D.ravel()))

    @classmethod
    def default(cls) -> "EstimatorGains":
        return cls(k=2e-4, Gamma=10.0 * np.eye(2), D=20.0 * np.eye(2))


def regressor(t: float, params: PlantParams) -> tuple:
    wt = params.omega * t
    return (math.cos(wt) / params.L, math.sin(wt) / params.L)


def mu_derivative(mu, u: float, t: float, params: PlantParams, gains: EstimatorGains) -> tuple:
    a = u / params.C
    kk = gains.k * a * a
    d11, d12, d21, d22 = gains._Dm
    m1, m2 = mu
    p1, p2 = regressor(t, params)
    return (
        -kk * ((1.0 + d11) * m1 + d12 * m2) + p1,
        -kk * (d21 * m1 + (1.0 + d22) * m2) + p2,
    )


def estimator_derivative(
    s: EstimatorState,
    u: float,
    u_dot: float,
    v: float,
    t: float,
    params: PlantParams,
    gains: EstimatorGains,
) -> EstimatorState:
    """Right-hand side of the estimator.

    With ``M(mu) = [[1, -mu^T D], [Gamma D mu, Gamma D mu mu^T]]`` and
    ``beta = (u/C) k v (1, Gamma D mu)``::

        zeta' = -k (u/C)^2 M (zeta + beta) - (u v / L, 0)
                + (k/C) v (G u / C - u_dot) (1, Gamma D mu)
                - (u/C) k v (0, Gamma D mu')
        mu'   = -k (u/C)^2 (I + D) mu + phi(t)

    The ``beta`` inside the first product is what makes the error
    ``eta - zeta - beta`` obey the homogeneous linear dynamics
    ``-k (u/C)^2 M eta_bar``.
    """
    if not (math.isfinite(u) and math.isfinite(u_dot) and math.isfinite(v) and math.isfinite(t)):
        raise ValueError(f"non-finite estimator input at t={t!r}: u={u!r}, u_dot={u_dot!r}, v={v!r}")
    C, k = params.C, gains.k
    a = u / C
    kk = k * a * a
    g11, g12, g21, g22 = gains._GD
    d11, d12, d21, d22 = gains._Dm
    m1, m2 = s.mu

    md1, md2 = mu_derivative(s.mu, u, t, params, gains)
    gdm1 = g11 * m1 + g12 * m2
    gdm2 = g21 * m1 + g22 * m2
    gdmd1 = g11 * md1 + g12 * md2
    gdmd2 = g21 * md1 + g22 * md2

    akv = a * k * v
    s1 = s.zeta1 + akv
    s2a = s.zeta2[0] + akv * gdm1
    s2b = s.zeta2[1] + akv * gdm2
    # M @ (zeta + beta)
    muDs2 = m1 * (d11 * s2a + d12 * s2b) + m2 * (d21 * s2a + d22 * s2b)
    mus2 = m1 * s2a + m2 * s2b
    r1 = s1 - muDs2
    r2a = gdm1 * (s1 + mus2)
    r2b = gdm2 * (s1 + mus2)

    drive = k / C * v * (params.G * u / C - u_dot)
    dz1 = -kk * r1 - u * v / params.L + drive
    dz2a = -kk * r2a + drive * gdm1 - akv * gdmd1
    dz2b = -kk * r2b + drive * gdm2 - akv * gdmd2
    return EstimatorState(dz1, (dz2a, dz2b), (md1, md2))


def estimates(s: EstimatorState, u: float, v: float, params: PlantParams, gains: EstimatorGains) -> EstimateBundle:
    """Read out ``i_hat``, ``theta_hat`` and the recovered source phase and amplitude."""
    g11, g12, g21, g22 = gains._GD
    m1, m2 = s.mu
    akv = u / params.C * gains.k * v
    th1 = s.zeta2[0] + akv * (g11 * m1 + g12 * m2)
    th2 = s.zeta2[1] + akv * (g21 * m1 + g22 * m2)
    i_hat = s.zeta1 + akv + m1 * th1 + m2 * th2
    E_hat = math.hypot(th1, th2)
    if E_hat == 0.0:
        return EstimateBundle(i_hat, ThetaVector(th1, th2), math.nan, 0.0, True)
    rho_hat = math.atan2(th1, th2)
    if rho_hat == -math.pi:
        rho_hat = math.pi
    return EstimateBundle(i_hat, ThetaVector(th1, th2), rho_hat, E_hat)


def estimation_error(i: float, theta, s: EstimatorState, u: float, v: float, params: PlantParams, gains: EstimatorGains) -> np.ndarray:
    """Off-manifold error ``eta_bar = (iota - zeta1 - (u/C) k v, theta - theta_hat)``.

    ``iota = i - mu^T theta`` is the filtered coordinate; ``i - i_hat`` equals
    ``[1, mu^T] eta_bar``.
    """
    m1, m2 = s.mu
    iota = i - (m1 * theta[0] + m2 * theta[1])
    est = estimates(s, u, v, params, gains)
    return np.array([
        iota - s.zeta1 - u / params.C * gains.k * v,
        theta[0] - est.theta_hat[0],
        theta[1] - est.theta_hat[1],
    ])


def error_dynamics_rhs(eta_bar, u: float, mu, params: PlantParams, gains: EstimatorGains) -> np.ndarray:
    eta_bar = np.asarray(eta_bar, dtype=float)
    mu = np.asarray(mu, dtype=float)
    gdm = gains.Gamma @ gains.D @ mu
    M = np.empty((3, 3))
    M[0, 0] = 1.0
    M[0, 1:] = -(mu @ gains.D)
    M[1:, 0] = gdm
    M[1:, 1:] = np.outer(gdm, mu)
    return -gains.k * (u / params.C) ** 2 * (M @ eta_bar)


def lyapunov_value(eta_bar, gains: EstimatorGains) -> float:
    eta_bar = np.asarray(eta_bar, dtype=float)
    th = eta_bar[1:]
    return 0.5 * float(eta_bar[0] ** 2 + th @ np.linalg.solve(gains.Gamma, th))


class PEResult(NamedTuple):
    excited: bool
    energy_level: float
    regressor_level: float


def pe_check(t, u, window: float, params: PlantParams, floor: float = 1e-9) -> PEResult:
    """Sliding-window persistent-excitation test on a sampled control trace.

    Reports the minimum over all full windows of ``int u^2`` and of the
    smallest eigenvalue of ``int u^2 phi phi^T``.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if t.size < 2 or t[-1] - t[0] < window * (1 - 1e-9):
        raise ValueError("trace is shorter than the excitation window")
    p1 = np.cos(params.omega * t) / params.L
    p2 = np.sin(params.omega * t) / params.L
    u2 = u * u
    cum = [cumulative_trapezoid(f, t, initial=0.0) for f in (u2, u2 * p1 * p1, u2 * p1 * p2, u2 * p2 * p2)]
    stop = np.searchsorted(t, t + window * (1 - 1e-9))
    ok = stop < t.size
    start = np.nonzero(ok)[0]
    stop = stop[ok]
    win = [c[stop] - c[start] for c in cum]
    energy = win[0]
    a, b, c = win[1], win[2], win[3]
    lam_min = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    e_lvl = float(energy.min())
    r_lvl = float(lam_min.min())
    return PEResult(e_lvl > floor and r_lvl > floor, e_lvl, r_lvl)
