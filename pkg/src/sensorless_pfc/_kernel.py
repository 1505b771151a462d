"""Compiled inner loop of the simulator.

The right-hand side here is the composition of ``plant_derivative``,
``estimator_derivative``, ``estimates``, ``ce_error`` / ``im_error``,
``resonant_filter_step`` and the control-derivative functions, fused into one
scalar routine so numba can compile it.  ``sim_engine.reference_rhs`` builds the
same quantities from the public functions and the test suite checks the two
against each other.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# Layout of the packed parameter vector.
P_L, P_C, P_G, P_R, P_E, P_OMEGA, P_RHO, P_ILIM = range(8)
P_VD, P_A, P_B, P_CG, P_DG, P_KC, P_KE = range(8, 15)
P_GD = 15  # four entries, row-major Gamma @ D
P_DM = 19  # four entries, row-major D
P_VFLOOR, P_EFLOOR = 23, 24
N_PARAMS = 25

MODE_IM, MODE_CE, MODE_OPEN = 0, 1, 2
N_STATE = 10
N_AUX = 11

STATUS_OK, STATUS_NONFINITE = 0, 1


@njit(cache=True)
def rhs(t, y, P, mode, dy, aux):
    i, v, z1, z2a, z2b, m1, m2, u, x1, x2 = y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7], y[8], y[9]
    L, C, G, r, E, w, rho = P[P_L], P[P_C], P[P_G], P[P_R], P[P_E], P[P_OMEGA], P[P_RHO]
    V_d, k_est = P[P_VD], P[P_KE]
    g11, g12, g21, g22 = P[P_GD], P[P_GD + 1], P[P_GD + 2], P[P_GD + 3]
    d11, d12, d21, d22 = P[P_DM], P[P_DM + 1], P[P_DM + 2], P[P_DM + 3]

    # estimator read-out
    gdm1 = g11 * m1 + g12 * m2
    gdm2 = g21 * m1 + g22 * m2
    akv = u / C * k_est * v
    th1 = z2a + akv * gdm1
    th2 = z2b + akv * gdm2
    i_hat = z1 + akv + m1 * th1 + m2 * th2
    E_hat = math.hypot(th1, th2)
    indeterminate = E_hat == 0.0
    rho_hat = math.nan
    if not indeterminate:
        rho_hat = math.atan2(th1, th2)
        if rho_hat == -math.pi:
            rho_hat = math.pi

    psi = w * t + rho
    v_i = E * math.sin(psi)
    I0 = 2.0 * G * V_d * V_d / E
    i_d = I0 * math.sin(psi)
    di_d = I0 * w * math.cos(psi)

    guard = v <= P[P_VFLOOR]
    w2 = w * w
    a_f, b_f, kc = P[P_A], P[P_B], P[P_KC]
    e = 0.0
    out = 0.0
    du = 0.0
    dx1 = 0.0
    dx2 = 0.0
    if mode == MODE_IM:
        e = v_i - L * di_d - kc * (i_d - i) - u * v
        dx1 = x2
        dx2 = -w2 * x1 + e
        out = P[P_CG] * ((b_f - w2) * x1 + a_f * x2 + e)
        if v > P[P_VFLOOR]:
            du = (-(u * u) / C * i + out) / v
    elif mode == MODE_CE:
        gv2 = 2.0 * G * V_d * V_d
        num = E_hat * E_hat - kc * gv2
        den = -gv2 * L * w
        q = math.hypot(num, den)
        phi = math.atan2(num, den)
        g_ce = E_hat <= P[P_EFLOOR] or indeterminate
        rh = 0.0 if g_ce else rho_hat
        e = q * math.cos(w * t + rh - phi) - E_hat * (u * v - kc * i_hat)
        guard = guard or g_ce
        dx1 = x2
        dx2 = -w2 * x1 + e
        out = P[P_DG] * ((b_f - w2) * x1 + a_f * x2 + e)
        if v > P[P_VFLOOR]:
            du = (-(u * u) / C * i_hat + out) / v
    if (u >= 1.0 and du > 0.0) or (u <= -1.0 and du < 0.0):
        du = 0.0

    # plant
    di = (-u * v + v_i - r * i) / L
    dv = (u * i - G * v) / C

    # estimator dynamics
    a = u / C
    kk = k_est * a * a
    wt = w * t
    p1 = math.cos(wt) / L
    p2 = math.sin(wt) / L
    md1 = -kk * ((1.0 + d11) * m1 + d12 * m2) + p1
    md2 = -kk * (d21 * m1 + (1.0 + d22) * m2) + p2
    gdmd1 = g11 * md1 + g12 * md2
    gdmd2 = g21 * md1 + g22 * md2
    s1 = z1 + akv
    s2a = z2a + akv * gdm1
    s2b = z2b + akv * gdm2
    muDs2 = m1 * (d11 * s2a + d12 * s2b) + m2 * (d21 * s2a + d22 * s2b)
    mus2 = m1 * s2a + m2 * s2b
    r1 = s1 - muDs2
    r2a = gdm1 * (s1 + mus2)
    r2b = gdm2 * (s1 + mus2)
    drive = k_est / C * v * (G * u / C - du)

    dy[0] = di
    dy[1] = dv
    dy[2] = -kk * r1 - u * v / L + drive
    dy[3] = -kk * r2a + drive * gdm1 - akv * gdmd1
    dy[4] = -kk * r2b + drive * gdm2 - akv * gdmd2
    dy[5] = md1
    dy[6] = md2
    dy[7] = du
    dy[8] = dx1
    dy[9] = dx2

    aux[0] = du
    aux[1] = i_hat
    aux[2] = th1
    aux[3] = th2
    aux[4] = rho_hat
    aux[5] = E_hat
    aux[6] = v_i
    aux[7] = i_d
    aux[8] = e
    aux[9] = out
    aux[10] = 1.0 if guard else 0.0


@njit(cache=True)
def run_segment(y, P, mode, n0, n1, n_last, dt, nsub, stride, rows, n_rec, flags, counters):
    """Advance ``y`` in place over macro steps ``n0 .. n1`` (exclusive).

    Each macro step of length ``dt`` is ``nsub`` RK4 steps; the current clamp
    and the duty-ratio clamp follow every RK4 step.  The duty-ratio clamp moves
    ``zeta`` by the change in ``beta`` so the estimate ``zeta + beta`` of the
    filtered coordinates is unaffected.  A row is written to
    ``rows`` at every macro step that is a multiple of ``stride``; when
    ``n1 == n_last`` the final instant is recorded (if on the stride) without
    stepping past it.  ``flags`` holds the (sat, limited) bits accumulated
    since the last recorded row and ``counters`` the totals of
    (saturation, current_limit, guard).

    Returns ``(status, n, n_rec)``; on a non-finite state ``n`` is the macro
    step whose integration failed.
    """
    n_state = y.shape[0]
    k1 = np.empty(n_state)
    k2 = np.empty(n_state)
    k3 = np.empty(n_state)
    k4 = np.empty(n_state)
    tmp = np.empty(n_state)
    aux = np.empty(N_AUX)
    scratch = np.empty(N_AUX)
    h = dt / nsub
    hh = 0.5 * h
    ilim = P[P_ILIM]
    stop = n1 + 1 if n1 == n_last else n1
    for n in range(n0, stop):
        t = n * dt
        rhs(t, y, P, mode, k1, aux)
        if aux[10] != 0.0:
            counters[2] += 1
        if n % stride == 0:
            row = rows[n_rec]
            row[0] = t
            for j in range(n_state):
                row[1 + j] = y[j]
            for j in range(N_AUX):
                row[1 + n_state + j] = aux[j]
            row[1 + n_state + N_AUX] = P[P_E]
            row[2 + n_state + N_AUX] = P[P_RHO]
            row[3 + n_state + N_AUX] = P[P_G]
            row[4 + n_state + N_AUX] = P[P_R]
            row[5 + n_state + N_AUX] = P[P_VD]
            row[6 + n_state + N_AUX] = flags[0]
            row[7 + n_state + N_AUX] = flags[1]
            n_rec += 1
            flags[0] = 0.0
            flags[1] = 0.0
        if n == n_last:
            break
        for s in range(nsub):
            ts = (n * nsub + s) * h
            if s > 0:
                rhs(ts, y, P, mode, k1, scratch)
            for j in range(n_state):
                tmp[j] = y[j] + hh * k1[j]
            rhs(ts + hh, tmp, P, mode, k2, scratch)
            for j in range(n_state):
                tmp[j] = y[j] + hh * k2[j]
            rhs(ts + hh, tmp, P, mode, k3, scratch)
            for j in range(n_state):
                tmp[j] = y[j] + h * k3[j]
            rhs(ts + h, tmp, P, mode, k4, scratch)
            finite = True
            for j in range(n_state):
                y[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j])
                if not math.isfinite(y[j]):
                    finite = False
            if not finite:
                return STATUS_NONFINITE, n, n_rec
            if abs(y[0]) > ilim:
                y[0] = math.copysign(ilim, y[0])
                flags[1] = 1.0
                counters[1] += 1
            if abs(y[7]) > 1.0:
                # keep zeta + beta continuous so the estimation error does not jump
                shift = (math.copysign(1.0, y[7]) - y[7]) / P[P_C] * P[P_KE] * y[1]
                y[2] -= shift
                y[3] -= shift * (P[P_GD] * y[5] + P[P_GD + 1] * y[6])
                y[4] -= shift * (P[P_GD + 2] * y[5] + P[P_GD + 3] * y[6])
                y[7] = math.copysign(1.0, y[7])
                flags[0] = 1.0
                counters[0] += 1
    return STATUS_OK, n1, n_rec
