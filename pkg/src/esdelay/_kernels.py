"""Hot simulation loops, JIT-compiled.

Two kernels: the ES loop in plant coordinates and the same loop in error
coordinates (the oracle used for equivalence testing). Both are strictly
sequential and deterministic; delay sequences are precomputed by the caller.
Status codes: 0 ok, 1 precision floor (dither gain underflow), 2 diverged,
3 error cap exceeded.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_PRECISION_FLOOR = 1
STATUS_DIVERGED = 2
STATUS_CAP = 3

_GAIN_FLOOR = 1e-280
_DIVERGE_ERR = 1e12
_RATIO_FLOOR = 1e-150
_REFRESH = 100_000


@njit(cache=True)
def es_loop(
    theta0,
    theta_star,
    q_star,
    hessian,
    delays,
    d_max,
    amps,
    period,
    alpha0,
    lam,
    eps,
    k,
    w_h,
    q0,
    variant,
    horizon,
    decim,
    err_cap,
    n_windows,
    tail_cap,
    error_coords,
):
    """Simulate the loop; see module docstring for conventions.

    With error_coords=1 the recursion runs on the estimate error and filter
    error directly, the input ring holds input errors, and the recorded
    theta_hat/eta/y columns carry those error quantities instead.
    """
    n = theta0.shape[0]
    lbar = 1.0 - eps * lam

    theta_hat = np.empty(n)
    if error_coords == 1:
        for i in range(n):
            theta_hat[i] = theta0[i] - theta_star[i]
        eta = q0 - q_star
    else:
        for i in range(n):
            theta_hat[i] = theta0[i]
        eta = q0
    if variant == 1:
        eta = 0.0

    ring = np.zeros((d_max + 1, n))
    omg = np.empty(n)
    for i in range(n):
        omg[i] = 2.0 * np.pi * (i + 1) / period

    nrec_cap = (horizon + decim - 1) // decim
    rec_j = np.empty(nrec_cap, dtype=np.int64)
    rec_theta_hat = np.empty((nrec_cap, n))
    rec_theta = np.empty((nrec_cap, n))
    rec_y = np.empty(nrec_cap)
    rec_eta = np.empty(nrec_cap)
    rec_alpha = np.empty(nrec_cap)
    rec_err = np.empty(nrec_cap)
    nrec = 0

    tail_j = np.empty(max(tail_cap, 1), dtype=np.int64)
    tail_state = np.empty((max(tail_cap, 1), 2 * n + 4))
    tail_next = 0
    tail_count = 0

    wmax_err = np.zeros(max(n_windows, 1))
    wmax_rt = np.zeros(max(n_windows, 1))
    wmax_re = np.zeros(max(n_windows, 1))

    err_at_dm = np.nan
    max_err = 0.0
    status = STATUS_OK
    steps = 0

    alpha = alpha0
    lpow = 1.0
    jm = 0
    theta = np.empty(n)
    S = np.empty(n)
    M = np.empty(n)

    for j in range(horizon):
        for i in range(n):
            s = math.sin(omg[i] * jm)
            S[i] = amps[i] * s
            M[i] = 2.0 / amps[i] * s
        av = 1.0 if variant == 1 else alpha
        if j <= d_max:
            if error_coords == 1:
                for i in range(n):
                    theta[i] = theta0[i] - theta_star[i]
            else:
                for i in range(n):
                    theta[i] = theta0[i]
        else:
            for i in range(n):
                theta[i] = theta_hat[i] + av * S[i]
        ring[j % (d_max + 1), :] = theta

        if j < d_max:
            y = 0.0 if error_coords == 0 else -q_star
        else:
            d = delays[j]
            idx = (j - d) % (d_max + 1)
            acc = 0.0
            if error_coords == 1:
                for r in range(n):
                    row = 0.0
                    for c in range(n):
                        row += hessian[r, c] * ring[idx, c]
                    acc += ring[idx, r] * row
                y = 0.5 * acc
            else:
                for r in range(n):
                    row = 0.0
                    for c in range(n):
                        row += hessian[r, c] * (ring[idx, c] - theta_star[c])
                    acc += (ring[idx, r] - theta_star[r]) * row
                y = q_star + 0.5 * acc

        e2 = 0.0
        if error_coords == 1:
            for i in range(n):
                e2 += theta_hat[i] * theta_hat[i]
        else:
            for i in range(n):
                d2 = theta_hat[i] - theta_star[i]
                e2 += d2 * d2
        err = math.sqrt(e2)

        if j % decim == 0:
            rec_j[nrec] = j
            for i in range(n):
                rec_theta_hat[nrec, i] = theta_hat[i]
                rec_theta[nrec, i] = theta[i]
            rec_y[nrec] = y
            rec_eta[nrec] = eta
            rec_alpha[nrec] = av
            rec_err[nrec] = err
            nrec += 1
        if tail_cap > 0:
            tail_j[tail_next] = j
            for i in range(n):
                tail_state[tail_next, i] = theta_hat[i]
                tail_state[tail_next, n + i] = theta[i]
            tail_state[tail_next, 2 * n] = y
            tail_state[tail_next, 2 * n + 1] = eta
            tail_state[tail_next, 2 * n + 2] = av
            tail_state[tail_next, 2 * n + 3] = err
            tail_next = (tail_next + 1) % tail_cap
            if tail_count < tail_cap:
                tail_count += 1

        if j >= d_max:
            if j == d_max:
                err_at_dm = err
            w = j * n_windows // horizon
            if err > wmax_err[w]:
                wmax_err[w] = err
            if variant == 0 and lpow > _RATIO_FLOOR:
                rt = err / lpow
                if rt > wmax_rt[w]:
                    wmax_rt[w] = rt
                ee = eta - (0.0 if error_coords == 1 else q_star)
                re = abs(ee) / (lpow * lpow)
                if re > wmax_re[w]:
                    wmax_re[w] = re
            if err > max_err:
                max_err = err
            if not math.isfinite(err) or err > _DIVERGE_ERR:
                status = STATUS_DIVERGED
                steps = j + 1
                break
            if err > err_cap:
                status = STATUS_CAP
                steps = j + 1
                break

        if j >= d_max:
            if variant == 0:
                innov = y - eta
                g = eps * k / alpha
                for i in range(n):
                    theta_hat[i] = theta_hat[i] - g * M[i] * innov
                eta = eta + eps * w_h * innov
            else:
                g = eps * k
                for i in range(n):
                    theta_hat[i] = theta_hat[i] - g * M[i] * y

        alpha *= lbar
        lpow *= lbar
        jm += 1
        if jm == period:
            jm = 0
        if (j + 1) % _REFRESH == 0 and lbar > 0.0:
            lg = math.log(lbar)
            alpha = alpha0 * math.exp((j + 1) * lg)
            lpow = math.exp((j + 1) * lg)
        if variant == 0 and abs(alpha) < _GAIN_FLOOR:
            status = STATUS_PRECISION_FLOOR
            steps = j + 1
            break
        steps = j + 1

    e2 = 0.0
    if error_coords == 1:
        for i in range(n):
            e2 += theta_hat[i] * theta_hat[i]
    else:
        for i in range(n):
            d2 = theta_hat[i] - theta_star[i]
            e2 += d2 * d2
    final_err = math.sqrt(e2)

    return (
        status,
        steps,
        nrec,
        rec_j,
        rec_theta_hat,
        rec_theta,
        rec_y,
        rec_eta,
        rec_alpha,
        rec_err,
        wmax_err,
        wmax_rt,
        wmax_re,
        err_at_dm,
        max_err,
        theta_hat,
        eta,
        alpha,
        tail_j,
        tail_state,
        tail_next,
        tail_count,
        final_err,
    )
