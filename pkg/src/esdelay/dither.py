"""Perturbation/demodulation signals, period law, decaying gain, and the
window-averaged quantities used by the stability analysis.

The probe added to the input is S_i(j) = a_i sin(w_i j) and the matched
demodulation signal is M_i(j) = (2/a_i) sin(w_i j), with w_i = 2*pi*i/T on a
common period T chosen from the dimension, the delay bound, and the step
parameter. All angle arguments are reduced mod T before evaluation so the
signals stay exactly periodic at any horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DitherConfig",
    "GainSchedule",
    "GainExhaustedError",
    "make_period",
    "dither_vec",
    "demod_vec",
    "gain",
    "averaging_sums",
    "loop_coeffs",
    "rho_exact",
    "rho_period_profile",
]

GAIN_FLOOR = 1e-280


def make_period(n: int, d_max: int, epsilon: float) -> int:
    """Common dither period: max(n * d_max * floor(1/sqrt(eps)), 2n+1).

    The floor is taken with a 1e-9 absolute guard so that decimal epsilon
    values stored as the nearest double (e.g. 1e-4) floor to the intended
    integer rather than one below it.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if d_max < 0:
        raise ValueError("d_max must be nonnegative")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    m = int(math.floor(1.0 / math.sqrt(epsilon) + 1e-9))
    return max(n * d_max * m, 2 * n + 1)


@dataclass(frozen=True)
class DitherConfig:
    """Amplitudes, step parameter, delay bound, and the derived period/frequencies."""

    n: int
    amplitudes: np.ndarray
    epsilon: float
    d_max: int
    period: int
    frequencies: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=float))
        if amps.shape[0] != self.n:
            raise ValueError("amplitudes must have length n")
        if np.any(amps == 0.0):
            raise ValueError("all amplitudes must be nonzero")
        if self.period != make_period(self.n, self.d_max, self.epsilon):
            raise ValueError("period does not satisfy the period law")

    @staticmethod
    def make(n: int, amplitudes, epsilon: float, d_max: int) -> "DitherConfig":
        period = make_period(n, d_max, epsilon)
        freqs = 2.0 * np.pi * np.arange(1, n + 1) / period
        return DitherConfig(n, np.asarray(amplitudes, dtype=float), float(epsilon), int(d_max), period, freqs)


@dataclass(frozen=True)
class GainSchedule:
    """Exponentially decaying dither gain alpha(j) = alpha0 * (1 - eps*lam)^j."""

    alpha0: float
    lam: float
    epsilon: float

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def lambda_bar(self) -> float:
        return 1.0 - self.epsilon * self.lam


class GainExhaustedError(RuntimeError):
    """Raised when alpha(j) underflows the usable floor (1e-280)."""


def _phase(cfg: DitherConfig, j: int) -> np.ndarray:
    return cfg.frequencies * (j % cfg.period)


def dither_vec(cfg: DitherConfig, j: int) -> np.ndarray:
    """Probe vector S(j)."""
    return cfg.amplitudes * np.sin(_phase(cfg, j))


def demod_vec(cfg: DitherConfig, j: int) -> np.ndarray:
    """Demodulation vector M(j)."""
    return (2.0 / cfg.amplitudes) * np.sin(_phase(cfg, j))


def gain(schedule: GainSchedule, j: int) -> float:
    """alpha(j), computed via exp(j*log(lambda_bar)) for numerical stability.

    Raises GainExhaustedError below 1e-280; the simulation loop treats that
    as its precision floor.
    """
    if j < 0:
        raise ValueError("step index must be nonnegative")
    lbar = schedule.lambda_bar
    if j == 0 or schedule.lam == 0.0:
        return schedule.alpha0
    if lbar > 0.0:
        a = schedule.alpha0 * math.exp(j * math.log(lbar))
    else:
        a = schedule.alpha0 * lbar**j
    if abs(a) < GAIN_FLOOR:
        raise GainExhaustedError(f"gain underflow at step {j}")
    return a


def _signal_table(cfg: DitherConfig, start: int, count: int):
    """S and M rows for steps start..start+count-1, shape (count, n)."""
    steps = (start + np.arange(count)) % cfg.period
    phases = steps[:, None] * cfg.frequencies[None, :]
    s = np.sin(phases)
    return cfg.amplitudes[None, :] * s, (2.0 / cfg.amplitudes)[None, :] * s


def averaging_sums(cfg: DitherConfig, hessian: np.ndarray, t: int = 0):
    """Window averages over [t, t+T-1]: mean of M, of M S^T, and of M (S^T H S).

    For any period produced by the period law these are 0, the identity, and
    0 up to float roundoff; the identities underpin the averaged loop.
    """
    S, M = _signal_table(cfg, t, cfg.period)
    mean_m = M.mean(axis=0)
    mean_msT = (M.T @ S) / cfg.period
    quad = np.einsum("ji,ik,jk->j", S, np.asarray(hessian, dtype=float), S)
    mean_mq = (M * quad[:, None]).mean(axis=0)
    return mean_m, mean_msT, mean_mq


def loop_coeffs(cfg: DitherConfig, k: float, hessian: np.ndarray, j: int):
    """The four time-varying coefficient groups of the error recursion at step j.

    Returns (c1, c2, c3, c4): c1 (n x n) multiplies the estimate error,
    c2 (n) multiplies the scaled filter error, c3 (n) the dither gain, and
    c4 (n) the scaled quadratic error term.
    """
    H = np.asarray(hessian, dtype=float)
    S = dither_vec(cfg, j)
    M = demod_vec(cfg, j)
    c1 = -k * np.outer(M, S) @ H + k * H
    c2 = k * M
    c3 = -0.5 * k * M * float(S @ H @ S)
    c4 = -0.5 * k * M
    return c1, c2, c3, c4


_RHO_CHUNK = 1 << 20


def rho_exact(cfg: DitherConfig, k: float, hessian: np.ndarray, l: int, j: int):
    """Windowed tail-weighted average of coefficient group l at step j.

    rho_l(j) = -(eps/T) * sum_{i=j}^{j+T-1} (j+T-i) a_l(i), evaluated by
    direct summation (chunked for very long periods). l=1 yields an n x n
    matrix, l in {2,3,4} an n-vector. Off the hot path; used by tests and
    diagnostics.
    """
    if l not in (1, 2, 3, 4):
        raise ValueError("l must be in 1..4")
    if j < 0:
        raise ValueError("step index must be nonnegative")
    H = np.asarray(hessian, dtype=float)
    T = cfg.period
    n = cfg.n
    acc_mat = np.zeros((n, n))
    acc_vec = np.zeros(n)
    wsum = 0.0
    for start in range(0, T, _RHO_CHUNK):
        count = min(_RHO_CHUNK, T - start)
        S, M = _signal_table(cfg, j + start, count)
        w = (T - start) - np.arange(count, dtype=float)
        if l == 1:
            acc_mat += (w[:, None] * M).T @ S
            wsum += w.sum()
        elif l == 2:
            acc_vec += (w[:, None] * M).sum(axis=0)
        elif l == 3:
            quad = np.einsum("ji,ik,jk->j", S, H, S)
            acc_vec += (w * quad) @ M
        else:
            acc_vec += (w[:, None] * M).sum(axis=0)
    scale = -cfg.epsilon / T
    if l == 1:
        return scale * k * (wsum * np.eye(n) - acc_mat) @ H
    if l == 2:
        return scale * k * acc_vec
    if l == 3:
        return scale * (-0.5) * k * acc_vec
    return scale * (-0.5) * k * acc_vec


def rho_period_profile(cfg: DitherConfig, k: float, hessian: np.ndarray, l: int):
    """rho_l(j) for every j in one period, via the one-step recurrence.

    Uses rho_l(j+1) = rho_l(j) + eps * a_l(j) from the exact window value at
    j=0; the recurrence is itself verified against direct windows in tests.
    Returns an array of shape (T, n, n) for l=1 or (T, n) otherwise.
    """
    H = np.asarray(hessian, dtype=float)
    T = cfg.period
    S, M = _signal_table(cfg, 0, T)
    if l == 1:
        a = k * H[None, :, :] - k * np.einsum("ji,jl,lk->jik", M, S, H)
        prof = np.empty((T, cfg.n, cfg.n))
    elif l == 2:
        a = k * M
        prof = np.empty((T, cfg.n))
    elif l == 3:
        quad = np.einsum("ji,ik,jk->j", S, H, S)
        a = -0.5 * k * M * quad[:, None]
        prof = np.empty((T, cfg.n))
    elif l == 4:
        a = -0.5 * k * M
        prof = np.empty((T, cfg.n))
    else:
        raise ValueError("l must be in 1..4")
    prof[0] = rho_exact(cfg, k, hessian, l, 0)
    inc = cfg.epsilon * a
    prof[1:] = prof[0] + np.cumsum(inc[:-1], axis=0)
    return prof
