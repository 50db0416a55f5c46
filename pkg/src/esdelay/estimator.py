"""The ES loops: unbiased (decaying dither, high-pass filter) and classical
(constant dither), plus the error-coordinate oracle and transform diagnostics.

`run` drives the JIT kernel for long horizons; `step_unbiased` and
`step_classical` are plain-Python single-step references used by the tests
to pin the kernel's arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from esdelay import _kernels
from esdelay.dither import DitherConfig, GainSchedule, demod_vec, dither_vec, rho_exact
from esdelay.plant import DelayModel, QuadraticMap, SplitMix64, ThetaRing, delay_sequence, eval_map, sample_delay

__all__ = [
    "EsRunConfig",
    "EsState",
    "Trajectory",
    "run",
    "run_error_system",
    "step_unbiased",
    "step_classical",
    "transform_diagnostics",
]

_STATUS_NAMES = {
    _kernels.STATUS_OK: "ok",
    _kernels.STATUS_PRECISION_FLOOR: "precision_floor",
    _kernels.STATUS_DIVERGED: "diverged",
    _kernels.STATUS_CAP: "cap_exceeded",
}

_TAIL_ROW_CAP = 1 << 18
DEFAULT_WINDOWS = 1000


@dataclass(frozen=True)
class EsRunConfig:
    """One simulation experiment, fully specified and seeded."""

    qmap: QuadraticMap
    delay: DelayModel
    dither: DitherConfig
    gains: GainSchedule
    k: float
    omega_h: float
    variant: str
    theta0: np.ndarray
    horizon: int
    q0: float = 0.0
    decimation: int | None = None
    n_windows: int = DEFAULT_WINDOWS
    err_cap: float = math.inf
    keep_tail: bool = True

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float).reshape(-1))
        if self.variant not in ("unbiased", "classical"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.theta0.shape[0] != self.qmap.dim:
            raise ValueError("theta0 dimension does not match the map")
        if self.dither.n != self.qmap.dim:
            raise ValueError("dither dimension does not match the map")
        if self.dither.d_max != self.delay.d_max:
            raise ValueError("dither config and delay model disagree on d_max")
        if abs(self.dither.epsilon - self.gains.epsilon) > 0.0:
            raise ValueError("dither and gain schedule must share epsilon")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.k <= 0:
            raise ValueError("k must be positive")

    @property
    def epsilon(self) -> float:
        return self.dither.epsilon

    def effective_decimation(self) -> int:
        if self.decimation is not None:
            if self.decimation < 1:
                raise ValueError("decimation must be >= 1")
            return self.decimation
        return 1000 if self.horizon > 1_000_000 else 1


@dataclass
class EsState:
    """Mutable loop state for the single-step reference implementation."""

    theta_hat: np.ndarray
    eta: float
    j: int
    ring: ThetaRing
    rng: SplitMix64 | None
    theta0: np.ndarray
    last_y: float = 0.0


@dataclass
class Trajectory:
    """Recorded run: decimated rows, full-rate extrema, and a full-rate tail.

    The error column and the per-window maxima are computed at full rate
    inside the loop before decimation, so envelope checks see true extrema.
    In error-coordinate runs the theta_hat/eta/y columns hold the estimate
    error, filter error, and measurement error instead.
    """

    j: np.ndarray
    theta_hat: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    err: np.ndarray
    status: str
    steps: int
    horizon: int
    decimation: int
    d_max: int
    err_at_dm: float
    max_err: float
    window_max_err: np.ndarray
    window_max_ratio: np.ndarray
    window_max_eta_ratio: np.ndarray
    final_theta_hat: np.ndarray
    final_eta: float
    final_alpha: float
    tail_j: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    tail_state: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    error_coords: bool = False

    def tail_max_err(self, fraction: float = 0.1) -> float:
        """Max error over the trailing fraction of the horizon (window granularity)."""
        if not (0.0 < fraction <= 1.0):
            raise ValueError("fraction must be in (0, 1]")
        w = self.window_max_err.shape[0]
        lo = min(w - 1, int(math.floor((1.0 - fraction) * w)))
        return float(self.window_max_err[lo:].max())

    def coarse_window_max(self, k: int = 10) -> np.ndarray:
        """Aggregate the fine window maxima into k coarse windows."""
        w = self.window_max_err.shape[0]
        k = min(k, w)
        edges = np.linspace(0, w, k + 1).astype(int)
        return np.array([self.window_max_err[a:b].max() for a, b in zip(edges[:-1], edges[1:])])


def _run_kernel(cfg: EsRunConfig, error_coords: bool) -> Trajectory:
    decim = cfg.effective_decimation()
    delays = delay_sequence(cfg.delay, cfg.horizon)
    tail_cap = min(2 * cfg.dither.period, cfg.horizon, _TAIL_ROW_CAP) if cfg.keep_tail else 0
    variant = 0 if cfg.variant == "unbiased" else 1
    out = _kernels.es_loop(
        cfg.theta0,
        cfg.qmap.theta_star,
        cfg.qmap.q_star,
        cfg.qmap.hessian,
        delays,
        cfg.delay.d_max,
        cfg.dither.amplitudes,
        cfg.dither.period,
        cfg.gains.alpha0,
        cfg.gains.lam,
        cfg.epsilon,
        cfg.k,
        cfg.omega_h,
        cfg.q0,
        variant,
        cfg.horizon,
        decim,
        cfg.err_cap,
        max(1, min(cfg.n_windows, cfg.horizon)),
        tail_cap,
        1 if error_coords else 0,
    )
    (
        status,
        steps,
        nrec,
        rec_j,
        rec_th,
        rec_t,
        rec_y,
        rec_eta,
        rec_alpha,
        rec_err,
        wmax_err,
        wmax_rt,
        wmax_re,
        err_at_dm,
        max_err,
        fin_th,
        fin_eta,
        fin_alpha,
        tail_j,
        tail_state,
        tail_next,
        tail_count,
        _final_err,
    ) = out
    if tail_cap > 0 and tail_count > 0:
        order = np.arange(tail_count)
        if tail_count == tail_cap:
            order = (tail_next + order) % tail_cap
        tj = tail_j[order]
        ts = tail_state[order]
    else:
        tj = np.empty(0, dtype=np.int64)
        ts = np.empty((0, 2 * cfg.qmap.dim + 4))
    return Trajectory(
        j=rec_j[:nrec].copy(),
        theta_hat=rec_th[:nrec].copy(),
        theta=rec_t[:nrec].copy(),
        y=rec_y[:nrec].copy(),
        eta=rec_eta[:nrec].copy(),
        alpha=rec_alpha[:nrec].copy(),
        err=rec_err[:nrec].copy(),
        status=_STATUS_NAMES[status],
        steps=int(steps),
        horizon=cfg.horizon,
        decimation=decim,
        d_max=cfg.delay.d_max,
        err_at_dm=float(err_at_dm),
        max_err=float(max_err),
        window_max_err=wmax_err,
        window_max_ratio=wmax_rt,
        window_max_eta_ratio=wmax_re,
        final_theta_hat=fin_th,
        final_eta=float(fin_eta),
        final_alpha=float(fin_alpha),
        tail_j=tj,
        tail_state=ts,
        error_coords=error_coords,
    )


def run(cfg: EsRunConfig) -> Trajectory:
    """Simulate the configured loop. Deterministic for a fixed config and seed."""
    return _run_kernel(cfg, error_coords=False)


def run_error_system(cfg: EsRunConfig) -> Trajectory:
    """Simulate the loop directly in error coordinates (oracle mode).

    Shifting the plant-coordinate run by (theta*, Q*) must agree with this
    trajectory to tight tolerance; the equivalence is exercised in tests.
    """
    return _run_kernel(cfg, error_coords=True)


def _signals(cfg: EsRunConfig, j: int):
    return dither_vec(cfg.dither, j), demod_vec(cfg.dither, j)


def make_state(cfg: EsRunConfig) -> EsState:
    ring = ThetaRing(cfg.delay.d_max, cfg.qmap.dim)
    rng = SplitMix64(cfg.delay.seed) if cfg.delay.variant == "uniform" else None
    eta0 = 0.0 if cfg.variant == "classical" else cfg.q0
    return EsState(cfg.theta0.copy(), eta0, 0, ring, rng, cfg.theta0.copy())


def _advance(state: EsState, cfg: EsRunConfig, classical: bool) -> EsState:
    j = state.j
    d_max = cfg.delay.d_max
    S, M = _signals(cfg, j)
    if classical:
        alpha = 1.0
    else:
        alpha = cfg.gains.alpha0 * cfg.gains.lambda_bar**j
    theta = state.theta0.copy() if j <= d_max else state.theta_hat + alpha * S
    state.ring.push(j, theta)
    # one delay draw per step, applied only once the channel has filled
    d = sample_delay(cfg.delay, j, state.rng)
    if j < d_max:
        y = 0.0
    else:
        y = eval_map(cfg.qmap, state.ring.get(j - d))
    state.last_y = y
    if j >= d_max:
        if classical:
            state.theta_hat = state.theta_hat - cfg.epsilon * cfg.k * M * y
        else:
            innov = y - state.eta
            state.theta_hat = state.theta_hat - cfg.epsilon * (cfg.k / alpha) * M * innov
            state.eta = state.eta + cfg.epsilon * cfg.omega_h * innov
    state.j = j + 1
    return state


def step_unbiased(state: EsState, cfg: EsRunConfig) -> EsState:
    """One step of the unbiased loop (reference implementation)."""
    return _advance(state, cfg, classical=False)


def step_classical(state: EsState, cfg: EsRunConfig) -> EsState:
    """One step of the classical loop (reference implementation)."""
    return _advance(state, cfg, classical=True)


def transform_diagnostics(
    traj: Trajectory,
    cfg: EsRunConfig,
    max_points: int = 100,
):
    """Per-step offset G and core z of the delay-free transformation.

    Works on recorded steps only (oracle mode: the plant's optimum is known).
    Returns a dict with arrays j, offset, core. The offset combines the four
    window remainders with the current error state; the core is the error
    minus the offset and follows the fast averaged contraction.
    """
    if traj.error_coords:
        theta_err = traj.theta_hat
        eta_err = traj.eta
    else:
        theta_err = traj.theta_hat - cfg.qmap.theta_star[None, :]
        eta_err = traj.eta - cfg.qmap.q_star
    count = traj.j.shape[0]
    if count == 0:
        return {"j": np.empty(0, dtype=np.int64), "offset": np.empty((0, cfg.qmap.dim)), "core": np.empty((0, cfg.qmap.dim))}
    sel = np.unique(np.linspace(0, count - 1, min(max_points, count)).astype(int))
    H = cfg.qmap.hessian
    offs = np.zeros((sel.shape[0], cfg.qmap.dim))
    for out_i, rec_i in enumerate(sel):
        j = int(traj.j[rec_i])
        if j <= cfg.delay.d_max - 1:
            continue
        r1 = rho_exact(cfg.dither, cfg.k, H, 1, j)
        r2 = rho_exact(cfg.dither, cfg.k, H, 2, j)
        r3 = rho_exact(cfg.dither, cfg.k, H, 3, j)
        r4 = rho_exact(cfg.dither, cfg.k, H, 4, j)
        th = theta_err[rec_i]
        alpha = traj.alpha[rec_i]
        quad = float(th @ H @ th)
        offs[out_i] = r1 @ th + r2 * (eta_err[rec_i] / alpha) + r3 * alpha + r4 * (quad / alpha)
    core = theta_err[sel] - offs
    return {"j": traj.j[sel], "offset": offs, "core": core}
