"""Quadratic plant, delayed measurement channel, and delay generators.

The plant is a static quadratic map with a positive definite Hessian; its
measurements arrive through a channel with an unknown integer delay bounded
by a known constant. Delay sequences come from a small seeded generator so
that every experiment is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadraticMap",
    "DelayModel",
    "UncertaintyBounds",
    "SplitMix64",
    "ThetaRing",
    "eval_map",
    "sample_delay",
    "delay_sequence",
    "measure",
]

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MIX1 = 0xBF58476D1CE4E5B9
_SM_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Counter-based 64-bit generator; one seed, one owner, no global state.

    Output i is a bijective mix of ``seed + i*gamma``, so the whole stream can
    also be produced vectorized (see :func:`delay_sequence`) and matches the
    sequential draws exactly.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64
        self._count = 0

    def next_u64(self) -> int:
        self._state = (self._state + _SM_GAMMA) & _MASK64
        self._count += 1
        z = self._state
        z = ((z ^ (z >> 30)) * _SM_MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _SM_MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, m: int) -> int:
        """Uniform integer in [0, m) by rejection; no modulo bias."""
        if m <= 0:
            raise ValueError("m must be positive")
        limit = (1 << 64) - ((1 << 64) % m)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % m


def _splitmix64_block(seed: int, count: int) -> np.ndarray:
    """Vectorized outputs 1..count of SplitMix64(seed), identical to sequential draws."""
    ctr = (np.uint64(seed) + np.arange(1, count + 1, dtype=np.uint64) * _U64(_SM_GAMMA))
    z = ctr
    z = (z ^ (z >> _U64(30))) * _U64(_SM_MIX1)
    z = (z ^ (z >> _U64(27))) * _U64(_SM_MIX2)
    return z ^ (z >> _U64(31))


@dataclass(frozen=True)
class QuadraticMap:
    """Ground-truth plant: minimum point, minimum value, and Hessian."""

    theta_star: np.ndarray
    q_star: float
    hessian: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.theta_star, dtype=float).reshape(-1)
        h = np.asarray(self.hessian, dtype=float)
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "q_star", float(self.q_star))
        n = ts.shape[0]
        if h.shape != (n, n):
            raise ValueError(f"hessian must be {n}x{n}, got {h.shape}")
        scale = np.abs(h).max()
        if scale == 0.0 or np.abs(h - h.T).max() > 1e-12 * scale:
            raise ValueError("hessian must be symmetric to 1e-12 relative tolerance")
        try:
            np.linalg.cholesky(h)
        except np.linalg.LinAlgError:
            raise ValueError("hessian must be positive definite") from None

    @property
    def dim(self) -> int:
        return self.theta_star.shape[0]


@dataclass(frozen=True)
class UncertaintyBounds:
    """Known uncertainty ranges for the Hessian, optimum location, and value."""

    h_min: float
    h_max: float
    sigma0: float
    q0: float
    delta_q: float

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_max):
            raise ValueError("need 0 < h_min <= h_max")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.delta_q < 0:
            raise ValueError("delta_q must be nonnegative")


@dataclass(frozen=True)
class DelayModel:
    """Generator of per-step integer delays in [0, d_max].

    variant: "zero" | "constant" | "uniform" | "sequence".
    "constant" uses ``value``; "uniform" draws i.i.d. from {0..d_max} with
    ``seed``; "sequence" replays ``values`` verbatim.
    """

    variant: str
    d_max: int
    value: int = 0
    seed: int | None = None
    values: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.variant not in ("zero", "constant", "uniform", "sequence"):
            raise ValueError(f"unknown delay variant {self.variant!r}")
        if self.d_max < 0:
            raise ValueError("d_max must be nonnegative")
        if self.variant == "constant" and not (0 <= self.value <= self.d_max):
            raise ValueError("constant delay must lie in [0, d_max]")
        if self.variant == "uniform" and self.seed is None:
            raise ValueError("uniform delay model requires a seed")
        if self.variant == "sequence":
            object.__setattr__(self, "values", tuple(int(v) for v in self.values))
            for v in self.values:
                if not (0 <= v <= self.d_max):
                    raise ValueError("sequence delay values must lie in [0, d_max]")

    @staticmethod
    def zero() -> "DelayModel":
        return DelayModel("zero", 0)

    @staticmethod
    def constant(d: int) -> "DelayModel":
        return DelayModel("constant", d, value=d)

    @staticmethod
    def uniform(d_max: int, seed: int) -> "DelayModel":
        return DelayModel("uniform", d_max, seed=seed)

    @staticmethod
    def sequence(values, d_max: int | None = None) -> "DelayModel":
        values = tuple(int(v) for v in values)
        if d_max is None:
            d_max = max(values) if values else 0
        return DelayModel("sequence", d_max, values=values)


def eval_map(qmap: QuadraticMap, theta: np.ndarray) -> float:
    """Plant output at input theta."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != qmap.theta_star.shape:
        raise ValueError(
            f"theta has dim {theta.shape[0]}, map has dim {qmap.dim}"
        )
    d = theta - qmap.theta_star
    return qmap.q_star + 0.5 * float(d @ qmap.hessian @ d)


def sample_delay(model: DelayModel, j: int, rng: SplitMix64 | None = None) -> int:
    """Delay applied at step j. Uniform draws consume rng sequentially."""
    if j < 0:
        raise ValueError("step index must be nonnegative")
    if model.variant == "zero":
        return 0
    if model.variant == "constant":
        return model.value
    if model.variant == "sequence":
        if j >= len(model.values):
            raise ValueError(
                f"delay sequence exhausted at step {j} (length {len(model.values)})"
            )
        return model.values[j]
    if rng is None:
        raise ValueError("uniform delay model needs an rng state")
    return rng.next_below(model.d_max + 1)


def delay_sequence(model: DelayModel, horizon: int) -> np.ndarray:
    """Delays for steps 0..horizon-1 as an int64 array.

    The uniform variant takes a vectorized path equivalent to sequential
    rejection sampling; for any m = d_max+1 < 2^32 the probability that a
    rejection occurs at all is below 2^-32 per draw, and the fallback keeps
    the sequential semantics exact.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if model.variant == "zero":
        return np.zeros(horizon, dtype=np.int64)
    if model.variant == "constant":
        return np.full(horizon, model.value, dtype=np.int64)
    if model.variant == "sequence":
        if horizon > len(model.values):
            raise ValueError(
                f"delay sequence exhausted: need {horizon}, have {len(model.values)}"
            )
        return np.asarray(model.values[:horizon], dtype=np.int64)
    m = model.d_max + 1
    limit = _U64((1 << 64) - ((1 << 64) % m)) if ((1 << 64) % m) else _U64(0)
    block = _splitmix64_block(model.seed, horizon)
    if limit != _U64(0) and not bool((block < limit).all()):
        rng = SplitMix64(model.seed)
        return np.fromiter(
            (rng.next_below(m) for _ in range(horizon)), dtype=np.int64, count=horizon
        )
    out = (block % _U64(m)).astype(np.int64)
    return out


class ThetaRing:
    """Ring buffer of the last d_max+1 inputs, indexed by absolute step."""

    def __init__(self, d_max: int, dim: int):
        self.d_max = d_max
        self._buf = np.zeros((d_max + 1, dim))
        self._latest = -1

    def push(self, j: int, theta: np.ndarray) -> None:
        if j != self._latest + 1:
            raise ValueError(f"pushes must be consecutive: expected {self._latest + 1}, got {j}")
        self._buf[j % (self.d_max + 1)] = theta
        self._latest = j

    def get(self, j: int) -> np.ndarray:
        if not (self._latest - self.d_max <= j <= self._latest):
            raise IndexError(f"step {j} no longer buffered (latest {self._latest})")
        return self._buf[j % (self.d_max + 1)]


def measure(
    qmap: QuadraticMap,
    theta_history,
    j: int,
    delay: int,
    d_max: int,
) -> float:
    """Delayed measurement: 0 before the channel fills, then Q at the delayed input.

    theta_history must support ``get(step)`` (ThetaRing) or integer indexing.
    """
    if j < d_max:
        return 0.0
    if not (0 <= delay <= d_max):
        raise ValueError(f"delay {delay} outside [0, {d_max}]")
    idx = j - delay
    assert idx >= 0, "delayed index negative despite bounded delay"
    theta = theta_history.get(idx) if hasattr(theta_history, "get") else theta_history[idx]
    return eval_map(qmap, theta)
