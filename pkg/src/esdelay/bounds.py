"""Closed-form certification arithmetic for both ES variants.

Evaluates the window-remainder bounds (rho bars), the full bound chains for
the unbiased and classical loops, the feasibility predicates on the step
parameter, the ultimate-bound radius of the classical variant, and the
region adjustment for locally quadratic maps. Absolute values are applied
literally as written in the closed forms, even where signs are known, so
that golden values stay auditable symbol for symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from esdelay.plant import UncertaintyBounds

__all__ = [
    "BoundInputs",
    "BoundChain",
    "FeasibilityResult",
    "ChainUndefinedError",
    "rho_bars_delayed",
    "rho_bars_delay_free",
    "chain_theorem1",
    "chain_theorem2",
    "feasible_theorem1",
    "feasible_theorem2",
    "ultimate_bound_radius",
    "region_for_local_map",
    "decay_conditions_direct",
]

# Constants fixed by the closed forms; kept verbatim, not re-derived.
_C_RHO14 = 0.19245
_C_RHO2 = 0.3849
_C_RHO3_DEN = 3.3072 * math.pi


class ChainUndefinedError(ArithmeticError):
    """A chain denominator is nonpositive; carries the offending name."""

    def __init__(self, name: str, value: float):
        super().__init__(f"chain undefined: denominator {name} = {value:.6g} <= 0")
        self.name = name
        self.value = value


# The three difference denominators cancel catastrophically in double
# precision for eps below ~1e-13, where certified step parameters live, so
# they are evaluated through exact algebraic expansions whenever the
# contraction factors are nonnegative (the expansion equals the literal
# absolute-value form there). The literal form is kept for the large-eps
# branch.


def _gap_filter(eps: float, lam: float, omega_h: float) -> float:
    """|1-eps*lam|^2 - |1-eps*omega_h|, cancellation-free."""
    if eps * lam <= 1.0 and eps * omega_h <= 1.0:
        return eps * (omega_h - 2.0 * lam + eps * lam * lam)
    lbar = abs(1.0 - eps * lam)
    return lbar * lbar - abs(1.0 - eps * omega_h)


def _gap_loop(eps: float, lam: float, kh: float) -> float:
    """|1-eps*lam| - |1-eps*kh|, cancellation-free."""
    if eps * lam <= 1.0 and eps * kh <= 1.0:
        return eps * (kh - lam)
    return abs(1.0 - eps * lam) - abs(1.0 - eps * kh)


def _gap_unit(eps: float, kh: float) -> float:
    """1 - |1-eps*kh|, cancellation-free."""
    if eps * kh <= 1.0:
        return eps * kh
    return 1.0 - abs(1.0 - eps * kh)


@dataclass(frozen=True)
class BoundInputs:
    """Everything the certification arithmetic needs for one (eps*, sigma) probe."""

    n: int
    d_max: int
    amplitudes: np.ndarray
    k: float
    lam: float
    omega_h: float
    alpha0: float
    epsilon_star: float
    sigma: float
    uncertainty: UncertaintyBounds
    variant: str = "unbiased"
    delay_regime: str = "delayed"

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=float).reshape(-1))
        if self.amplitudes.shape[0] != self.n:
            raise ValueError("amplitudes must have length n")
        if self.variant not in ("unbiased", "classical"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.delay_regime not in ("delayed", "delay_free"):
            raise ValueError(f"unknown delay regime {self.delay_regime!r}")
        if self.epsilon_star <= 0:
            raise ValueError("epsilon_star must be positive")
        if self.sigma <= self.uncertainty.sigma0:
            raise ValueError("sigma must exceed sigma0")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.variant == "unbiased":
            # gain ordering: adaptation and filter faster than the dither decay
            if self.k * self.uncertainty.h_min <= self.lam:
                raise ValueError("need k*h_min > lambda for the unbiased variant")
            if self.omega_h <= 2 * self.lam:
                raise ValueError("need omega_h > 2*lambda for the unbiased variant")

    def with_probe(self, epsilon_star: float, sigma: float) -> "BoundInputs":
        return replace(self, epsilon_star=float(epsilon_star), sigma=float(sigma))


@dataclass(frozen=True)
class BoundChain:
    """Evaluated bound chain for one (eps*, sigma): rho bars and derived deltas."""

    rho_bar: np.ndarray
    sigma_y: float
    sigma_eta: float
    delta: float
    delta_out: float
    delta_g: float
    delta_y: float

    def as_dict(self) -> dict:
        d = {f"rho_bar_{i+1}": float(v) for i, v in enumerate(self.rho_bar)}
        d.update(
            sigma_y=self.sigma_y,
            sigma_eta=self.sigma_eta,
            delta=self.delta,
            delta_out=self.delta_out,
            delta_g=self.delta_g,
            delta_y=self.delta_y,
        )
        return d


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    margins: dict = field(default_factory=dict)
    reason: str | None = None
    chain: BoundChain | None = None


def rho_bars_delayed(inputs: BoundInputs) -> np.ndarray:
    """Window-remainder bounds, delayed regime (scaled by sqrt(eps))."""
    if inputs.d_max < 1:
        raise ValueError("delayed regime requires d_max >= 1; use the delay-free path")
    n, D, k = inputs.n, float(inputs.d_max), inputs.k
    a = inputs.amplitudes
    h_max = inputs.uncertainty.h_max
    seps = math.sqrt(inputs.epsilon_star)

    harmonic = sum(1.0 / i for i in range(1, n + 1))
    cross = sum(
        (a[l - 1] / a[i - 1]) * (1.0 / abs(i - l) + 1.0 / (i + l))
        for i in range(1, n + 1)
        for l in range(1, n + 1)
        if i != l
    )
    rho1 = _C_RHO14 * n * D * k * h_max * (harmonic + cross)

    inv_ia = sum(1.0 / (i * a[i - 1]) for i in range(1, n + 1))
    rho2 = _C_RHO2 * n * D * k * inv_ia
    rho4 = _C_RHO14 * n * D * k * inv_ia

    def c_i(i: int) -> float:
        den = _C_RHO3_DEN * i
        t1 = (n * D + seps) * (2 * n * D + seps) / 12.0
        t2 = (seps * (seps + n * D) + D * D * n * n * (1.0 + 1.0 / den)) / den
        return t1 + t2

    sum_a2 = float(np.sum(a**2))
    rho3 = k * h_max * sum_a2 * math.sqrt(
        sum((c_i(i) / a[i - 1]) ** 2 for i in range(1, n + 1))
    )
    return np.array([rho1, rho2, rho3, rho4])


def rho_bars_delay_free(inputs: BoundInputs) -> np.ndarray:
    """Window-remainder bounds for d_max = 0 (scaled by eps, not sqrt(eps))."""
    n, k = inputs.n, inputs.k
    a = inputs.amplitudes
    h_max = inputs.uncertainty.h_max
    w = [2.0 * math.pi * i / (2 * n + 1) for i in range(1, n + 1)]

    s_diag = sum(1.0 / abs(math.sin(w[i - 1])) for i in range(1, n + 1))
    s_cross = sum(
        (a[l - 1] / a[i - 1])
        * (
            1.0 / abs(math.sin((w[i - 1] - w[l - 1]) / 2.0))
            + 1.0 / abs(math.sin((w[i - 1] + w[l - 1]) / 2.0))
        )
        for i in range(1, n + 1)
        for l in range(1, n + 1)
        if i != l
    )
    rho1 = 0.5 * k * h_max * (s_diag + s_cross)

    inv_half = sum(1.0 / (a[i - 1] * abs(math.sin(w[i - 1] / 2.0))) for i in range(1, n + 1))
    rho2 = k * inv_half
    rho4 = 0.5 * k * inv_half

    def cbar_i(i: int) -> float:
        wi = w[i - 1]
        t1 = (n + 1) * (4 * n + 3) / 6.0
        t2 = (1.0 / (4.0 * abs(math.sin(wi)))) * (
            abs(math.cos(wi) / math.sin(wi)) + 2 * n + 2 + 1.0 / (2 * n + 1)
        )
        return t1 + t2

    sum_a2 = float(np.sum(a**2))
    rho3 = k * h_max * sum_a2 * math.sqrt(
        sum((cbar_i(i) / a[i - 1]) ** 2 for i in range(1, n + 1))
    )
    return np.array([rho1, rho2, rho3, rho4])


def _rho_bars(inputs: BoundInputs) -> np.ndarray:
    if inputs.delay_regime == "delay_free":
        return rho_bars_delay_free(inputs)
    return rho_bars_delayed(inputs)


def chain_theorem1(inputs: BoundInputs) -> BoundChain:
    """Unbiased bound chain, evaluated in dependency order.

    Order: sigma_y -> sigma_eta -> delta -> delta_out -> delta_g -> delta_y.
    In the delay-free regime the displays are taken with d_max = delta_out = 0.
    """
    if inputs.variant != "unbiased":
        raise ValueError("chain_theorem1 applies to the unbiased variant")
    rho = _rho_bars(inputs)
    rho1, rho2, rho3, rho4 = rho
    delay_free = inputs.delay_regime == "delay_free"
    D = 0 if delay_free else inputs.d_max
    eps = inputs.epsilon_star
    seps = math.sqrt(eps)
    k, lam, w_h, a0 = inputs.k, inputs.lam, inputs.omega_h, inputs.alpha0
    sigma = inputs.sigma
    u = inputs.uncertainty
    lbar = abs(1.0 - eps * lam)
    a = inputs.amplitudes
    root_a2 = math.sqrt(float(np.sum(a**2)))
    root_inv_a2 = math.sqrt(float(np.sum(a**-2.0)))

    sigma_y = (u.h_max / 2.0) * lbar ** (-2 * D) * (sigma + a0 * root_a2) ** 2

    den_eta = _gap_filter(eps, lam, w_h)
    if den_eta <= 0.0:
        raise ChainUndefinedError("filter_decay_gap", den_eta)
    sigma_eta = u.delta_q * abs(1.0 - eps * w_h) ** (-D) + eps * w_h * sigma_y / den_eta

    delta = (2.0 * k / a0) * ((u.h_max / 2.0) * (sigma + a0 * root_a2) ** 2 + sigma_eta) * root_inv_a2

    if delay_free:
        delta_out = 0.0
    else:
        if lbar <= 0.0:
            raise ChainUndefinedError("dither_decay", lbar)
        shrink = (1.0 - seps) * D
        if shrink <= 0.0:
            raise ChainUndefinedError("period_margin", shrink)
        delta_out = (
            (k * D * u.h_max / a0)
            * root_inv_a2
            * (sigma + a0 * root_a2)
            * (1.0 + lbar ** (-D))
            * (
                (2.0 * seps * k * (sigma_y + sigma_eta) / a0) * root_inv_a2
                + a0 * root_a2 * (lam * seps + (2.0 * math.pi / shrink) * (math.pi * seps / shrink + 1.0)) / lbar
            )
        )

    delta_g = rho1 * sigma + rho2 * sigma_eta / a0 + rho3 * a0 + rho4 * sigma**2 * u.h_max / a0

    dd = delta + seps * delta_out
    delta_y = (
        k * u.h_max * delta_g
        + rho1 * dd
        + (w_h * rho2 / a0) * (sigma_y + sigma_eta)
        + rho2 * lam * (sigma_eta * abs(1.0 - eps * w_h) + eps * w_h * sigma_y) / (a0 * lbar)
        + rho3 * a0 * lam
        + 2.0 * rho4 * sigma * u.h_max * dd / a0
        + delta_out
        + eps * rho4 * u.h_max * dd**2 / a0
        + (rho4 * lam / (a0 * lbar)) * u.h_max * (sigma + eps * dd) ** 2
    )
    return BoundChain(rho, sigma_y, sigma_eta, delta, delta_out, delta_g, delta_y)


def chain_theorem2(inputs: BoundInputs) -> BoundChain:
    """Classical bound chain; no filter state, unit dither gain."""
    if inputs.variant != "classical":
        raise ValueError("chain_theorem2 applies to the classical variant")
    rho = _rho_bars(inputs)
    rho1, rho2, rho3, rho4 = rho
    delay_free = inputs.delay_regime == "delay_free"
    D = 0 if delay_free else inputs.d_max
    eps = inputs.epsilon_star
    seps = math.sqrt(eps)
    k = inputs.k
    sigma = inputs.sigma
    u = inputs.uncertainty
    a = inputs.amplitudes
    root_a2 = math.sqrt(float(np.sum(a**2)))
    root_inv_a2 = math.sqrt(float(np.sum(a**-2.0)))

    sigma_y = (u.h_max / 2.0) * (sigma + root_a2) ** 2
    delta = 2.0 * k * (sigma_y + u.q0 + u.delta_q) * root_inv_a2

    if delay_free:
        delta_out = 0.0
    else:
        shrink = (1.0 - seps) * D
        if shrink <= 0.0:
            raise ChainUndefinedError("period_margin", shrink)
        delta_out = (
            2.0 * k * D * u.h_max * root_inv_a2 * (sigma + root_a2)
            * (seps * delta + (2.0 * math.pi * root_a2 / shrink) * (math.pi * seps / shrink + 1.0))
        )

    delta_g = rho1 * sigma + rho2 * (u.q0 + u.delta_q) + rho3 + rho4 * sigma**2 * u.h_max

    dd = delta + seps * delta_out
    delta_y = (
        k * u.h_max * delta_g
        + rho1 * dd
        + 2.0 * rho4 * sigma * u.h_max * dd
        + delta_out
        + eps * rho4 * u.h_max * dd**2
    )
    return BoundChain(rho, sigma_y, 0.0, delta, delta_out, delta_g, delta_y)


def decay_conditions_direct(eps: float, lam: float, k: float, h: float, omega_h: float) -> bool:
    """Decay-ordering form of the step-size condition: the averaged loop and the
    filter must contract strictly faster than the dither envelope."""
    lbar = abs(1.0 - eps * lam)
    return lbar > abs(1.0 - eps * k * h) and lbar**2 > abs(1.0 - eps * omega_h)


def feasible_theorem1(inputs: BoundInputs) -> FeasibilityResult:
    """Unbiased feasibility predicate at (eps*, sigma); strict inequalities."""
    if inputs.variant != "unbiased":
        raise ValueError("feasible_theorem1 applies to the unbiased variant")
    eps = inputs.epsilon_star
    u = inputs.uncertainty
    lam, k, w_h = inputs.lam, inputs.k, inputs.omega_h
    margins: dict[str, float] = {}

    cond_b = 2.0 - eps * max(lam + k * u.h_min, w_h + 2.0 * lam - eps * lam**2)
    margins["step_size"] = cond_b

    delay_free = inputs.delay_regime == "delay_free"
    if not delay_free:
        floor_inv = int(math.floor(1.0 / math.sqrt(eps) + 1e-9))
        cond_a = inputs.n * inputs.d_max * floor_inv - (2 * inputs.n + 1)
        margins["period_floor"] = float(cond_a)
        if cond_a < 0:
            return FeasibilityResult(False, margins, "period_floor")
    if cond_b <= 0.0:
        return FeasibilityResult(False, margins, "step_size")

    try:
        chain = chain_theorem1(inputs)
    except ChainUndefinedError as exc:
        margins[exc.name] = exc.value
        return FeasibilityResult(False, margins, f"chain undefined: {exc.name}")

    lbar = abs(1.0 - eps * lam)
    mu = abs(1.0 - eps * k * u.h_min)
    gap = _gap_loop(eps, lam, k * u.h_min)
    if gap <= 0.0:
        margins["decay_gap"] = gap
        return FeasibilityResult(False, margins, "chain undefined: decay_gap", chain)

    seps = math.sqrt(eps)
    if delay_free:
        lhs = u.sigma0 + 2.0 * eps * chain.delta_g + eps**2 * chain.delta_y / gap
    else:
        D = inputs.d_max
        lhs = (
            (u.sigma0 + seps * chain.delta_g * lbar**D) * mu ** (-D)
            + seps * chain.delta_g
            + seps**3 * chain.delta_y / gap
        )
    margins["radius"] = inputs.sigma - lhs
    ok = margins["radius"] > 0.0
    return FeasibilityResult(ok, margins, None if ok else "radius", chain)


def feasible_theorem2(inputs: BoundInputs) -> FeasibilityResult:
    """Classical feasibility predicate at (eps*, sigma)."""
    if inputs.variant != "classical":
        raise ValueError("feasible_theorem2 applies to the classical variant")
    eps = inputs.epsilon_star
    u = inputs.uncertainty
    k = inputs.k
    margins: dict[str, float] = {}

    cond_b = 2.0 - eps * k * u.h_min
    margins["step_size"] = cond_b

    delay_free = inputs.delay_regime == "delay_free"
    if not delay_free:
        floor_inv = int(math.floor(1.0 / math.sqrt(eps) + 1e-9))
        cond_a = inputs.n * inputs.d_max * floor_inv - (2 * inputs.n + 1)
        margins["period_floor"] = float(cond_a)
        if cond_a < 0:
            return FeasibilityResult(False, margins, "period_floor")
    if cond_b <= 0.0:
        return FeasibilityResult(False, margins, "step_size")

    try:
        chain = chain_theorem2(inputs)
    except ChainUndefinedError as exc:
        margins[exc.name] = exc.value
        return FeasibilityResult(False, margins, f"chain undefined: {exc.name}")

    mu = abs(1.0 - eps * k * u.h_min)
    gap = _gap_unit(eps, k * u.h_min)
    # with delta_y exactly zero (k = 0) the contraction term vanishes for any
    # positive gap; take that limit rather than reporting 0/0 as undefined
    if gap <= 0.0 and chain.delta_y != 0.0:
        margins["decay_gap"] = gap
        return FeasibilityResult(False, margins, "chain undefined: decay_gap", chain)
    tail_term = 0.0 if chain.delta_y == 0.0 else chain.delta_y / gap

    seps = math.sqrt(eps)
    if delay_free:
        lhs = u.sigma0 + 2.0 * eps * chain.delta_g + eps**2 * tail_term
    else:
        D = inputs.d_max
        lhs = (u.sigma0 + seps * chain.delta_g) * mu ** (-D) + seps * chain.delta_g + seps**3 * tail_term
    margins["radius"] = inputs.sigma - lhs
    ok = margins["radius"] > 0.0
    return FeasibilityResult(ok, margins, None if ok else "radius", chain)


def ultimate_bound_radius(inputs: BoundInputs, chain: BoundChain) -> float:
    """Radius of the residual set the classical error is attracted to.

    Scales as sqrt(eps) in the delayed regime and as eps delay-free.
    """
    if inputs.variant != "classical":
        raise ValueError("the residual-set radius applies to the classical variant")
    eps = inputs.epsilon_star
    gap = _gap_unit(eps, inputs.k * inputs.uncertainty.h_min)
    if gap <= 0.0 and chain.delta_y != 0.0:
        raise ChainUndefinedError("decay_gap", gap)
    core = chain.delta_g + (0.0 if chain.delta_y == 0.0 else eps * chain.delta_y / gap)
    if inputs.delay_regime == "delay_free":
        return eps * core
    return math.sqrt(eps) * core


def region_for_local_map(sigma1: float, alpha0: float, amplitudes) -> float:
    """Certified radius for a locally quadratic map: shrink sigma1 by the dither extent."""
    a = np.asarray(amplitudes, dtype=float)
    out = sigma1 - alpha0 * math.sqrt(float(np.sum(a**2)))
    if out <= 0.0:
        raise ValueError("empty region: dither extent exceeds the quadratic neighborhood")
    return out
