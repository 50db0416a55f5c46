"""Searches for the maximal admissible step parameter.

Two routes: the theorem route maximizes epsilon* under the closed-form
feasibility predicate with the stability margin sigma tuned over a grid;
the simulation route bisects on the largest epsilon for which seeded runs
satisfy an explicit convergence criterion. Both emit a maximality
certificate (the reported value passes, slightly larger values fail).

The convergence criterion is an engineering construct: the acceptance rule
behind published simulation-side maxima is generally unstated, so the
defaults here are documented choices, not derived quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from esdelay.bounds import (
    BoundInputs,
    ChainUndefinedError,
    chain_theorem2,
    feasible_theorem1,
    feasible_theorem2,
    ultimate_bound_radius,
)
from esdelay.dither import DitherConfig, GainSchedule
from esdelay.estimator import EsRunConfig, Trajectory, run
from esdelay.plant import DelayModel, QuadraticMap, UncertaintyBounds

__all__ = [
    "ConvergenceCriterion",
    "SearchConfig",
    "RunTemplate",
    "ReportRow",
    "FeasibilityReport",
    "max_epsilon_theorem",
    "max_epsilon_simulation",
    "table_reproduce",
    "SECTION4_TABLE_D_MAX",
]

SECTION4_TABLE_D_MAX = (0, 5, 50)


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Pass rule for one simulated run.

    Shared: the run must finish (no divergence, no cap hit), the estimate
    error may not overshoot its frozen-window value by more than
    overshoot_factor, and the tail (trailing tail_fraction of the horizon)
    must sit below fail_ratio times the frozen-window error.

    Unbiased mode additionally requires the coarse window-maxima envelope to
    be nonincreasing (within envelope_slack) after its peak. Classical mode
    additionally requires the error to stay below sigma_cap throughout and
    the tail to lie inside radius_slack times the certified residual-set
    radius evaluated at the probed epsilon.
    """

    mode: str
    tail_fraction: float = 0.1
    fail_ratio: float | None = None
    overshoot_factor: float = 1.3
    envelope_slack: float = 1.25
    envelope_windows: int = 10
    radius_slack: float = 2.0
    sigma_cap: float | None = None

    def __post_init__(self):
        if self.mode not in ("unbiased_exponential", "classical_practical"):
            raise ValueError(f"unknown criterion mode {self.mode!r}")
        for name in ("tail_fraction", "overshoot_factor", "envelope_slack", "radius_slack"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.fail_ratio is not None and self.fail_ratio <= 0:
            raise ValueError("fail_ratio must be positive")

    @property
    def effective_fail_ratio(self) -> float:
        if self.fail_ratio is not None:
            return self.fail_ratio
        return 1e-2 if self.mode == "unbiased_exponential" else 5e-3

    @staticmethod
    def for_variant(variant: str, sigma_cap: float | None = None) -> "ConvergenceCriterion":
        mode = "unbiased_exponential" if variant == "unbiased" else "classical_practical"
        return ConvergenceCriterion(mode, sigma_cap=sigma_cap)


@dataclass(frozen=True)
class SigmaGrid:
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sigma grid needs at least one point")
        if not (self.min < self.max) and self.steps > 1:
            raise ValueError("sigma grid needs min < max")

    def points(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.max])
        return np.linspace(self.min, self.max, self.steps)

    @staticmethod
    def default(sigma0: float, steps: int = 30) -> "SigmaGrid":
        # 30 points on (sigma0, 2*sigma0]
        return SigmaGrid(sigma0 * (1.0 + 1.0 / steps), 2.0 * sigma0, steps)


@dataclass(frozen=True)
class SearchConfig:
    sigma_grid: SigmaGrid | None = None
    epsilon_bracket: tuple[float, float] = (1e-16, 1e-1)
    bisection_tol: float = 0.05
    sim_horizon: int = 2_000_000
    sim_seeds: tuple[int, ...] = (42, 43, 44)
    criterion: ConvergenceCriterion | None = None
    scan_per_decade: int = 6
    max_bisect: int = 40

    def __post_init__(self):
        lo, hi = self.epsilon_bracket
        if not (0 < lo < hi):
            raise ValueError("epsilon bracket needs 0 < lo < hi")
        if not (0 < self.bisection_tol < 0.5):
            raise ValueError("bisection_tol must lie in (0, 0.5)")
        if not self.sim_seeds:
            raise ValueError("need at least one simulation seed")


@dataclass(frozen=True)
class RunTemplate:
    """Everything a simulated run needs except the probed epsilon."""

    qmap: QuadraticMap
    uncertainty: UncertaintyBounds
    d_max: int
    amplitudes: np.ndarray
    k: float
    lam: float
    omega_h: float
    alpha0: float
    theta0: np.ndarray
    q0: float
    variant: str

    def build(self, epsilon: float, seed: int, horizon: int, err_cap: float = math.inf) -> EsRunConfig:
        if self.d_max == 0:
            delay = DelayModel.zero()
        else:
            delay = DelayModel.uniform(self.d_max, seed)
        dither = DitherConfig.make(self.qmap.dim, self.amplitudes, epsilon, self.d_max)
        gains = GainSchedule(self.alpha0, self.lam, epsilon)
        return EsRunConfig(
            qmap=self.qmap,
            delay=delay,
            dither=dither,
            gains=gains,
            k=self.k,
            omega_h=self.omega_h,
            variant=self.variant,
            theta0=self.theta0,
            horizon=horizon,
            q0=self.q0,
            err_cap=err_cap,
            keep_tail=False,
        )

    def bound_inputs(self, epsilon: float, sigma: float) -> BoundInputs:
        regime = "delay_free" if self.d_max == 0 else "delayed"
        return BoundInputs(
            n=self.qmap.dim,
            d_max=self.d_max,
            amplitudes=self.amplitudes,
            k=self.k,
            lam=self.lam,
            omega_h=self.omega_h,
            alpha0=self.alpha0,
            epsilon_star=epsilon,
            sigma=sigma,
            uncertainty=self.uncertainty,
            variant=self.variant,
            delay_regime=regime,
        )


@dataclass
class ReportRow:
    variant: str
    d_max: int
    method: str
    sigma: float | None
    epsilon_star: float | None
    decay_rate: float | None
    feasible: bool
    margins: dict = field(default_factory=dict)
    chain: dict | None = None
    certificate: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class FeasibilityReport:
    rows: list[ReportRow] = field(default_factory=list)

    CSV_HEADER = "variant,d_max,sigma,epsilon_star,decay_rate,method"

    def to_csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            sigma = "" if r.sigma is None else f"{r.sigma:.17g}"
            eps = "" if r.epsilon_star is None else f"{r.epsilon_star:.17g}"
            rate = "" if r.decay_rate is None else f"{r.decay_rate:.17g}"
            lines.append(f"{r.variant},{r.d_max},{sigma},{eps},{rate},{r.method}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = ["variant", "d_max", "method", "sigma", "epsilon*", "decay rate", "note"]
        body = []
        for r in self.rows:
            body.append(
                [
                    r.variant,
                    str(r.d_max),
                    r.method,
                    "-" if r.sigma is None else f"{r.sigma:.4g}",
                    "-" if r.epsilon_star is None else f"{r.epsilon_star:.4g}",
                    "-" if r.decay_rate is None else f"{r.decay_rate:.10g}",
                    r.note,
                ]
            )
        widths = [max(len(c), *(len(row[i]) for row in body)) if body else len(c) for i, c in enumerate(cols)]
        out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        for row in body:
            out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        return "\n".join(out) + "\n"


def _decay_rate(variant: str, eps: float, lam: float, k: float, h_min: float) -> float:
    if variant == "unbiased":
        return 1.0 - eps * lam
    return 1.0 - eps * k * h_min


def _log_bisect_max(pred, lo: float, hi: float, tol: float, max_iter: int):
    """Largest passing value in [lo, hi], assuming pass-below/fail-above."""
    if pred(hi):
        return hi, True
    if not pred(lo):
        return None, False
    for _ in range(max_iter):
        if hi / lo - 1.0 <= tol:
            break
        mid = math.sqrt(lo * hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, False


def _certify(pred, eps_star: float, tol: float, rounds: int = 3):
    """Probe slightly larger values; returns (eps_star, certificate, monotone)."""
    for _ in range(rounds):
        probes = [eps_star * (1.0 + m * tol) for m in (1, 2, 3)]
        results = [bool(pred(p)) for p in probes]
        if not any(results):
            return eps_star, {"passes_at": eps_star, "fails_at": probes}, True
        # not monotone just above the bisection point: climb and retry
        eps_star = max(p for p, r in zip(probes, results) if r)
    probes = [eps_star * (1.0 + m * tol) for m in (1, 2, 3)]
    return eps_star, {"passes_at": eps_star, "fails_at": probes}, False


def max_epsilon_theorem(template: BoundInputs, search: SearchConfig) -> ReportRow:
    """Grid-tune sigma, bisect epsilon* against the variant's feasibility predicate.

    The epsilon*(sigma) profile is typically a flat plateau near its peak, so
    the top grid candidates are re-bisected at much finer tolerance before
    the argmax is taken; otherwise the reported sigma would jitter across the
    plateau at the level of the configured tolerance.
    """
    pred_fn = feasible_theorem1 if template.variant == "unbiased" else feasible_theorem2
    grid = search.sigma_grid or SigmaGrid.default(template.uncertainty.sigma0)
    lo, hi = search.epsilon_bracket

    def pred(eps: float, sigma: float) -> bool:
        return pred_fn(template.with_probe(eps, sigma)).feasible

    candidates: list[tuple[float, float]] = []  # (eps, sigma)
    last_result: dict = {}
    for sigma in grid.points():
        if sigma <= template.uncertainty.sigma0:
            continue
        eps_star, _ = _log_bisect_max(
            lambda e, s=float(sigma): pred(e, s), lo, hi, search.bisection_tol, search.max_bisect
        )
        if eps_star is None:
            res = pred_fn(template.with_probe(lo, float(sigma)))
            last_result = {"sigma": float(sigma), "margins": res.margins, "reason": res.reason}
            continue
        candidates.append((eps_star, float(sigma)))

    best: tuple[float, float] | None = None
    if candidates:
        candidates.sort(reverse=True)
        fine_tol = min(search.bisection_tol, 1e-4)
        for coarse_eps, sigma in candidates[:5]:
            eps_star, _ = _log_bisect_max(
                lambda e, s=sigma: pred(e, s), max(lo, coarse_eps / 4.0), hi, fine_tol, 80
            )
            if eps_star is not None and (best is None or eps_star > best[0]):
                best = (eps_star, sigma)

    variant = template.variant
    if best is None:
        note = "infeasible in bracket"
        if last_result:
            worst = min(last_result["margins"], key=lambda kk: last_result["margins"][kk])
            note += f" (smallest margin: {worst})"
        return ReportRow(variant, template.d_max, "theorem", None, None, None, False, last_result.get("margins", {}), None, {}, note)

    eps_star, sigma = best

    def pred_best(eps: float) -> bool:
        return pred_fn(template.with_probe(eps, sigma)).feasible

    eps_star, cert, monotone = _certify(pred_best, eps_star, search.bisection_tol)
    if not monotone:
        # fall back to an exhaustive scan when the predicate is not monotone
        pts = np.logspace(math.log10(lo), math.log10(hi), 200)
        feas = [p for p in pts if pred_best(p)]
        if feas:
            eps_star = max(feas)
        eps_star, cert, _ = _certify(pred_best, eps_star, search.bisection_tol, rounds=1)

    final = pred_fn(template.with_probe(eps_star, sigma))
    u = template.uncertainty
    return ReportRow(
        variant,
        template.d_max,
        "theorem",
        sigma,
        eps_star,
        _decay_rate(variant, eps_star, template.lam, template.k, u.h_min),
        True,
        final.margins,
        final.chain.as_dict() if final.chain is not None else None,
        cert,
        "",
    )


def _residual_radius(template: RunTemplate, eps: float, sigma_cap: float) -> float | None:
    """Certified residual-set radius at the probed epsilon, if computable."""
    if template.variant != "classical":
        return None
    try:
        inputs = template.bound_inputs(eps, sigma_cap)
        chain = chain_theorem2(inputs)
        return ultimate_bound_radius(inputs, chain)
    except (ChainUndefinedError, ValueError):
        return None


def evaluate_run(traj: Trajectory, crit: ConvergenceCriterion, radius: float | None) -> tuple[bool, str]:
    """Apply the convergence criterion to one finished run."""
    if traj.status != "ok":
        return False, traj.status
    if not math.isfinite(traj.err_at_dm):
        return False, "horizon shorter than the delay bound"
    err0 = max(traj.err_at_dm, 1e-300)
    if traj.max_err > crit.overshoot_factor * err0:
        return False, "overshoot"
    if crit.sigma_cap is not None and traj.max_err >= crit.sigma_cap:
        return False, "exceeded sigma"
    tail = traj.tail_max_err(crit.tail_fraction)
    if tail >= crit.effective_fail_ratio * err0:
        return False, "tail above threshold"
    if crit.mode == "unbiased_exponential":
        coarse = traj.coarse_window_max(crit.envelope_windows)
        peak = int(np.argmax(coarse))
        floor = 1e-13 * err0
        for a, b in zip(coarse[peak:], coarse[peak + 1 :]):
            if b > max(crit.envelope_slack * a, floor):
                return False, "window envelope increased"
    else:
        if radius is not None and tail >= crit.radius_slack * radius:
            return False, "tail outside residual set"
    return True, "pass"


def max_epsilon_simulation(template: RunTemplate, search: SearchConfig) -> ReportRow:
    """Largest epsilon for which all seeded runs satisfy the criterion."""
    crit = search.criterion or ConvergenceCriterion.for_variant(
        template.variant,
        sigma_cap=None if template.variant == "unbiased" else 1.6 * template.uncertainty.sigma0,
    )
    err0 = float(np.linalg.norm(np.asarray(template.theta0, float) - template.qmap.theta_star))
    cap = crit.overshoot_factor * max(err0, 1e-300) * (1.0 + 1e-9)
    if crit.sigma_cap is not None:
        cap = min(cap, crit.sigma_cap)
    seeds = search.sim_seeds if template.d_max > 0 else search.sim_seeds[:1]

    fail_reasons: dict[float, str] = {}

    def pred(eps: float) -> bool:
        for seed in seeds:
            cfg = template.build(eps, seed, search.sim_horizon, err_cap=cap)
            traj = run(cfg)
            ok, why = evaluate_run(traj, crit, _residual_radius(template, eps, crit.sigma_cap or 1.6))
            if not ok:
                fail_reasons[eps] = why
                return False
        return True

    lo, hi = search.epsilon_bracket
    decades = math.log10(hi / lo)
    count = max(2, int(math.ceil(decades * search.scan_per_decade)) + 1)
    grid = np.logspace(math.log10(hi), math.log10(lo), count)

    first_pass = None
    fail_above = hi
    for eps in grid:
        if pred(float(eps)):
            first_pass = float(eps)
            break
        fail_above = float(eps)

    if first_pass is None:
        lowest = float(grid[-1])
        why = fail_reasons.get(lowest, "no pass in bracket")
        note = (
            "bracket too high: lowest probe fails by non-convergence"
            if why == "tail above threshold"
            else f"infeasible in bracket ({why})"
        )
        return ReportRow(template.variant, template.d_max, "simulation", None, None, None, False, {}, None, {}, note)

    if first_pass >= hi:
        eps_star = hi
        note = "feasible at bracket top"
        cert = {"passes_at": eps_star, "fails_at": []}
    else:
        eps_star, _ = _log_bisect_max(pred, first_pass, fail_above, search.bisection_tol, search.max_bisect)
        eps_star, cert, monotone = _certify(pred, eps_star, search.bisection_tol)
        note = "" if monotone else "pass region not monotone near the edge"

    u = template.uncertainty
    return ReportRow(
        template.variant,
        template.d_max,
        "simulation",
        None,
        eps_star,
        _decay_rate(template.variant, eps_star, template.lam, template.k, u.h_min),
        True,
        {},
        None,
        cert,
        note,
    )


DEFAULT_SIM_HORIZONS = {0: 2_000_000, 5: 2_000_000, 50: 120_000_000}


def table_reproduce(
    theorem_template_fn,
    sim_template_fn,
    search: SearchConfig,
    d_max_values=SECTION4_TABLE_D_MAX,
    fast: bool = False,
    sim_horizons: dict | None = None,
) -> FeasibilityReport:
    """Theorem and simulation rows over a set of delay bounds.

    theorem_template_fn(d_max) -> BoundInputs, sim_template_fn(d_max) ->
    RunTemplate. Simulation rows with d_max >= 50 are skipped when fast=True.
    """
    horizons = dict(DEFAULT_SIM_HORIZONS)
    if sim_horizons:
        horizons.update(sim_horizons)
    report = FeasibilityReport()
    for d in d_max_values:
        report.rows.append(max_epsilon_theorem(theorem_template_fn(d), search))
    for d in d_max_values:
        if fast and d >= 50:
            continue
        row_search = replace(search, sim_horizon=horizons.get(d, search.sim_horizon))
        report.rows.append(max_epsilon_simulation(sim_template_fn(d), row_search))
    return report
