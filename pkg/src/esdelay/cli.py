"""Command-line surface: simulate | bounds | search | reproduce.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (e.g. the
dither gain hit its precision floor; partial CSV is still flushed), 4 bound
chain undefined (a named denominator is nonpositive).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from esdelay.bounds import (
    BoundInputs,
    ChainUndefinedError,
    chain_theorem1,
    chain_theorem2,
    feasible_theorem1,
    feasible_theorem2,
)
from esdelay.config import ConfigError, RunSpec, load_spec, section4_spec
from esdelay.csvio import write_chain_csv, write_trajectory_csv
from esdelay.dither import DitherConfig, averaging_sums
from esdelay.estimator import run
from esdelay.feasibility import (
    ConvergenceCriterion,
    FeasibilityReport,
    SigmaGrid,
    max_epsilon_simulation,
    max_epsilon_theorem,
    table_reproduce,
)
from esdelay.svgplot import write_line_plot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_BOUNDS = 4

# Identity-check tuples: (n, d_max, epsilon, hessian)
_H3 = np.array([[100.0, 30.0, 5.0], [30.0, 20.0, 5.0], [5.0, 5.0, 50.0]])
_IDENTITY_CASES = (
    (1, 0, 1e-2, np.array([[2.0]])),
    (3, 0, 1e-2, _H3),
    (3, 5, 1e-4, _H3),
    (2, 3, 4e-4, np.array([[3.0, 0.5], [0.5, 2.0]])),
)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _load(args) -> RunSpec:
    spec = load_spec(args.config)
    if args.seed_override is not None:
        spec = spec.with_seed(args.seed_override)
    return spec


def cmd_simulate(args) -> int:
    try:
        spec = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    traj = run(spec.run_config())
    csv_path = os.path.join(args.out, "trajectory.csv")
    write_trajectory_csv(traj, csv_path)
    _say(args, f"wrote {csv_path} ({traj.j.shape[0]} rows, status {traj.status})")
    if args.plot:
        svg_path = os.path.join(args.out, "plot.svg")
        write_line_plot(
            svg_path,
            [(f"{spec.variant}, d_max={spec.delay.d_max}, eps={spec.epsilon:g}", traj.j, traj.err)],
            title="estimate error",
            ylabel="|theta_hat - theta*|",
        )
        _say(args, f"wrote {svg_path}")
    if traj.status != "ok":
        print(f"runtime: run ended early with status {traj.status} at step {traj.steps}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_bounds(args) -> int:
    try:
        spec = _load(args)
        inputs = spec.bound_inputs(sigma=args.sigma, epsilon_star=args.epsilon_star)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        chain = chain_theorem1(inputs) if inputs.variant == "unbiased" else chain_theorem2(inputs)
    except ChainUndefinedError as exc:
        print(f"bounds error: {exc}", file=sys.stderr)
        return EXIT_BOUNDS
    feas = feasible_theorem1(inputs) if inputs.variant == "unbiased" else feasible_theorem2(inputs)
    values = chain.as_dict()
    _say(args, f"variant={inputs.variant} regime={inputs.delay_regime} "
               f"epsilon*={inputs.epsilon_star:g} sigma={inputs.sigma:g}")
    _say(args, "evaluation order: sigma_y -> sigma_eta -> delta -> delta_out -> delta_g -> delta_y")
    for key, val in values.items():
        _say(args, f"  {key:12s} = {val:.10g}")
    _say(args, f"feasible: {feas.feasible}" + ("" if feas.feasible else f" (binding: {feas.reason})"))
    for name, margin in feas.margins.items():
        _say(args, f"  margin {name:14s} = {margin:.6g}")
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "bounds.csv")
    write_chain_csv(values, out_path)
    _say(args, f"wrote {out_path}")
    return EXIT_OK


def _default_criterion(spec: RunSpec, variant: str) -> ConvergenceCriterion:
    if spec.search.criterion is not None:
        return spec.search.criterion
    sigma_cap = None if variant == "unbiased" else 1.6 * spec.uncertainty.sigma0
    return ConvergenceCriterion.for_variant(variant, sigma_cap=sigma_cap)


def cmd_search(args) -> int:
    try:
        spec = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    variant = args.variant or spec.variant
    report = FeasibilityReport()
    if args.method == "theorem":
        template = _theorem_template(spec, variant, spec.delay.d_max)
        report.rows.append(max_epsilon_theorem(template, spec.search))
    else:
        from dataclasses import replace

        search = replace(spec.search, criterion=_default_criterion(spec, variant))
        report.rows.append(max_epsilon_simulation(spec.sim_template(variant=variant), search))
    _say(args, report.to_text())
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "report.csv")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_csv_text())
    _say(args, f"wrote {out_path}")
    row = report.rows[0]
    if not row.feasible:
        print(f"search: {row.note}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _theorem_template(spec: RunSpec, variant: str, d_max: int) -> BoundInputs:
    regime = "delay_free" if d_max == 0 else "delayed"
    sigma0 = spec.uncertainty.sigma0
    return BoundInputs(
        n=spec.qmap.dim,
        d_max=d_max,
        amplitudes=spec.amplitudes,
        k=spec.k,
        lam=spec.lam,
        omega_h=spec.omega_h,
        alpha0=spec.alpha0,
        epsilon_star=1e-9,
        sigma=2.0 * sigma0,
        uncertainty=spec.uncertainty,
        variant=variant,
        delay_regime=regime,
    )


def _run_identities(args) -> int:
    worst = 0.0
    for n, d_max, eps, hess in _IDENTITY_CASES:
        cfg = DitherConfig.make(n, np.full(n, 0.1), eps, d_max)
        for t in (0, 13):
            m0, m1, m2 = averaging_sums(cfg, hess, t)
            r = max(
                float(np.abs(m0).max()),
                float(np.abs(m1 - np.eye(n)).max()),
                float(np.abs(m2).max()),
            )
            worst = max(worst, r)
            _say(args, f"n={n} d_max={d_max} eps={eps:g} T={cfg.period} t={t}: max residual {r:.3e}")
    _say(args, f"largest residual: {worst:.3e} (tolerance 1e-9)")
    return EXIT_OK if worst <= 1e-9 else EXIT_RUNTIME


def _fig_curves(variant: str, cases, horizon: int, seed: int):
    curves = []
    for d_max, eps in cases:
        spec = section4_spec(variant=variant, d_max=d_max, epsilon=eps, horizon=horizon, seed=seed)
        traj = run(spec.run_config())
        curves.append((f"d_max={d_max}, eps={eps:g}", traj.j, np.maximum(traj.err, 1e-300), traj))
    return curves


def cmd_reproduce(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.target == "identities":
        return _run_identities(args)

    if args.target in ("fig2", "fig3"):
        variant = "unbiased" if args.target == "fig2" else "classical"
        cases = ((0, 0.7e-3), (5, 0.3e-4)) if args.target == "fig2" else ((0, 0.2e-2), (5, 0.2e-3))
        curves = _fig_curves(variant, cases, horizon=2_000_000, seed=42)
        svg_path = os.path.join(args.out, f"{args.target}.svg")
        write_line_plot(
            svg_path,
            [(label, x, y) for label, x, y, _ in curves],
            title=f"{variant} ES under time-varying delay",
            ylabel="|theta_hat - theta*|",
        )
        for label, _, _, traj in curves:
            name = label.replace(", ", "_").replace("=", "")
            write_trajectory_csv(traj, os.path.join(args.out, f"{args.target}_{name}.csv"))
        _say(args, f"wrote {svg_path}")
        return EXIT_OK

    # table1 / table2
    variant = "unbiased" if args.target == "table1" else "classical"
    spec = section4_spec(variant=variant)
    sigma0 = spec.uncertainty.sigma0
    from dataclasses import replace

    search = replace(
        spec.search,
        sigma_grid=SigmaGrid.default(sigma0),
        criterion=_default_criterion(spec, variant),
    )
    report = table_reproduce(
        lambda d: _theorem_template(spec, variant, d),
        lambda d: spec.sim_template(variant=variant, d_max=d),
        search,
        fast=args.fast,
    )
    _say(args, report.to_text())
    csv_path = os.path.join(args.out, f"{args.target}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_csv_text())
    txt_path = os.path.join(args.out, f"{args.target}.txt")
    with open(txt_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    _say(args, f"wrote {csv_path} and {txt_path}")
    if not all(r.feasible for r in report.rows):
        return EXIT_RUNTIME
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, needs_config: bool) -> None:
    if needs_config:
        p.add_argument("--config", required=True, help="experiment file (JSON)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed-override", type=int, default=None, help="replace the configured delay seed")
    p.add_argument("--plot", action="store_true", help="emit an SVG plot where applicable")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="esdelay", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configured experiment and write trajectory.csv")
    _add_common(p, needs_config=True)

    p = sub.add_parser("bounds", help="evaluate the bound chain for the configured parameters")
    _add_common(p, needs_config=True)
    p.add_argument("--sigma", type=float, default=None, help="stability margin to evaluate at")
    p.add_argument("--epsilon-star", type=float, default=None, help="step parameter to evaluate at")

    p = sub.add_parser("search", help="maximize the admissible step parameter")
    _add_common(p, needs_config=True)
    p.add_argument("--method", choices=("theorem", "simulation"), required=True)
    p.add_argument("--variant", choices=("unbiased", "classical"), default=None)

    p = sub.add_parser("reproduce", help="one-shot reproduction of a canonical artifact")
    _add_common(p, needs_config=False)
    p.add_argument("--target", choices=("table1", "table2", "fig2", "fig3", "identities"), required=True)
    p.add_argument("--fast", action="store_true", help="skip the d_max=50 simulation rows")

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "bounds": cmd_bounds,
        "search": cmd_search,
        "reproduce": cmd_reproduce,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
