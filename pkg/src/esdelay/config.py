"""Experiment configuration: one JSON file describes one experiment.

Loading is fail-closed: unknown keys are rejected and every violation is
reported with its field path. Parsing a serialized spec reproduces the spec
exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from esdelay.bounds import BoundInputs
from esdelay.dither import DitherConfig, GainSchedule
from esdelay.estimator import EsRunConfig
from esdelay.feasibility import ConvergenceCriterion, RunTemplate, SearchConfig, SigmaGrid
from esdelay.plant import DelayModel, QuadraticMap, UncertaintyBounds

__all__ = ["ConfigError", "RunSpec", "load_spec", "section4_spec"]


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


def _check_keys(d: dict, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = set(required) | set(optional)
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key in required:
        if key not in d:
            raise ConfigError(f"{path}.{key}: missing required key")


def _number(d: dict, key: str, path: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    return float(v)


def _integer(d: dict, key: str, path: str) -> int:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer")
    return v


def _vector(d: dict, key: str, path: str) -> np.ndarray:
    v = d[key]
    if not isinstance(v, list) or not v or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ConfigError(f"{path}.{key}: expected a nonempty array of numbers")
    return np.asarray(v, dtype=float)


@dataclass
class RunSpec:
    """Typed form of one experiment file."""

    qmap: QuadraticMap
    uncertainty: UncertaintyBounds
    delay: DelayModel
    amplitudes: np.ndarray
    epsilon: float
    k: float
    lam: float
    omega_h: float
    alpha0: float
    variant: str
    horizon: int
    theta0: np.ndarray
    seed: int | None
    decimation: int | None
    search: SearchConfig

    def to_dict(self) -> dict:
        delay: dict = {"variant": self.delay.variant, "d_max": self.delay.d_max}
        if self.delay.variant == "constant":
            delay["value"] = self.delay.value
        if self.delay.variant == "uniform":
            delay["seed"] = self.delay.seed
        if self.delay.variant == "sequence":
            delay["values"] = list(self.delay.values)
        crit = self.search.criterion
        search = {
            "sigma_grid": (
                None
                if self.search.sigma_grid is None
                else {"min": self.search.sigma_grid.min, "max": self.search.sigma_grid.max, "steps": self.search.sigma_grid.steps}
            ),
            "epsilon_bracket": {"lo": self.search.epsilon_bracket[0], "hi": self.search.epsilon_bracket[1]},
            "bisection_tol": self.search.bisection_tol,
            "sim_horizon": self.search.sim_horizon,
            "sim_seeds": list(self.search.sim_seeds),
            "scan_per_decade": self.search.scan_per_decade,
            "criterion": (
                None
                if crit is None
                else {
                    "mode": crit.mode,
                    "tail_fraction": crit.tail_fraction,
                    "fail_ratio": crit.fail_ratio,
                    "overshoot_factor": crit.overshoot_factor,
                    "envelope_slack": crit.envelope_slack,
                    "envelope_windows": crit.envelope_windows,
                    "radius_slack": crit.radius_slack,
                    "sigma_cap": crit.sigma_cap,
                }
            ),
        }
        search = {k: v for k, v in search.items() if v is not None}
        out = {
            "map": {
                "theta_star": list(self.qmap.theta_star),
                "q_star": self.qmap.q_star,
                "hessian": [list(row) for row in self.qmap.hessian],
            },
            "uncertainty": {
                "h_min": self.uncertainty.h_min,
                "h_max": self.uncertainty.h_max,
                "sigma0": self.uncertainty.sigma0,
                "q0": self.uncertainty.q0,
                "delta_q": self.uncertainty.delta_q,
            },
            "delay": delay,
            "dither": {"amplitudes": list(self.amplitudes), "epsilon": self.epsilon},
            "gains": {"k": self.k, "lambda": self.lam, "omega_h": self.omega_h, "alpha0": self.alpha0},
            "run": {
                "variant": self.variant,
                "horizon": self.horizon,
                "theta0": list(self.theta0),
            },
            "search": search,
        }
        if self.seed is not None:
            out["run"]["seed"] = self.seed
        if self.decimation is not None:
            out["run"]["decimation"] = self.decimation
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @staticmethod
    def from_dict(data: dict) -> "RunSpec":
        _check_keys(data, "config", ("map", "uncertainty", "delay", "dither", "gains", "run"), ("search",))

        m = data["map"]
        _check_keys(m, "map", ("theta_star", "q_star", "hessian"))
        theta_star = _vector(m, "theta_star", "map")
        n = theta_star.shape[0]
        h = m["hessian"]
        if (
            not isinstance(h, list)
            or len(h) != n
            or any(not isinstance(r, list) or len(r) != n for r in h)
        ):
            raise ConfigError(f"map.hessian: expected an {n}x{n} array")
        try:
            qmap = QuadraticMap(theta_star, _number(m, "q_star", "map"), np.asarray(h, dtype=float))
        except ValueError as exc:
            raise ConfigError(f"map.hessian: {exc}") from None

        u = data["uncertainty"]
        _check_keys(u, "uncertainty", ("h_min", "h_max", "sigma0", "q0", "delta_q"))
        try:
            unc = UncertaintyBounds(
                _number(u, "h_min", "uncertainty"),
                _number(u, "h_max", "uncertainty"),
                _number(u, "sigma0", "uncertainty"),
                _number(u, "q0", "uncertainty"),
                _number(u, "delta_q", "uncertainty"),
            )
        except ValueError as exc:
            raise ConfigError(f"uncertainty: {exc}") from None

        r = data["run"]
        _check_keys(r, "run", ("variant", "horizon", "theta0"), ("seed", "decimation"))
        variant = r["variant"]
        if variant not in ("unbiased", "classical"):
            raise ConfigError("run.variant: must be 'unbiased' or 'classical'")
        horizon = _integer(r, "horizon", "run")
        if horizon < 0:
            raise ConfigError("run.horizon: must be nonnegative")
        theta0 = _vector(r, "theta0", "run")
        if theta0.shape[0] != n:
            raise ConfigError(f"run.theta0: expected length {n}")
        seed = _integer(r, "seed", "run") if "seed" in r else None
        decimation = _integer(r, "decimation", "run") if "decimation" in r else None
        if decimation is not None and decimation < 1:
            raise ConfigError("run.decimation: must be >= 1")

        d = data["delay"]
        _check_keys(d, "delay", ("variant", "d_max"), ("value", "seed", "values"))
        dvar = d["variant"]
        d_max = _integer(d, "d_max", "delay")
        try:
            if dvar == "zero":
                if d_max != 0:
                    raise ConfigError("delay.d_max: must be 0 for the zero variant")
                delay = DelayModel.zero()
            elif dvar == "constant":
                delay = DelayModel("constant", d_max, value=_integer(d, "value", "delay"))
            elif dvar == "uniform":
                dseed = _integer(d, "seed", "delay") if "seed" in d else seed
                if dseed is None:
                    raise ConfigError("delay.seed: stochastic delay requires a seed (delay.seed or run.seed)")
                delay = DelayModel.uniform(d_max, dseed)
            elif dvar == "sequence":
                vals = d.get("values")
                if not isinstance(vals, list):
                    raise ConfigError("delay.values: expected an array of integers")
                delay = DelayModel.sequence([int(v) for v in vals], d_max)
            else:
                raise ConfigError("delay.variant: must be zero|constant|uniform|sequence")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"delay: {exc}") from None

        di = data["dither"]
        _check_keys(di, "dither", ("amplitudes", "epsilon"))
        amps = _vector(di, "amplitudes", "dither")
        if amps.shape[0] != n:
            raise ConfigError(f"dither.amplitudes: expected length {n}")
        epsilon = _number(di, "epsilon", "dither")
        if epsilon <= 0:
            raise ConfigError("dither.epsilon: must be positive")

        g = data["gains"]
        _check_keys(g, "gains", ("k", "lambda", "omega_h", "alpha0"))
        k = _number(g, "k", "gains")
        lam = _number(g, "lambda", "gains")
        omega_h = _number(g, "omega_h", "gains")
        alpha0 = _number(g, "alpha0", "gains")
        if k <= 0:
            raise ConfigError("gains.k: must be positive")
        if alpha0 <= 0:
            raise ConfigError("gains.alpha0: must be positive")

        search = _parse_search(data.get("search"), unc.sigma0)

        return RunSpec(
            qmap=qmap,
            uncertainty=unc,
            delay=delay,
            amplitudes=amps,
            epsilon=epsilon,
            k=k,
            lam=lam,
            omega_h=omega_h,
            alpha0=alpha0,
            variant=variant,
            horizon=horizon,
            theta0=theta0,
            seed=seed,
            decimation=decimation,
            search=search,
        )

    # --- derived objects ---

    def run_config(self, err_cap: float = math.inf) -> EsRunConfig:
        dither = DitherConfig.make(self.qmap.dim, self.amplitudes, self.epsilon, self.delay.d_max)
        gains = GainSchedule(self.alpha0, self.lam, self.epsilon)
        return EsRunConfig(
            qmap=self.qmap,
            delay=self.delay,
            dither=dither,
            gains=gains,
            k=self.k,
            omega_h=self.omega_h,
            variant=self.variant,
            theta0=self.theta0,
            horizon=self.horizon,
            q0=self.uncertainty.q0,
            decimation=self.decimation,
            err_cap=err_cap,
        )

    def bound_inputs(self, sigma: float | None = None, epsilon_star: float | None = None) -> BoundInputs:
        regime = "delay_free" if self.delay.d_max == 0 else "delayed"
        if sigma is None:
            grid = self.search.sigma_grid or SigmaGrid.default(self.uncertainty.sigma0)
            sigma = float(grid.max)
        return BoundInputs(
            n=self.qmap.dim,
            d_max=self.delay.d_max,
            amplitudes=self.amplitudes,
            k=self.k,
            lam=self.lam,
            omega_h=self.omega_h,
            alpha0=self.alpha0,
            epsilon_star=self.epsilon if epsilon_star is None else epsilon_star,
            sigma=sigma,
            uncertainty=self.uncertainty,
            variant=self.variant,
            delay_regime=regime,
        )

    def sim_template(self, variant: str | None = None, d_max: int | None = None) -> RunTemplate:
        return RunTemplate(
            qmap=self.qmap,
            uncertainty=self.uncertainty,
            d_max=self.delay.d_max if d_max is None else d_max,
            amplitudes=self.amplitudes,
            k=self.k,
            lam=self.lam,
            omega_h=self.omega_h,
            alpha0=self.alpha0,
            theta0=self.theta0,
            q0=self.uncertainty.q0,
            variant=self.variant if variant is None else variant,
        )

    def with_seed(self, seed: int) -> "RunSpec":
        delay = self.delay
        if delay.variant == "uniform":
            delay = DelayModel.uniform(delay.d_max, seed)
        return RunSpec(
            self.qmap, self.uncertainty, delay, self.amplitudes, self.epsilon,
            self.k, self.lam, self.omega_h, self.alpha0, self.variant,
            self.horizon, self.theta0, seed, self.decimation, self.search,
        )


def _parse_search(data, sigma0: float) -> SearchConfig:
    if data is None:
        return SearchConfig()
    _check_keys(
        data,
        "search",
        (),
        ("sigma_grid", "epsilon_bracket", "bisection_tol", "sim_horizon", "sim_seeds", "criterion", "scan_per_decade"),
    )
    kwargs: dict = {}
    if "sigma_grid" in data:
        sg = data["sigma_grid"]
        _check_keys(sg, "search.sigma_grid", ("min", "max", "steps"))
        kwargs["sigma_grid"] = SigmaGrid(
            _number(sg, "min", "search.sigma_grid"),
            _number(sg, "max", "search.sigma_grid"),
            _integer(sg, "steps", "search.sigma_grid"),
        )
    if "epsilon_bracket" in data:
        eb = data["epsilon_bracket"]
        _check_keys(eb, "search.epsilon_bracket", ("lo", "hi"))
        kwargs["epsilon_bracket"] = (_number(eb, "lo", "search.epsilon_bracket"), _number(eb, "hi", "search.epsilon_bracket"))
    if "bisection_tol" in data:
        kwargs["bisection_tol"] = _number(data, "bisection_tol", "search")
    if "sim_horizon" in data:
        kwargs["sim_horizon"] = _integer(data, "sim_horizon", "search")
    if "sim_seeds" in data:
        seeds = data["sim_seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("search.sim_seeds: expected an array of integers")
        kwargs["sim_seeds"] = tuple(seeds)
    if "scan_per_decade" in data:
        kwargs["scan_per_decade"] = _integer(data, "scan_per_decade", "search")
    if "criterion" in data:
        c = data["criterion"]
        _check_keys(
            c,
            "search.criterion",
            ("mode",),
            ("tail_fraction", "fail_ratio", "overshoot_factor", "envelope_slack", "envelope_windows", "radius_slack", "sigma_cap"),
        )
        ckw: dict = {"mode": c["mode"]}
        for name in ("tail_fraction", "fail_ratio", "overshoot_factor", "envelope_slack", "radius_slack", "sigma_cap"):
            if name in c and c[name] is not None:
                ckw[name] = _number(c, name, "search.criterion")
        if "envelope_windows" in c:
            ckw["envelope_windows"] = _integer(c, "envelope_windows", "search.criterion")
        try:
            kwargs["criterion"] = ConvergenceCriterion(**ckw)
        except ValueError as exc:
            raise ConfigError(f"search.criterion: {exc}") from None
    try:
        return SearchConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"search: {exc}") from None


def load_spec(path: str) -> RunSpec:
    """Read and validate an experiment file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunSpec.from_dict(data)


# --- canonical numerical example (3-dimensional map) ---

_EX_THETA_STAR = (2.0, 4.0, 1.0)
_EX_HESSIAN = ((100.0, 30.0, 5.0), (30.0, 20.0, 5.0), (5.0, 5.0, 50.0))
_EX_THETA0 = (1.3, 3.5, 0.5)


def section4_spec(
    variant: str = "unbiased",
    d_max: int = 5,
    epsilon: float = 0.3e-4,
    horizon: int = 2_000_000,
    seed: int = 42,
    decimation: int | None = None,
) -> RunSpec:
    """The worked 3-D example: uncertain Hessian in [9.5, 111], sigma0 = 1.

    Amplitudes 0.1, k = lambda = 0.005, omega_h = 0.015, alpha0 = 1. The
    delay is uniform over {0..d_max} (zero when d_max = 0).
    """
    if d_max == 0:
        delay = DelayModel.zero()
    else:
        delay = DelayModel.uniform(d_max, seed)
    return RunSpec(
        qmap=QuadraticMap(np.array(_EX_THETA_STAR), 0.0, np.array(_EX_HESSIAN)),
        uncertainty=UncertaintyBounds(9.5, 111.0, 1.0, 0.0, 1.0),
        delay=delay,
        amplitudes=np.array([0.1, 0.1, 0.1]),
        epsilon=epsilon,
        k=0.005,
        lam=0.005,
        omega_h=0.015,
        alpha0=1.0,
        variant=variant,
        horizon=horizon,
        theta0=np.array(_EX_THETA0),
        seed=seed,
        decimation=decimation,
        search=SearchConfig(),
    )
