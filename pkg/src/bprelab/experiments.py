"""Config-driven verification experiments.

Each ``exp_*`` function takes an :class:`ExperimentConfig` and returns a
:class:`ResultRecord` whose tables share one column layout
(n, x, t, estimate, stderr, ci_low, ci_high, ess, reference, verdict).
Budgets in the config are totals; they are split over replicas, each
replica drawing from the stream derived from (seed, replica index), and
partial results are merged in replica order.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import bpre, random_walk, rwre
from .env_laws import (
    BoundedUniform,
    TwoPoint,
    TwoSidedPareto,
    _left_open,
    law_from_spec,
    law_to_spec,
    positivity_index_rho,
    scaling_sequence_cn,
    tail_constants,
)
from .estimators import (
    McEstimate,
    effective_sample_size,
    ks_two_sample,
    moments_ci,
    pool_estimates,
    powerlaw_slope_fit,
    ratio_ci,
    self_normalized,
    wilson_ci,
)
from .streams import replica_rng, split_budget

log = logging.getLogger(__name__)

EXPERIMENTS = ("theorem1", "theorem3", "theorem5", "overshoot", "contrast", "rwre", "oracle")
CSV_COLUMNS = ("n", "x", "t", "estimate", "stderr", "ci_low", "ci_high", "ess", "reference", "verdict")

PARETO = {"type": "pareto2", "alpha": 1.5, "p": 0.5, "xmin": 1.0}
TWO_POINT_LOG2 = {"type": "twopoint", "a": math.log(2), "w": 0.5}

DEFAULTS: dict[str, dict] = {
    "theorem1": {
        "law": PARETO,
        "n_grid": [50, 100, 200, 400, 800],
        "budget": {"n_envs": 400_000, "n_walks": 1_000_000},
        "thresholds": {"slope_tol": 0.15, "ladder_ratio_tol": 0.1, "ladder_ratio_min_n": 200, "sigma": 3.0},
        "options": {"smooth_last_step": True},
    },
    "theorem3": {
        "law": PARETO,
        "n_grid": [500],
        "x_grid": [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5],
        "budget": {"n_envs": 6_000_000, "n_meander": 200_000, "n_joint": 400_000},
        "thresholds": {"ks": 0.08, "min_ess": 1000},
        "options": {"ks_floor_log": 3.0},
    },
    "theorem5": {
        "law": PARETO,
        "n_grid": [500],
        "t_grid": [0.25, 0.5, 1.0],
        "x_grid": [0.1, 0.2, 0.4],
        "budget": {"n_envs": 6_000_000, "n_meander": 200_000, "n_walks": 2_000_000},
        "thresholds": {"ks": 0.10, "min_ess": 1000},
        "options": {"ks_floor_log": 3.0},
    },
    "overshoot": {
        "law": PARETO,
        "n_grid": [200, 400],
        "u_grid": [0.5, 1.0, 2.0],
        "v_grid": [0.5, 1.0, 2.0],
        "budget": {"n_reps": 10_000_000, "n_meander": 200_000, "n_ase": 600_000},
        "thresholds": {"sigma": 3.0, "ase_rel_tol": 0.10},
        "options": {"ase_n": 2000},
    },
    "contrast": {
        "law": PARETO,
        "n_grid": [100, 200, 400],
        "x_grid": [0.5],
        "budget": {"n_envs": 400_000},
        "thresholds": {"finite_max": 0.05, "heavy_min": 0.1},
        "options": {"sizes": [10, 100, 1000], "finite_law": {"type": "uniform", "lo": -1.0, "hi": 1.0}, "size_cut": 1000},
    },
    "rwre": {
        "law": TWO_POINT_LOG2,
        "n_grid": [10, 20],
        "x_grid": [0.25, 0.5, 1.0],
        "t_grid": [0.25, 0.5, 1.0],
        "budget": {"n_identity": 10_000, "n_excursions": 100_000, "n_bridge": 1_000_000, "n_theorem4": 20_000, "n_envs": 1_000_000},
        "thresholds": {"sigma": 3.0},
        "options": {"step_cap": 1_000_000, "max_level_n": 8, "bridge_k": 6},
    },
    "oracle": {
        "law": TWO_POINT_LOG2,
        "n_grid": list(range(1, 13)),
        "budget": {"n_envs": 1_000_000, "n_runs": 1_000_000, "n_quenched": 1000, "n_ladder": 100_000, "n_harmonic": 1_000_000},
        "thresholds": {"sigma": 3.0, "identity_tol": 1e-12, "harmonic_tol": 0.02},
        "options": {
            "env_length": 1000,
            "harmonic_levels": 200,
            "quenched_law": PARETO,
            "harmonic_law": PARETO,
            "harmonic_points": [0.5, 1.0, 2.0, 4.0, 8.0],
            "renewal_depth": 20.0,
            "renewal_step": 0.05,
        },
    },
}


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    law: dict
    n_grid: list
    t_grid: list = field(default_factory=lambda: [1.0])
    x_grid: list = field(default_factory=lambda: [0.5])
    u_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    v_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    offspring: str = "geometric"
    convention: str = "stable"
    replicas: int = 1
    workers: int = 1
    budget: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, *, experiment: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        name = experiment or raw.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
        if raw.get("experiment") not in (None, name):
            raise ConfigError(f"config is for {raw['experiment']!r}, not {name!r}")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        merged = copy.deepcopy(DEFAULTS[name])
        for key, val in raw.items():
            if key in ("budget", "thresholds", "options", "output") and isinstance(val, dict):
                merged.setdefault(key, {}).update(val)
            else:
                merged[key] = val
        merged["experiment"] = name
        if seed is not None:
            merged["seed"] = seed
        if "seed" not in merged or merged["seed"] is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        try:
            cfg = cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("n_grid", "t_grid", "x_grid", "u_grid", "v_grid"):
            grid = getattr(self, name)
            if not isinstance(grid, list) or not grid:
                raise ConfigError(f"{name} must be a nonempty list")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in grid):
                raise ConfigError(f"{name} must contain numbers")
        if not all(isinstance(n, int) and n >= 1 for n in self.n_grid):
            raise ConfigError("n_grid entries must be positive integers")
        if not all(0 <= t <= 1 for t in self.t_grid):
            raise ConfigError("t_grid entries must lie in [0, 1]")
        if not isinstance(self.replicas, int) or self.replicas < 1:
            raise ConfigError("replicas must be a positive integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if self.offspring != "geometric":
            raise ConfigError("only the geometric offspring family is supported by the experiments")
        if self.convention not in ("stable", "quantile"):
            raise ConfigError("convention must be 'stable' or 'quantile'")
        for key, val in self.budget.items():
            if not isinstance(val, int) or val < self.replicas:
                raise ConfigError(f"budget {key} must be an integer >= replicas")
        try:
            self.environment()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad law spec {self.law!r}: {exc}") from None

    def environment(self):
        return law_from_spec(self.law)

    def share(self, key: str, replica: int) -> int:
        return split_budget(self.budget[key], self.replicas)[replica]

    def rng(self, replica: int) -> np.random.Generator:
        return replica_rng(self.seed, replica)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("output", None)
        d.pop("workers", None)
        return d


def load_config(path: str | Path, **kw) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, **kw)


# ---------------------------------------------------------------------------
# records


@dataclass
class Row:
    n: int | None = None
    x: float | None = None
    t: float | None = None
    estimate: float | None = None
    stderr: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    ess: float | None = None
    reference: float | None = None
    verdict: str = ""
    n_samples: int | None = None

    @classmethod
    def from_mc(cls, est: McEstimate, **kw) -> "Row":
        return cls(estimate=est.mean, stderr=est.stderr, ci_low=est.ci_low, ci_high=est.ci_high, n_samples=est.n_samples, **kw)


@dataclass
class Verdict:
    name: str
    value: float
    reference: float
    tolerance: str
    passed: bool


@dataclass
class ResultRecord:
    experiment: str
    parameters: dict
    tables: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add(self, table: str, row: Row) -> Row:
        self.tables.setdefault(table, []).append(row)
        return row

    def warn(self, message: str) -> None:
        log.warning(message, extra={"recorded": True})
        self.warnings.append(message)

    def check(self, name: str, value: float, reference: float, tolerance: str, passed: bool, row: Row | None = None) -> bool:
        passed = bool(passed)
        self.verdicts.append(Verdict(name, float(value), float(reference), tolerance, passed))
        if row is not None:
            row.verdict = "pass" if passed else "fail"
        return passed

    def to_json(self) -> str:
        doc = {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "passed": self.passed,
            "verdicts": [asdict(v) for v in self.verdicts],
            "tables": {k: [asdict(r) for r in rows] for k, rows in sorted(self.tables.items())},
            "warnings": self.warnings,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt == "json":
            p = out / f"{self.experiment}.json"
            p.write_text(self.to_json())
            return [p]
        for name, rows in sorted(self.tables.items()):
            p = out / f"{self.experiment}_{name}.csv"
            lines = [",".join(CSV_COLUMNS)]
            for r in rows:
                lines.append(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS))
            p.write_text("\n".join(lines) + "\n")
            written.append(p)
        p = out / f"{self.experiment}_verdicts.csv"
        lines = ["name,value,reference,tolerance,passed"]
        for v in self.verdicts:
            lines.append(f"{v.name},{_fmt(v.value)},{_fmt(v.reference)},{v.tolerance},{'pass' if v.passed else 'fail'}")
        p.write_text("\n".join(lines) + "\n")
        written.append(p)
        return written


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        if not getattr(record, "recorded", False):
            self.messages.append(record.getMessage())


def _run_replicas(cfg: ExperimentConfig, fn: Callable, *args) -> list:
    if cfg.workers > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(fn, cfg, r, *args) for r in range(cfg.replicas)]
            return [f.result() for f in futures]
    return [fn(cfg, r, *args) for r in range(cfg.replicas)]


def _within(est: float, se: float, ref: float, ref_se: float, sigma: float) -> bool:
    return abs(est - ref) <= sigma * math.hypot(se, ref_se)


def _rho(law) -> float:
    alpha, beta, _, _ = tail_constants(law)
    return positivity_index_rho((alpha, beta))


def _cn(cfg: ExperimentConfig, law, n: int) -> float:
    return scaling_sequence_cn(law, n, cfg.convention)


# ---------------------------------------------------------------------------
# extinction curve P(T = n) against the ladder epoch T-


def _t1_replica(cfg: ExperimentConfig, r: int):
    law = cfg.environment()
    rng = cfg.rng(r)
    n_max = max(cfg.n_grid)
    curve = bpre.annealed_extinction_curve(
        law, n_max, cfg.share("n_envs", r), rng, smooth_last_step=bool(cfg.options.get("smooth_last_step", True))
    )
    run = random_walk.survivor_walks(law, n_max, cfg.share("n_walks", r), rng, kill_on_zero=False, watch_steps=cfg.n_grid)
    death = {}
    for n in cfg.n_grid:
        d = _left_open(law, -run.before[n]) if run.before[n].size else np.empty(0)
        death[n] = (float(d.sum()), float((d * d).sum()), int(d.size))
    return curve, run.alive, run.n_paths, death


def exp_theorem1(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("theorem1", cfg.to_dict())
    law = cfg.environment()
    parts = _run_replicas(cfg, _t1_replica)
    curve = parts[0][0]
    for p in parts[1:]:
        curve = curve.merge(p[0])
    alive = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    rho = _rho(law)
    sigma = cfg.thresholds.get("sigma", 3.0)
    slope_pts = []
    for n in cfg.n_grid:
        pt = curve.estimate(n)
        slope_pts.append((n, pt.mean, pt.stderr))
        row = rec.add("extinction", Row.from_mc(pt, n=n))
        if isinstance(law, TwoPoint) and n <= 20:
            exact = bpre.brute_force_extinction(law, n)
            row.reference = exact
            rec.check(f"extinction_oracle_n{n}", pt.mean, exact, f"{sigma}sigma", _within(pt.mean, pt.stderr, exact, 0, sigma), row)
        surv = curve.survival(n)
        rec.add("survival", Row.from_mc(surv, n=n))
        k_prev, k_now = int(alive[n - 1]), int(alive[n])
        rec.add("ladder_epoch", Row.from_mc(wilson_ci(k_prev - k_now, m), n=n))
        rec.add("ladder_survival", Row.from_mc(wilson_ci(k_now, m), n=n))
        s1 = sum(p[3][n][0] for p in parts)
        s2 = sum(p[3][n][1] for p in parts)
        cnt = sum(p[3][n][2] for p in parts)
        if cnt < 2:
            rec.warn(f"no walks alive at n-1 = {n - 1}")
            continue
        cond = moments_ci(n * s1, n * n * s2, cnt)
        row = rec.add("ladder_ratio", Row.from_mc(cond, n=n, reference=1 - rho))
        if n >= cfg.thresholds.get("ladder_ratio_min_n", 200):
            tol = cfg.thresholds.get("ladder_ratio_tol", 0.1)
            rec.check(f"ladder_ratio_n{n}", cond.mean, 1 - rho, f"+-{tol}", abs(cond.mean - (1 - rho)) <= tol, row)
        # P(T- = n) with the last step integrated out
        p_ladder = McEstimate.normal(cond.mean / n * cnt / m, cond.stderr / n * cnt / m, m)
        try:
            ratio = ratio_ci(pt, p_ladder)
            rec.add("theta_ratio", Row.from_mc(ratio, n=n))
        except ValueError as exc:
            rec.warn(f"theta ratio at n={n}: {exc}")
        try:
            plateau = ratio_ci(surv, wilson_ci(k_now, m))
            rec.add("theta_plateau", Row.from_mc(plateau, n=n))
        except ValueError as exc:
            rec.warn(f"survival ratio at n={n}: {exc}")
    if len(cfg.n_grid) >= 4:
        try:
            fit = powerlaw_slope_fit(slope_pts)
            target = -(2 - rho)
            tol = cfg.thresholds.get("slope_tol", 0.15)
            row = rec.add("slope", Row(estimate=fit.slope, stderr=fit.stderr, ci_low=fit.ci_low, ci_high=fit.ci_high, reference=target, n_samples=curve.n_envs))
            if fit.excluded:
                rec.warn(f"slope fit excluded n = {fit.excluded}")
            rec.check("slope", fit.slope, target, f"+-{tol}", abs(fit.slope - target) <= tol, row)
        except ValueError as exc:
            rec.warn(f"slope fit: {exc}")
    return rec


# ---------------------------------------------------------------------------
# Theorems 3 and 5: conditional population sizes given T = n


def _cond_replica(cfg: ExperimentConfig, r: int, n: int, t_grid: tuple, joint: bool, walks: bool):
    law = cfg.environment()
    rng = cfg.rng(r)
    cn = _cn(cfg, law, n)
    cs = bpre.conditioned_population_sample(law, n, t_grid, cfg.share("n_envs", r), rng, cn=cn)
    mb = random_walk.meander_batch(law, n - 1, t_grid, cfg.share("n_meander", r), rng, cn=cn)
    w_ref = random_walk.tilt_weights(law, mb.endpoints, cn, "tail")
    out = {"sizes": cs.scaled_log_sizes, "weights": cs.weights, "n_envs": cs.n_envs, "ref": mb.scaled_paths, "ref_w": w_ref}
    if joint:
        out["joint"] = bpre.annealed_joint_estimate(law, n, cfg.x_grid, cfg.share("n_joint", r), rng, cn=cn)
    if walks:
        run = random_walk.survivor_walks(law, n, cfg.share("n_walks", r), rng, kill_on_zero=False, watch_steps=[n])
        d = _left_open(law, -run.before[n])
        out["ladder"] = (float(d.sum()), float((d * d).sum()), run.n_paths)
    return out


def _merge_cond(parts):
    cat = lambda key: np.concatenate([p[key] for p in parts])
    return cat("sizes"), cat("weights"), sum(p["n_envs"] for p in parts), cat("ref"), cat("ref_w")


def _ks_rows(rec, cfg, n, cn, sizes, weights, ref, ref_w, columns, threshold, prefix):
    floor = cfg.options.get("ks_floor_log", 3.0) / cn
    for i, t in columns:
        full = ks_two_sample(sizes[:, i], ref[:, i], weights, ref_w).statistic
        rec.add("ks_unrestricted", Row(n=n, t=t, estimate=full, ess=effective_sample_size(weights), n_samples=sizes.shape[0]))
        ks = ks_two_sample(sizes[:, i], ref[:, i], weights, ref_w, lower=floor).statistic
        row = rec.add("ks", Row(n=n, x=floor, t=t, estimate=ks, ess=effective_sample_size(weights), reference=threshold, n_samples=sizes.shape[0]))
        rec.check(f"{prefix}_ks_n{n}_t{t:g}", ks, threshold, f"<{threshold}", ks < threshold, row)


def exp_theorem3(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("theorem3", cfg.to_dict())
    law = cfg.environment()
    for n in cfg.n_grid:
        cn = _cn(cfg, law, n)
        parts = _run_replicas(cfg, _cond_replica, n, (1.0,), True, False)
        sizes, weights, n_envs, ref, ref_w = _merge_cond(parts)
        ess = effective_sample_size(weights)
        min_ess = cfg.thresholds.get("min_ess", 1000)
        row = rec.add("ess", Row(n=n, estimate=ess, reference=min_ess, n_samples=n_envs))
        rec.check(f"ess_n{n}", ess, min_ess, f">={min_ess}", ess >= min_ess, row)
        p_t = moments_ci(weights.sum(), (weights**2).sum(), n_envs)
        rec.add("extinction", Row.from_mc(p_t, n=n))
        for i, x in enumerate(cfg.x_grid):
            refx = self_normalized(ref[:, 0], ref_w, lambda v, x=x: (v > x).astype(float))
            est = self_normalized(sizes[:, 0], weights, lambda v, x=x: (v > x).astype(float))
            rec.add("conditional_tail", Row.from_mc(est.estimate, n=n, x=x, ess=est.ess, reference=refx.estimate.mean))
            joint = pool_estimates(
                McEstimate.normal(p["joint"][i]["estimate"], p["joint"][i]["stderr"], p["joint"][i]["n_samples"]) for p in parts
            )
            jess = sum(p["joint"][i]["ess"] for p in parts)
            try:
                ratio = ratio_ci(joint, p_t)
                rec.add("joint_ratio", Row.from_mc(ratio, n=n, x=x, ess=jess, reference=refx.estimate.mean))
            except ValueError as exc:
                rec.warn(f"joint ratio n={n} x={x}: {exc}")
        _ks_rows(rec, cfg, n, cn, sizes, weights, ref, ref_w, [(0, 1.0)], cfg.thresholds.get("ks", 0.08), "theorem3")
    return rec


def exp_theorem5(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("theorem5", cfg.to_dict())
    law = cfg.environment()
    t_grid = tuple(float(t) for t in cfg.t_grid)
    for n in cfg.n_grid:
        cn = _cn(cfg, law, n)
        parts = _run_replicas(cfg, _cond_replica, n, t_grid, False, "n_walks" in cfg.budget)
        sizes, weights, n_envs, ref, ref_w = _merge_cond(parts)
        ess = effective_sample_size(weights)
        min_ess = cfg.thresholds.get("min_ess", 1000)
        row = rec.add("ess", Row(n=n, estimate=ess, reference=min_ess, n_samples=n_envs))
        rec.check(f"ess_n{n}", ess, min_ess, f">={min_ess}", ess >= min_ess, row)
        for i, t in enumerate(t_grid):
            if t == 0:
                mass = self_normalized(sizes[:, i], weights, lambda v: (v == 0).astype(float)).estimate
                row = rec.add("marginal_t0", Row.from_mc(mass, n=n, t=0.0, reference=1.0))
                rec.check(f"t0_point_mass_n{n}", mass.mean, 1.0, "==1", mass.mean == 1.0, row)
        thr = cfg.thresholds.get("ks", 0.10)
        _ks_rows(rec, cfg, n, cn, sizes, weights, ref, ref_w, [(i, t) for i, t in enumerate(t_grid) if t > 0], thr, "theorem5")
        # small-x window P(Z_{n-1} <= e^{x c_n} | T = n), t = 1 column
        last = t_grid.index(1.0) if 1.0 in t_grid else None
        if last is None:
            continue
        p_t = moments_ci(weights.sum(), (weights**2).sum(), n_envs)
        ladder = None
        if "n_walks" in cfg.budget:
            s1 = sum(p["ladder"][0] for p in parts)
            s2 = sum(p["ladder"][1] for p in parts)
            mw = sum(p["ladder"][2] for p in parts)
            ladder = moments_ci(s1, s2, mw)
        masses = []
        for x in sorted(cfg.x_grid, reverse=True):
            f = lambda v, x=x: (v <= x).astype(float)
            est = self_normalized(sizes[:, last], weights, f)
            masses.append(est.estimate.mean)
            rec.add("window_mass", Row.from_mc(est.estimate, n=n, x=x, ess=est.ess))
            if ladder is not None and ladder.mean > 0:
                wv = np.where(f(sizes[:, last]) > 0, weights, 0.0)
                joint = moments_ci(wv.sum(), (wv**2).sum(), n_envs)
                try:
                    rec.add("window_vs_ladder", Row.from_mc(ratio_ci(joint, ladder), n=n, x=x))
                except ValueError as exc:
                    rec.warn(f"window ratio n={n} x={x}: {exc}")
        mono = all(a >= b for a, b in zip(masses, masses[1:]))
        rec.check(f"window_monotone_n{n}", float(mono), 1.0, "nonincreasing as x decreases", mono)
        rec.add("extinction", Row.from_mc(p_t, n=n))
    return rec


# ---------------------------------------------------------------------------
# overshoot / undershoot at the first ladder epoch


def _os_replica(cfg: ExperimentConfig, r: int):
    law = cfg.environment()
    rng = cfg.rng(r)
    out = {"direct": {}, "ref": {}}
    for n in cfg.n_grid:
        out["direct"][n] = random_walk.overshoot_undershoot_estimate(
            law, n, cfg.u_grid, cfg.v_grid, cfg.share("n_reps", r), rng, convention=cfg.convention
        )
        cn = _cn(cfg, law, n)
        mb = random_walk.meander_batch(law, n, [1.0], cfg.share("n_meander", r), rng, tilt=True, weight="tail", cn=cn)
        out["ref"][n] = (mb.endpoints, mb.weights, mb.alpha, cn)
    ase_n = int(cfg.options.get("ase_n", 2000))
    if cfg.budget.get("n_ase"):
        cn = _cn(cfg, law, ase_n)
        mb = random_walk.meander_batch(law, ase_n, [1.0], cfg.share("n_ase", r), rng, cn=cn)
        out["ase"] = (random_walk.tilt_weights(law, mb.endpoints, cn, "tail"), random_walk.tilt_weights(law, mb.endpoints, cn, "power"))
    return out


def exp_overshoot(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("overshoot", cfg.to_dict())
    law = cfg.environment()
    parts = _run_replicas(cfg, _os_replica)
    sigma = cfg.thresholds.get("sigma", 3.0)
    for n in cfg.n_grid:
        e = np.concatenate([p["ref"][n][0] for p in parts])
        w = np.concatenate([p["ref"][n][1] for p in parts])
        alpha, cn = parts[0]["ref"][n][2], parts[0]["ref"][n][3]
        refs = random_walk.overshoot_reference(e, w, alpha, cfg.u_grid, cfg.v_grid, law=law, cn=cn)
        refs = {(d["kind"], d["level"]): d for d in refs}
        rows0 = parts[0]["direct"][n]
        for j, base in enumerate(rows0):
            k = sum(p["direct"][n][j]["count"] for p in parts)
            ev = sum(p["direct"][n][j]["events"] for p in parts)
            ref = refs[(base["kind"], base["level"])]
            name = ("overshoot" if base["kind"] == "u" else "undershoot") + "_" + base["condition"]
            direct = wilson_ci(k, ev)
            row = rec.add(name, Row.from_mc(direct, n=n, x=base["level"], ess=ref["ess"], reference=ref["reference"]))
            ok = _within(direct.mean, direct.stderr, ref["reference"], ref["ref_stderr"], sigma)
            rec.check(f"{name}_n{n}_x{base['level']:g}", direct.mean, ref["reference"], f"{sigma}sigma", ok, row)
            rb = [McEstimate.normal(p["direct"][n][j]["rb_estimate"], p["direct"][n][j]["rb_stderr"], p["direct"][n][j]["events"]) for p in parts]
            if all(math.isfinite(x.mean) and x.n_samples > 0 for x in rb):
                rec.add(name + "_rb", Row.from_mc(pool_estimates(rb), n=n, x=base["level"], reference=ref["reference"]))
        if any(p["direct"][n][0]["events"] < 200 for p in parts):
            rec.warn(f"fewer than 200 passage events per replica at n={n}")
    if "ase" in parts[0]:
        tail = np.concatenate([p["ase"][0] for p in parts])
        power = np.concatenate([p["ase"][1] for p in parts])
        alpha, _, _, q = tail_constants(law)
        rho = _rho(law)
        target = (1 - rho) * alpha / (q * (2 - alpha))
        est = moments_ci(tail.sum(), (tail**2).sum(), tail.size)
        ase_n = int(cfg.options.get("ase_n", 2000))
        tol = cfg.thresholds.get("ase_rel_tol", 0.10)
        row = rec.add("ase_scalar", Row.from_mc(est, n=ase_n, reference=target))
        rec.check("ase_scalar", est.mean, target, f"+-{tol:.0%}", abs(est.mean / target - 1) <= tol, row)
        pw = power[np.isfinite(power)]
        rec.add("ase_power_weights", Row.from_mc(moments_ci(pw.sum(), (pw**2).sum(), pw.size), n=ase_n, reference=target))
    return rec


# ---------------------------------------------------------------------------
# contrast: finite-variance vs heavy-tailed environments


def _contrast_replica(cfg: ExperimentConfig, r: int):
    rng = cfg.rng(r)
    out = {}
    for tag, spec in (("finite", cfg.options.get("finite_law")), ("heavy", cfg.law)):
        law = law_from_spec(spec)
        for n in cfg.n_grid:
            cs = bpre.conditioned_population_sample(law, n, [1.0], cfg.share("n_envs", r), rng, cn=1.0)
            out[(tag, n)] = (cs.scaled_log_sizes[:, 0], cs.weights, cs.n_envs)
    return out


def exp_contrast(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("contrast", cfg.to_dict())
    parts = _run_replicas(cfg, _contrast_replica)
    sizes = [float(v) for v in cfg.options.get("sizes", [10, 100, 1000])]
    cut = float(cfg.options.get("size_cut", 1000))
    fmax = cfg.thresholds.get("finite_max", 0.05)
    hmin = cfg.thresholds.get("heavy_min", 0.1)
    heavy_law = cfg.environment()
    for tag in ("finite", "heavy"):
        for n in cfg.n_grid:
            lz = np.concatenate([p[(tag, n)][0] for p in parts])
            w = np.concatenate([p[(tag, n)][1] for p in parts])
            vals = []
            for N in sizes:
                est = self_normalized(lz, w, lambda v, N=N: (v > math.log(N)).astype(float))
                vals.append(est.estimate.mean)
                row = rec.add(f"{tag}_by_size", Row.from_mc(est.estimate, n=n, x=N, ess=est.ess))
                if tag == "finite" and N == cut:
                    row.reference = fmax
                    rec.check(f"finite_n{n}_N{N:g}", est.estimate.mean, fmax, f"<{fmax}", est.estimate.mean < fmax, row)
            if tag == "finite":
                mono = all(a >= b for a, b in zip(vals, vals[1:]))
                rec.check(f"finite_decreasing_n{n}", float(mono), 1.0, "nonincreasing in N", mono)
            else:
                cn = _cn(cfg, heavy_law, n)
                for x in cfg.x_grid:
                    est = self_normalized(lz, w, lambda v, x=x: (v > x * cn).astype(float))
                    row = rec.add("heavy_scaled", Row.from_mc(est.estimate, n=n, x=x, ess=est.ess, reference=hmin))
                    rec.check(f"heavy_n{n}_x{x:g}", est.estimate.mean, hmin, f">{hmin}", est.estimate.mean > hmin, row)
    return rec


# ---------------------------------------------------------------------------
# random walk in random environment


def _rwre_replica(cfg: ExperimentConfig, r: int, bridge_seed: int):
    law = cfg.environment()
    rng = cfg.rng(r)
    cap = int(cfg.options.get("step_cap", 10**6))
    target = cfg.share("n_identity", r)
    ident = rwre.ExcursionSummary()
    while ident.n_excursions - ident.n_capped < target:
        s, _ = rwre.run_excursions(law, target - (ident.n_excursions - ident.n_capped), rng, step_cap=cap)
        ident = ident.merge(s)
    top = int(cfg.options.get("max_level_n", 8))
    levels, _ = rwre.run_excursions(law, cfg.share("n_excursions", r), rng, step_cap=cap, level_cap=top + 1)
    k = int(cfg.options.get("bridge_k", 6))
    env = rwre.RwreEnvironment(law, bridge_seed)
    env.ensure(k + 1)
    walk_probs, bridge = rwre.quenched_extinction_from_walks(env, k, cfg.share("n_bridge", r), rng, step_cap=cap)
    direct = bpre.simulate_extinction_times(None, k, cfg.share("n_bridge", r), rng, env=env.increments(k + 1))
    t4 = rwre.theorem4_statistics(
        law, cfg.share("n_theorem4", r), cfg.x_grid, rng, n_list=cfg.n_grid, t_grid=cfg.t_grid, step_cap=cap, convention=cfg.convention
    )
    curve = None
    if not isinstance(law, TwoPoint):
        curve = bpre.annealed_extinction_curve(law, top + 1, cfg.share("n_envs", r), rng, smooth_last_step=False)
    return ident, levels, bridge, direct, t4, curve


def exp_rwre(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("rwre", cfg.to_dict())
    law = cfg.environment()
    bridge_seed = int(np.random.SeedSequence([cfg.seed, 2**32]).generate_state(1, np.uint64)[0])
    parts = _run_replicas(cfg, _rwre_replica, bridge_seed)
    sigma = cfg.thresholds.get("sigma", 3.0)
    ident = parts[0][0]
    levels = parts[0][1]
    bridge = parts[0][2]
    for p in parts[1:]:
        ident, levels, bridge = ident.merge(p[0]), levels.merge(p[1]), bridge.merge(p[2])
    completed = ident.n_excursions - ident.n_capped
    rate = 1 - ident.identity_failures / completed
    row = rec.add("identities", Row(estimate=rate, reference=1.0, n_samples=completed))
    rec.check("identity_pass_rate", rate, 1.0, "==1", ident.identity_failures == 0, row)
    if ident.n_capped:
        rec.warn(f"{ident.n_capped} excursions hit the step cap and were excluded")
    top = int(cfg.options.get("max_level_n", 8))
    curve = None
    if parts[0][5] is not None:
        curve = parts[0][5]
        for p in parts[1:]:
            curve = curve.merge(p[5])
    for n in range(top + 1):
        est = levels.max_level_probability(n)
        if isinstance(law, TwoPoint):
            ref, ref_se = bpre.brute_force_extinction(law, n + 1), 0.0
        else:
            e = curve.estimate(n + 1)
            ref, ref_se = e.mean, e.stderr
        row = rec.add("max_level", Row.from_mc(est, n=n, reference=ref))
        rec.check(f"max_level_n{n}", est.mean, ref, f"{sigma}sigma", _within(est.mean, est.stderr, ref, ref_se, sigma), row)
    k = int(cfg.options.get("bridge_k", 6))
    env = rwre.RwreEnvironment(law, bridge_seed)
    genv = bpre.GeometricEnvironment.from_increments(env.increments(k + 1))
    times = np.concatenate([p[3] for p in parts])
    for j in range(1, k + 1):
        walk = bridge.max_level_probability(j - 1)
        direct = wilson_ci(int(np.sum(times == j)), times.size)
        exact = bpre.quenched_extinction_at(genv, j)
        row = rec.add("bridge", Row.from_mc(walk, n=j, reference=direct.mean))
        rec.check(f"bridge_k{j}", walk.mean, direct.mean, f"{sigma}sigma", _within(walk.mean, walk.stderr, direct.mean, direct.stderr, sigma), row)
        rec.add("bridge_quenched_exact", Row.from_mc(direct, n=j, reference=exact))
    hist = sum(_pad(p[4]["max_level_hist"], max(cfg.n_grid) + 1) for p in parts)
    done = sum(p[4]["completed"] for p in parts)
    n_t4 = sum(p[4]["n_excursions"] for p in parts)
    t_grid = parts[0][4]["t_grid"]
    for i, n in enumerate(cfg.n_grid):
        prof = np.concatenate([p[4]["rows"][i]["profile"] for p in parts])
        cn = parts[0][4]["rows"][i]["cn"]
        rec.add("theorem4_max_level", Row.from_mc(wilson_ci(int(hist[n]), n_t4), n=n))
        if prof.shape[0] == 0:
            rec.warn(f"no excursions with Rbar = {n}")
            continue
        last = prof[:, list(t_grid).index(1.0)] if 1.0 in t_grid else None
        tails = []
        for x in cfg.x_grid:
            if last is None:
                break
            est = wilson_ci(int(np.sum(last > x)), last.size)
            tails.append(est.mean)
            rec.add("theorem4_tail", Row.from_mc(est, n=n, x=x))
        for j, t in enumerate(t_grid):
            col = prof[:, j]
            rec.add("theorem4_profile", Row.from_mc(McEstimate.normal(col.mean(), col.std(ddof=1) / math.sqrt(col.size) if col.size > 1 else float("nan"), col.size), n=n, t=t))
        mono = all(a >= b for a, b in zip(tails, tails[1:]))
        rec.check(f"theorem4_tail_monotone_n{n}", float(mono), 1.0, "nonincreasing in x", mono)
    if done < n_t4:
        rec.warn(f"{n_t4 - done} max-level profile excursions hit the step cap")
    return rec


def _pad(a, size):
    out = np.zeros(max(size, len(a)), dtype=np.int64)
    out[: len(a)] = a
    return out


# ---------------------------------------------------------------------------
# exact oracles


def _oracle_replica(cfg: ExperimentConfig, r: int):
    law = cfg.environment()
    rng = cfg.rng(r)
    n_max = max(cfg.n_grid)
    curve = bpre.annealed_extinction_curve(law, n_max, cfg.share("n_envs", r), rng)
    times = bpre.simulate_extinction_times(law, n_max, cfg.share("n_runs", r), rng)
    return curve, np.bincount(times, minlength=n_max + 1)[: n_max + 1], times.size


def quenched_identity_defects(law, n_envs: int, length: int, rng) -> tuple[float, float]:
    """Largest |sum_k P_f(T = k) + H_N - 1| and |joint_tail(n, 0) - P_f(T = n)|."""
    tele = joint = 0.0
    for _ in range(n_envs):
        env = bpre.GeometricEnvironment.sample(law, length, rng)
        p = bpre.quenched_extinction_all(env)
        tele = max(tele, abs(math.fsum(p) + math.exp(-env.log_A[-1]) - 1))
        n = np.arange(1, length + 1)
        jt = np.exp(bpre._joint_tail_log(-env.log_A[n - 1], env.sums[n - 1], env.increments[n - 1], 0.0))
        joint = max(joint, float(np.max(np.abs(jt - p))))
    return tele, joint


def exp_oracle(cfg: ExperimentConfig) -> ResultRecord:
    rec = ResultRecord("oracle", cfg.to_dict())
    law = cfg.environment()
    if not isinstance(law, TwoPoint):
        raise ConfigError("the oracle suite needs a twopoint law")
    sigma = cfg.thresholds.get("sigma", 3.0)
    tol = cfg.thresholds.get("identity_tol", 1e-12)
    parts = _run_replicas(cfg, _oracle_replica)
    curve = parts[0][0]
    for p in parts[1:]:
        curve = curve.merge(p[0])
    counts = sum(p[1] for p in parts)
    runs = sum(p[2] for p in parts)
    for n in cfg.n_grid:
        if n > 20:
            raise ConfigError("enumeration is limited to n <= 20")
        exact = bpre.brute_force_extinction(law, n)
        rb = curve.estimate(n)
        row = rec.add("rao_blackwell", Row.from_mc(rb, n=n, reference=exact))
        rec.check(f"rb_n{n}", rb.mean, exact, f"{sigma}sigma", _within(rb.mean, rb.stderr, exact, 0, sigma), row)
        direct = wilson_ci(int(counts[n]), runs)
        row = rec.add("direct", Row.from_mc(direct, n=n, reference=exact))
        rec.check(f"direct_n{n}", direct.mean, exact, f"{sigma}sigma", _within(direct.mean, direct.stderr, exact, 0, sigma), row)
    qlaw = law_from_spec(cfg.options.get("quenched_law", PARETO))
    rng = replica_rng(cfg.seed, 2**32)
    tele, joint = quenched_identity_defects(qlaw, cfg.budget.get("n_quenched", 1000), int(cfg.options.get("env_length", 1000)), rng)
    row = rec.add("quenched_telescoping", Row(estimate=tele, reference=tol, n_samples=cfg.budget.get("n_quenched", 1000)))
    rec.check("quenched_telescoping", tele, tol, f"<={tol}", tele <= tol, row)
    row = rec.add("quenched_joint_at_zero", Row(estimate=joint, reference=tol, n_samples=cfg.budget.get("n_quenched", 1000)))
    rec.check("quenched_joint_at_zero", joint, tol, f"<={tol}", joint <= tol, row)
    defect = random_walk.two_point_harmonic_defect(law, int(cfg.options.get("harmonic_levels", 200)))
    row = rec.add("harmonic_exact", Row(estimate=defect, reference=tol))
    rec.check("harmonic_exact", defect, tol, f"<={tol}", defect <= tol, row)
    if cfg.budget.get("n_ladder"):
        _harmonic_mc(cfg, rec, replica_rng(cfg.seed, 2**32 + 1))
    return rec


def _harmonic_mc(cfg: ExperimentConfig, rec: ResultRecord, rng) -> None:
    """Monte Carlo V on a grid, then E[V(x + X); x + X >= 0] / V(x) - 1."""
    hlaw = law_from_spec(cfg.options.get("harmonic_law", PARETO))
    depth = float(cfg.options.get("renewal_depth", 20.0))
    step = float(cfg.options.get("renewal_step", 0.05))
    grid = np.linspace(0.0, depth, int(round(depth / step)) + 1)
    V = random_walk.renewal_function_estimate(hlaw, grid, cfg.budget["n_ladder"], rng, min_samples=min(10**4, cfg.budget["n_ladder"]))
    points = cfg.options.get("harmonic_points", [0.5, 1.0, 2.0, 4.0, 8.0])
    res = random_walk.harmonic_residual(hlaw, V, points, cfg.budget.get("n_harmonic", 10**6), rng)
    tol = cfg.thresholds.get("harmonic_tol", 0.02)
    for x, r in zip(points, res):
        row = rec.add("harmonic_mc", Row(x=x, estimate=float(r), reference=0.0, n_samples=cfg.budget.get("n_harmonic", 10**6)))
        rec.check(f"harmonic_mc_x{x:g}", abs(r), tol, f"<{tol}", abs(r) < tol, row)


RUNNERS = {
    "theorem1": exp_theorem1,
    "theorem3": exp_theorem3,
    "theorem5": exp_theorem5,
    "overshoot": exp_overshoot,
    "contrast": exp_contrast,
    "rwre": exp_rwre,
    "oracle": exp_oracle,
}


def run_experiment(cfg: ExperimentConfig) -> ResultRecord:
    """Run one experiment, collecting library warnings into the record."""
    handler = _Collect()
    pkg_log = logging.getLogger("bprelab")
    pkg_log.addHandler(handler)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rec = RUNNERS[cfg.experiment](cfg)
    finally:
        pkg_log.removeHandler(handler)
    rec.warnings.extend(handler.messages)
    rec.warnings.extend(str(w.message) for w in caught if not issubclass(w.category, RuntimeWarning))
    rec.warnings = list(dict.fromkeys(rec.warnings))
    rec.wall_time = time.perf_counter() - start
    return rec
