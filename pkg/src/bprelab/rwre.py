"""Nearest-neighbour random walk in random environment.

At site n the walk steps down with q_n = e^{-X_{n+1}}/(1 + e^{-X_{n+1}})
and up with p_n = 1 - q_n.  The local times of the first excursion from 0
to -1 encode a geometric BPRE: Z_0 = 1 and Z_{n+1} = l(n) - Z_n, the
offspring law of generation n having f(0) = q_n.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .bpre import PopulationTrajectory
from .env_laws import EnvironmentLaw, sample_increments, scaling_sequence_cn
from .estimators import McEstimate, wilson_ci

log = logging.getLogger(__name__)

SITE_BLOCK = 256
STEP_BLOCK = 1 << 16


def transition_probabilities(x):
    """(q, p) for log(p/q) = x."""
    x = np.asarray(x, dtype=float)
    q = 0.5 * (1.0 - np.tanh(x / 2))
    p = 0.5 * (1.0 + np.tanh(x / 2))
    if q.ndim == 0:
        return float(q), float(p)
    return q, p


class RwreEnvironment:
    """Site increments X_{n+1}, n >= 0, generated lazily in fixed blocks.

    Block b comes from its own stream SeedSequence([seed, b]), so the value
    at a site does not depend on how far or in what order the walk explored.
    """

    def __init__(self, law: EnvironmentLaw, seed: int | None = None, *, increments=None):
        self.law = law
        self.seed = seed
        self._x = np.empty(0) if increments is None else np.asarray(increments, dtype=float)
        self._fixed = increments is not None
        self._p = transition_probabilities(self._x)[1] if self._x.size else np.empty(0)

    @property
    def n_sites(self) -> int:
        return int(self._x.size)

    def ensure(self, n_sites: int) -> None:
        if n_sites <= self._x.size:
            return
        if self._fixed:
            raise IndexError(f"fixed environment has only {self._x.size} sites")
        blocks = []
        b = self._x.size // SITE_BLOCK
        while (b * SITE_BLOCK) < n_sites:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, b]))
            blocks.append(sample_increments(self.law, rng, SITE_BLOCK))
            b += 1
        self._x = np.concatenate([self._x, *blocks])
        self._p = transition_probabilities(self._x)[1]

    def increments(self, n_sites: int | None = None) -> np.ndarray:
        """X_1, X_2, ... (X_{n+1} drives site n)."""
        if n_sites is not None:
            self.ensure(n_sites)
        return self._x[: n_sites or self._x.size]

    def up_probabilities(self) -> np.ndarray:
        return self._p

    def q(self, site: int) -> float:
        self.ensure(site + 1)
        return float(1.0 - self._p[site])

    def p(self, site: int) -> float:
        self.ensure(site + 1)
        return float(self._p[site])


@numba.njit(cache=True)
def _walk(pos, p, u, ell, traj, n_traj):
    # status 0: hit -1, 1: needs more sites, 2: uniforms used up
    i = 0
    n_sites = p.size
    cap = traj.size
    while i < u.size:
        if pos >= n_sites:
            return pos, i, 1, n_traj
        if u[i] < p[pos]:
            pos += 1
        else:
            pos -= 1
        i += 1
        ell[pos + 1] += 1
        if n_traj < cap:
            traj[n_traj] = pos
            n_traj += 1
        if pos == -1:
            return pos, i, 0, n_traj
    return pos, i, 2, n_traj


@dataclass(frozen=True)
class Excursion:
    """First excursion R_0 = 0, ..., R_chi = -1.

    ``local_times[j]`` is l(j - 1), so index 0 is site -1.  ``trajectory``
    is kept only when requested (possibly truncated).
    """

    chi: int
    local_times: np.ndarray
    max_level: int
    capped: bool
    trajectory: np.ndarray | None = None
    above_cap: bool = False

    def ell(self, n: int) -> int:
        j = n + 1
        return int(self.local_times[j]) if 0 <= j < self.local_times.size else 0


def simulate_excursion(
    law: EnvironmentLaw | None,
    rng: np.random.Generator,
    step_cap: int = 10**8,
    *,
    env: RwreEnvironment | None = None,
    record_trajectory: int = 0,
    level_cap: int | None = None,
) -> Excursion:
    """Run the walk from 0 until it hits -1 or ``step_cap`` steps.

    A fresh lazily generated environment is used unless ``env`` is given
    (quenched reuse).  The walk never goes below -1.  With ``level_cap``
    the walk is stopped on first reaching level_cap + 1 and the result is
    flagged ``above_cap`` (so Rbar > level_cap is known).
    """
    if step_cap < 1:
        raise ValueError("step_cap must be >= 1")
    if env is None:
        env = RwreEnvironment(law, int(rng.integers(2**63)))
    env.ensure(SITE_BLOCK if level_cap is None else level_cap + 1)
    ell = np.zeros(env.n_sites + 2, dtype=np.int64)
    p_up = env.up_probabilities()
    if level_cap is not None:
        p_up = p_up[: level_cap + 1]
    ell[1] = 1
    traj = np.empty(record_trajectory, dtype=np.int64)
    n_traj = 0
    if record_trajectory:
        traj[0] = 0
        n_traj = 1
    pos, steps = 0, 0
    block = 64
    while steps < step_cap:
        u = rng.random(min(block, step_cap - steps))
        block = min(2 * block, STEP_BLOCK)
        used_total = 0
        while used_total < u.size:
            pos, used, status, n_traj = _walk(pos, p_up, u[used_total:], ell, traj, n_traj)
            used_total += used
            if status == 0:
                steps += used_total
                return _finish(steps, ell, False, traj[:n_traj] if record_trajectory else None)
            if status == 1 and level_cap is not None and pos > level_cap:
                steps += used_total
                return replace(_finish(steps, ell, True, traj[:n_traj] if record_trajectory else None), above_cap=True)
            if status == 1:
                env.ensure(env.n_sites + SITE_BLOCK)
                grown = np.zeros(env.n_sites + 2, dtype=np.int64)
                grown[: ell.size] = ell
                ell = grown
                p_up = env.up_probabilities()
        steps += used_total
    return _finish(steps, ell, True, traj[:n_traj] if record_trajectory else None)


def _finish(steps, ell, capped, traj):
    nz = np.flatnonzero(ell)
    top = int(nz[-1]) if nz.size else 1
    return Excursion(steps, ell[: top + 2].copy(), top - 1, capped, traj)


def excursion_from_trajectory(path) -> Excursion:
    """Build an :class:`Excursion` from an explicit path 0, ..., -1."""
    r = np.asarray(path, dtype=np.int64)
    if r[0] != 0 or r[-1] != -1:
        raise ValueError("path must start at 0 and end at -1")
    if np.any(np.abs(np.diff(r)) != 1):
        raise ValueError("steps must be +-1")
    if np.any(r[:-1] < 0):
        raise ValueError("path reaches -1 before its end")
    ell = np.bincount(r + 1)
    return Excursion(r.size - 1, ell, int(r[:-1].max()), False, r)


class IdentityError(AssertionError):
    pass


def local_time_to_branching(exc: Excursion) -> PopulationTrajectory:
    """Z_n = sum_{i=0}^{n} (-1)^i l(n-i-1); checks the excursion identities."""
    if exc.capped:
        raise ValueError("excursion did not complete")
    ell = np.concatenate([exc.local_times, [0, 0]]).astype(np.int64)
    m = ell.size
    # with a = j + 1: Z_n = (-1)^n sum_{a<=n} (-1)^a ell[a]
    alt = np.where(np.arange(m) % 2 == 0, 1, -1)
    z = alt * np.cumsum(alt * ell)
    checks = {
        "Z_0 = 1": z[0] == 1 and ell[0] == 1,
        "Z >= 0": bool(np.all(z >= 0)),
        "l(n) = Z_{n+1} + Z_n": bool(np.all(ell[1:] == z[1:] + z[:-1])),
        "sum l = chi + 1": int(ell.sum()) == exc.chi + 1,
    }
    zero = np.flatnonzero(ell[2:] == 0)
    t = int(zero[0]) + 1
    checks["Z_T = 0"] = z[t] == 0 and bool(np.all(z[1:t] > 0))
    checks["{Rbar = n-1} = {T = n}"] = exc.max_level == t - 1
    bad = [k for k, ok in checks.items() if not ok]
    if bad:
        raise IdentityError(f"excursion identities violated: {', '.join(bad)}")
    return PopulationTrajectory(tuple(int(v) for v in z[: t + 1]), t, False)


@dataclass
class ExcursionSummary:
    """Histogram-style summary mergeable across replicas."""

    n_excursions: int = 0
    n_capped: int = 0
    n_above_cap: int = 0
    identity_failures: int = 0
    max_level_counts: dict = field(default_factory=dict)
    capped_max_levels: list = field(default_factory=list)

    def merge(self, other: "ExcursionSummary") -> "ExcursionSummary":
        counts = dict(self.max_level_counts)
        for k, v in other.max_level_counts.items():
            counts[k] = counts.get(k, 0) + v
        return ExcursionSummary(
            self.n_excursions + other.n_excursions,
            self.n_capped + other.n_capped,
            self.n_above_cap + other.n_above_cap,
            self.identity_failures + other.identity_failures,
            counts,
            self.capped_max_levels + other.capped_max_levels,
        )

    def max_level_probability(self, n: int) -> McEstimate:
        """P(Rbar = n); capped excursions count as 'not n' only when their
        running maximum already exceeds n."""
        k = self.max_level_counts.get(n, 0)
        ambiguous = sum(1 for m in self.capped_max_levels if m <= n)
        if ambiguous:
            log.warning("%d capped excursions could still end with Rbar = %d", ambiguous, n)
        return wilson_ci(k, self.n_excursions)


def run_excursions(
    law: EnvironmentLaw,
    n_excursions: int,
    rng: np.random.Generator,
    *,
    step_cap: int = 10**8,
    env: RwreEnvironment | None = None,
    check_identities: bool = True,
    keep: int = 0,
    level_cap: int | None = None,
) -> tuple[ExcursionSummary, list[Excursion]]:
    """Simulate excursions (fresh environment each unless ``env``) and
    tally Rbar; optionally run the identity suite on every completed one."""
    summary = ExcursionSummary()
    kept = []
    for _ in range(n_excursions):
        exc = simulate_excursion(law, rng, step_cap, env=env, level_cap=level_cap)
        summary.n_excursions += 1
        if exc.above_cap:
            summary.n_above_cap += 1
            continue
        if exc.capped:
            summary.n_capped += 1
            summary.capped_max_levels.append(exc.max_level)
            continue
        if check_identities:
            try:
                local_time_to_branching(exc)
            except IdentityError:
                summary.identity_failures += 1
        summary.max_level_counts[exc.max_level] = summary.max_level_counts.get(exc.max_level, 0) + 1
        if len(kept) < keep:
            kept.append(exc)
    return summary, kept


def quenched_extinction_from_walks(env: RwreEnvironment, k_max: int, n_excursions: int, rng, step_cap=10**8):
    """Empirical P(T = k), k <= k_max, from excursions on one frozen env."""
    summary, _ = run_excursions(
        None, n_excursions, rng, step_cap=step_cap, env=env, check_identities=False, level_cap=k_max
    )
    return [summary.max_level_probability(k - 1) for k in range(1, k_max + 1)], summary


def theorem4_statistics(
    law: EnvironmentLaw,
    n_excursions: int,
    x_list,
    rng: np.random.Generator,
    *,
    n_list=(10, 20, 40),
    t_grid=(0.25, 0.5, 1.0),
    step_cap: int = 10**8,
    convention: str = "stable",
    min_count: int = 30,
) -> dict:
    """P(Rbar = n), P(l(n) > e^{x c_n} | l(n) > 0, l(n+1) = 0) and the
    scaled profile log l(floor(n t))/c_n on that event."""
    n_list = [int(n) for n in n_list]
    top = max(n_list)
    rbar = []
    profiles = {n: [] for n in n_list}
    capped = 0
    for _ in range(n_excursions):
        exc = simulate_excursion(law, rng, step_cap)
        if exc.capped:
            capped += 1
            continue
        rbar.append(exc.max_level)
        n = exc.max_level
        if n in profiles:
            if not (exc.ell(n) > 0 and exc.ell(n + 1) == 0):
                raise IdentityError("l(n) > 0, l(n+1) = 0 must hold exactly when Rbar = n")
            lv = np.array([exc.ell(int(math.floor(n * t + 1e-9))) for t in t_grid], dtype=float)
            profiles[n].append(np.log(lv))
    rbar = np.asarray(rbar)
    done = rbar.size
    counts = np.bincount(rbar, minlength=top + 1) if done else np.zeros(top + 1, dtype=int)
    rows = []
    for n in n_list:
        cn = scaling_sequence_cn(law, n, convention)
        prof = np.asarray(profiles[n]).reshape(-1, len(t_grid)) / cn
        if prof.shape[0] < min_count:
            log.warning("Rbar = %d observed only %d times", n, prof.shape[0])
        row = {"n": n, "cn": cn, "count": int(prof.shape[0]), "p_max_level": wilson_ci(int(counts[n]), n_excursions)}
        last = prof[:, list(t_grid).index(1.0)] if 1.0 in t_grid else None
        row["tail"] = [
            (float(x), wilson_ci(int(np.sum(last > x)), prof.shape[0]) if last is not None else None) for x in x_list
        ]
        row["profile"] = prof
        rows.append(row)
    return {
        "n_excursions": n_excursions,
        "completed": int(done),
        "capped": capped,
        "max_level_hist": counts,
        "rows": rows,
        "t_grid": tuple(t_grid),
    }


def dump_excursion_csv(exc: Excursion, path: str | Path) -> None:
    """(step, position) rows; needs a recorded trajectory."""
    if exc.trajectory is None:
        raise ValueError("excursion was simulated without a trajectory")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "position"])
        for k, r in enumerate(exc.trajectory):
            w.writerow([k, int(r)])


def dump_local_times_csv(exc: Excursion, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "count"])
        for j, c in enumerate(exc.local_times):
            w.writerow([j - 1, int(c)])
