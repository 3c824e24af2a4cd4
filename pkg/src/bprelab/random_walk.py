"""The associated random walk: paths, ladder statistics, the renewal function V,
the conditioned-to-stay-positive measure P+, meanders and overshoots."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .env_laws import (
    BoundedUniform,
    EnvironmentLaw,
    TwoPoint,
    _left_open,
    left_cdf,
    positivity_index_rho,
    sample_increments,
    scaling_sequence_cn,
    tail_constants,
)
from .estimators import effective_sample_size, ratio_ci, self_normalized, wilson_ci

log = logging.getLogger(__name__)

# lattice laws revisit levels exactly; float sums drift by ~1e-16 per step
TIE = 1e-9


@dataclass(frozen=True)
class WalkPath:
    increments: np.ndarray
    sums: np.ndarray

    @property
    def n(self) -> int:
        return int(self.increments.size)

    @classmethod
    def from_increments(cls, increments) -> "WalkPath":
        x = np.asarray(increments, dtype=float)
        return cls(x, np.concatenate([[0.0], np.cumsum(x)]))

    @classmethod
    def from_sums(cls, sums) -> "WalkPath":
        s = np.asarray(sums, dtype=float)
        if s.size == 0 or s[0] != 0:
            raise ValueError("sums must start at 0")
        return cls(np.diff(s), s)


def simulate_path(law: EnvironmentLaw, n: int, rng: np.random.Generator) -> WalkPath:
    if n < 0:
        raise ValueError("n must be nonnegative")
    return WalkPath.from_increments(sample_increments(law, rng, n))


@dataclass(frozen=True)
class PathStats:
    T_minus: int | None
    tau_minus: int | None
    L_n: float
    M_n: float
    mu_n: int
    # strictly descending ladder epochs T_1 < T_2 < ... (T_0 = 0 omitted)
    ladder_epochs: tuple
    ladder_heights: tuple


def path_statistics(path: WalkPath) -> PathStats:
    s = path.sums
    tail = s[1:]
    strict = np.flatnonzero(tail < -TIE)
    weak = np.flatnonzero(tail <= TIE)
    prev_min = np.minimum.accumulate(s)[:-1]
    rec = np.flatnonzero(tail < prev_min - TIE) + 1
    return PathStats(
        T_minus=int(strict[0]) + 1 if strict.size else None,
        tau_minus=int(weak[0]) + 1 if weak.size else None,
        L_n=float(s.min()),
        M_n=float(s.max()),
        mu_n=int(np.argmin(s)),
        ladder_epochs=tuple(int(k) for k in rec),
        ladder_heights=tuple(float(s[k]) for k in rec),
    )


# ---------------------------------------------------------------------------
# walks killed on leaving the positive half-line


@dataclass
class SurvivorRun:
    """Output of :func:`survivor_walks`.

    ``alive[k]`` counts paths that have not been killed by step k.
    ``recorded`` holds S at ``record_steps`` for paths alive at n.
    ``killed[k]`` is (S_{k-1}, S_k) for paths killed exactly at step k and
    ``before[k]`` is S_{k-1} for all paths alive at k - 1, for k in
    ``watch_steps``.
    """

    n: int
    n_paths: int
    alive: np.ndarray
    final: np.ndarray
    record_steps: tuple
    recorded: np.ndarray
    killed: dict = field(default_factory=dict)
    before: dict = field(default_factory=dict)

    def survival(self, k: int) -> float:
        return self.alive[k] / self.n_paths


def survivor_walks(
    law: EnvironmentLaw,
    n: int,
    n_paths: int,
    rng: np.random.Generator,
    *,
    kill_on_zero: bool = True,
    record_steps=(),
    watch_steps=(),
    chunk: int = 1 << 18,
) -> SurvivorRun:
    """Simulate ``n_paths`` walks for n steps, dropping each as soon as it
    leaves (0, inf) (``kill_on_zero``) or [0, inf).

    Work is proportional to the total surviving time, which is what makes
    rejection on {tau > n} affordable for heavy-tailed walks.
    """
    record_steps = tuple(int(k) for k in record_steps)
    if any(k < 0 or k > n for k in record_steps):
        raise ValueError("record steps must lie in [0, n]")
    cols: dict[int, list[int]] = {}
    for j, k in enumerate(record_steps):
        cols.setdefault(k, []).append(j)
    watch = set(int(k) for k in watch_steps)
    alive = np.zeros(n + 1, dtype=np.int64)
    finals, recs = [], []
    killed = {k: ([], []) for k in watch}
    before = {k: [] for k in watch}
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        done += m
        S = np.zeros(m)
        ids = np.arange(m)
        rec = np.full((m, len(record_steps)), np.nan)
        if 0 in cols:
            rec[:, cols[0]] = 0.0
        alive[0] += m
        for k in range(1, n + 1):
            prev = S
            S = prev + sample_increments(law, rng, prev.size)
            keep = S > TIE if kill_on_zero else S >= -TIE
            if k in watch:
                before[k].append(prev)
                killed[k][0].append(prev[~keep])
                killed[k][1].append(S[~keep])
            S = S[keep]
            ids = ids[keep]
            alive[k] += S.size
            if k in cols:
                rec[np.ix_(ids, cols[k])] = S[:, None]
            if S.size == 0:
                break
        finals.append(S)
        recs.append(rec[ids])
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)
    return SurvivorRun(
        n=n,
        n_paths=n_paths,
        alive=alive,
        final=cat(finals),
        record_steps=record_steps,
        recorded=np.concatenate(recs) if recs else np.empty((0, len(record_steps))),
        killed={k: (cat(a), cat(b)) for k, (a, b) in killed.items()},
        before={k: cat(v) for k, v in before.items()},
    )


# ---------------------------------------------------------------------------
# renewal function of the strict descending ladder heights


@dataclass(frozen=True)
class RenewalTable:
    grid: np.ndarray
    values: np.ndarray
    samples_used: int
    reached: int = 0
    exact: bool = False
    tail_index: float | None = None

    def __call__(self, x):
        """V at x: 0 below zero, linear in between grid points.  Beyond the
        grid V continues with the last slope, or as v_last (x/g_last)^k when
        ``tail_index`` k is set."""
        x = np.asarray(x, dtype=float)
        g, v = self.grid, self.values
        out = np.interp(x, g, v)
        hi = x > g[-1]
        if self.tail_index is not None and g[-1] > 0:
            out = np.where(hi, v[-1] * (np.maximum(x, g[-1]) / g[-1]) ** self.tail_index, out)
        elif g.size > 1:
            slope = (v[-1] - v[-2]) / (g[-1] - g[-2])
            out = np.where(hi, v[-1] + slope * (x - g[-1]), out)
        out = np.where(x < 0, 0.0, out)
        return out if out.ndim else float(out)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("grid must be a nonempty 1-d sequence")
    if np.any(g < 0):
        raise ValueError("grid points must be nonnegative")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    if g[0] > 0:
        g = np.concatenate([[0.0], g])
    return g


def two_point_renewal(law: TwoPoint, x):
    """Exact V for the +-a walk; the walk is skip-free downwards so the
    j-th ladder height is -j a, reached with probability r^j."""
    x = np.asarray(x, dtype=float)
    r = 1.0 if law.w <= 0.5 else (1 - law.w) / law.w
    m = np.floor(x / law.a + 1e-12)
    if r == 1.0:
        out = m + 1
    else:
        out = (1 - r ** (m + 1)) / (1 - r)
    out = np.where(x < 0, 0.0, out)
    return out if out.ndim else float(out)


def two_point_renewal_table(law: TwoPoint, levels: int) -> RenewalTable:
    grid = law.a * np.arange(levels + 1, dtype=float)
    return RenewalTable(grid, two_point_renewal(law, grid), 0, exact=True)


def renewal_function_estimate(
    law: EnvironmentLaw,
    grid,
    n_ladder_samples: int,
    rng: np.random.Generator,
    *,
    max_steps: int = 10**6,
    min_samples: int = 10**4,
    extrapolation: str = "power",
) -> RenewalTable:
    """Monte Carlo V(x) = 1 + sum_j P(-S_{T_j} <= x) on ``grid``.

    Each chain runs the walk in blocks until its running minimum drops below
    -max(grid) or ``max_steps`` is spent; every strict new minimum above
    -max(grid) is one ladder height.

    ``extrapolation="power"`` extends V past the grid with its regular
    variation index alpha (1 - rho); ``"linear"`` uses the last slope.
    """
    if extrapolation not in ("power", "linear"):
        raise ValueError("extrapolation must be 'power' or 'linear'")
    g = _check_grid(grid)
    if n_ladder_samples < min_samples:
        raise ValueError(f"need at least {min_samples} ladder chains")
    depth = g[-1]
    S = np.zeros(n_ladder_samples)
    low = np.zeros(n_ladder_samples)
    steps = np.zeros(n_ladder_samples, dtype=np.int64)
    active = np.arange(n_ladder_samples)
    heights = []
    block = 32
    while active.size:
        x = sample_increments(law, rng, (active.size, block))
        path = S[active, None] + np.cumsum(x, axis=1)
        run_min = np.minimum(np.minimum.accumulate(path, axis=1), low[active, None])
        prev = np.concatenate([low[active, None], run_min[:, :-1]], axis=1)
        new = path < prev - TIE
        h = -path[new]
        heights.append(h[h <= depth + TIE])
        S[active] = path[:, -1]
        low[active] = run_min[:, -1]
        steps[active] += block
        active = active[(low[active] >= -depth) & (steps[active] < max_steps)]
        block = min(4096, block * 2) if active.size < 4096 else block
    reached = int(np.sum(low < -depth))
    if reached < 100:
        log.warning("only %d ladder chains reached depth %.3g; V tail under-resolved", reached, depth)
    if reached < n_ladder_samples:
        log.info("%d of %d ladder chains stopped at max_steps", n_ladder_samples - reached, n_ladder_samples)
    h = np.sort(np.concatenate(heights)) if heights else np.empty(0)
    counts = np.searchsorted(h, g + TIE, side="right")
    values = 1.0 + counts / n_ladder_samples
    values[0] = 1.0
    k = None
    if extrapolation == "power":
        alpha, beta, _, _ = tail_constants(law)
        k = alpha * (1 - positivity_index_rho((alpha, beta)))
    return RenewalTable(g, values, n_ladder_samples, reached, tail_index=k)


def harmonic_residual(law: EnvironmentLaw, V: RenewalTable, x, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """E_emp[V(x + X); x + X >= 0] / V(x) - 1 at each x, common draws."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    X = sample_increments(law, rng, n_draws)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        out[i] = np.mean(V(xi + X)) / V(xi) - 1
    return out


# ---------------------------------------------------------------------------
# the measure P+


def _upper_increment(law: EnvironmentLaw) -> float:
    if isinstance(law, TwoPoint):
        return law.a
    if isinstance(law, BoundedUniform):
        return law.hi
    return scaling_sequence_cn(law, 10**6)


def conditioned_positive_sampler(
    law: EnvironmentLaw,
    V: RenewalTable,
    n: int,
    rng: np.random.Generator,
    *,
    batch: int = 4096,
    report: dict | None = None,
) -> WalkPath:
    """Path of length n under P+ by per-step rejection.

    From state x a proposal X is accepted with probability
    V(x + X) 1{x + X >= 0} / (K(x) V(x)), where K(x) = V(x + q)/V(x) and q
    is the increment's upper 10^-6 quantile (exact maximum for bounded
    laws).  Proposals beyond q are accepted outright and counted in
    ``report["bound_violations"]``.
    """
    q = _upper_increment(law)
    x = 0.0
    inc = np.empty(n)
    violations = 0
    for k in range(n):
        vx = V(x)
        K = V(x + q) / vx if vx > 0 else math.inf
        if not (vx > 0 and math.isfinite(K) and K >= 1):
            raise RuntimeError(f"no acceptance bound at state x={x!r} (V={vx!r})")
        while True:
            X = sample_increments(law, rng, batch)
            ratio = V(x + X) / (K * vx)
            acc = np.flatnonzero(rng.random(batch) < ratio)
            if acc.size:
                j = acc[0]
                violations += int(ratio[j] > 1)
                inc[k] = X[j]
                x += X[j]
                break
    if report is not None:
        report["bound_violations"] = violations
        report["approximate"] = not V.exact
    return WalkPath.from_increments(inc)


# ---------------------------------------------------------------------------
# meanders


@dataclass(frozen=True)
class MeanderSample:
    scaled_path: np.ndarray
    endpoint: float
    weight: float


@dataclass(frozen=True)
class MeanderBatch:
    n: int
    cn: float
    alpha: float
    t_grid: np.ndarray
    scaled_paths: np.ndarray
    endpoints: np.ndarray
    weights: np.ndarray
    n_proposed: int
    strict: bool

    @property
    def n_accepted(self) -> int:
        return int(self.endpoints.size)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def samples(self) -> list[MeanderSample]:
        return [MeanderSample(p, float(e), float(w)) for p, e, w in zip(self.scaled_paths, self.endpoints, self.weights)]


def tilt_weights(law: EnvironmentLaw, endpoints, cn: float, kind: str = "power") -> np.ndarray:
    """Weights turning meander endpoint samples into the tilted law.

    ``power``: endpoint^-alpha.  ``tail``: P(X <= -c_n endpoint)/P(X <= -c_n),
    which equals endpoint^-alpha on the pure power-tail region and stays
    bounded near zero.
    """
    e = np.asarray(endpoints, dtype=float)
    if kind == "power":
        alpha = tail_constants(law)[0]
        with np.errstate(divide="ignore"):
            return e ** (-alpha)
    if kind == "tail":
        return left_cdf(law, -cn * e) / left_cdf(law, -cn)
    raise ValueError(f"unknown weight kind {kind!r}")


def meander_batch(
    law: EnvironmentLaw,
    n: int,
    t_grid,
    n_samples: int,
    rng: np.random.Generator,
    *,
    tilt: bool = False,
    strict: bool = True,
    weight: str = "power",
    cn: float | None = None,
    convention: str = "stable",
    max_proposals: int = 10**9,
    min_acceptance: float = 0.0,
    chunk: int = 1 << 18,
) -> MeanderBatch:
    """Rejection samples of the walk conditioned on {tau- > n}
    (``strict``) or {T- > n}, scaled by c_n at times floor(n t)."""
    t = np.asarray(t_grid, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t_grid must lie in [0, 1]")
    cn = scaling_sequence_cn(law, n, convention) if cn is None else cn
    steps = np.floor(n * t + 1e-9).astype(int)
    paths, ends = [], []
    have = proposed = 0
    size = chunk
    while have < n_samples:
        run = survivor_walks(law, n, size, rng, kill_on_zero=strict, record_steps=steps, chunk=chunk)
        proposed += size
        paths.append(run.recorded)
        ends.append(run.final)
        have += run.final.size
        rate = have / proposed
        if proposed >= max_proposals or (proposed >= chunk and rate < min_acceptance):
            if have < n_samples:
                raise RuntimeError(
                    f"meander sampler stopped: {have} accepted of {proposed} proposals (rate {rate:.2e})"
                )
        if rate > 0:
            size = int(min(max(chunk, 1.1 * (n_samples - have) / rate), max(chunk, max_proposals - proposed)))
    sp = np.concatenate(paths)[:n_samples] / cn
    e = np.concatenate(ends)[:n_samples] / cn
    log.info("meander n=%d: acceptance %.3e", n, have / proposed)
    w = tilt_weights(law, e, cn, weight) if tilt else np.ones_like(e)
    alpha = tail_constants(law)[0]
    return MeanderBatch(n, cn, alpha, t, sp, e, w, proposed, strict)


def meander_sampler(law, n, t_grid, tilt, rng, **kw) -> MeanderSample:
    """A single meander sample; see :func:`meander_batch`."""
    return meander_batch(law, n, t_grid, 1, rng, tilt=tilt, chunk=kw.pop("chunk", 4096), **kw).samples()[0]


# ---------------------------------------------------------------------------
# overshoots and undershoots at the first passage


def overshoot_undershoot_estimate(
    law: EnvironmentLaw,
    n: int,
    u_list,
    v_list,
    n_reps: int,
    rng: np.random.Generator,
    *,
    convention: str = "stable",
    min_events: int = 200,
) -> list[dict]:
    """P(S_n <= -u c_n | passage = n) and P(S_{n-1} >= v c_n | passage = n).

    For each passage time (weak: tau-, strict: T-) the direct estimate counts
    paths with passage exactly at n; the Rao-Blackwellised estimate averages
    the closed-form last-step probabilities over paths still positive at
    n - 1.
    """
    cn = scaling_sequence_cn(law, n, convention)
    rows = []
    for cond, kill_on_zero in (("tau", True), ("T", False)):
        run = survivor_walks(law, n, n_reps, rng, kill_on_zero=kill_on_zero, watch_steps=[n])
        prev, last = run.killed[n]
        events = prev.size
        if events < min_events:
            log.warning("only %d paths with %s = %d (n_reps=%d)", events, cond, n, n_reps)
        s = run.before[n]
        death = left_cdf(law, -s) if kill_on_zero else _left_open(law, -s)
        for kind, levels in (("u", u_list), ("v", v_list)):
            for lev in levels:
                if kind == "u":
                    k = int(np.sum(last <= -lev * cn))
                    num = left_cdf(law, -s - lev * cn)
                else:
                    k = int(np.sum(prev >= lev * cn))
                    num = np.where(s >= lev * cn, death, 0.0)
                direct = wilson_ci(k, events)
                try:
                    rb = ratio_ci(num, death, paired=True) if s.size > 1 else None
                except ValueError:
                    rb = None
                rows.append(
                    {
                        "n": n,
                        "condition": cond,
                        "kind": kind,
                        "level": float(lev),
                        "count": k,
                        "events": events,
                        "n_reps": n_reps,
                        "estimate": direct.mean,
                        "stderr": direct.stderr,
                        "ci_low": direct.ci_low,
                        "ci_high": direct.ci_high,
                        "rb_estimate": rb.mean if rb else float("nan"),
                        "rb_stderr": rb.stderr if rb else float("nan"),
                    }
                )
    return rows


def overshoot_reference(endpoints, weights, alpha: float, u_list, v_list, *, law=None, cn=None) -> list[dict]:
    """Meander-based limits E[(u + L)^-a]/E[L^-a] and P(tilted L >= v).

    ``weights`` tilt the meander endpoints towards L^-a.  When ``law`` and
    ``cn`` are given the u-ratio uses the finite-n analogue
    P(X <= -(u + L) c_n)/P(X <= -L c_n) instead of (L/(u + L))^a.
    """
    e = np.asarray(endpoints, dtype=float)
    w = np.asarray(weights, dtype=float)
    rows = []
    for u in u_list:
        if law is not None and cn is not None:
            f = lambda x, u=u: np.where(x > 0, left_cdf(law, -(u + x) * cn) / left_cdf(law, -x * cn), 0.0)
        else:
            f = lambda x, u=u: np.where(x > 0, (x / (u + x)) ** alpha, 0.0)
        est = self_normalized(e, w, f)
        rows.append({"kind": "u", "level": float(u), "reference": est.estimate.mean, "ref_stderr": est.estimate.stderr, "ess": est.ess})
    for v in v_list:
        est = self_normalized(e, w, lambda x, v=v: (x >= v).astype(float))
        rows.append({"kind": "v", "level": float(v), "reference": est.estimate.mean, "ref_stderr": est.estimate.stderr, "ess": est.ess})
    return rows


def meander_overshoot_reference(batch: MeanderBatch, u_list, v_list, *, law=None) -> list[dict]:
    """:func:`overshoot_reference` on a tilted :class:`MeanderBatch`."""
    return overshoot_reference(
        batch.endpoints, batch.weights, batch.alpha, u_list, v_list, law=law, cn=batch.cn if law is not None else None
    )


def two_point_harmonic_defect(law: TwoPoint, levels: int) -> float:
    """max_j |w V((j+1)a) + (1-w) V((j-1)a) 1{j >= 1} - V(ja)| for the exact V."""
    j = np.arange(levels + 1, dtype=float)
    V = lambda k: two_point_renewal(law, k * law.a)
    lhs = law.w * V(j + 1) + (1 - law.w) * np.where(j >= 1, V(np.maximum(j - 1, 0)), 0.0)
    return float(np.max(np.abs(lhs - V(j))))
