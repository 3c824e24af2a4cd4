"""Branching process in random environment.

Exact quenched formulas for geometric (fractional-linear) offspring laws,
direct population simulation, the zeta(b) moment diagnostic and annealed
estimators of P(T = n) and P(Z_{n-1} > a, T = n).

For geometric offspring with mean e^{X_k} in generation k - 1,

    1/(1 - F_{0,n}(s)) = A_{n-1} + e^{-S_n}/(1 - s),   A_n = sum_{k<=n} e^{-S_k},

so P_f(Z_n > 0) = H_n = 1/A_n and P_f(T = n) = H_{n-1} H_n e^{-S_n}.
Everything is carried in log space: S_n swings by +-c_n and e^{-S} leaves
double range quickly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .env_laws import (
    EnvironmentLaw,
    TwoPoint,
    one_step_death_given_size,
    sample_increments,
    smoothed_death_probability,
    tail_constants,
)
from .estimators import McEstimate, effective_sample_size, moments_ci

log = logging.getLogger(__name__)

# environments whose survival probability fell below e^LOG_FLOOR contribute
# less than e^LOG_FLOOR to any annealed probability and are dropped
LOG_FLOOR = -40.0


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# offspring laws


@dataclass(frozen=True)
class Geometric:
    """p.g.f. e^{-x}/(1 + e^{-x} - s): P(k) = f0 (1 - f0)^k with f0 = 1/(1 + e^x)."""

    x: float

    @property
    def f0(self) -> float:
        return float(np.exp(_log_sigmoid(-self.x)))

    @property
    def mean(self) -> float:
        return math.exp(self.x)

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        e = math.exp(-self.x)
        return e / (e + (1 - s))

    def pmf(self, k):
        k = np.asarray(k, dtype=float)
        lf0 = _log_sigmoid(-self.x)
        l1 = _log_sigmoid(self.x)
        return np.exp(lf0 + k * l1)

    def sample(self, rng: np.random.Generator, size=None):
        # inverse transform: K = floor(log U / log(1 - f0))
        u = 1.0 - rng.random(size)
        return np.floor(np.log(u) / _log_sigmoid(self.x)).astype(np.int64)


@dataclass(frozen=True)
class FiniteSupport:
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("offspring probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @property
    def f0(self) -> float:
        return self.probs[0]

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))

    def pgf(self, s):
        return np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), self.probs)

    def pmf(self, k):
        k = np.asarray(k)
        p = np.asarray(self.probs)
        return np.where((k >= 0) & (k < p.size), p[np.clip(k, 0, p.size - 1)], 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(len(self.probs), size=size, p=self.probs)


OffspringLaw = Union[Geometric, FiniteSupport]


def _sum_offspring(law: OffspringLaw, z: int, rng: np.random.Generator) -> int:
    if z == 0:
        return 0
    if isinstance(law, Geometric):
        f0 = law.f0
        if f0 > 0 and z / f0 < 1e15:
            return int(rng.negative_binomial(z, f0))
        # survivors ~ Bin(z, 1 - f0), each leaving 1 + Geom(f0); works when
        # f0 underflows.  Sizes past the float range are clamped there.
        lz = _branch_log(np.array([math.log(z)]), _log_sigmoid(law.x), _log_sigmoid(-law.x), rng)[0]
        return int(round(math.exp(min(lz, 700.0)))) if np.isfinite(lz) else 0
    counts = rng.multinomial(z, law.probs)
    return int(np.dot(counts, np.arange(len(law.probs))))


# ---------------------------------------------------------------------------
# environments and quenched functionals


@dataclass(frozen=True)
class GeometricEnvironment:
    """Environment X_1..X_N with partial sums S and log A_k, log H_k = -log A_k."""

    increments: np.ndarray
    sums: np.ndarray
    log_A: np.ndarray

    @classmethod
    def from_increments(cls, increments) -> "GeometricEnvironment":
        x = np.asarray(increments, dtype=float)
        s = np.concatenate([[0.0], np.cumsum(x)])
        return cls(x, s, np.logaddexp.accumulate(-s))

    @classmethod
    def sample(cls, law: EnvironmentLaw, n: int, rng: np.random.Generator) -> "GeometricEnvironment":
        return cls.from_increments(sample_increments(law, rng, n))

    @property
    def length(self) -> int:
        return int(self.increments.size)

    @property
    def A(self) -> np.ndarray:
        return np.exp(self.log_A)

    @property
    def H(self) -> np.ndarray:
        return np.exp(-self.log_A)

    def offspring(self, k: int) -> Geometric:
        """Offspring law of generation k (0-based), with mean e^{X_{k+1}}."""
        return Geometric(float(self.increments[k]))

    def offspring_sequence(self) -> list[Geometric]:
        return [Geometric(float(x)) for x in self.increments]


def _check_n(env: GeometricEnvironment, n: int, lo: int = 0):
    if not lo <= n <= env.length:
        raise ValueError(f"n={n} outside [{lo}, {env.length}]")


def quenched_survival(env: GeometricEnvironment, n: int) -> float:
    """P_f(Z_n > 0) = H_n."""
    _check_n(env, n)
    return float(np.exp(-env.log_A[n]))


def quenched_extinction_at(env: GeometricEnvironment, n: int) -> float:
    """P_f(T = n) = H_{n-1} H_n e^{-S_n}."""
    _check_n(env, n, 1)
    return float(np.exp(-env.log_A[n - 1] - env.log_A[n] - env.sums[n]))


def quenched_extinction_all(env: GeometricEnvironment) -> np.ndarray:
    """P_f(T = k) for k = 1..N."""
    return np.exp(-env.log_A[:-1] - env.log_A[1:] - env.sums[1:])


def quenched_population_pmf(env: GeometricEnvironment, n: int, j) -> np.ndarray | float:
    """P_f(Z_n = j) = H_n^2 e^{-S_n} (1 - H_n e^{-S_n})^{j-1}, j >= 1."""
    _check_n(env, n)
    j = np.asarray(j, dtype=float)
    if np.any(j < 1):
        raise ValueError("j must be >= 1")
    lh, s = -env.log_A[n], env.sums[n]
    lpi = lh - s
    with np.errstate(divide="ignore"):
        lr = np.log1p(-np.exp(lpi))
    tail = np.where(j == 1, 0.0, (j - 1) * lr)
    out = np.exp(2 * lh - s + tail)
    return out if out.ndim else float(out)


def _joint_tail_log(log_h, s_prev, x_last, a):
    """log P_f(Z_{n-1} > a, T = n) from H_{n-1}, S_{n-1}, X_n (arrays).

    Z_{n-1} given survival is geometric with success pi = H e^{-S}; each
    of j individuals dies with f_{n-1}(0) = g = sigmoid(-X_n), so the sum
    over j > a is H pi g (r g)^a / (1 - r g) with r = 1 - pi.
    """
    log_h = np.asarray(log_h, dtype=float)
    lpi = log_h - np.asarray(s_prev, dtype=float)
    lg = _log_sigmoid(-np.asarray(x_last, dtype=float))
    with np.errstate(divide="ignore"):
        lr = np.log1p(-np.exp(np.minimum(lpi, 0.0)))
    # 1 - r g = sigmoid(X) + pi sigmoid(-X)
    lden = np.logaddexp(_log_sigmoid(x_last), lpi + lg)
    a = np.asarray(a, dtype=float)
    with np.errstate(invalid="ignore"):
        power = np.where(a == 0, 0.0, a * (lr + lg))
    return log_h + lpi + lg + power - lden


def quenched_joint_tail(env: GeometricEnvironment, n: int, a) -> float | np.ndarray:
    """P_f(Z_{n-1} > a, T = n) in closed form (geometric-series sum)."""
    _check_n(env, n, 1)
    a = np.floor(np.asarray(a, dtype=float))
    if np.any(a < 0):
        raise ValueError("a must be nonnegative")
    out = np.exp(_joint_tail_log(-env.log_A[n - 1], env.sums[n - 1], env.increments[n - 1], a))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# population simulation


@dataclass(frozen=True)
class PopulationTrajectory:
    sizes: tuple
    extinction_time: int | None
    capped: bool = False

    @property
    def extinct(self) -> bool:
        return self.extinction_time is not None


def simulate_population(
    offspring_sequence: Sequence[OffspringLaw], rng: np.random.Generator, cap: int = 10**9
) -> PopulationTrajectory:
    """Z_0 = 1 forward through the given generations; stops at extinction,
    at the end of the sequence, or when Z exceeds ``cap``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    sizes = [1]
    z = 1
    for k, law in enumerate(offspring_sequence):
        z = _sum_offspring(law, z, rng)
        sizes.append(z)
        if z == 0:
            return PopulationTrajectory(tuple(sizes), k + 1, False)
        if z > cap:
            return PopulationTrajectory(tuple(sizes), None, True)
    return PopulationTrajectory(tuple(sizes), None, False)


def simulate_extinction_times(
    law: EnvironmentLaw,
    n_max: int,
    n_runs: int,
    rng: np.random.Generator,
    *,
    env: np.ndarray | None = None,
) -> np.ndarray:
    """Extinction times of ``n_runs`` geometric BPREs up to ``n_max``.

    Each run draws its own environment unless fixed increments ``env`` are
    given.  Sizes are held in log space so very large populations are
    carried (and may still die out) without a cap.  Runs alive at n_max
    get time 0.
    """
    logz = np.zeros(n_runs)
    t = np.zeros(n_runs, dtype=np.int64)
    live = np.arange(n_runs)
    for k in range(1, n_max + 1):
        x = np.full(live.size, env[k - 1]) if env is not None else sample_increments(law, rng, live.size)
        lz = _branch_log(logz[live], _log_sigmoid(x), _log_sigmoid(-x), rng)
        logz[live] = lz
        dead = ~np.isfinite(lz)
        t[live[dead]] = k
        live = live[~dead]
        if live.size == 0:
            break
    return t


# ---------------------------------------------------------------------------
# zeta(b)


def _zeta_geometric(x, b: int):
    """zeta(b) for Geometric(x).

    With r = sigmoid(x), f0 = 1 - r and y = e^{-x}, summing k^2 f0 r^k over
    k >= b gives r^b [2 + (1 + 2b) y + b^2 y^2].  For b >= 2 this is the
    bounded r^{b-2} (2 r^2 + (1 + 2b) r f0 + b^2 f0^2), e.g. 2 + f0 + f0^2
    at b = 2.
    """
    x = np.asarray(x, dtype=float)
    lr = _log_sigmoid(x)
    if b >= 2:
        r, f0 = np.exp(lr), np.exp(_log_sigmoid(-x))
        return r ** (b - 2) * (2 * r * r + (1 + 2 * b) * r * f0 + b * b * f0 * f0)
    lb = np.logaddexp(math.log(2), math.log(1 + 2 * b) - x)
    if b:
        lb = np.logaddexp(lb, -2 * x)
    return np.exp(b * lr + lb)


def zeta_value(offspring: OffspringLaw, b: int, x: float | None = None) -> float:
    """zeta(b) = e^{-2X} sum_{k>=b} k^2 f_k with X = log f'(1) unless given."""
    if b < 0:
        raise ValueError("b must be nonnegative")
    if isinstance(offspring, Geometric):
        if x is None or x == offspring.x:
            return float(_zeta_geometric(offspring.x, b))
        f0 = offspring.f0
        k = np.arange(b)
        head = float(np.sum(k * k * offspring.pmf(k))) if b else 0.0
        return math.exp(-2 * x) * ((1 - f0) * (2 - f0) / f0**2 - head)
    p = np.asarray(offspring.probs)
    k = np.arange(p.size)
    if x is None:
        m = offspring.mean
        x = math.log(m) if m > 0 else -math.inf
    return float(math.exp(-2 * x) * np.sum((k * k * p)[b:]))


@dataclass(frozen=True)
class ZetaDiagnostic:
    b: int
    delta: float
    samples: np.ndarray
    moment_estimate: McEstimate
    tail_table: tuple


def zeta_and_moment_check(
    offspring_family: str | Callable[[float], OffspringLaw],
    law: EnvironmentLaw,
    b: int,
    delta: float,
    n_samples: int,
    rng: np.random.Generator,
) -> ZetaDiagnostic:
    """Sample zeta(b) over environment draws and estimate E(log+ zeta(b))^(alpha+delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    xs = sample_increments(law, rng, n_samples)
    if offspring_family == "geometric":
        z = _zeta_geometric(xs, b)
    else:
        z = np.array([zeta_value(offspring_family(x), b, x) for x in xs])
    alpha = tail_constants(law)[0]
    with np.errstate(divide="ignore"):
        lp = np.maximum(np.log(z), 0.0)
    moment = lp ** (alpha + delta)
    thresholds = np.array([1, 2, 4, 8, 16, 64, 256], dtype=float)
    table = tuple((float(c), float(np.mean(z > c))) for c in thresholds)
    return ZetaDiagnostic(b, delta, z, moments_ci(moment.sum(), (moment**2).sum(), moment.size), table)


# ---------------------------------------------------------------------------
# exact enumeration for the two-point law


def _enumerate_two_point(law: TwoPoint, n: int):
    if n > 20:
        raise ValueError("enumeration limited to n <= 20")
    codes = np.arange(2**n)[:, None]
    up = (codes >> np.arange(n)[None, :]) & 1
    x = np.where(up == 1, law.a, -law.a).astype(float)
    k = up.sum(axis=1)
    # 0 * log 0 counts as 0 so the degenerate w in {0, 1} laws keep their path
    with np.errstate(divide="ignore", invalid="ignore"):
        lw, lv = np.log(law.w), np.log1p(-law.w)
        lp = np.where(k > 0, k * lw, 0.0) + np.where(n - k > 0, (n - k) * lv, 0.0)
    prob = np.exp(lp)
    keep = prob > 0
    return x[keep], prob[keep]


def brute_force_extinction(law: TwoPoint, n: int) -> float:
    """Exact P(T = n) by enumerating all 2^n environments."""
    if not isinstance(law, TwoPoint):
        raise TypeError("enumeration needs a TwoPoint law")
    if n < 1 or n > 20:
        raise ValueError("need 1 <= n <= 20")
    x, prob = _enumerate_two_point(law, n)
    s = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    la = np.logaddexp.accumulate(-s, axis=1)
    return float(np.sum(prob * np.exp(-la[:, n - 1] - la[:, n] - s[:, n])))


def brute_force_survival(law: TwoPoint, n: int) -> float:
    """Exact P(Z_n > 0) = E[H_n]."""
    if n == 0:
        return 1.0
    x, prob = _enumerate_two_point(law, n)
    s = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    la = np.logaddexp.accumulate(-s, axis=1)
    return float(np.sum(prob * np.exp(-la[:, n])))


# ---------------------------------------------------------------------------
# annealed estimators


@dataclass(frozen=True)
class ExtinctionCurve:
    """Annealed P(T = k) and P(T > k), k = 1..n_max, as sufficient statistics
    (sums and sums of squares over environments), so replicas merge by
    addition."""

    n_envs: int
    sums: np.ndarray
    sums_sq: np.ndarray
    surv_sums: np.ndarray
    surv_sums_sq: np.ndarray
    smoothed: bool

    @staticmethod
    def _moments(tot, tot2, n):
        mean = tot / n
        var = np.maximum(tot2 / n - mean**2, 0.0) * n / max(n - 1, 1)
        return mean, np.sqrt(var / n)

    @property
    def mean(self) -> np.ndarray:
        return self.sums / self.n_envs

    @property
    def stderr(self) -> np.ndarray:
        return self._moments(self.sums, self.sums_sq, self.n_envs)[1]

    def estimate(self, n: int) -> McEstimate:
        m, se = self._moments(self.sums[n - 1], self.sums_sq[n - 1], self.n_envs)
        return McEstimate.normal(m, se, self.n_envs)

    def survival(self, n: int) -> McEstimate:
        """P(T > n) = E[H_n]."""
        m, se = self._moments(self.surv_sums[n - 1], self.surv_sums_sq[n - 1], self.n_envs)
        return McEstimate.normal(m, se, self.n_envs)

    def merge(self, other: "ExtinctionCurve") -> "ExtinctionCurve":
        if self.sums.size != other.sums.size or self.smoothed != other.smoothed:
            raise ValueError("curves are not compatible")
        return ExtinctionCurve(
            self.n_envs + other.n_envs,
            self.sums + other.sums,
            self.sums_sq + other.sums_sq,
            self.surv_sums + other.surv_sums,
            self.surv_sums_sq + other.surv_sums_sq,
            self.smoothed,
        )


def annealed_extinction_curve(
    law: EnvironmentLaw,
    n_max: int,
    n_envs: int,
    rng: np.random.Generator,
    *,
    smooth_last_step: bool = False,
    chunk: int = 1 << 16,
    log_floor: float = LOG_FLOOR,
) -> ExtinctionCurve:
    """Rao-Blackwellised estimates of P(T = k) for every k <= n_max.

    Each environment contributes P_f(T = k) at every k.  With
    ``smooth_last_step`` the last increment is integrated out too:
    E[P_f(T = k) | X_1..X_{k-1}] = H_{k-1} psi(log A_{k-1} + S_{k-1}) with
    psi(b) = E[1/(1 + e^{b + X})].
    """
    tot = np.zeros(n_max)
    tot2 = np.zeros(n_max)
    sv = np.zeros(n_max)
    sv2 = np.zeros(n_max)
    done = 0
    while done < n_envs:
        m = min(chunk, n_envs - done)
        done += m
        s = np.zeros(m)
        la = np.zeros(m)
        for k in range(1, n_max + 1):
            if smooth_last_step:
                v = np.exp(-la) * smoothed_death_probability(law, la + s)
            s = s + sample_increments(law, rng, s.size)
            la_new = np.logaddexp(la, -s)
            if not smooth_last_step:
                v = np.exp(-la - la_new - s)
            h = np.exp(-la_new)
            tot[k - 1] += v.sum()
            tot2[k - 1] += (v * v).sum()
            sv[k - 1] += h.sum()
            sv2[k - 1] += (h * h).sum()
            keep = -la_new > log_floor
            s, la = s[keep], la_new[keep]
            if s.size == 0:
                break
    return ExtinctionCurve(n_envs, tot, tot2, sv, sv2, smooth_last_step)


def annealed_extinction_estimate(
    law: EnvironmentLaw, n: int, n_envs: int, rng: np.random.Generator, **kw
) -> McEstimate:
    """Mean over environments of P_f(T = n); no population is simulated."""
    return annealed_extinction_curve(law, n, n_envs, rng, **kw).estimate(n)


def indicator_extinction_estimate(law: EnvironmentLaw, n: int, n_runs: int, rng: np.random.Generator) -> McEstimate:
    """Plain Monte Carlo 1{T = n} over simulated populations."""
    t = simulate_extinction_times(law, n, n_runs, rng)
    hit = (t == n).astype(float)
    return moments_ci(hit.sum(), hit.sum(), n_runs)


def _env_prefix(law, n_prev, m, rng, *, strict_positive=False, log_floor=LOG_FLOOR):
    """Simulate m environment prefixes of length n_prev.

    Returns (S_{n_prev}, log A_{n_prev}, n_kept) for prefixes that were not
    dropped; with ``strict_positive`` prefixes with T- <= n_prev are dropped
    (rejection on {T- > n_prev}), otherwise only negligible ones are.
    """
    s = np.zeros(m)
    la = np.zeros(m)
    for _ in range(n_prev):
        s = s + sample_increments(law, rng, s.size)
        la = np.logaddexp(la, -s)
        keep = -la > log_floor
        if strict_positive:
            keep &= s >= 0
        s, la = s[keep], la[keep]
        if s.size == 0:
            break
    return s, la


def _prefix_below(law, n_prev, m, rng, log_floor=LOG_FLOOR):
    """Prefixes with T- <= n_prev (the complement stratum), as (S, log A)."""
    s = np.zeros(m)
    la = np.zeros(m)
    dipped = np.zeros(m, dtype=bool)
    for _ in range(n_prev):
        s = s + sample_increments(law, rng, s.size)
        la = np.logaddexp(la, -s)
        dipped |= s < 0
        keep = -la > log_floor
        s, la, dipped = s[keep], la[keep], dipped[keep]
    return s[dipped], la[dipped]


def annealed_joint_estimate(
    law: EnvironmentLaw,
    n: int,
    x_list,
    n_envs: int,
    rng: np.random.Generator,
    *,
    cn: float,
    method: str = "two_stage",
    log_floor: float = LOG_FLOOR,
    min_ess: float = 100.0,
) -> list[dict]:
    """Estimates of P(Z_{n-1} > e^{x c_n}, T = n) for each x.

    ``single``: plain average of the quenched joint tail over environments.
    ``two_stage``: stratified on {T- > n-1}; stratum 1 prefixes come from
    rejection and are weighted by the empirical P(T- > n-1), stratum 2
    (prefixes that dipped below zero) from a separate unconditioned run.
    """
    xs = np.asarray(x_list, dtype=float)
    a = np.floor(np.exp(np.minimum(xs * cn, 700.0)))

    def tails(s, la):
        if s.size == 0:
            return np.zeros((0, xs.size))
        x_last = sample_increments(law, rng, s.size)
        return np.exp(_joint_tail_log(-la[:, None], s[:, None], x_last[:, None], a[None, :]))

    rows = []
    if method == "single":
        s, la = _env_prefix(law, n - 1, n_envs, rng, log_floor=log_floor)
        v = tails(s, la)
        for i, x in enumerate(xs):
            est = moments_ci(v[:, i].sum(), (v[:, i] ** 2).sum(), n_envs)
            rows.append(_joint_row(n, x, a[i], est, effective_sample_size(v[:, i]), n_envs, method))
    elif method == "two_stage":
        s1, la1 = _env_prefix(law, n - 1, n_envs, rng, strict_positive=True, log_floor=log_floor)
        p1 = s1.size / n_envs
        v1 = tails(s1, la1)
        s2, la2 = _prefix_below(law, n - 1, n_envs, rng, log_floor=log_floor)
        v2 = tails(s2, la2)
        for i, x in enumerate(xs):
            m1 = v1[:, i].mean() if s1.size else 0.0
            var1 = v1[:, i].var(ddof=1) / s1.size if s1.size > 1 else 0.0
            sum2 = v2[:, i].sum()
            m2 = sum2 / n_envs
            var2 = max((v2[:, i] ** 2).sum() / n_envs - m2**2, 0.0) / n_envs
            mean = p1 * m1 + m2
            var = p1**2 * var1 + m1**2 * p1 * (1 - p1) / n_envs + var2
            est = McEstimate.normal(mean, math.sqrt(var), n_envs)
            ess = effective_sample_size(v1[:, i]) if s1.size else 0.0
            rows.append(_joint_row(n, x, a[i], est, ess, n_envs, method, stratum1=s1.size))
    else:
        raise ValueError(f"unknown method {method!r}")
    for r in rows:
        if r["ess"] < min_ess:
            log.warning("joint estimate n=%d x=%g: ESS %.1f below %g", n, r["x"], r["ess"], min_ess)
    return rows


def _joint_row(n, x, a, est, ess, n_envs, method, **extra):
    row = {"n": n, "x": float(x), "threshold": float(a), **est.as_dict(), "ess": float(ess), "method": method}
    row["n_samples"] = n_envs
    row.update(extra)
    return row


# ---------------------------------------------------------------------------
# population sizes along the path, conditioned on T = n


EXACT_LIMIT = 1e12


def _branch_log(logz, log_s, log_pi, rng):
    """One fractional-linear transition applied to populations held as log Z.

    Each of Z individuals independently has descendants with probability s;
    a surviving line leaves 1 + Geometric(pi) of them.  Survivor counts are
    exact binomials below EXACT_LIMIT, Poisson when Z s is moderate, and
    deterministic above; the descendant total is exact negative binomial
    while its mean stays below 1e15 and Gamma(N) (1 - pi)/pi otherwise.
    Entries with logz = -inf stay extinct.
    """
    logz = np.asarray(logz, dtype=float)
    log_s = np.broadcast_to(np.minimum(log_s, 0.0), logz.shape)
    log_pi = np.broadcast_to(np.minimum(log_pi, 0.0), logz.shape)
    out = np.full(logz.shape, -np.inf)
    live = np.isfinite(logz)
    lim = math.log(EXACT_LIMIT)
    # survivors N, as a float count and its log
    n_surv = np.zeros(logz.shape)
    log_n = np.full(logz.shape, -np.inf)
    small = live & (logz <= lim)
    if np.any(small):
        z = np.rint(np.exp(logz[small])).astype(np.int64)
        n_surv[small] = rng.binomial(z, np.exp(log_s[small]))
    lmean = logz + log_s
    mid = live & ~small & (lmean <= lim)
    if np.any(mid):
        n_surv[mid] = rng.poisson(np.exp(lmean[mid]))
    with np.errstate(divide="ignore"):
        log_n[small | mid] = np.log(n_surv[small | mid])
    big = live & ~small & ~mid
    log_n[big] = lmean[big]
    pos = np.isfinite(log_n)
    exact = pos & ~big & (log_n - log_pi < math.log(1e15))
    if np.any(exact):
        n = n_surv[exact].astype(np.int64)
        out[exact] = np.log(n + rng.negative_binomial(n, np.exp(log_pi[exact])))
    approx = pos & ~exact
    if np.any(approx):
        ln = log_n[approx]
        lg = np.where(ln < lim, np.log(rng.gamma(np.exp(np.minimum(ln, lim)))), ln)
        with np.errstate(divide="ignore"):
            l1mp = np.log1p(-np.exp(log_pi[approx]))
        out[approx] = np.logaddexp(ln, lg + l1mp - log_pi[approx])
    return out


def _advance_population(logz, s_j, s_k, log_seg, rng):
    """Move populations from generation j to k on a fixed environment.

    With D = sum_{i=j}^{k} e^{-S_i} (``log_seg``), a single ancestor at j
    has descendants at k with probability e^{-S_j}/D, and given that their
    number is geometric on {1, 2, ...} with success probability e^{-S_k}/D.
    D is accumulated per segment: A_k - A_{j-1} cancels catastrophically
    after a large positive jump.
    """
    return _branch_log(logz, -s_j - log_seg, -s_k - log_seg, rng)


@dataclass(frozen=True)
class ConditionedSizes:
    """Weighted samples of log Z_{floor((n-1)t)} / c_n given T = n.

    ``weights`` are P(Z_n = 0 | Z_{n-1}) averaged over the last
    environment; sum(weights)/n_envs estimates P(T = n).
    """

    n: int
    cn: float
    t_grid: np.ndarray
    scaled_log_sizes: np.ndarray
    weights: np.ndarray
    n_envs: int

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def extinction_probability(self) -> McEstimate:
        w = self.weights
        return moments_ci(w.sum(), (w * w).sum(), self.n_envs)


def conditioned_population_sample(
    law: EnvironmentLaw,
    n: int,
    t_grid,
    n_envs: int,
    rng: np.random.Generator,
    *,
    cn: float,
    chunk: int = 1 << 16,
    log_floor: float = LOG_FLOOR,
) -> ConditionedSizes:
    """Population paths on sampled environments, weighted by the annealed
    one-step death probability at generation n - 1."""
    t = np.asarray(t_grid, dtype=float)
    steps = np.floor((n - 1) * t + 1e-9).astype(int)
    stops = sorted(set(steps.tolist()) | {n - 1})
    out_vals, out_w = [], []
    done = 0
    while done < n_envs:
        m = min(chunk, n_envs - done)
        done += m
        s = np.zeros(m)
        la = np.zeros(m)
        ids = np.arange(m)
        s_j = np.zeros(m)
        seg = np.zeros(m)
        logz = np.zeros(m)
        rec = {0: np.zeros(m)}
        k = 0
        for stop in stops:
            if stop == 0:
                continue
            while k < stop:
                s = s + sample_increments(law, rng, s.size)
                la = np.logaddexp(la, -s)
                seg = np.logaddexp(seg, -s)
                k += 1
                keep = -la > log_floor
                if not np.all(keep):
                    s, la, seg, ids, s_j, logz = s[keep], la[keep], seg[keep], ids[keep], s_j[keep], logz[keep]
            logz = _advance_population(logz, s_j, s, seg, rng)
            full = np.full(m, -np.inf)
            full[ids] = logz
            rec[stop] = full
            alive = np.isfinite(logz)
            s, la, ids, logz = s[alive], la[alive], ids[alive], logz[alive]
            s_j = s.copy()
            seg = -s
        lz_end = rec[n - 1]
        w = np.zeros(m)
        ok = np.isfinite(lz_end)
        w[ok] = one_step_death_given_size(law, lz_end[ok])
        vals = np.column_stack([rec[st] for st in steps]) / cn
        sel = w > 0
        out_vals.append(vals[sel])
        out_w.append(w[sel])
    return ConditionedSizes(n, cn, t, np.concatenate(out_vals), np.concatenate(out_w), n_envs)
