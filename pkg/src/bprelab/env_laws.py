"""Increment laws for the associated random walk.

A law describes X = log f'(1), the log-mean of a generation's offspring
distribution.  All laws expose closed-form tails (except ``ExactStable``,
whose survival is tabulated from a calibration sample), the tail constants
(alpha, beta, p, q), and the scaling sequence c_n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

__all__ = [
    "StabilityParams",
    "TwoPoint",
    "TwoSidedPareto",
    "BoundedUniform",
    "ExactStable",
    "TailProfile",
    "EnvironmentLaw",
    "is_admissible",
    "positivity_index_rho",
    "sample_increment",
    "sample_increments",
    "survival_function",
    "left_cdf",
    "scaling_sequence_cn",
    "tail_constants",
    "tail_profile",
    "smoothed_death_probability",
    "one_step_death_given_size",
    "law_from_spec",
    "law_to_spec",
]

EULER_GAMMA = 0.5772156649015329


def is_admissible(alpha: float, beta: float) -> bool:
    if 0 < alpha < 1:
        return abs(beta) < 1
    if 1 < alpha < 2:
        return abs(beta) <= 1
    if alpha in (1.0, 2.0):
        return beta == 0
    return False


@dataclass(frozen=True)
class StabilityParams:
    alpha: float
    beta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not is_admissible(self.alpha, self.beta):
            raise ValueError(f"(alpha, beta) = ({self.alpha}, {self.beta}) is not admissible")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def condition_A(self) -> bool:
        return self.alpha < 2 and abs(self.beta) < 1


def positivity_index_rho(params: StabilityParams | tuple) -> float:
    """lim P(S_n > 0) for a walk attracted to the stable law (alpha, beta)."""
    if isinstance(params, tuple):
        alpha, beta = params[0], params[1]
    else:
        alpha, beta = params.alpha, params.beta
    if not is_admissible(alpha, beta):
        raise ValueError(f"(alpha, beta) = ({alpha}, {beta}) is not admissible")
    if alpha == 1:
        return 0.5
    return 0.5 + math.atan(beta * math.tan(math.pi * alpha / 2)) / (math.pi * alpha)


# ---------------------------------------------------------------------------
# law variants


@dataclass(frozen=True)
class TwoPoint:
    """X = +a with probability w, -a otherwise."""

    a: float
    w: float = 0.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0 <= self.w <= 1:
            raise ValueError("w must be a probability")


@dataclass(frozen=True)
class TwoSidedPareto:
    """Pure power tails on both sides, shifted to mean zero when alpha > 1.

    With Y = X + centering, P(Y > y) = p (y/x_min)^-alpha and
    P(Y < -y) = q (y/x_min)^-alpha for y >= x_min; Y has no mass in
    (-x_min, x_min).
    """

    alpha: float
    p: float = 0.5
    x_min: float = 1.0
    centering: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not 0 <= self.p <= 1:
            raise ValueError("p must be a probability")
        if not self.x_min > 0:
            raise ValueError("x_min must be positive")
        if self.centering is None:
            c = 0.0
            if self.alpha > 1:
                c = (2 * self.p - 1) * self.x_min * self.alpha / (self.alpha - 1)
            object.__setattr__(self, "centering", c)

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def beta(self) -> float:
        return self.p - self.q


@dataclass(frozen=True)
class BoundedUniform:
    """Uniform on [lo, hi]; the finite-variance contrast law."""

    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("need hi > lo")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0


@dataclass(frozen=True)
class ExactStable:
    """Strictly stable law sampled by the Chambers-Mallows-Stuck transform.

    ``table`` holds a sorted calibration sample used for the survival
    function; build it with :meth:`calibrated`.
    """

    params: StabilityParams
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __hash__(self):
        return hash(("ExactStable", self.params))

    def calibrated(self, rng: np.random.Generator, size: int = 10**7) -> "ExactStable":
        sample = np.sort(_cms_sample(self.params, rng, size))
        return ExactStable(self.params, sample)


EnvironmentLaw = Union[TwoPoint, TwoSidedPareto, BoundedUniform, ExactStable]


@dataclass(frozen=True)
class TailProfile:
    alpha: float
    beta: float
    p: float
    q: float
    rho: float
    cn_table: dict


# ---------------------------------------------------------------------------
# sampling


def _cms_sample(params: StabilityParams, rng: np.random.Generator, size) -> np.ndarray:
    alpha, beta, c = params.alpha, params.beta, params.scale
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if alpha == 1:
        # beta == 0 on the admissible set: Cauchy
        x = np.tan(theta)
        return c * x
    zeta = -beta * math.tan(math.pi * alpha / 2)
    xi = math.atan(-zeta) / alpha
    x = (
        (1 + zeta**2) ** (1 / (2 * alpha))
        * np.sin(alpha * (theta + xi))
        / np.cos(theta) ** (1 / alpha)
        * (np.cos(theta - alpha * (theta + xi)) / w) ** ((1 - alpha) / alpha)
    )
    # ch.f. exp(-c|t|^a (1 - i beta sgn t tan(pi a/2))) has scale c^(1/a)
    return c ** (1 / alpha) * x


def sample_increments(law: EnvironmentLaw, rng: np.random.Generator, size) -> np.ndarray:
    """Draw i.i.d. increments with the given shape."""
    if isinstance(law, TwoPoint):
        up = rng.random(size) < law.w
        return np.where(up, law.a, -law.a)
    if isinstance(law, TwoSidedPareto):
        u = rng.random(size)
        mag = law.x_min * (1.0 - rng.random(size)) ** (-1.0 / law.alpha)
        return np.where(u < law.p, mag, -mag) - law.centering
    if isinstance(law, BoundedUniform):
        return rng.uniform(law.lo, law.hi, size)
    if isinstance(law, ExactStable):
        return _cms_sample(law.params, rng, size)
    raise TypeError(f"unknown law {law!r}")


def sample_increment(law: EnvironmentLaw, rng: np.random.Generator) -> float:
    return float(sample_increments(law, rng, 1)[0])


# ---------------------------------------------------------------------------
# distribution functions


def survival_function(law: EnvironmentLaw, x):
    """P(X > x), vectorised over x."""
    x = np.asarray(x, dtype=float)
    if isinstance(law, TwoPoint):
        out = law.w * (x < law.a) + (1 - law.w) * (x < -law.a)
    elif isinstance(law, TwoSidedPareto):
        y = x + law.centering
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = (np.abs(y) / law.x_min) ** (-law.alpha)
        out = np.where(y >= law.x_min, law.p * r, np.where(y >= -law.x_min, law.p, 1 - law.q * r))
    elif isinstance(law, BoundedUniform):
        out = np.clip((law.hi - x) / (law.hi - law.lo), 0.0, 1.0)
    elif isinstance(law, ExactStable):
        if law.table is None:
            raise ValueError("ExactStable survival needs a calibration table; call .calibrated()")
        out = 1.0 - np.searchsorted(law.table, x, side="right") / law.table.size
    else:
        raise TypeError(f"unknown law {law!r}")
    return out if out.ndim else float(out)


def left_cdf(law: EnvironmentLaw, x):
    """P(X <= x), vectorised over x."""
    x = np.asarray(x, dtype=float)
    if isinstance(law, TwoPoint):
        out = (1 - law.w) * (x >= -law.a) + law.w * (x >= law.a)
        return out if out.ndim else float(out)
    return 1.0 - survival_function(law, x) if x.ndim else 1.0 - float(survival_function(law, x))


def _left_open(law: EnvironmentLaw, x):
    """P(X < x)."""
    if isinstance(law, TwoPoint):
        return (1 - law.w) * (x > -law.a) + law.w * (x > law.a)
    return left_cdf(law, x)


def _abs_tail(law: EnvironmentLaw, x: float) -> float:
    return float(survival_function(law, x)) + float(_left_open(law, -x))


def tail_constants(law: EnvironmentLaw) -> tuple[float, float, float, float]:
    """(alpha, beta, p, q); finite-variance laws report alpha = 2."""
    if isinstance(law, TwoSidedPareto):
        return law.alpha, law.beta, law.p, law.q
    if isinstance(law, ExactStable):
        b = law.params.beta
        return law.params.alpha, b, (1 + b) / 2, (1 - b) / 2
    return 2.0, 0.0, 0.5, 0.5


def _bisect_min(pred, lo: float, hi: float, rtol: float = 1e-9) -> float:
    """Smallest x in (lo, hi] with pred(x) true, assuming pred is monotone."""
    while not pred(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > rtol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _stable_abs_tail_constant(params: StabilityParams) -> float:
    # P(|X| > x) ~ K x^-alpha for ch.f. exp(-c|t|^alpha(...))
    a = params.alpha
    return 2 * math.gamma(a) * math.sin(math.pi * a / 2) / math.pi * params.scale


def scaling_sequence_cn(law: EnvironmentLaw, n: int, convention: str = "quantile") -> float:
    """Normalising constant c_n for S_n.

    ``convention="quantile"`` returns min{x > 0 : P(X > x) <= 1/n}.
    ``convention="stable"`` returns the tail-matched scale with
    n P(|X| > c_n) = (2 - alpha)/alpha (c_n = sigma sqrt(n) for finite
    variance); it is the normalisation under which
    E[meander endpoint^-alpha] = (1 - rho) alpha / (q (2 - alpha)).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if convention == "quantile":
        if isinstance(law, TwoSidedPareto) and law.p * n >= 1:
            x = law.x_min * (law.p * n) ** (1 / law.alpha) - law.centering
            if x > 0:
                return x
        if isinstance(law, BoundedUniform):
            x = law.hi - (law.hi - law.lo) / n
            if x > 0:
                return x
        return _bisect_min(lambda x: survival_function(law, x) <= 1.0 / n, 0.0, 1.0)
    if convention == "stable":
        if isinstance(law, TwoSidedPareto):
            target = (2 - law.alpha) / (law.alpha * n)
            if law.centering == 0:
                return law.x_min * target ** (-1 / law.alpha)
            return _bisect_min(lambda x: _abs_tail(law, x) <= target, 0.0, law.x_min)
        if isinstance(law, ExactStable):
            a = law.params.alpha
            return (n * _stable_abs_tail_constant(law.params) * a / (2 - a)) ** (1 / a)
        if isinstance(law, BoundedUniform):
            return math.sqrt(law.variance * n)
        if isinstance(law, TwoPoint):
            m = law.a * (2 * law.w - 1)
            return math.sqrt((law.a**2 - m**2) * n)
    raise ValueError(f"unknown convention {convention!r}")


def tail_profile(law: EnvironmentLaw, ns, convention: str = "quantile") -> TailProfile:
    alpha, beta, p, q = tail_constants(law)
    rho = 0.5 if alpha == 2 else positivity_index_rho((alpha, beta))
    return TailProfile(alpha, beta, p, q, rho, {int(n): scaling_sequence_cn(law, int(n), convention) for n in ns})


# ---------------------------------------------------------------------------
# one-step death probabilities for the geometric family
#
# smoothed_death_probability(b) = E[1/(1 + e^(b + X))]
#   the probability that a generation with offspring mean e^X kills a
#   geometric population of mean e^b ... in the quenched extinction formula
#   it integrates out the last environment step.
# one_step_death_given_size(y) = E[(1 + e^X)^(-e^y)]
#   P(Z_1 = 0 | Z_0 = e^y), annealed over one geometric generation.

_PSI_B = 45.0
_PSI_STEP = 0.02
_M_Y = 60.0


def _pareto_tail_derivs(law: TwoSidedPareto, x: np.ndarray):
    """F, F', F'', F'''' of P(X <= x) on the pure-power region."""
    a, xm = law.alpha, law.x_min
    y = x + law.centering
    left = y < 0
    z = np.abs(y)
    s = np.where(left, law.q, -law.p) * xm**a
    f0 = np.where(left, law.q * xm**a * z ** (-a), 1 - law.p * xm**a * z ** (-a))
    f1 = np.abs(s) * a * z ** (-a - 1)
    f2 = s * a * (a + 1) * z ** (-a - 2)
    f4 = s * a * (a + 1) * (a + 2) * (a + 3) * z ** (-a - 4)
    return f0, f1, f2, f4


@lru_cache(maxsize=16)
def _psi_table(law: TwoSidedPareto):
    b = np.arange(-_PSI_B, _PSI_B + _PSI_STEP / 2, _PSI_STEP)
    u = np.arange(-40.0, 40.0, 0.01) + 0.005
    du = 0.01
    kern = 0.25 / np.cosh(u / 2) ** 2 * du
    vals = np.empty_like(b)
    for i in range(0, b.size, 256):
        blk = b[i : i + 256, None]
        vals[i : i + 256] = left_cdf(law, u[None, :] - blk) @ kern
    return b, np.log(vals)


def smoothed_death_probability(law: EnvironmentLaw, b):
    """E[1/(1 + exp(b + X))], vectorised over b."""
    b = np.asarray(b, dtype=float)
    if isinstance(law, TwoPoint):
        out = law.w * _sigmoid(-(b + law.a)) + (1 - law.w) * _sigmoid(-(b - law.a))
    elif isinstance(law, BoundedUniform):
        lo, hi = law.lo, law.hi
        out = (np.logaddexp(0, -(b + lo)) - np.logaddexp(0, -(b + hi))) / (hi - lo)
    elif isinstance(law, TwoSidedPareto):
        grid, logv = _psi_table(law)
        out = np.exp(np.interp(b, grid, logv))
        far = np.abs(b) > _PSI_B
        if np.any(far):
            f0, _, f2, f4 = _pareto_tail_derivs(law, -b[far])
            # logistic moments: E U^2 = pi^2/3, E U^4 = 7 pi^4/15
            out[far] = f0 + f2 * np.pi**2 / 6 + f4 * 7 * np.pi**4 / 360
    else:
        raise NotImplementedError(f"no smoothed death probability for {type(law).__name__}")
    return out if out.ndim else float(out)


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


@lru_cache(maxsize=16)
def _m_table(law: EnvironmentLaw):
    ys = np.arange(0.0, _M_Y + 0.025, 0.05)
    vals = np.empty_like(ys)
    for i, y in enumerate(ys):
        x = np.arange(-y - 40.0, 40.0, 0.01)
        # CDF of the level W with P(W <= x) = 1 - (1 + e^x)^(-J)
        k = -np.expm1(-math.exp(y) * np.logaddexp(0, x))
        xm = 0.5 * (x[1:] + x[:-1])
        vals[i] = np.sum(left_cdf(law, xm) * np.diff(k)) + float(left_cdf(law, x[0])) * k[0]
    return ys, np.log(vals)


def one_step_death_given_size(law: EnvironmentLaw, log_j):
    """E[(1 + e^X)^(-J)] with J = exp(log_j), vectorised."""
    log_j = np.asarray(log_j, dtype=float)
    if isinstance(law, TwoPoint):
        j = np.exp(log_j)
        out = law.w * np.exp(-j * np.logaddexp(0, law.a)) + (1 - law.w) * np.exp(-j * np.logaddexp(0, -law.a))
    elif isinstance(law, (TwoSidedPareto, BoundedUniform)):
        ys, logv = _m_table(law)
        out = np.exp(np.interp(log_j, ys, logv))
        far = log_j > _M_Y
        if np.any(far):
            y = log_j[far]
            if isinstance(law, TwoSidedPareto):
                f0, f1, f2, _ = _pareto_tail_derivs(law, -y)
                # W + log J is asymptotically Gumbel-min: mean -gamma, E V^2 = gamma^2 + pi^2/6
                out[far] = f0 - f1 * EULER_GAMMA + f2 * (EULER_GAMMA**2 + np.pi**2 / 6) / 2
            else:
                out[far] = 0.0
    else:
        raise NotImplementedError(f"no death-given-size table for {type(law).__name__}")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# config records


def law_from_spec(spec: dict) -> EnvironmentLaw:
    """Build a law from a tagged config record such as
    ``{"type": "pareto2", "alpha": 1.5, "p": 0.5, "xmin": 1.0}``."""
    kind = spec.get("type")
    if kind == "twopoint":
        return TwoPoint(float(spec["a"]), float(spec.get("w", 0.5)))
    if kind == "pareto2":
        return TwoSidedPareto(
            float(spec["alpha"]), float(spec.get("p", 0.5)), float(spec.get("xmin", 1.0)), spec.get("centering")
        )
    if kind == "uniform":
        return BoundedUniform(float(spec.get("lo", -1.0)), float(spec.get("hi", 1.0)))
    if kind == "stable":
        return ExactStable(StabilityParams(float(spec["alpha"]), float(spec.get("beta", 0.0)), float(spec.get("scale", 1.0))))
    raise ValueError(f"unknown law type {kind!r}")


def law_to_spec(law: EnvironmentLaw) -> dict:
    if isinstance(law, TwoPoint):
        return {"type": "twopoint", "a": law.a, "w": law.w}
    if isinstance(law, TwoSidedPareto):
        return {"type": "pareto2", "alpha": law.alpha, "p": law.p, "xmin": law.x_min, "centering": law.centering}
    if isinstance(law, BoundedUniform):
        return {"type": "uniform", "lo": law.lo, "hi": law.hi}
    p = law.params
    return {"type": "stable", "alpha": p.alpha, "beta": p.beta, "scale": p.scale}
