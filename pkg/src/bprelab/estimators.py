"""Confidence intervals, ratio and self-normalised estimators, weighted KS
distances and power-law slope fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Z95 = 1.959963984540054


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_samples: int
    ci_low: float
    ci_high: float

    @classmethod
    def normal(cls, mean: float, stderr: float, n_samples: int) -> "McEstimate":
        return cls(float(mean), float(stderr), int(n_samples), float(mean - Z95 * stderr), float(mean + Z95 * stderr))

    def within(self, value: float, n_sigma: float = 3.0, other_stderr: float = 0.0) -> bool:
        """True when |mean - value| <= n_sigma * combined stderr."""
        return abs(self.mean - value) <= n_sigma * math.hypot(self.stderr, other_stderr)

    def as_dict(self) -> dict:
        return {
            "estimate": self.mean,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(frozen=True)
class WeightedSample:
    value: float
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weights must be nonnegative")


def mean_ci(samples) -> McEstimate:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    return McEstimate.normal(x.mean(), x.std(ddof=1) / math.sqrt(x.size), x.size)


def moments_ci(total: float, total_sq: float, n: int) -> McEstimate:
    """Normal CI from merged sufficient statistics (sum, sum of squares, count)."""
    if n < 2:
        raise ValueError("need at least two samples")
    m = total / n
    var = max(total_sq / n - m * m, 0.0) * n / (n - 1)
    return McEstimate.normal(m, math.sqrt(var / n), n)


def pool_estimates(parts) -> McEstimate:
    """Combine independent sample-mean estimates weighted by sample count."""
    parts = list(parts)
    n = sum(p.n_samples for p in parts)
    if n == 0:
        raise ValueError("no samples")
    mean = sum(p.n_samples * p.mean for p in parts) / n
    var = sum((p.n_samples * p.stderr) ** 2 for p in parts) / n**2
    return McEstimate.normal(mean, math.sqrt(var), n)


def wilson_ci(k: int, n: int, z: float = Z95) -> McEstimate:
    """Bernoulli rate k/n with a Wilson score interval."""
    if n <= 0:
        return McEstimate(float("nan"), float("nan"), 0, 0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # stderr from the Wilson centre stays positive when k = 0 or k = n
    se = math.sqrt(centre * (1 - centre) / (n + z * z))
    return McEstimate(p, se, n, max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half)))


def ratio_ci(num, den, paired: bool = False) -> McEstimate:
    """Delta-method CI for mean(num)/mean(den).

    ``num``/``den`` are sample arrays; with ``paired=False`` either may also
    be an :class:`McEstimate` of an independent stream.
    """
    if paired:
        a = np.asarray(num, dtype=float)
        b = np.asarray(den, dtype=float)
        if a.shape != b.shape:
            raise ValueError("paired samples must have equal shape")
        n = a.size
        ma, mb = a.mean(), b.mean()
        cov = np.cov(a, b, ddof=1) / n
        va, vb, cab = cov[0, 0], cov[1, 1], cov[0, 1]
    else:
        ea = num if isinstance(num, McEstimate) else mean_ci(num)
        eb = den if isinstance(den, McEstimate) else mean_ci(den)
        ma, mb, va, vb, cab = ea.mean, eb.mean, ea.stderr**2, eb.stderr**2, 0.0
        n = min(ea.n_samples, eb.n_samples)
    if abs(mb) <= 5 * math.sqrt(vb):
        raise ValueError(f"unstable denominator: mean {mb:.3g} within 5 stderr of zero")
    r = ma / mb
    var = max(va - 2 * r * cab + r * r * vb, 0.0) / mb**2
    return McEstimate.normal(r, math.sqrt(var), n)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = np.sum(w * w)
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


@dataclass(frozen=True)
class WeightedEstimate:
    estimate: McEstimate
    ess: float


def self_normalized(values, weights=None, f=None) -> WeightedEstimate:
    """sum w f(v) / sum w with a delta-method stderr.

    ``values`` may also be a list of :class:`WeightedSample`.
    """
    if weights is None:
        vals = np.array([s.value for s in values], dtype=float)
        w = np.array([s.weight for s in values], dtype=float)
    else:
        vals = np.asarray(values, dtype=float)
        w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    sw = w.sum()
    if not sw > 0:
        raise ValueError("all weights are zero")
    fv = vals if f is None else np.asarray(f(vals), dtype=float)
    mu = float(np.sum(w * fv) / sw)
    se = float(math.sqrt(np.sum((w * (fv - mu)) ** 2)) / sw)
    return WeightedEstimate(McEstimate.normal(mu, se, vals.size), effective_sample_size(w))


def weighted_ecdf(values, weights=None):
    """Sorted support points and right-continuous weighted CDF values."""
    v = np.asarray(values, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    c = np.cumsum(w)
    return v, c / c[-1]


def _cdf_at(points, v, c):
    idx = np.searchsorted(v, points, side="right")
    return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    threshold: float | None = None
    passed: bool | None = None


def ks_two_sample(
    a, b, weights_a=None, weights_b=None, threshold: float | None = None, lower: float | None = None
) -> KsResult:
    """sup |F_a - F_b| between (weighted) empirical CDFs.

    With ``lower`` the sup runs over x >= lower only (both CDFs still use
    the full samples), which ignores lattice atoms below that point.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    va, ca = weighted_ecdf(a, weights_a)
    vb, cb = weighted_ecdf(b, weights_b)
    pts = np.union1d(va, vb)
    if lower is not None:
        pts = np.union1d(pts[pts >= lower], [lower])
    d = float(np.max(np.abs(_cdf_at(pts, va, ca) - _cdf_at(pts, vb, cb))))
    return KsResult(d, threshold, None if threshold is None else d < threshold)


def ks_curve_vs_sample(grid, cdf_values, sample, weights=None) -> float:
    """sup distance between a monotone CDF known on ``grid`` (linearly
    interpolated) and a weighted empirical CDF."""
    v, c = weighted_ecdf(sample, weights)
    grid = np.asarray(grid, dtype=float)
    cdf_values = np.asarray(cdf_values, dtype=float)
    pts = np.union1d(grid, v)
    curve = np.interp(pts, grid, cdf_values)
    emp_right = _cdf_at(pts, v, c)
    emp_left = _cdf_at(pts - 1e-12 * np.maximum(1, np.abs(pts)), v, c)
    return float(max(np.max(np.abs(curve - emp_right)), np.max(np.abs(curve - emp_left))))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    intercept: float
    used: tuple = ()
    excluded: tuple = field(default=())


def powerlaw_slope_fit(points) -> SlopeFit:
    """Weighted least squares of log p on log n.

    ``points`` is a sequence of (n, p_hat, stderr).  Points with
    p_hat <= 3 stderr are excluded and reported.
    """
    pts = [tuple(map(float, p)) for p in points]
    used = [p for p in pts if p[1] > 0 and p[1] > 3 * p[2]]
    excluded = tuple(p[0] for p in pts if p not in used)
    if len(used) < 4:
        raise ValueError(f"need at least 4 well-resolved points, have {len(used)}")
    n = np.array([p[0] for p in used])
    y = np.log([p[1] for p in used])
    sig = np.array([p[2] / p[1] for p in used])
    if np.all(sig == 0):
        sig = np.ones_like(sig)
    sig = np.maximum(sig, 1e-15)
    w = 1 / sig**2
    x = np.log(n)
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    if np.all(np.asarray([p[2] for p in used]) == 0):
        cov = cov * 0.0
    se = math.sqrt(cov[1, 1])
    return SlopeFit(float(beta[1]), se, float(beta[1] - Z95 * se), float(beta[1] + Z95 * se), float(beta[0]),
                    tuple(p[0] for p in used), excluded)
