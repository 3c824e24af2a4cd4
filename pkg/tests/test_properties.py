"""Invariants checked on generated inputs."""
import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bprelab.bpre import (
    Geometric,
    GeometricEnvironment,
    quenched_extinction_all,
    quenched_joint_tail,
    quenched_population_pmf,
    quenched_survival,
    zeta_value,
)
from bprelab.env_laws import (
    BoundedUniform,
    TwoPoint,
    TwoSidedPareto,
    is_admissible,
    positivity_index_rho,
    scaling_sequence_cn,
    survival_function,
)
from bprelab.estimators import effective_sample_size, ks_two_sample, mean_ci, self_normalized, wilson_ci
from bprelab.random_walk import WalkPath, path_statistics
from bprelab.rwre import excursion_from_trajectory, local_time_to_branching, transition_probabilities

finite = st.floats(-30, 30, allow_nan=False)
increments = arrays(np.float64, st.integers(1, 60), elements=finite)

pareto_laws = st.builds(
    TwoSidedPareto,
    alpha=st.floats(0.3, 1.95),
    p=st.floats(0.05, 0.95),
    x_min=st.floats(0.1, 5.0),
)
laws = st.one_of(
    pareto_laws,
    st.builds(TwoPoint, a=st.floats(0.01, 5.0), w=st.floats(0.0, 1.0)),
    st.builds(BoundedUniform, lo=st.floats(-5, -0.1), hi=st.floats(0.1, 5)),
)


@st.composite
def admissible(draw):
    alpha = draw(st.sampled_from([0.5, 0.9, 1.0, 1.2, 1.5, 1.9]))
    beta = 0.0 if alpha == 1.0 else draw(st.floats(-0.99, 0.99))
    return alpha, beta


@given(admissible())
def test_rho_in_unit_interval_and_odd(ab):
    alpha, beta = ab
    r = positivity_index_rho((alpha, beta))
    assert 0 < r < 1
    assert math.isclose(positivity_index_rho((alpha, -beta)), 1 - r, abs_tol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_admissible_set(alpha, beta):
    if is_admissible(alpha, beta):
        assert 0 < alpha <= 2 and abs(beta) <= 1


@given(laws, st.floats(-50, 50), st.floats(0, 50))
def test_survival_monotone(law, x, dx):
    a, b = survival_function(law, x), survival_function(law, x + dx)
    assert 0 <= b <= a <= 1


@given(pareto_laws, st.integers(1, 10**6))
def test_cn_monotone(law, n):
    assume(law.p * n >= 1)
    assert scaling_sequence_cn(law, 2 * n) >= scaling_sequence_cn(law, n)
    c = scaling_sequence_cn(law, n)
    assert survival_function(law, c) <= 1 / n * (1 + 1e-9)


@given(increments)
def test_telescoping_and_survival_decreasing(x):
    env = GeometricEnvironment.from_increments(x)
    p = quenched_extinction_all(env)
    assert np.all(p >= 0)
    assert math.isclose(math.fsum(p) + quenched_survival(env, x.size), 1.0, abs_tol=1e-12)
    h = np.exp(-env.log_A)
    assert h[0] == 1.0 and np.all(np.diff(h) <= 0)


@given(increments, st.data())
def test_joint_tail_identities(x, data):
    env = GeometricEnvironment.from_increments(x)
    n = data.draw(st.integers(1, x.size))
    p = quenched_extinction_all(env)[n - 1]
    assert math.isclose(quenched_joint_tail(env, n, 0), p, rel_tol=1e-12, abs_tol=1e-300)
    a = data.draw(st.integers(0, 10**6))
    assert quenched_joint_tail(env, n, a + 1) <= quenched_joint_tail(env, n, a) * (1 + 1e-12)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-3, 3)))
def test_pmf_sums_to_survival(x):
    env = GeometricEnvironment.from_increments(x)
    n = x.size
    pi = quenched_survival(env, n) * math.exp(-env.sums[n])
    assume(pi > 1e-3)
    j = np.arange(1, int(60 / pi) + 2)
    total = math.fsum(quenched_population_pmf(env, n, j))
    assert math.isclose(total, quenched_survival(env, n), rel_tol=1e-9)


@given(finite)
def test_geometric_law(x):
    g = Geometric(x)
    assert math.isclose(float(g.pgf(1.0)), 1.0, rel_tol=1e-12)
    assert 0 <= zeta_value(g, 2) <= 4
    z0, z2, z3 = (zeta_value(g, b) for b in (0, 2, 3))
    assert z3 <= z2 * (1 + 1e-12) and z2 <= z0 * (1 + 1e-12)


@given(finite)
def test_transition_probabilities(x):
    q, p = transition_probabilities(x)
    assert abs(q + p - 1) < 1e-15
    if abs(x) < 20:
        assert math.isclose(math.log(p / q), x, abs_tol=1e-9)


@st.composite
def excursions(draw):
    """Nearest-neighbour paths from 0 that first hit -1 at the end."""
    path = [0]
    for _ in range(draw(st.integers(0, 200))):
        step = draw(st.sampled_from([-1, 1]))
        if path[-1] + step == -1:
            break
        path.append(path[-1] + step)
    path.append(path[-1] - 1)
    while path[-1] != -1:
        path.append(path[-1] - 1)
    return path


@given(excursions())
def test_local_time_identities(path):
    exc = excursion_from_trajectory(path)
    assert exc.ell(-1) == 1
    assert sum(exc.ell(n) for n in range(-1, exc.max_level + 2)) == exc.chi + 1
    z = local_time_to_branching(exc)
    assert z.sizes[0] == 1 and z.extinction_time == exc.max_level + 1
    for n in range(exc.max_level + 1):
        assert exc.ell(n) == z.sizes[n + 1] + z.sizes[n]


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-10, 10)))
def test_path_statistics(x):
    st_ = path_statistics(WalkPath.from_increments(x))
    assert st_.L_n <= 0 <= st_.M_n
    assert 0 <= st_.mu_n <= x.size
    h = st_.ladder_heights
    assert all(a > b for a, b in zip(h, h[1:]))
    if st_.T_minus is not None:
        assert st_.ladder_epochs[0] == st_.T_minus
        assert st_.tau_minus is not None and st_.tau_minus <= st_.T_minus


weights = arrays(np.float64, st.integers(2, 50), elements=st.floats(0.01, 100))


@given(weights, st.floats(-5, 5))
def test_self_normalized_constant(w, c):
    r = self_normalized(np.arange(w.size, dtype=float), w, lambda v: np.full_like(v, c))
    assert math.isclose(r.estimate.mean, c, rel_tol=1e-12, abs_tol=1e-12)
    assert 1 - 1e-9 <= r.ess <= w.size + 1e-9
    assert math.isclose(effective_sample_size(w), r.ess)


@given(arrays(np.float64, st.integers(2, 100), elements=st.floats(-1e6, 1e6)))
def test_mean_ci_contains_mean(x):
    e = mean_ci(x)
    assert e.ci_low <= e.mean <= e.ci_high and e.stderr >= 0


@given(st.integers(1, 10**6), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    e = wilson_ci(k, n)
    assert 0 <= e.ci_low <= e.mean <= e.ci_high <= 1 and e.stderr > 0


@settings(max_examples=50)
@given(
    arrays(np.float64, st.integers(1, 40), elements=st.floats(-10, 10)),
    arrays(np.float64, st.integers(1, 40), elements=st.floats(-10, 10)),
)
def test_ks_symmetric_and_bounded(a, b):
    d1 = ks_two_sample(a, b).statistic
    d2 = ks_two_sample(b, a).statistic
    assert d1 == d2 and 0 <= d1 <= 1
