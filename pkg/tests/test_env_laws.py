import math

import numpy as np
import pytest

from bprelab.env_laws import (
    BoundedUniform,
    StabilityParams,
    TwoPoint,
    TwoSidedPareto,
    ExactStable,
    is_admissible,
    law_from_spec,
    law_to_spec,
    left_cdf,
    one_step_death_given_size,
    positivity_index_rho,
    sample_increment,
    sample_increments,
    scaling_sequence_cn,
    survival_function,
    tail_constants,
)


@pytest.mark.parametrize(
    "alpha,beta,expected",
    [(1.0, 0.0, 0.5), (1.5, 0.0, 0.5), (1.5, 0.5, 0.5 + math.atan(-0.5) / (1.5 * math.pi))],
)
def test_rho_values(alpha, beta, expected):
    assert positivity_index_rho(StabilityParams(alpha, beta)) == pytest.approx(expected, abs=1e-12)


def test_rho_derived_constant():
    assert positivity_index_rho((1.5, 0.5)) == pytest.approx(0.40161, abs=1e-5)


@pytest.mark.parametrize("alpha,beta", [(1.0, 0.3), (0.5, 1.0), (2.0, 0.5), (2.5, 0.0), (0.0, 0.0)])
def test_rho_rejects_inadmissible(alpha, beta):
    with pytest.raises(ValueError):
        positivity_index_rho((alpha, beta))
    assert not is_admissible(alpha, beta)


def test_condition_a():
    assert StabilityParams(1.5, 0.0).condition_A
    assert not StabilityParams(1.5, 1.0).condition_A
    assert not StabilityParams(2.0, 0.0).condition_A


def test_two_point_support(rng, two_point):
    x = sample_increments(two_point, rng, 1000)
    assert set(np.unique(x)) == {math.log(2), -math.log(2)}
    assert isinstance(sample_increment(two_point, rng), float)


def test_pareto_tail_scaling(rng, pareto):
    x = sample_increments(pareto, rng, 2_000_000)
    for level in (5.0, 20.0):
        ratio = np.mean(np.abs(x) > level) * level**1.5
        assert ratio == pytest.approx(1.0, rel=0.1)


def test_uniform_mean(rng, uniform):
    assert abs(sample_increments(uniform, rng, 10**6).mean()) < 0.01


def test_survival_examples(pareto):
    assert survival_function(TwoSidedPareto(1.5, 0.5, 1.0, 0.0), 4.0) == pytest.approx(0.0625, abs=1e-15)
    assert survival_function(TwoPoint(1.0, 0.3), 0.0) == pytest.approx(0.3)
    for law in (pareto, TwoPoint(1.0, 0.3), BoundedUniform()):
        assert survival_function(law, -1e300) == 1.0


def test_left_cdf_complements_survival(pareto):
    x = np.array([-10.0, -3.0, 0.5, 4.0])
    # continuous law: P(X <= x) + P(X > x) = 1
    assert np.allclose(left_cdf(pareto, x) + survival_function(pareto, x), 1.0)


def test_cn_quantile_examples():
    law = TwoSidedPareto(1.5, 0.5, 1.0, 0.0)
    assert scaling_sequence_cn(law, 1000) == pytest.approx(500 ** (2 / 3), rel=1e-9)
    assert scaling_sequence_cn(law, 1000) == pytest.approx(62.996, abs=1e-3)
    assert scaling_sequence_cn(law, 2) == pytest.approx(1.0, rel=1e-9)


def test_cn_bisection_matches_definition(uniform):
    law = TwoPoint(1.0, 0.3)
    c = scaling_sequence_cn(law, 10)
    assert survival_function(law, c) <= 0.1 and c == pytest.approx(1.0, rel=1e-8)


def test_cn_stable_convention(pareto):
    # n P(|X| > c_n) = (2 - alpha)/alpha
    for n in (10, 500, 2000):
        c = scaling_sequence_cn(pareto, n, "stable")
        assert n * c**-1.5 == pytest.approx(1 / 3, rel=1e-12)


def test_left_tail_asymptotics_exact(pareto):
    # n P(X < -c_n) = q (2 - alpha)/alpha for the pure power law
    for n in (100, 10_000):
        c = scaling_sequence_cn(pareto, n, "stable")
        assert n * left_cdf(pareto, -c) == pytest.approx(0.5 * 0.5 / 1.5, abs=1e-6)


def test_tail_constants(pareto):
    alpha, beta, p, q = tail_constants(pareto)
    assert (alpha, beta, p, q) == (1.5, 0.0, 0.5, 0.5)


def test_centering_gives_mean_zero(rng):
    law = TwoSidedPareto(1.8, 0.8, 1.0)
    assert law.beta == pytest.approx(0.6)
    assert abs(sample_increments(law, rng, 4 * 10**6).mean()) < 0.05


def test_law_spec_roundtrip(pareto, two_point, uniform):
    for law in (pareto, two_point, uniform):
        assert law_from_spec(law_to_spec(law)) == law
    with pytest.raises((KeyError, ValueError)):
        law_from_spec({"type": "cauchy"})


def test_exact_stable_needs_table(rng):
    law = ExactStable(StabilityParams(1.5, 0.0))
    with pytest.raises(ValueError):
        survival_function(law, 1.0)
    cal = law.calibrated(rng, 200_000)
    assert survival_function(cal, 0.0) == pytest.approx(0.5, abs=0.01)


def test_one_step_death_matches_simulation(rng, pareto):
    # E[f0^J] for J individuals, each dying with probability sigmoid(-X)
    x = sample_increments(pareto, rng, 2_000_000)
    for log_j in (0.0, 3.0, 8.0):
        direct = np.mean(np.exp(-math.exp(log_j) * np.logaddexp(0, x)))
        assert one_step_death_given_size(pareto, log_j) == pytest.approx(direct, rel=0.05)


def test_single_generation_death_ratio(rng, pareto):
    # E[f0^k]/P(X < -log k) lies in [0.8, 1.25] for large k
    for k in (1e3, 1e4, 1e5):
        ratio = one_step_death_given_size(pareto, math.log(k)) / left_cdf(pareto, -math.log(k))
        assert 0.8 <= ratio <= 1.25
