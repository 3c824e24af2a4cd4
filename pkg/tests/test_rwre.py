import math

import numpy as np
import pytest
from conftest import EXACT_TWO_POINT_LOG2

from bprelab.bpre import GeometricEnvironment, quenched_extinction_at
from bprelab.env_laws import TwoPoint
from bprelab.rwre import (
    Excursion,
    ExcursionSummary,
    IdentityError,
    RwreEnvironment,
    dump_excursion_csv,
    dump_local_times_csv,
    excursion_from_trajectory,
    local_time_to_branching,
    quenched_extinction_from_walks,
    run_excursions,
    simulate_excursion,
    theorem4_statistics,
    transition_probabilities,
)


def test_transition_probabilities():
    assert transition_probabilities(0.0) == (0.5, 0.5)
    q, p = transition_probabilities(math.log(3))
    assert q == pytest.approx(0.25, abs=1e-15) and p == pytest.approx(0.75, abs=1e-15)
    x = np.arange(-5, 6, dtype=float)
    q, p = transition_probabilities(x)
    assert np.allclose(q + p, 1.0, atol=1e-15)
    assert np.allclose(np.log(p / q), x, atol=1e-12)
    assert np.allclose(q, np.exp(-x) / (1 + np.exp(-x)), rtol=1e-14)


def test_environment_reuse(two_point):
    env = RwreEnvironment(two_point, 7)
    env.ensure(600)
    again = RwreEnvironment(two_point, 7)
    again.ensure(10)
    assert np.array_equal(env.increments(10), again.increments(10))
    assert env.q(3) + env.p(3) == pytest.approx(1.0)


def test_hand_examples():
    e = excursion_from_trajectory([0, -1])
    assert (e.chi, e.ell(0), e.ell(-1)) == (1, 1, 1)
    z = local_time_to_branching(e)
    assert z.sizes == (1, 0) and z.extinction_time == 1
    e = excursion_from_trajectory([0, 1, 0, -1])
    assert (e.chi, e.ell(0), e.ell(1), e.max_level) == (3, 2, 1, 1)
    z = local_time_to_branching(e)
    assert z.sizes == (1, 1, 0) and z.extinction_time == 2 == e.max_level + 1


def test_refuses_bad_trajectories():
    with pytest.raises(ValueError):
        excursion_from_trajectory([0, 2, 1, 0, -1])
    with pytest.raises(ValueError):
        excursion_from_trajectory([0, -1, -2])


def test_down_drift_environment(rng):
    exc = simulate_excursion(TwoPoint(40.0, 0.0), rng)
    assert exc.chi == 1 and not exc.capped


def test_identity_suite_on_random_excursions(rng, two_point):
    summary, kept = run_excursions(two_point, 3000, rng, step_cap=10**6, keep=50)
    assert summary.identity_failures == 0
    for exc in kept:
        assert exc.ell(-1) == 1
        assert int(exc.local_times.sum()) == exc.chi + 1
        assert exc.ell(exc.max_level + 1) == 0
        assert local_time_to_branching(exc).extinction_time == exc.max_level + 1


def test_recorded_trajectory_roundtrip(rng, two_point):
    exc = simulate_excursion(two_point, rng, 10**6, record_trajectory=10**6)
    if exc.capped:
        pytest.skip("capped excursion")
    assert np.all(np.abs(np.diff(exc.trajectory)) == 1)
    again = excursion_from_trajectory(exc.trajectory)
    levels = range(-1, exc.max_level + 3)
    assert [again.ell(n) for n in levels] == [exc.ell(n) for n in levels]


def test_identity_violation_is_loud():
    bad = Excursion(3, np.array([1, 2, 5]), 1, False)
    with pytest.raises(IdentityError):
        local_time_to_branching(bad)


def test_max_level_law(rng, two_point):
    summary, _ = run_excursions(two_point, 20_000, rng, step_cap=10**6, level_cap=6)
    for n in range(5):
        est = summary.max_level_probability(n)
        assert est.within(EXACT_TWO_POINT_LOG2[n + 1], 3.5)


def test_frozen_environment_bridge(rng, two_point):
    env = RwreEnvironment(two_point, 99)
    env.ensure(8)
    genv = GeometricEnvironment.from_increments(env.increments(7))
    probs, _ = quenched_extinction_from_walks(env, 6, 40_000, rng, step_cap=10**6)
    for k, est in enumerate(probs, start=1):
        assert est.within(quenched_extinction_at(genv, k), 3.5)


def test_theorem4_statistics(rng, two_point):
    out = theorem4_statistics(two_point, 3000, [0.1, 0.5, 1.0], rng, n_list=(3, 5), step_cap=10**6, min_count=1)
    assert out["max_level_hist"].sum() == out["completed"]
    assert out["completed"] + out["capped"] == 3000
    for row in out["rows"]:
        tails = [t.mean for _, t in row["tail"] if t is not None and t.n_samples]
        assert all(a >= b for a, b in zip(tails, tails[1:]))


def test_summary_merge():
    a = ExcursionSummary(3, 1, 0, 0, {0: 1, 2: 1}, [5])
    b = ExcursionSummary(2, 0, 1, 0, {0: 1}, [])
    m = a.merge(b)
    assert m.n_excursions == 5 and m.max_level_counts == {0: 2, 2: 1} and m.n_above_cap == 1


def test_dumps(tmp_path):
    exc = excursion_from_trajectory([0, 1, 0, -1])
    dump_excursion_csv(exc, tmp_path / "e.csv")
    dump_local_times_csv(exc, tmp_path / "l.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "step,position"
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "level,count"
