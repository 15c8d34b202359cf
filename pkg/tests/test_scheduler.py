import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlink import synth
from mlink.experiment import split_traces, train_ensembles, train_links
from mlink.link import Hyper
from mlink.scheduler import (
    ActivationProfile,
    Budget,
    activation_probability,
    brute_force_optimal,
    greedy_select,
    output_accuracy,
    profile_count,
    reports_to_csv,
    restricted_link_cost,
    run_periods,
)
from mlink.simulation import ensemble_perf


def test_output_accuracy_arithmetic():
    assert output_accuracy({"a"}, {"b": 0.5, "c": 0.25}, 3) == pytest.approx(1.75 / 3)
    assert output_accuracy(set(), {"a": 0.0}, 1) == 0.0


def test_cheapest_perfect_source_gets_probability_one():
    m = np.array([[0, 1, 1], [0, 0, 0.3], [0, 0.8, 0]])
    prof = activation_probability(m, [1.0, 2.0, 4.0], "abc")
    assert prof[0].probability == 1.0
    assert prof[1].probability == pytest.approx((1 + 0.15 - 0.9) / 2 * 0.5)


@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_probability_in_unit_interval(k, seed):
    rng = np.random.default_rng(seed)
    prof = activation_probability(rng.random((k, k)), rng.random(k) + 1e-6)
    assert all(0.0 <= p.probability <= 1.0 for p in prof)


def test_probability_input_checks():
    with pytest.raises(ValueError):
        activation_probability(np.full((2, 2), 1.5), [1, 1])
    with pytest.raises(ValueError):
        activation_probability(np.zeros((2, 2)), [1, 0])


def test_greedy_skips_models_that_do_not_fit():
    prof = [ActivationProfile("big", 0, 0, 10.0, 0.9), ActivationProfile("small", 0, 0, 1.0, 0.1)]
    assert greedy_select(prof, 5.0).activated == ("small",)


def test_greedy_infeasible():
    prof = [ActivationProfile("a", 0, 0, 10.0, 0.9)]
    assert not greedy_select(prof, 5.0).feasible


def test_greedy_tie_break_by_cost_then_id():
    prof = [ActivationProfile("b", 0, 0, 1.0, 0.5), ActivationProfile("a", 0, 0, 1.0, 0.5), ActivationProfile("c", 0, 0, 0.5, 0.5)]
    assert greedy_select(prof, 1.6).activated == ("c", "a")


def _instance(seed, k):
    rng = np.random.default_rng(seed)
    perf = rng.random((k, k))
    np.fill_diagonal(perf, 0)
    return perf, rng.random(k) + 0.05


@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
@settings(max_examples=150, deadline=None)
def test_greedy_never_beats_brute_force(k, seed, frac):
    perf, costs = _instance(seed, k)
    ids = [str(i) for i in range(k)]
    budget = frac * costs.sum()
    p = ensemble_perf(perf, 0.02)
    value = lambda A, j: p([int(a) for a in A], int(j))
    best = brute_force_optimal(ids, costs, value, budget)
    g = greedy_select(activation_probability(perf, costs, ids), budget)
    if g.feasible:
        gv = output_accuracy(g.activated, {j: value(sorted(g.activated), j) for j in ids}, k)
        assert gv <= best.value + 1e-12


def test_brute_force_matches_exhaustive_oracle():
    perf, costs = _instance(3, 5)
    ids = list("abcde")
    p = ensemble_perf(perf, 0.02)
    value = lambda A, j: p([ids.index(a) for a in A], ids.index(j))
    budget = 0.6 * costs.sum()
    best = -1
    for r in range(1, 6):
        for A in itertools.combinations(ids, r):
            if sum(costs[ids.index(a)] for a in A) <= budget:
                best = max(best, (len(A) + sum(value(A, j) for j in ids if j not in A)) / 5)
    assert brute_force_optimal(ids, costs, value, budget).value == pytest.approx(best, abs=1e-15)


def test_objective_monotone_for_monotone_perf_tables():
    perf, _ = _instance(4, 5)
    p = ensemble_perf(perf, 0.02)  # max + gain grows with A
    ids = range(5)
    for r in range(1, 5):
        for A in itertools.combinations(ids, r):
            for f in set(ids) - set(A):
                B = tuple(sorted(A + (f,)))
                assert output_accuracy(B, {j: p(B, j) for j in ids if j not in B}, 5) >= output_accuracy(
                    A, {j: p(A, j) for j in ids if j not in A}, 5
                ) - 1e-15


def test_greedy_deterministic():
    perf, costs = _instance(5, 6)
    a = greedy_select(activation_probability(perf, costs), 1.5)
    b = greedy_select(activation_probability(perf.copy(), costs.copy()), 1.5)
    assert a == b


def test_profile_count():
    assert profile_count(100, 0.1) == 10
    assert profile_count(5, 0.1) == 1


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget("disk", 1)
    with pytest.raises(ValueError):
        Budget("memory", 0)


@pytest.fixture(scope="module")
def pipeline():
    train, serve = split_traces(synth.generate_traces(synth.pipeline_world(seed=0), 400).traces, 0.5)
    hyper = Hyper(epochs=30)
    links, _ = train_links(train, None, hyper)
    ens, _ = train_ensembles(train, None, links, hyper)
    return serve, links, ens


def test_link_cost_counts_used_members_and_combiner(pipeline):
    _, links, ens = pipeline
    cost = restricted_link_cost(ens, Budget("memory", 1))
    expected = (1 + 1) * 4 + links[("cnt", "cls")].param_count()
    assert cost(("cnt",), "cls") == expected * 8.0


def test_periods_one_model_budget(pipeline):
    serve, links, ens = pipeline
    _, reports = run_periods([serve[m] for m in sorted(serve)], links, ens, Budget("memory", 25e6), 100, 0.1)
    assert len(reports) == 2
    for r in reports:
        assert r.activated == ("cnt",) and not r.flagged
        assert r.total_cost <= 25e6
        assert r.average > 1 / 3  # above running one model with nothing predicted


def test_periods_flag_when_nothing_fits(pipeline):
    serve, links, ens = pipeline
    _, reports = run_periods([serve[m] for m in sorted(serve)], links, ens, Budget("memory", 1e6), 100, 0.1)
    assert all(r.flagged for r in reports)


def test_report_csv_shape(pipeline):
    serve, links, ens = pipeline
    _, reports = run_periods([serve[m] for m in sorted(serve)], links, ens, Budget("time", 45.0), 100, 0.1)
    text = reports_to_csv(reports, seed=7)
    lines = text.split("\n")
    assert "\r" not in text and lines[-1] == ""
    assert lines[0] == "period,activated_ids,total_cost,acc_cls,acc_cnt,acc_tag,average_output_accuracy,flagged,seed"
    assert len(lines) == 2 + len(reports)
