import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlink import synth
from mlink.link import Hyper, build_link, train_link
from mlink.online import (
    BudgetExceededError,
    LabelBudget,
    LossPredictor,
    SamplingPolicy,
    entropy,
    online_update,
    peer_variance,
    run_stream,
    segments_to_csv,
    select_for_labeling,
    topq_selected,
    uncertainty_score,
)
from mlink.registry import ModelDescriptor, OutputFormat, TaskClass, join_aligned


@given(st.floats(0.001, 1.0), st.lists(st.booleans(), max_size=300))
@settings(max_examples=200, deadline=None)
def test_budget_never_exceeded(ratio, wants):
    b = LabelBudget(ratio)
    for want in wants:
        b.observe()
        if want and b.can_label():
            b.charge()
        assert b.consumed <= ratio * b.seen + 1 + 1e-9


def test_charge_over_budget_raises():
    b = LabelBudget(0.01)
    b.observe()
    b.charge()
    with pytest.raises(BudgetExceededError):
        b.charge()


def test_entropy_values():
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2))
    assert entropy([1.0, 0.0]) == 0.0


def test_peer_variance():
    assert peer_variance([[1.0, 2.0]]) is None
    assert peer_variance([[0.0, 0.0], [2.0, 4.0]]) == pytest.approx((1 + 4) / 2)


def test_regression_score_falls_back():
    v = ModelDescriptor("v", TaskClass.MULTI_LABEL, OutputFormat.vector(2))
    r = ModelDescriptor("r", TaskClass.REGRESSION, OutputFormat.vector(1))
    link = build_link(v, r)
    assert uncertainty_score(link, None, peers=[[1.0], [3.0]]) == 1.0
    assert uncertainty_score(link, None, history=[[1.0], [2.0], [3.0]]) == pytest.approx(2 / 3)
    assert uncertainty_score(link, None) == math.inf


def test_topq_rule():
    buf = np.arange(1000.0)
    assert topq_selected(999.5, buf, 0.0025)
    assert topq_selected(998.5, buf, 0.0025)  # one above, two allowed
    assert not topq_selected(997.5, buf, 0.0025)
    assert topq_selected(0.0, [], 0.0025)


def test_topq_flat_buffer_labels_at_base_rate():
    rng = np.random.default_rng(0)
    buf = np.zeros(1000)
    hits = sum(topq_selected(0.0, buf, 0.01, rng) for _ in range(20000))
    assert 0.005 < hits / 20000 < 0.02


def test_select_rules():
    assert select_for_labeling(SamplingPolicy.offline_init(0.01, 1000), 9)
    assert not select_for_labeling(SamplingPolicy.offline_init(0.01, 1000), 10)
    per = SamplingPolicy.periodic(100, 3)
    assert [select_for_labeling(per, p) for p in (200, 202, 203)] == [True, True, False]
    assert select_for_labeling(SamplingPolicy.uncertainty(0.5), 0, score=0.5)
    assert not select_for_labeling(SamplingPolicy.uncertainty(), 0, score=9.0)
    empty = LabelBudget(0.01)
    empty.observe()
    empty.charge()
    assert not select_for_labeling(per, 200, budget=empty)


def test_policy_validation():
    with pytest.raises(ValueError):
        SamplingPolicy("random")
    with pytest.raises(ValueError):
        SamplingPolicy.periodic(10, 20)


def test_loss_predictor_learns_log_scale():
    rng = np.random.default_rng(0)
    h = rng.random((64, 3))
    loss = np.exp(-8 * h[:, 0])
    lp = LossPredictor(3, seed=0)
    for _ in range(1500):
        lp.step(h, loss)
    pred = lp.predict_loss(h)
    assert np.corrcoef(np.log(pred), np.log(loss))[0, 1] > 0.95


def test_online_update_empty_buffer():
    link = build_link(*[t.descriptor for t in synth.generate_traces(synth.identity_world(), 2).traces.values()])
    before = link.params.copy()
    assert online_update(link, []) is None
    assert link.params == before


@pytest.fixture(scope="module")
def flip_stream():
    n = 4000
    tr = synth.generate_traces(synth.flip_world(n, seed=0), n).traces
    return tr, join_aligned(tr["s"], tr["t"])


def _fresh(tr):
    return build_link(tr["s"].descriptor, tr["t"].descriptor, seed=0)


@pytest.mark.parametrize("kind", ["offline", "periodic", "uncertainty", "losspred"])
def test_stream_respects_budget(flip_stream, kind):
    tr, stream = flip_stream
    n = len(stream)
    pol = {
        "offline": SamplingPolicy.offline_init(0.01, n),
        "periodic": SamplingPolicy.periodic(500, 5),
        "uncertainty": SamplingPolicy.uncertainty(),
        "losspred": SamplingPolicy.loss_prediction(),
    }[kind]
    r = run_stream(_fresh(tr), stream, pol, 0.01, 500, seed=0)
    prefix = math.ceil(0.01 * n)
    for k, pos in enumerate(r.labeled, start=1):
        assert k <= 0.01 * (pos - prefix + 1) + 1 + 1e-9
    assert sum(s.labels for s in r.segments) == len(r.labeled)
    assert sum(s.items for s in r.segments) == n - prefix


def test_offline_never_updates_after_prefix(flip_stream):
    tr, stream = flip_stream
    link = _fresh(tr)
    run_stream(link, stream, SamplingPolicy.offline_init(0.01, len(stream)), 0.01, 500, seed=0)
    ref = _fresh(tr)
    train_link(ref, stream.subset(range(40)).with_roles(["s"], "t"), Hyper(seed=0))
    assert link.params == ref.params


def test_uncertainty_reacts_to_flip(flip_stream):
    tr, stream = flip_stream
    r = run_stream(_fresh(tr), stream, SamplingPolicy.uncertainty(), 0.01, 500, seed=0)
    assert r.labels_between(2000, 4000) >= 2 * max(1, r.labels_between(0, 2000))


def test_segments_csv(flip_stream):
    tr, stream = flip_stream
    r = run_stream(_fresh(tr), stream, SamplingPolicy.periodic(500, 5), 0.01, 1000, seed=0)
    lines = segments_to_csv(r, 3).splitlines()
    assert lines[0] == "segment,labels,accuracy,items,seed"
    assert len(lines) == 5 and lines[1].startswith("0,") and lines[1].endswith(",3")
