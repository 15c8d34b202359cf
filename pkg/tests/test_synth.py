import numpy as np
import pytest

from mlink import synth
from mlink.nn import N_RESERVED


def test_identity_world_traces_identical():
    t = synth.generate_traces(synth.identity_world(seed=2), 200).traces
    assert all(np.array_equal(a, b) for a, b in zip(t["a"].outputs, t["b"].outputs))


def test_all_traces_aligned():
    s = synth.generate_traces(synth.pipeline_world(seed=0), 50)
    ids = {m: set(t.input_ids) for m, t in s.traces.items()}
    assert len({frozenset(v) for v in ids.values()}) == 1


def test_flip_mapping_disagreement():
    world = synth.flip_world(1000)
    t = next(m for m in world.models if m.model_id == "t")
    assert synth.mapping_disagreement(t) >= 0.8
    assert world.change_points == (500,)


def test_flip_labels_follow_change_point():
    s = synth.generate_traces(synth.flip_world(400, seed=0), 400)
    lab_s, lab_t = s.labels["s"], s.labels["t"]
    pre, post = s.phase == 0, s.phase == 1
    assert np.all(lab_t[pre] == lab_s[pre] // 2)
    assert np.all(lab_t[post] == (lab_s[post] // 2 + 1) % 4)


def test_sequence_outputs_respect_max_len():
    spec = synth.ModelSpec("q", "seq", dims=(0, 1), classes=5, max_len=3)
    s = synth.generate_traces(synth.SyntheticWorldSpec((spec,), latent_dim=2, seed=1), 300)
    outs = s.traces["q"].outputs
    assert all(1 <= len(o) <= 3 and all(N_RESERVED <= t < N_RESERVED + 5 for t in o) for o in outs)
    assert s.traces["q"].descriptor.output_format.vocab == N_RESERVED + 5


def test_box_and_count_kinds():
    world = synth.SyntheticWorldSpec(
        (synth.ModelSpec("b", "box", dims=(0, 1)), synth.ModelSpec("c", "count", dims=(0,), classes=4)),
        latent_dim=2,
        seed=0,
    )
    s = synth.generate_traces(world, 100)
    boxes = np.stack(s.traces["b"].outputs)
    assert np.all(boxes[:, 2] > boxes[:, 0]) and np.all(boxes[:, 3] > boxes[:, 1])
    counts = np.stack(s.traces["c"].outputs)[:, 0]
    assert set(counts) <= {0.0, 1.0, 2.0, 3.0}


def test_seeded_generation_reproducible():
    a = synth.generate_traces(synth.dominance_world(seed=5), 30).traces
    b = synth.generate_traces(synth.dominance_world(seed=5), 30).traces
    assert all(np.array_equal(x, y) for m in a for x, y in zip(a[m].outputs, b[m].outputs))


def test_class_count_must_be_level_power():
    with pytest.raises(ValueError):
        synth.ModelSpec("x", "class", dims=(0, 1), classes=5)


def test_oracle_spec_has_zero_cost():
    d = synth.ModelSpec("o", "class", dims=(0,), classes=2, sharpness=None, is_oracle=True).descriptor()
    assert d.is_oracle and d.cost_memory == 0 == d.cost_time
