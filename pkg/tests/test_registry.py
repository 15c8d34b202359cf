import json

import numpy as np
import pytest

from mlink.registry import (
    AlignmentError,
    InferenceTrace,
    ModelDescriptor,
    OutputFormat,
    TaskClass,
    TraceFormatError,
    UndefinedCorrelationError,
    join_aligned,
    load_trace,
    pearson,
    pearson_label_correlation,
    write_trace,
)

VEC2 = ModelDescriptor("m", TaskClass.MULTI_LABEL, OutputFormat.vector(2))


def _write(path, model_id, rows):
    lines = [json.dumps({"model_id": model_id})] + [json.dumps({"input_id": i, "output": o}) for i, o in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def trace(mid, ids, outs=None, desc=None):
    outs = outs or [np.array([float(k)]) for k in range(len(ids))]
    return InferenceTrace(mid, tuple(ids), tuple(np.asarray(o, float) for o in outs), desc)


def test_header_only_trace_is_empty(tmp_path):
    assert len(load_trace(_write(tmp_path / "m.jsonl", "m", []))) == 0


def test_three_rows(tmp_path):
    t = load_trace(_write(tmp_path / "m.jsonl", "m", [("a", [0, 1]), ("b", [1, 0]), ("c", [0.5, 0.5])]), VEC2)
    assert len(t) == 3 and t.input_ids == ("a", "b", "c")


def test_wrong_width_names_line(tmp_path):
    p = _write(tmp_path / "m.jsonl", "m", [("a", [0, 1]), ("b", [1, 0, 0])])
    with pytest.raises(TraceFormatError) as err:
        load_trace(p, VEC2)
    assert err.value.line == 3


def test_duplicate_id_rejected(tmp_path):
    with pytest.raises(TraceFormatError, match="duplicate"):
        load_trace(_write(tmp_path / "m.jsonl", "m", [("a", [0, 1]), ("a", [1, 0])]), VEC2)


def test_sidecar_round_trip(tmp_path):
    desc = ModelDescriptor("s", TaskClass.SEQUENCE, OutputFormat.sequence(9, 3), cost_memory=2.0)
    t = InferenceTrace.build(desc, [("x1", [4, 5]), ("x2", [])])
    write_trace(t, tmp_path / "s.jsonl")
    back = load_trace(tmp_path / "s.jsonl")
    assert back.descriptor == desc
    assert back.outputs == ([4, 5], [])


def test_sequence_validation():
    desc = ModelDescriptor("s", TaskClass.SEQUENCE, OutputFormat.sequence(9, 2))
    for bad in ([4, 5, 6], [2], [9], [1.5]):
        with pytest.raises(ValueError):
            InferenceTrace.build(desc, [("x", bad)])


def test_softmax_must_sum_to_one():
    desc = ModelDescriptor("c", TaskClass.SINGLE_LABEL, OutputFormat.vector(2))
    with pytest.raises(ValueError, match="sums"):
        InferenceTrace.build(desc, [("x", [0.3, 0.3])])


def test_oracle_has_no_cost():
    with pytest.raises(ValueError):
        ModelDescriptor("o", TaskClass.SINGLE_LABEL, OutputFormat.vector(2), cost_memory=1.0, is_oracle=True)


def test_join_identical_ids():
    d = join_aligned(trace("i", "abc"), trace("j", "cab"))
    assert len(d) == 3 and d.input_ids == ("a", "b", "c")
    assert d.target_id == "j" and d.source_ids == ("i",)


def test_join_partial_overlap():
    d = join_aligned(trace("i", "ab"), trace("j", "bc"))
    assert d.input_ids == ("b",)
    np.testing.assert_array_equal(d.column("i"), [[1.0]])
    np.testing.assert_array_equal(d.column("j"), [[0.0]])


def test_join_disjoint_raises():
    with pytest.raises(AlignmentError, match="empty intersection"):
        join_aligned(trace("i", "ab"), trace("j", "cd"))


def test_pearson_identity_and_negation():
    x = np.array([1.0, 3.0, 2.0, 5.0])
    assert pearson(x, x) == 1.0
    assert pearson(x, -x) == -1.0
    with pytest.raises(UndefinedCorrelationError):
        pearson(x, np.ones(4))


def test_label_correlation_matches_two_pass_formula():
    rng = np.random.default_rng(0)
    n = 300
    li = rng.integers(0, 3, n)
    lj = np.where(rng.random(n) < 0.7, li, rng.integers(0, 3, n))
    di = ModelDescriptor("i", TaskClass.SINGLE_LABEL, OutputFormat.vector(3))
    dj = ModelDescriptor("j", TaskClass.SINGLE_LABEL, OutputFormat.vector(3))
    ids = [f"x{k:03d}" for k in range(n)]
    ti = InferenceTrace.build(di, zip(ids, np.eye(3)[li]))
    tj = InferenceTrace.build(dj, zip(ids, np.eye(3)[lj]))
    mi, mj = li.mean(), lj.mean()
    r = np.sum((li - mi) * (lj - mj)) / np.sqrt(np.sum((li - mi) ** 2) * np.sum((lj - mj) ** 2))
    assert pearson_label_correlation(ti, tj) == pytest.approx(r, abs=1e-12)
