import pytest

from mlink.config import parse_config
from mlink.experiment import StageError, run_experiment

SMALL = """
[experiment]
seed = 1
[world]
preset = {preset}
n = 400
[link]
epochs = 30
[ensemble]
epochs = 30
[schedule]
budget = {budget}
period = 100
"""


def cfg(preset="pipeline", budget="25e6", extra=""):
    return parse_config(SMALL.format(preset=preset, budget=budget) + extra)


def test_two_models_give_two_links_and_singleton_ensembles(tmp_path):
    run_experiment(cfg("identity", budget="1.5"), tmp_path)
    assert sorted(p.name for p in (tmp_path / "links").iterdir()) == ["a__b.link", "b__a.link"]
    lines = (tmp_path / "reports" / "ensembles.csv").read_text().splitlines()
    assert [l.split(",")[:2] for l in lines[1:]] == [["a", "b"], ["b", "a"]]


def test_one_model_budget_beats_standalone(tmp_path):
    run_experiment(cfg(), tmp_path)
    rows = (tmp_path / "reports" / "schedule.csv").read_text().splitlines()[1:]
    assert len(rows) == 2
    for row in rows:
        f = row.split(",")
        assert f[1] == "cnt" and f[7] == "0" and f[-1] == "1"
        assert float(f[6]) > 1 / 3


def test_rerun_is_byte_identical(tmp_path):
    c = cfg(extra="[online]\npolicy = periodic\nsegment = 100\nsource = cls\ntarget = tag\n")
    a = run_experiment(c, tmp_path / "a")
    b = run_experiment(c, tmp_path / "b")
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_every_report_names_its_seed(tmp_path):
    run_experiment(cfg(extra="[simulate]\nk = 4\ntrials = 2\n"), tmp_path)
    for p in (tmp_path / "reports").iterdir():
        header, *rows = p.read_text().splitlines()
        assert header.endswith(",seed") and all(r.endswith(",1") for r in rows), p.name


def test_stage_failure_names_stage(tmp_path):
    c = cfg()
    c.world.traces = str(tmp_path / "missing")
    with pytest.raises(StageError) as err:
        run_experiment(c, tmp_path / "out")
    assert err.value.stage == "traces"


def test_online_unknown_model(tmp_path):
    with pytest.raises(StageError, match="online"):
        run_experiment(cfg(extra="[online]\nsource = zzz\n"), tmp_path)
