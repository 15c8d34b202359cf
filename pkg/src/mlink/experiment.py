"""End-to-end pipeline: traces -> pairwise links -> ensembles -> periodic serving.

Every stage writes deterministic artifacts (canonical JSON traces, binary
checkpoints, CSV reports with a seed column) so two runs with one config are
byte-identical.
"""
import csv
import io
import math
from pathlib import Path

from .ensemble import evaluate_ensemble, load_ensemble, save_ensemble, train_ensemble
from .link import Hyper, build_link, evaluate_link, load_link, save_link, train_link
from .online import SamplingPolicy, run_stream, segments_to_csv
from .registry import InferenceTrace, join_aligned, load_trace, write_trace
from .scheduler import Budget, reports_to_csv, run_periods
from .simulation import BETA, NORMAL, SimulationSpec, simulate_schedule
from . import synth


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


WORLDS = {
    "pipeline": synth.pipeline_world,
    "identity": synth.identity_world,
    "dominance": synth.dominance_world,
    "complementary": synth.complementary_world,
}


def make_world(preset, seed, n):
    if preset == "flip":
        return synth.flip_world(n, seed=seed)
    if preset not in WORLDS:
        raise ValueError(f"unknown world preset {preset!r}")
    return WORLDS[preset](seed=seed)


# -- trace directories ------------------------------------------------------


def write_trace_dir(traces, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for mid in sorted(traces):
        write_trace(traces[mid], directory / f"{mid}.jsonl")


def read_trace_dir(directory):
    paths = sorted(Path(directory).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no *.jsonl traces in {directory}")
    traces = {}
    for p in paths:
        t = load_trace(p)
        if t.descriptor is None:
            raise ValueError(f"{p} has no descriptor sidecar")
        traces[t.model_id] = t
    return traces


def restrict_trace(trace, ids):
    keep = set(ids)
    rows = [(i, o) for i, o in zip(trace.input_ids, trace.outputs) if i in keep]
    return InferenceTrace(trace.model_id, tuple(r[0] for r in rows), tuple(r[1] for r in rows), trace.descriptor)


def split_traces(traces, train_fraction):
    """Leading share of the common input ids for training, the rest for serving."""
    common = sorted(set.intersection(*(set(t.input_ids) for t in traces.values())))
    cut = int(math.floor(train_fraction * len(common)))
    if cut < 1 or cut >= len(common):
        raise ValueError("train_fraction leaves an empty training or serving part")
    train = {m: restrict_trace(t, common[:cut]) for m, t in traces.items()}
    serve = {m: restrict_trace(t, common[cut:]) for m, t in traces.items()}
    return train, serve


# -- links and ensembles ----------------------------------------------------


def link_pairs(traces):
    ids = sorted(traces)
    return [(i, j) for i in ids for j in ids if i != j and not traces[i].descriptor.is_oracle]


def train_links(train, held, hyper, width_factor=2.0):
    """All pairwise links; returns (links, report rows)."""
    links, rows = {}, []
    for i, j in link_pairs(train):
        link = build_link(train[i].descriptor, train[j].descriptor, width_factor, seed=hyper.seed)
        rep = train_link(link, join_aligned(train[i], train[j]), hyper)
        p = evaluate_link(link, join_aligned(held[i], held[j])).p if held else float("nan")
        links[(i, j)] = link
        rows.append([i, j, link.architecture, link.param_count(), repr(rep.epoch_losses[-1]), repr(float(p))])
    return links, rows


def train_ensembles(train, held, links, hyper):
    """Ensemble over every other model for each target (A_j = F minus j)."""
    ensembles, rows = {}, []
    targets = sorted({j for _, j in links})
    for j in targets:
        members = [links[(i, j)] for i in sorted(train) if (i, j) in links]
        srcs = [m.source_id for m in members]
        ens = train_ensemble(train[j].descriptor, members, join_aligned(*[train[s] for s in srcs], train[j]), hyper)
        p = evaluate_ensemble(ens, join_aligned(*[held[s] for s in srcs], held[j])).p if held else float("nan")
        ensembles[j] = ens
        rows.append([j, "|".join(srcs), repr(float(p))])
    return ensembles, rows


def save_link_dir(links, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for (i, j), link in sorted(links.items()):
        (directory / f"{i}__{j}.link").write_bytes(save_link(link))


def load_link_dir(directory):
    links = {}
    for p in sorted(Path(directory).glob("*.link")):
        link = load_link(p.read_bytes())
        links[(link.source_id, link.target_id)] = link
    if not links:
        raise FileNotFoundError(f"no *.link checkpoints in {directory}")
    return links


def save_ensemble_dir(ensembles, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for j, ens in sorted(ensembles.items()):
        (directory / f"{j}.ens").write_bytes(save_ensemble(ens))


def load_ensemble_dir(directory, links):
    ensembles = {}
    for p in sorted(Path(directory).glob("*.ens")):
        target = p.stem
        members = {i: l for (i, j), l in links.items() if j == target}
        ens = load_ensemble(p.read_bytes(), members)
        ensembles[ens.target_id] = ens
    return ensembles


# -- reports ----------------------------------------------------------------


def rows_to_csv(header, rows, seed=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header + (["seed"] if seed is not None else []))
    for r in rows:
        w.writerow(list(r) + ([seed] if seed is not None else []))
    return buf.getvalue()


LINK_HEADER = ["source", "target", "architecture", "params", "final_train_loss", "heldout_p"]
ENSEMBLE_HEADER = ["target", "sources", "heldout_p"]
SIM_HEADER = ["dist", "point", "budget", "standalone", "greedy", "optimal", "ratio"]


def simulation_rows(spec):
    summary, _ = simulate_schedule(spec)
    return [
        [spec.perf.family, r["point"], repr(r["budget"]), repr(r["standalone"]), repr(r["greedy"]),
         repr(r["optimal"]), repr(r["ratio"])]
        for r in summary
    ]


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_experiment(cfg, out_dir):
    """Run the configured pipeline into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    written = []
    seed = cfg.seed

    def emit(rel, text):
        _write(out / rel, text)
        written.append(out / rel)

    if cfg.world.traces:
        traces = _stage("traces", read_trace_dir, cfg.world.traces)
    else:
        world = make_world(cfg.world.preset, cfg.world.seed, cfg.world.n)
        traces = _stage("traces", lambda: synth.generate_traces(world, cfg.world.n).traces)
        _stage("traces", write_trace_dir, traces, out / "traces")
        written += sorted((out / "traces").iterdir())
    train, serve = _stage("split", split_traces, traces, cfg.link.train_fraction)

    lc = cfg.link
    link_hyper = Hyper(lc.learning_rate, lc.epochs, lc.batch_size, lc.seed)
    links, link_rows = _stage("links", train_links, train, serve, link_hyper, lc.width_factor)
    _stage("links", save_link_dir, links, out / "links")
    emit("reports/links.csv", rows_to_csv(LINK_HEADER, link_rows, seed))

    ec = cfg.ensemble
    ens_hyper = Hyper(ec.learning_rate, ec.epochs, ec.batch_size, ec.seed)
    ensembles, ens_rows = _stage("ensembles", train_ensembles, train, serve, links, ens_hyper)
    _stage("ensembles", save_ensemble_dir, ensembles, out / "ensembles")
    emit("reports/ensembles.csv", rows_to_csv(ENSEMBLE_HEADER, ens_rows, seed))

    sc = cfg.schedule
    servable = {m: t for m, t in serve.items() if not t.descriptor.is_oracle}
    _, reports = _stage(
        "schedule", run_periods, [servable[m] for m in sorted(servable)], links, ensembles,
        Budget(sc.budget_kind, sc.budget), sc.period, sc.profile_ratio,
    )
    emit("reports/schedule.csv", reports_to_csv(reports, seed))

    if cfg.online.enabled:
        oc = cfg.online
        src = oc.source or sorted(traces)[0]
        tgt = oc.target or sorted(traces)[-1]
        if src not in traces or tgt not in traces:
            raise StageError("online", f"unknown model in online.source/target: {src!r}, {tgt!r}")
        stream = join_aligned(traces[src], traces[tgt])
        policy = {
            "offline": SamplingPolicy.offline_init(oc.label_ratio, len(stream)),
            "periodic": SamplingPolicy.periodic(1000, 10),
            "uncertainty": SamplingPolicy.uncertainty(),
            "losspred": SamplingPolicy.loss_prediction(),
        }[oc.policy]
        link = build_link(traces[src].descriptor, traces[tgt].descriptor, lc.width_factor, seed=lc.seed)
        result = _stage("online", run_stream, link, stream, policy, oc.label_ratio, oc.segment,
                        link_hyper, seed=seed)
        emit("reports/online.csv", segments_to_csv(result, seed))

    if cfg.simulate.enabled:
        sm = cfg.simulate
        spec = SimulationSpec(sm.k, NORMAL if sm.dist == "normal" else BETA, None, sm.gain, sm.points,
                              sm.trials, sm.seed)
        emit("reports/simulation.csv", rows_to_csv(SIM_HEADER, _stage("simulate", simulation_rows, spec), seed))

    written += sorted((out / "links").iterdir()) + sorted((out / "ensembles").iterdir())
    return sorted(set(written))
