"""Command-line entry point: ``mlink <subcommand> ...``."""
import argparse
import sys
from pathlib import Path

from . import experiment as ex
from .config import ConfigError, load_config
from .federated import EdgeNode, FederationError, records_to_csv, run_federation
from .link import Hyper, build_link, save_link
from .online import SamplingPolicy, run_stream, segments_to_csv
from .registry import join_aligned
from .scheduler import Budget, reports_to_csv, run_periods
from .simulation import BETA, NORMAL, SimulationSpec
from . import synth

KINDS = {"mem": "memory", "memory": "memory", "time": "time"}


def _hyper_args(p, epochs=100):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)


def _hyper(a):
    return Hyper(a.lr, a.epochs, a.batch_size, a.seed)


def _split(traces, fraction):
    if fraction >= 1.0:
        return traces, traces
    return ex.split_traces(traces, fraction)


def _pair(traces, source, target):
    ids = sorted(traces)
    src = source or ids[0]
    tgt = target or ids[-1]
    for m in (src, tgt):
        if m not in traces:
            raise SystemExit(f"error: no trace for model {m!r} (have {', '.join(ids)})")
    return src, tgt


def cmd_gen_traces(a):
    world = ex.make_world(a.world, a.seed, a.n)
    ex.write_trace_dir(synth.generate_traces(world, a.n).traces, a.out)


def cmd_train_links(a):
    train, held = _split(ex.read_trace_dir(a.traces), a.train_fraction)
    links, rows = ex.train_links(train, held, _hyper(a), a.width_factor)
    ex.save_link_dir(links, a.out)
    ex._write(Path(a.out) / "links.csv", ex.rows_to_csv(ex.LINK_HEADER, rows, a.seed))


def cmd_train_ensembles(a):
    train, held = _split(ex.read_trace_dir(a.traces), a.train_fraction)
    links = ex.load_link_dir(a.links)
    ensembles, rows = ex.train_ensembles(train, held, links, _hyper(a))
    ex.save_ensemble_dir(ensembles, a.out)
    ex._write(Path(a.out) / "ensembles.csv", ex.rows_to_csv(ex.ENSEMBLE_HEADER, rows, a.seed))


def cmd_schedule(a):
    traces = ex.read_trace_dir(a.traces)
    links = ex.load_link_dir(a.links)
    if a.ensembles:
        ensembles = ex.load_ensemble_dir(a.ensembles, links)
    else:
        ensembles, _ = ex.train_ensembles(traces, None, links, Hyper(seed=a.seed))
    servable = [traces[m] for m in sorted(traces) if not traces[m].descriptor.is_oracle]
    _, reports = run_periods(servable, links, ensembles, Budget(KINDS[a.budget_kind], a.budget),
                             a.period, a.profile_ratio)
    ex._write(a.out, reports_to_csv(reports, a.seed))


def cmd_adapt(a):
    traces = ex.read_trace_dir(a.traces)
    src, tgt = _pair(traces, a.source, a.target)
    stream = join_aligned(traces[src], traces[tgt])
    policy = {
        "offline": lambda: SamplingPolicy.offline_init(a.label_ratio, len(stream)),
        "periodic": lambda: SamplingPolicy.periodic(a.interval, a.chunk),
        "uncertainty": lambda: SamplingPolicy.uncertainty(a.threshold),
        "losspred": lambda: SamplingPolicy.loss_prediction(),
    }[a.policy]()
    link = build_link(traces[src].descriptor, traces[tgt].descriptor, seed=a.seed)
    result = run_stream(link, stream, policy, a.label_ratio, a.segment, _hyper(a), seed=a.seed)
    ex._write(a.out, segments_to_csv(result, a.seed))


def _load_edge(directory, source, target):
    traces = ex.read_trace_dir(directory)
    src, tgt = _pair(traces, source, target)
    return traces, src, tgt


def cmd_federate(a):
    dirs = sorted(p for p in Path(a.edges).iterdir() if p.is_dir())
    if not dirs:
        raise SystemExit(f"error: no edge directories under {a.edges}")
    hyper = _hyper(a)
    edges, template = [], None
    for d in dirs:
        traces, src, tgt = _load_edge(d, a.source, a.target)
        link = build_link(traces[src].descriptor, traces[tgt].descriptor, seed=a.seed)
        template = template or link
        edges.append(EdgeNode(d.name, join_aligned(traces[src], traces[tgt]), link, hyper))
    global_link = template.clone()
    evals = {}
    if a.eval:
        for d in sorted(p for p in Path(a.eval).iterdir() if p.is_dir()):
            traces, src, tgt = _load_edge(d, a.source, a.target)
            evals[d.name] = join_aligned(traces[src], traces[tgt])
    link, records, _ = run_federation(edges, global_link, a.rounds, evals, a.local_steps)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_link(link))
    ex._write(a.log or out.with_suffix(".csv"), records_to_csv(records, a.seed))


def cmd_simulate(a):
    spec = SimulationSpec(a.k, NORMAL if a.dist == "normal" else BETA, None, a.gain, a.points, a.trials, a.seed)
    ex._write(a.out, ex.rows_to_csv(ex.SIM_HEADER, ex.simulation_rows(spec), a.seed))


def cmd_run(a):
    for p in ex.run_experiment(load_config(a.config), a.out):
        print(p)


def build_parser():
    ap = argparse.ArgumentParser(prog="mlink", description="Cross-model output links, ensembles and scheduling.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", help="write synthetic model traces")
    p.add_argument("--world", default="pipeline", choices=sorted(ex.WORLDS) + ["flip"])
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_traces)

    p = sub.add_parser("train-links", help="train every pairwise link")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width-factor", type=float, default=2.0)
    p.add_argument("--train-fraction", type=float, default=0.5)
    _hyper_args(p)
    p.set_defaults(fn=cmd_train_links)

    p = sub.add_parser("train-ensembles", help="train one all-sources ensemble per target")
    p.add_argument("--traces", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=0.5)
    _hyper_args(p)
    p.set_defaults(fn=cmd_train_ensembles)

    p = sub.add_parser("schedule", help="periodic profile / select / serve loop")
    p.add_argument("--budget-kind", choices=sorted(KINDS), required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--period", type=int, required=True)
    p.add_argument("--profile-ratio", type=float, required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--ensembles", help="ensemble checkpoints; trained on the traces when omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("adapt", help="online link training under a label budget")
    p.add_argument("--policy", choices=["offline", "periodic", "uncertainty", "losspred"], required=True)
    p.add_argument("--label-ratio", type=float, default=0.01)
    p.add_argument("--segment", type=int, default=1000)
    p.add_argument("--traces", required=True)
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--interval", type=int, default=1000, help="periodic: items between label chunks")
    p.add_argument("--chunk", type=int, default=10, help="periodic: labels per chunk")
    p.add_argument("--threshold", type=float, help="uncertainty: fixed score threshold")
    p.add_argument("--out", required=True)
    _hyper_args(p)
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("federate", help="federated link training across edge directories")
    p.add_argument("--edges", required=True, help="directory with one trace subdirectory per edge")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--local-steps", type=int, default=1)
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--eval", help="directory with one trace subdirectory per evaluation domain")
    p.add_argument("--log", help="round log CSV (default: next to --out)")
    p.add_argument("--out", required=True)
    _hyper_args(p)
    p.set_defaults(fn=cmd_federate)

    p = sub.add_parser("simulate", help="greedy vs optimal on random link matrices")
    p.add_argument("--dist", choices=["normal", "beta"], default="normal")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--gain", type=float, default=0.02)
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("run", help="end-to-end experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, ex.StageError, FederationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
