"""Black-box model descriptors, inference traces and alignment.

A trace file is JSON lines: one header object ``{"model_id": ...}`` followed by
one ``{"input_id": ..., "output": [...]}`` object per record.  A descriptor may
sit next to it as ``<stem>.model.json``.
"""
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn.layers import N_RESERVED


class TraceFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AlignmentError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


class TaskClass(str, enum.Enum):
    SINGLE_LABEL = "single-label"
    MULTI_LABEL = "multi-label"
    LOCALIZATION = "localization"
    REGRESSION = "regression"
    SEQUENCE = "sequence-generation"


@dataclass(frozen=True)
class OutputFormat:
    kind: str  # "vector" | "sequence"
    dim: int = 0
    vocab: int = 0
    max_len: int = 0

    def __post_init__(self):
        if self.kind == "vector":
            if self.dim < 1:
                raise ValueError("vector outputs need dim >= 1")
        elif self.kind == "sequence":
            if self.vocab < N_RESERVED or self.max_len < 1:
                raise ValueError("sequence outputs need vocab >= 4 and max_len >= 1")
        else:
            raise ValueError(f"unknown output kind {self.kind!r}")

    @classmethod
    def vector(cls, dim):
        return cls("vector", dim=dim)

    @classmethod
    def sequence(cls, vocab, max_len):
        return cls("sequence", vocab=vocab, max_len=max_len)

    @property
    def is_seq(self):
        return self.kind == "sequence"

    @property
    def width(self):
        """Output dimension a link must produce (vocabulary for sequences)."""
        return self.vocab if self.is_seq else self.dim


METRICS = ("accuracy", "mAP", "IoU", "MAE", "WER", "counting")


@dataclass(frozen=True)
class TaskMetric:
    name: str
    range: float = 0.0  # MAE normalization; 0 = derive from training targets

    def __post_init__(self):
        if self.name not in METRICS:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.range < 0:
            raise ValueError("MAE range must be positive")

    @property
    def counting_threshold(self):
        return 0.5


_DEFAULT_METRIC = {
    TaskClass.SINGLE_LABEL: "accuracy",
    TaskClass.MULTI_LABEL: "mAP",
    TaskClass.LOCALIZATION: "IoU",
    TaskClass.REGRESSION: "MAE",
    TaskClass.SEQUENCE: "WER",
}


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    task_class: TaskClass
    output_format: OutputFormat
    metric: TaskMetric = None
    cost_memory: float = 0.0
    cost_time: float = 0.0
    is_oracle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task_class", TaskClass(self.task_class))
        if self.metric is None:
            object.__setattr__(self, "metric", TaskMetric(_DEFAULT_METRIC[self.task_class]))
        if self.cost_memory < 0 or self.cost_time < 0:
            raise ValueError("costs must be non-negative")
        if self.is_oracle and (self.cost_memory or self.cost_time):
            raise ValueError("oracle descriptors carry zero serving cost")
        if (self.task_class is TaskClass.SEQUENCE) != self.output_format.is_seq:
            raise ValueError("sequence-generation tasks and sequence outputs go together")
        if self.task_class is TaskClass.LOCALIZATION and self.output_format.dim != 4:
            raise ValueError("localization outputs are (x1, y1, x2, y2) 4-vectors")

    def cost(self, kind):
        return self.cost_memory if kind == "memory" else self.cost_time

    def to_dict(self):
        d = asdict(self)
        d["task_class"] = self.task_class.value
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["output_format"] = OutputFormat(**d["output_format"])
        d["metric"] = TaskMetric(**d["metric"]) if d.get("metric") else None
        return cls(**d)


def save_descriptor(desc, path):
    Path(path).write_text(json.dumps(desc.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_descriptor(path):
    return ModelDescriptor.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def validate_output(desc, output):
    """Return the output in canonical form or raise ValueError."""
    fmt = desc.output_format
    if fmt.is_seq:
        if any(isinstance(t, bool) or not isinstance(t, (int, np.integer)) for t in output):
            raise ValueError("sequence outputs must be integer token ids")
        toks = [int(t) for t in output]
        if len(toks) > fmt.max_len:
            raise ValueError(f"sequence length {len(toks)} exceeds max_len {fmt.max_len}")
        if any(t < N_RESERVED - 1 or t >= fmt.vocab for t in toks):
            raise ValueError(f"token id outside content range [3, {fmt.vocab})")
        return toks
    vec = np.asarray(output, dtype=np.float64)
    if vec.shape != (fmt.dim,):
        raise ValueError(f"expected {fmt.dim}-dim output, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite output value")
    if desc.task_class is TaskClass.SINGLE_LABEL and abs(vec.sum() - 1.0) > 1e-6:
        raise ValueError(f"softmax output sums to {vec.sum()!r}, not 1")
    return vec


@dataclass(frozen=True)
class InferenceTrace:
    model_id: str
    input_ids: tuple
    outputs: tuple
    descriptor: ModelDescriptor = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.input_ids) != len(self.outputs):
            raise ValueError("input_ids and outputs differ in length")
        if len(set(self.input_ids)) != len(self.input_ids):
            raise ValueError("duplicate input_id in trace")

    def __len__(self):
        return len(self.input_ids)

    @classmethod
    def build(cls, descriptor, records):
        ids, outs = [], []
        for iid, out in records:
            ids.append(str(iid))
            outs.append(validate_output(descriptor, out))
        return cls(descriptor.model_id, tuple(ids), tuple(outs), descriptor)

    def lookup(self):
        return dict(zip(self.input_ids, self.outputs))


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + ".model.json")


def load_trace(path, descriptor=None):
    path = Path(path)
    if descriptor is None and sidecar_path(path).exists():
        descriptor = load_descriptor(sidecar_path(path))
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("missing header line", 1)
    try:
        header = json.loads(lines[0])
        model_id = header["model_id"]
    except (ValueError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from exc
    if descriptor is not None and descriptor.model_id != model_id:
        raise TraceFormatError(
            f"header model_id {model_id!r} does not match descriptor {descriptor.model_id!r}", 1
        )
    ids, outs, seen = [], [], set()
    width = None
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            iid, out = rec["input_id"], rec["output"]
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceFormatError(f"unparseable record: {exc}", lineno) from exc
        if not isinstance(iid, str):
            raise TraceFormatError("input_id must be a string", lineno)
        if iid in seen:
            raise TraceFormatError(f"duplicate input_id {iid!r}", lineno)
        if not isinstance(out, list):
            raise TraceFormatError("output must be an array", lineno)
        seen.add(iid)
        if descriptor is not None:
            try:
                out = validate_output(descriptor, out)
            except ValueError as exc:
                raise TraceFormatError(str(exc), lineno) from exc
        else:
            is_seq = all(isinstance(t, int) and not isinstance(t, bool) for t in out) and out
            if not is_seq:
                out = np.asarray(out, dtype=np.float64)
                if width is None:
                    width = out.shape
                elif out.shape != width:
                    raise TraceFormatError(f"output shape {out.shape} differs from {width}", lineno)
            else:
                out = list(out)
        ids.append(iid)
        outs.append(out)
    return InferenceTrace(model_id, tuple(ids), tuple(outs), descriptor)


def _jsonable(out):
    if isinstance(out, np.ndarray):
        return [float(v) for v in out]
    return [int(t) for t in out]


def dump_trace(trace):
    lines = [json.dumps({"model_id": trace.model_id})]
    for iid, out in zip(trace.input_ids, trace.outputs):
        lines.append(json.dumps({"input_id": iid, "output": _jsonable(out)}))
    return "\n".join(lines) + "\n"


def write_trace(trace, path, with_descriptor=True):
    path = Path(path)
    path.write_text(dump_trace(trace), encoding="utf-8", newline="\n")
    if with_descriptor and trace.descriptor is not None:
        save_descriptor(trace.descriptor, sidecar_path(path))


class AlignedDataset:
    """Rows present in every participating trace, sorted by input_id."""

    def __init__(self, source_ids, target_id, input_ids, columns, descriptors=None):
        self.source_ids = tuple(source_ids)
        self.target_id = target_id
        self.input_ids = tuple(input_ids)
        self._columns = columns
        self.descriptors = descriptors or {}

    def __len__(self):
        return len(self.input_ids)

    def has(self, model_id):
        return model_id in self._columns

    def column(self, model_id):
        return self._columns[model_id]

    @property
    def target(self):
        return self._columns[self.target_id]

    def source(self, model_id=None):
        return self._columns[model_id if model_id is not None else self.source_ids[0]]

    def subset(self, idx):
        idx = list(idx)
        cols = {}
        for k, v in self._columns.items():
            cols[k] = v[idx] if isinstance(v, np.ndarray) else [v[i] for i in idx]
        return AlignedDataset(
            self.source_ids, self.target_id, [self.input_ids[i] for i in idx], cols, self.descriptors
        )

    def split(self, train_fraction, seed=0):
        """Seeded random train/held-out split."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        return self.subset(sorted(order[:cut])), self.subset(sorted(order[cut:]))

    def head(self, n):
        return self.subset(range(min(n, len(self))))

    def with_roles(self, source_ids, target_id):
        return AlignedDataset(source_ids, target_id, self.input_ids, self._columns, self.descriptors)


def _stack(outs):
    if outs and isinstance(outs[0], np.ndarray):
        return np.stack(outs)
    return [list(o) for o in outs]


def join_aligned(*traces, target_id=None):
    """Inner-join traces on input_id; the target defaults to the last trace."""
    if len(traces) < 2:
        raise AlignmentError("join_aligned needs at least two traces")
    ids = [t.model_id for t in traces]
    if len(set(ids)) != len(ids):
        raise AlignmentError("traces must come from distinct models")
    target_id = target_id if target_id is not None else traces[-1].model_id
    if target_id not in ids:
        raise AlignmentError(f"target {target_id!r} is not among the traces")
    common = set(traces[0].input_ids)
    for t in traces[1:]:
        common &= set(t.input_ids)
    if not common:
        raise AlignmentError("empty intersection of input ids; nothing to train on")
    rows = sorted(common)
    columns, descs = {}, {}
    for t in traces:
        look = t.lookup()
        columns[t.model_id] = _stack([look[i] for i in rows])
        if t.descriptor is not None:
            descs[t.model_id] = t.descriptor
    sources = sorted(m for m in ids if m != target_id)
    return AlignedDataset(sources, target_id, rows, columns, descs)


def derive_labels(desc, outputs):
    """Scalar label series used for correlation quantification."""
    tc = desc.task_class
    if tc is TaskClass.SEQUENCE:
        raise ValueError(f"{desc.model_id}: sequence models have no scalar label")
    arr = np.asarray(outputs, dtype=np.float64)
    if tc in (TaskClass.SINGLE_LABEL, TaskClass.MULTI_LABEL):
        return np.argmax(arr, axis=1).astype(np.float64)
    if tc is TaskClass.LOCALIZATION:
        return np.any(arr != 0.0, axis=1).astype(np.float64)
    return arr[:, 0].copy()


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length series with at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson_label_correlation(trace_i, trace_j):
    if trace_i.descriptor is None or trace_j.descriptor is None:
        raise ValueError("both traces need descriptors to derive labels")
    data = join_aligned(trace_i, trace_j)
    return pearson(
        derive_labels(trace_i.descriptor, data.column(trace_i.model_id)),
        derive_labels(trace_j.descriptor, data.column(trace_j.model_id)),
    )
