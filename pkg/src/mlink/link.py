"""Model links: learned maps from one model's output space to another's."""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .metrics import evaluate_performance
from .nn import MLP, LossKind, RMSprop, SeqToSeq, SeqToVec, VecToSeq, train_step
from .nn.nets import NonFiniteLossError, take_rows
from .nn.params import load_params, save_params
from .registry import ModelDescriptor, TaskClass

DEFAULT_MAX_PARAMS = 250_000


class LinkError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, cause):
        self.epoch = epoch
        super().__init__(f"training diverged in epoch {epoch}: {cause}")


@dataclass
class Hyper:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    decay: float = 0.9
    epsilon: float = 1e-7


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)


def architecture_for(source, target):
    key = (source.output_format.is_seq, target.output_format.is_seq)
    return {
        (False, False): "vec2vec",
        (True, False): "seq2vec",
        (False, True): "vec2seq",
        (True, True): "seq2seq",
    }[key]


def head_for(task_class):
    """(output activation, loss) for a target task."""
    return {
        TaskClass.SINGLE_LABEL: ("softmax", LossKind.CCE),
        TaskClass.MULTI_LABEL: ("sigmoid", LossKind.BCE),
        TaskClass.LOCALIZATION: ("linear", LossKind.MSE),
        TaskClass.REGRESSION: ("linear", LossKind.MSE),
        TaskClass.SEQUENCE: ("softmax", LossKind.SEQ_CE),
    }[TaskClass(task_class)]


def _make_net(arch, source, target, hidden, seed, attention_pool):
    sf, tf = source.output_format, target.output_format
    if arch == "vec2vec":
        return MLP(sf.dim, hidden, tf.dim, seed=seed)
    if arch == "seq2vec":
        return SeqToVec(sf.vocab, hidden, tf.dim, seed=seed, attention_pool=attention_pool)
    if arch == "vec2seq":
        return VecToSeq(sf.dim, hidden, tf.vocab, tf.max_len, seed=seed)
    return SeqToSeq(sf.vocab, hidden, tf.vocab, tf.max_len, seed=seed)


@dataclass
class ModelLink:
    source: ModelDescriptor
    target: ModelDescriptor
    architecture: str
    net: object
    output_activation: str
    loss_kind: LossKind
    hidden: int
    seed: int = 0
    attention_pool: bool = False
    mae_range: float = 0.0

    @property
    def source_id(self):
        return self.source.model_id

    @property
    def target_id(self):
        return self.target.model_id

    @property
    def params(self):
        return self.net.params

    def param_count(self):
        return self.net.param_count()

    def predict(self, outputs_by_source):
        return predict_link(self, outputs_by_source[self.source_id])

    # step-wise decoding hooks used by sequence-target ensembles
    def start(self, outputs_by_source):
        return self.net.start(_check_source_format(self, outputs_by_source[self.source_id]))

    def step_probs(self, state, prev):
        return self.net.step_probs(state, prev)

    def teacher_probs(self, outputs_by_source, targets):
        x = _check_source_format(self, outputs_by_source[self.source_id])
        return self.net.teacher_probs(x, targets)

    def clone(self):
        other = build_link(
            self.source, self.target, hidden=self.hidden, seed=self.seed,
            attention_pool=self.attention_pool, max_params=None,
        )
        other.net.params.assign_flat(self.net.params.flat())
        other.mae_range = self.mae_range
        return other


def build_link(source, target, width_factor=2.0, seed=0, hidden=None,
               attention_pool=False, max_params=DEFAULT_MAX_PARAMS):
    if source.is_oracle:
        raise LinkError("the oracle node can only be a link target")
    if width_factor <= 0:
        raise LinkError("width_factor must be positive")
    arch = architecture_for(source, target)
    activation, loss = head_for(target.task_class)
    if hidden is None:
        hidden = max(1, int(round(width_factor * target.output_format.width)))
    net = _make_net(arch, source, target, hidden, seed, attention_pool)
    if max_params is not None and net.param_count() >= max_params:
        raise LinkError(
            f"link {source.model_id}->{target.model_id} has {net.param_count()} parameters, "
            f"ceiling is {max_params}"
        )
    return ModelLink(source, target, arch, net, activation, loss, hidden, seed, attention_pool)


def _check_source_format(link, x):
    fmt = link.source.output_format
    if fmt.is_seq:
        if isinstance(x, np.ndarray) and x.dtype.kind == "f":
            raise LinkError(f"{link.source_id} emits token sequences, got a float array")
        for s in x:
            if len(s) > fmt.max_len:
                raise LinkError(f"source sequence longer than max_len {fmt.max_len}")
        return list(x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fmt.dim:
        raise LinkError(f"{link.source_id} emits {fmt.dim}-vectors, got shape {x.shape}")
    return x


def _target_range(y):
    y = np.asarray(y, dtype=np.float64)
    span = float(y.max() - y.min()) if y.size else 0.0
    return span if span > 0 else 1.0


def train_link(link, data, hyper=None):
    hyper = hyper or Hyper()
    if not data.has(link.source_id):
        raise LinkError(f"dataset has no column for source {link.source_id!r}")
    if data.target_id != link.target_id:
        raise LinkError(f"dataset target {data.target_id!r} != link target {link.target_id!r}")
    if len(data) == 0:
        raise LinkError("empty training set")
    x = _check_source_format(link, data.source(link.source_id))
    y = data.target
    if link.target.metric.name == "MAE" and not link.target.metric.range:
        link.mae_range = _target_range(y)
    opt = RMSprop(link.net.params, hyper.learning_rate, hyper.decay, hyper.epsilon)
    rng = np.random.default_rng(hyper.seed)
    report = TrainReport()
    n = len(data)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            try:
                loss = train_step(link.net, take_rows(x, idx), take_rows(y, idx), link.loss_kind, opt)
            except NonFiniteLossError as exc:
                raise TrainingDivergedError(epoch, exc) from exc
            total += loss * len(idx)
        report.epoch_losses.append(total / n)
    return report


def predict_link(link, source_output):
    """Activated target predictions (token lists for sequence targets)."""
    x = _check_source_format(link, source_output)
    return link.net.predict(x, link.output_activation)


def evaluate_link(link, data):
    pred = predict_link(link, data.source(link.source_id))
    return evaluate_performance(pred, data.target, link.target.metric, link.mae_range or None)


# --------------------------------------------------------------------------
# checkpoints: u32 header length | JSON header | parameter stream
# --------------------------------------------------------------------------


def link_header(link):
    return {
        "source": link.source.to_dict(),
        "target": link.target.to_dict(),
        "architecture": link.architecture,
        "activation": link.output_activation,
        "hidden": link.hidden,
        "seed": link.seed,
        "attention_pool": link.attention_pool,
        "mae_range": link.mae_range,
    }


def save_link(link):
    header = json.dumps(link_header(link), sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(header)) + header + save_params(link.net.params)


def load_link(data):
    data = bytes(data)
    if len(data) < 4:
        raise LinkError("truncated link checkpoint")
    (hlen,) = struct.unpack("<I", data[:4])
    try:
        header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise LinkError(f"corrupt link header: {exc}") from exc
    link = build_link(
        ModelDescriptor.from_dict(header["source"]),
        ModelDescriptor.from_dict(header["target"]),
        hidden=header["hidden"],
        seed=header["seed"],
        attention_pool=header["attention_pool"],
        max_params=None,
    )
    if link.architecture != header["architecture"]:
        raise LinkError("architecture in header does not match the descriptors")
    params = load_params(data[4 + hlen :])
    if not params.same_layout(link.net.params):
        raise LinkError("parameter layout does not match the link architecture")
    link.net.params.assign_flat(params.flat())
    link.mae_range = header["mae_range"]
    return link
