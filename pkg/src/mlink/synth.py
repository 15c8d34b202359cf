"""Seeded synthetic worlds that stand in for real model traces.

Every item draws a latent vector ``u`` uniform on a box.  Each model reads a
few latent coordinates and turns them into an output of its kind; the true
label behind every output is kept so tests can query the generator as an
oracle.  Drift is planted at change points: a label shift for class models
and a change of output sharpness.
"""
from dataclasses import dataclass, field

import numpy as np

from .nn.layers import N_RESERVED, softmax
from .registry import InferenceTrace, ModelDescriptor, OutputFormat, TaskClass, TaskMetric

KINDS = ("class", "multilabel", "box", "count", "seq")


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    kind: str = "class"
    dims: tuple = (0,)
    classes: int = 4  # class / multilabel width, seq content vocabulary
    max_len: int = 4  # seq only
    sharpness: tuple = (4.0, 4.0)  # uniform range of the logit scale; None = exact one-hot
    noise: float = 0.0
    drift_shift: int = 0  # added to the class label after a change point
    drift_sharpness: tuple = None  # sharpness range after a change point
    drift_partner: int = 0  # after a change point, logit mass also goes to label + partner
    drift_blend: tuple = (0.0, 0.0)  # uniform range of that partner's relative logit
    cost_memory: float = 1.0
    cost_time: float = 1.0
    is_oracle: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.dims:
            raise ValueError("a model must read at least one latent coordinate")
        if self.kind == "class" and self.levels ** len(self.dims) != self.classes:
            raise ValueError("classes must be levels ** len(dims) for an integer level count")

    @property
    def levels(self):
        return int(round(self.classes ** (1.0 / len(self.dims))))

    def descriptor(self):
        cm, ct = (0.0, 0.0) if self.is_oracle else (self.cost_memory, self.cost_time)
        if self.kind == "class":
            return ModelDescriptor(self.model_id, TaskClass.SINGLE_LABEL, OutputFormat.vector(self.classes),
                                   cost_memory=cm, cost_time=ct, is_oracle=self.is_oracle)
        if self.kind == "multilabel":
            return ModelDescriptor(self.model_id, TaskClass.MULTI_LABEL, OutputFormat.vector(len(self.dims)),
                                   cost_memory=cm, cost_time=ct, is_oracle=self.is_oracle)
        if self.kind == "box":
            return ModelDescriptor(self.model_id, TaskClass.LOCALIZATION, OutputFormat.vector(4),
                                   cost_memory=cm, cost_time=ct, is_oracle=self.is_oracle)
        if self.kind == "count":
            return ModelDescriptor(self.model_id, TaskClass.REGRESSION, OutputFormat.vector(1),
                                   TaskMetric("counting"), cm, ct, self.is_oracle)
        return ModelDescriptor(self.model_id, TaskClass.SEQUENCE,
                               OutputFormat.sequence(N_RESERVED + self.classes, self.max_len),
                               cost_memory=cm, cost_time=ct, is_oracle=self.is_oracle)


@dataclass(frozen=True)
class SyntheticWorldSpec:
    models: tuple
    latent_dim: int = 2
    latent_low: tuple = None  # per-dim lower bound, default 0
    latent_high: tuple = None  # per-dim upper bound, default 1
    change_points: tuple = ()
    seed: int = 0

    def __post_init__(self):
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate model id")
        for m in self.models:
            if max(m.dims) >= self.latent_dim:
                raise ValueError(f"{m.model_id} reads a latent coordinate beyond latent_dim")

    def model(self, model_id):
        return next(m for m in self.models if m.model_id == model_id)


@dataclass
class WorldSample:
    """Generated traces plus the hidden quantities behind them."""

    traces: dict
    latent: np.ndarray
    labels: dict  # model id -> true (pre-noise) label or value per item
    phase: np.ndarray  # number of change points passed per item
    input_ids: list = field(default_factory=list)


def input_id(i, n):
    return f"x{i:0{max(6, len(str(n)))}d}"


def class_label(spec, u, phase=0):
    """Planted true class of each latent row (drift shifts it)."""
    q = np.clip(np.floor(u[:, list(spec.dims)] * spec.levels), 0, spec.levels - 1).astype(np.int64)
    label = np.zeros(len(u), dtype=np.int64)
    for d in range(q.shape[1]):
        label = label * spec.levels + q[:, d]
    return (label + spec.drift_shift * np.asarray(phase)) % spec.classes


def _between(bounds, r):
    return bounds[0] + (bounds[1] - bounds[0]) * r


def _sharpness(spec, shared, phase):
    if spec.sharpness is None:
        return None
    s = _between(spec.sharpness, shared[0])
    if spec.drift_sharpness is not None:
        s = np.where(phase > 0, _between(spec.drift_sharpness, shared[1]), s)
    return s


def _class_outputs(spec, u, phase, rng, shared):
    """``shared`` holds per-item uniforms common to all models, so two models
    with one spec emit identical outputs unless noise is added."""
    label = class_label(spec, u, phase)
    onehot = np.eye(spec.classes)[label]
    s = _sharpness(spec, shared, phase)
    if s is None and spec.noise == 0:
        return label, onehot
    logits = onehot * (s[:, None] if s is not None else 50.0)
    if spec.drift_partner:
        blend = _between(spec.drift_blend, shared[2]) * (phase > 0)
        partner = np.eye(spec.classes)[(label + spec.drift_partner) % spec.classes]
        logits = logits + partner * (blend * (s if s is not None else 50.0))[:, None]
    if spec.noise:
        logits = logits + spec.noise * rng.standard_normal(logits.shape)
    return label, softmax(logits)


def _multilabel_outputs(spec, u, rng):
    bits = (u[:, list(spec.dims)] >= 0.5).astype(np.float64)
    s = spec.sharpness[0] if spec.sharpness else 50.0
    z = s * (2 * bits - 1)
    if spec.noise:
        z = z + spec.noise * rng.standard_normal(z.shape)
    return bits, 1.0 / (1.0 + np.exp(-z))


def _box_outputs(spec, u, rng):
    dx, dy = spec.dims[0], spec.dims[-1]
    x1 = 0.6 * u[:, dx]
    y1 = 0.6 * u[:, dy]
    size = 0.2 + 0.2 * u[:, dx]
    box = np.stack([x1, y1, x1 + size, y1 + size], axis=1)
    out = box + spec.noise * rng.standard_normal(box.shape) if spec.noise else box
    return box, out


def _count_outputs(spec, u, rng):
    count = np.floor(u[:, spec.dims[0]] * spec.classes).clip(0, spec.classes - 1)
    out = count + spec.noise * rng.standard_normal(len(u)) if spec.noise else count
    return count, out.reshape(-1, 1)


def _seq_outputs(spec, u):
    """Content tokens in [4, vocab); length 1..max_len (EOS is implied)."""
    m = len(spec.dims)
    seqs = []
    for row in u:
        length = 1 + min(spec.max_len - 1, int(row[spec.dims[0]] * spec.max_len))
        toks = []
        for t in range(length):
            v = row[spec.dims[t % m]]
            toks.append(N_RESERVED + (int(v * spec.classes) + t) % spec.classes)
        seqs.append(toks)
    return seqs, seqs


def generate_traces(world, n):
    """Traces for every model over ``n`` aligned items (ids ``x000000``...)."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(world.seed)
    lo = np.zeros(world.latent_dim) if world.latent_low is None else np.asarray(world.latent_low, float)
    hi = np.ones(world.latent_dim) if world.latent_high is None else np.asarray(world.latent_high, float)
    u = lo + (hi - lo) * rng.random((n, world.latent_dim))
    phase = np.zeros(n, dtype=np.int64)
    for cp in world.change_points:
        phase += np.arange(n) >= cp
    ids = [input_id(i, n) for i in range(n)]
    shared = np.random.default_rng([world.seed, len(world.models)]).random((3, n))
    traces, labels = {}, {}
    for idx, spec in enumerate(world.models):
        mrng = np.random.default_rng([world.seed, idx])
        if spec.kind == "class":
            label, out = _class_outputs(spec, u, phase, mrng, shared)
        elif spec.kind == "multilabel":
            label, out = _multilabel_outputs(spec, u, mrng)
        elif spec.kind == "box":
            label, out = _box_outputs(spec, u, mrng)
        elif spec.kind == "count":
            label, out = _count_outputs(spec, u, mrng)
        else:
            label, out = _seq_outputs(spec, u)
        desc = spec.descriptor()
        traces[spec.model_id] = InferenceTrace.build(desc, zip(ids, out))
        labels[spec.model_id] = label
    return WorldSample(traces, u, labels, phase, ids)


def mapping_disagreement(spec, n=10_000, seed=0):
    """Fraction of sampled latent points whose label differs across a change point."""
    u = np.random.default_rng(seed).random((n, max(spec.dims) + 1))
    return float(np.mean(class_label(spec, u, 0) != class_label(spec, u, 1)))


# --------------------------------------------------------------------------
# named worlds used by the experiments and the acceptance suite
# --------------------------------------------------------------------------


def identity_world(seed=0):
    """Two 3-class models with identical outputs (a planted identity mapping)."""
    a = ModelSpec("a", "class", dims=(0,), classes=3, sharpness=(1.0, 4.0))
    return SyntheticWorldSpec((a, ModelSpec(**{**a.__dict__, "model_id": "b"})), latent_dim=1, seed=seed)


def dominance_world(seed=0):
    """Target t; source a sees t's factors exactly, source b through heavy noise."""
    t = ModelSpec("t", "class", dims=(0, 1), classes=4, sharpness=None)
    a = ModelSpec("a", "class", dims=(0, 1), classes=4, sharpness=(3.0, 3.0))
    b = ModelSpec("b", "class", dims=(0, 1), classes=4, sharpness=(1.0, 1.0), noise=3.0)
    return SyntheticWorldSpec((a, b, t), latent_dim=2, seed=seed)


def complementary_world(seed=0):
    """Target t reads two bits; source a sees only the first, b only the second."""
    t = ModelSpec("t", "class", dims=(0, 1), classes=4, sharpness=None)
    a = ModelSpec("a", "class", dims=(0,), classes=2, sharpness=(4.0, 4.0))
    b = ModelSpec("b", "class", dims=(1,), classes=2, sharpness=(4.0, 4.0))
    return SyntheticWorldSpec((a, b, t), latent_dim=2, seed=seed)


def flip_world(n=20_000, seed=0):
    """Source s (8 classes) -> target t (4 classes, t = s // 2), flipped at n / 2.

    After the change point the target label moves to ``(s // 2 + 1) mod 4`` and
    the source also hedges towards class ``s + 4``, whose old target image is
    neither the old nor the new answer.  The hedge is what makes the shift
    visible to an uncertainty score.
    """
    s = ModelSpec("s", "class", dims=(0,), classes=8, sharpness=(2.0, 5.0),
                  drift_partner=4, drift_blend=(0.6, 0.9))
    t = ModelSpec("t", "class", dims=(0,), classes=4, sharpness=None, drift_shift=1)
    return SyntheticWorldSpec((s, t), latent_dim=1, change_points=(n // 2,), seed=seed)


def pipeline_world(seed=0):
    """Three heterogeneous models sharing latent factors, for the end-to-end run."""
    return SyntheticWorldSpec(
        (
            ModelSpec("cls", "class", dims=(0, 1), classes=4, sharpness=(2.0, 5.0),
                      cost_memory=40e6, cost_time=30.0),
            ModelSpec("cnt", "count", dims=(0,), classes=4, cost_memory=20e6, cost_time=20.0),
            ModelSpec("tag", "multilabel", dims=(0, 1), sharpness=(3.0, 3.0),
                      cost_memory=30e6, cost_time=40.0),
        ),
        latent_dim=2,
        seed=seed,
    )


def domain_world(domain, seed=0):
    """One domain of a shared class mapping; domains cover different latent ranges."""
    ranges = {"d0": ((0.0,), (0.5,)), "d1": ((0.5,), (1.0,)), "target": ((0.0,), (1.0,))}
    lo, hi = ranges[domain]
    s = ModelSpec("s", "class", dims=(0,), classes=8, sharpness=(2.0, 4.0))
    t = ModelSpec("t", "class", dims=(0,), classes=4, sharpness=None)
    return SyntheticWorldSpec((s, t), latent_dim=1, latent_low=lo, latent_high=hi, seed=seed)
