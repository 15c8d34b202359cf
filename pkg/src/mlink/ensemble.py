"""Weighted combination of several predictors that share one target.

Each member contributes its activated prediction ``G_i``; the ensemble forms
``z = sum_i w_i * G_i + b`` with per-dimension weights and re-applies the
target activation.  Sequence targets combine per-step token distributions.
"""
import json
import struct

import numpy as np

from .link import Hyper, head_for
from .metrics import evaluate_performance
from .nn import BOS, EOS, RMSprop
from .nn.layers import ACTIVATIONS
from .nn.losses import sequence_cross_entropy, vector_loss
from .nn.nets import NonFiniteLossError, greedy_tokens
from .nn.params import ParamSet, load_params, save_params
from .registry import ModelDescriptor


class EnsembleError(ValueError):
    pass


class MissingSourceError(KeyError):
    pass


class EnsembleLink:
    def __init__(self, target, members, weights=None, bias=None):
        if not members:
            raise EnsembleError("an ensemble needs at least one member")
        self.target = target
        self.members = dict(members)
        self.member_ids = tuple(self.members)
        self.activation, self.loss_kind = head_for(target.task_class)
        d = target.output_format.width
        m = len(self.member_ids)
        self.params = ParamSet()
        self.params.add("weights", np.full((m, d), 1.0 / m) if weights is None else weights)
        self.params.add("bias", np.zeros(d) if bias is None else bias)
        if self.params["weights"].shape != (m, d) or self.params["bias"].shape != (d,):
            raise EnsembleError("weight/bias shapes do not match members and target width")
        self.mae_range = max((getattr(mem, "mae_range", 0.0) for mem in self.members.values()), default=0.0)

    @classmethod
    def identity(cls, target, member_id, member):
        """Single-member ensemble fitted as an identity layer (w = 1, b = 0)."""
        d = target.output_format.width
        return cls(target, {member_id: member}, np.ones((1, d)), np.zeros(d))

    @property
    def target_id(self):
        return self.target.model_id

    @property
    def source_ids(self):
        """Models whose outputs this ensemble consumes."""
        ids = set()
        for mem in self.members.values():
            ids.update(getattr(mem, "source_ids", None) or [mem.source_id])
        return tuple(sorted(ids))

    @property
    def weights(self):
        return self.params["weights"]

    @property
    def bias(self):
        return self.params["bias"]

    def param_count(self):
        own = self.params.total_count
        return own + sum(mem.param_count() for mem in self.members.values())

    # -- vector targets ----------------------------------------------------
    def _check_inputs(self, outputs_by_source):
        missing = [s for s in self.source_ids if s not in outputs_by_source]
        if missing:
            raise MissingSourceError(f"missing outputs for sources {missing}")

    def member_predictions(self, outputs_by_source):
        self._check_inputs(outputs_by_source)
        return [np.asarray(self.members[m].predict(outputs_by_source)) for m in self.member_ids]

    def combine(self, preds):
        z = self.params["bias"] + np.zeros_like(preds[0])
        for w, g in zip(self.params["weights"], preds):
            z = z + w * g
        return z

    def preactivation(self, outputs_by_source):
        return self.combine(self.member_predictions(outputs_by_source))

    def predict(self, outputs_by_source):
        if self.target.output_format.is_seq:
            return self._decode(outputs_by_source)
        return ACTIVATIONS[self.activation](self.preactivation(outputs_by_source))

    # -- sequence targets --------------------------------------------------
    def start(self, outputs_by_source):
        self._check_inputs(outputs_by_source)
        return [self.members[m].start(outputs_by_source) for m in self.member_ids]

    def step_probs(self, states, prev):
        probs = [self.members[m].step_probs(st, prev) for m, st in zip(self.member_ids, states)]
        return ACTIVATIONS["softmax"](self.combine(probs))

    def teacher_probs(self, outputs_by_source, targets):
        self._check_inputs(outputs_by_source)
        parts = [self.members[m].teacher_probs(outputs_by_source, targets) for m in self.member_ids]
        _, dec_out, mask = parts[0]
        return ACTIVATIONS["softmax"](self.combine([p[0] for p in parts])), dec_out, mask

    def _decode(self, outputs_by_source):
        states = self.start(outputs_by_source)
        max_len = self.target.output_format.max_len
        n = len(next(iter(outputs_by_source.values())))
        prev = np.full(n, BOS, dtype=np.int64)
        out = [[] for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        for _ in range(max_len + 1):
            prev = greedy_tokens(self.step_probs(states, prev))
            for r in range(n):
                if done[r]:
                    continue
                if prev[r] == EOS or len(out[r]) >= max_len:
                    done[r] = True
                else:
                    out[r].append(int(prev[r]))
            if done.all():
                break
        return out


def _member_tensors(ens, outputs_by_source, targets):
    """Frozen member predictions stacked as (m, N, ...) plus loss extras."""
    if ens.target.output_format.is_seq:
        parts = [ens.members[m].teacher_probs(outputs_by_source, targets) for m in ens.member_ids]
        return np.stack([p[0] for p in parts]), parts[0][1], parts[0][2]
    return np.stack(ens.member_predictions(outputs_by_source)), None, None


def _fit(ens, data, hyper):
    outputs = {k: data.column(k) for k in ens.source_ids}
    y = data.target
    G, dec_out, mask = _member_tensors(ens, outputs, y)
    is_seq = dec_out is not None
    if not is_seq:
        y = np.asarray(y, dtype=np.float64)
    opt = RMSprop(ens.params, hyper.learning_rate, hyper.decay, hyper.epsilon)
    rng = np.random.default_rng(hyper.seed)
    n = G.shape[1]
    losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            g = G[:, idx]
            z = ens.params["bias"] + np.einsum("md,mn...d->n...d", ens.params["weights"], g)
            if is_seq:
                loss, dz = sequence_cross_entropy(z, dec_out[idx], mask[idx])
            else:
                loss, dz = vector_loss(ens.loss_kind, z, y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"non-finite ensemble loss {loss}")
            grads = ParamSet()
            grads.add("weights", np.einsum("n...d,mn...d->md", dz, g))
            grads.add("bias", dz.reshape(-1, dz.shape[-1]).sum(axis=0))
            opt.step(ens.params, grads)
            total += loss * len(idx)
        losses.append(total / n)
    return losses


def train_ensemble(target, links, data, hyper=None):
    """Fit per-source weights over frozen links that all predict ``target``."""
    if not links:
        raise EnsembleError("empty source set")
    if isinstance(links, dict):
        links = list(links.values())
    for link in links:
        if link.target_id != target.model_id:
            raise EnsembleError(f"link {link.source_id}->{link.target_id} does not target {target.model_id}")
    members = {link.source_id: link for link in sorted(links, key=lambda l: l.source_id)}
    if len(members) != len(links):
        raise EnsembleError("duplicate source among links")
    ens = EnsembleLink(target, members)
    ens.training_losses = _fit(ens, data, hyper or Hyper())
    return ens


def fuse(members, data, hyper=None):
    """Ensemble over named predictors (links or ensembles) with one target."""
    if not members:
        raise EnsembleError("nothing to fuse")
    targets = {m.target.model_id: m.target for m in members.values()}
    formats = {t.output_format for t in targets.values()}
    if len(formats) != 1:
        raise EnsembleError("fused members must share the target output format")
    target = next(iter(members.values())).target
    ens = EnsembleLink(target, members)
    ens.training_losses = _fit(ens, data, hyper or Hyper())
    return ens


def predict_ensemble(ens, outputs_by_source):
    return ens.predict(outputs_by_source)


def restrict_to_subset(ens, subset):
    """Drop members outside ``subset`` and rescale the rest per dimension.

    Remaining weights are multiplied by ``sum_A w / sum_A' w`` for each output
    dimension, except where the new denominator is below 1e-9 in magnitude.
    """
    subset = list(subset)
    if not subset:
        raise EnsembleError("subset must be non-empty")
    unknown = [s for s in subset if s not in ens.members]
    if unknown:
        raise EnsembleError(f"{unknown} are not members of this ensemble")
    keep = [i for i, m in enumerate(ens.member_ids) if m in subset]
    w = ens.params["weights"]
    full = np.zeros(w.shape[1])
    for row in w:
        full = full + row
    part = np.zeros(w.shape[1])
    for i in keep:
        part = part + w[i]
    scale = np.ones_like(full)
    ok = np.abs(part) >= 1e-9
    scale[ok] = full[ok] / part[ok]
    new = EnsembleLink(
        ens.target,
        {ens.member_ids[i]: ens.members[ens.member_ids[i]] for i in keep},
        w[keep] * scale,
        ens.params["bias"].copy(),
    )
    new.mae_range = ens.mae_range
    return new


def evaluate_ensemble(ens, data):
    outputs = {k: data.column(k) for k in ens.source_ids}
    return evaluate_performance(
        ens.predict(outputs), data.target, ens.target.metric, ens.mae_range or None
    )


def save_ensemble(ens):
    header = json.dumps(
        {"target": ens.target.to_dict(), "members": list(ens.member_ids)}, sort_keys=True
    ).encode("utf-8")
    return struct.pack("<I", len(header)) + header + save_params(ens.params)


def load_ensemble(data, members):
    """Rebuild from a checkpoint; ``members`` maps member id to predictor."""
    data = bytes(data)
    (hlen,) = struct.unpack("<I", data[:4])
    header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    params = load_params(data[4 + hlen :])
    missing = [m for m in header["members"] if m not in members]
    if missing:
        raise EnsembleError(f"checkpoint needs members {missing}")
    return EnsembleLink(
        ModelDescriptor.from_dict(header["target"]),
        {m: members[m] for m in header["members"]},
        params["weights"],
        params["bias"],
    )
