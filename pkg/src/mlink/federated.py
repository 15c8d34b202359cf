"""Federated training of one link across edges that keep their data private.

Each round the cloud broadcasts the global parameters; every edge runs
``steps`` full-batch optimizer steps from that snapshot on its own data and
uploads the parameter change.  The cloud adds the mean change.  Edges keep
their optimizer state between rounds, so with one edge the global parameters
follow centralized full-batch training step for step.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .ensemble import fuse
from .link import Hyper, LinkError, evaluate_link
from .nn import RMSprop, train_step
from .nn.nets import NonFiniteLossError
from .nn.params import ParamSet, stream_size


class FederationError(ValueError):
    pass


class EdgeNode:
    """An edge with a private dataset; only parameter deltas leave it."""

    def __init__(self, edge_id, data, link, hyper=None):
        self.edge_id = str(edge_id)
        self.__data = data
        self.link = link  # local copy Θ_L,k
        self.hyper = hyper or Hyper()
        self.opt = RMSprop(link.params, self.hyper.learning_rate, self.hyper.decay, self.hyper.epsilon)
        self.data_accesses = 0

    def __len__(self):
        return len(self.__data)

    def _read(self):
        self.data_accesses += 1
        return self.__data

    def local_update(self, snapshot, steps=1):
        """(delta, bytes uploaded, gradient-delta norm, flagged) from a broadcast snapshot."""
        if not snapshot.same_layout(self.link.params):
            raise FederationError(f"edge {self.edge_id}: snapshot layout does not match the local link")
        self.link.params.assign_flat(snapshot.flat())
        if len(self) == 0:
            delta = snapshot.zeros_like()
            return delta, stream_size(delta), 0.0, True
        data = self._read()
        x = data.source(self.link.source_id)
        y = data.target
        for s in range(steps):
            try:
                train_step(self.link.net, x, y, self.link.loss_kind, self.opt)
            except NonFiniteLossError as exc:
                raise FederationError(f"edge {self.edge_id} diverged at local step {s}: {exc}") from exc
        delta = ParamSet((name, self.link.params[name] - snapshot[name]) for name in snapshot)
        return delta, stream_size(delta), float(np.linalg.norm(delta.flat())), False

    def evaluate(self, link):
        """Performance of ``link`` on this edge's data, computed inside the edge."""
        return evaluate_link(link, self._read())


@dataclass
class CloudState:
    link: object  # global link Θ_G
    round: int = 0
    comm_bytes: int = 0

    @property
    def params(self):
        return self.link.params


@dataclass
class RoundRecord:
    round: int
    grad_norms: dict
    comm_bytes: int
    p: dict = field(default_factory=dict)


def aggregate_round(cloud, deltas):
    """Θ_G += (1/K) Σ_k ΔΘ_k, summed in sorted edge-id order."""
    if not deltas:
        raise FederationError("no gradients to aggregate")
    for k, d in deltas.items():
        if not d.same_layout(cloud.params):
            raise FederationError(f"delta from edge {k} does not match the global parameter shapes")
    order = sorted(deltas)
    n = len(order)
    for name in cloud.params:
        total = np.zeros_like(cloud.params[name])
        for k in order:
            total = total + deltas[k][name]
        cloud.params[name] = cloud.params[name] + total / n
    cloud.round += 1
    return cloud


def run_federation(edges, global_link, rounds, eval_sets=None, steps=1):
    """Synchronous rounds; returns (global link, RoundRecords, total bytes).

    Each round charges a broadcast and an upload per edge, both the size of
    the parameter stream.
    """
    if rounds < 1:
        raise FederationError("need at least one round")
    if not edges:
        raise FederationError("need at least one edge")
    ids = [e.edge_id for e in edges]
    if len(set(ids)) != len(ids):
        raise FederationError("duplicate edge id")
    cloud = CloudState(global_link)
    records = []
    for t in range(1, rounds + 1):
        snapshot = cloud.params.copy()
        broadcast = stream_size(snapshot)
        deltas, norms, sent = {}, {}, 0
        for edge in sorted(edges, key=lambda e: e.edge_id):
            delta, size, norm, _ = edge.local_update(snapshot, steps)
            deltas[edge.edge_id] = delta
            norms[edge.edge_id] = norm
            sent += broadcast + size
        aggregate_round(cloud, deltas)
        cloud.comm_bytes += sent
        p = {}
        for name, data in sorted((eval_sets or {}).items()):
            try:
                p[name] = evaluate_link(cloud.link, data).p
            except LinkError as exc:
                raise FederationError(f"evaluation on domain {name} failed: {exc}") from exc
        records.append(RoundRecord(t, norms, sent, p))
    return cloud.link, records, cloud.comm_bytes


def expected_comm_bytes(link, rounds, edges):
    """Closed form: rounds x edges x (upload + broadcast) stream sizes."""
    return rounds * edges * 2 * stream_size(link.params)


def fuse_local_global(local_link, global_link, data, hyper=None):
    """Ensemble of an edge's local link and the global link on local data."""
    if local_link.target.output_format != global_link.target.output_format:
        raise FederationError("local and global links predict different formats")
    return fuse({"global": global_link, "local": local_link}, data, hyper)


def records_to_csv(records, seed=None):
    edges = sorted(records[0].grad_norms) if records else []
    domains = sorted(records[0].p) if records else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["round"] + [f"grad_norm_{e}" for e in edges] + ["comm_bytes"] + [f"p_{d}" for d in domains]
    if seed is not None:
        header.append("seed")
    w.writerow(header)
    for r in records:
        row = [r.round] + [repr(r.grad_norms[e]) for e in edges] + [r.comm_bytes]
        row += [repr(float(r.p[d])) for d in domains]
        if seed is not None:
            row.append(seed)
        w.writerow(row)
    return buf.getvalue()
