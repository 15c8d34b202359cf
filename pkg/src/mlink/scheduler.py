"""Budgeted selection of the models to run exactly, and the periodic serve loop.

Every other model is predicted from the activated ones through its ensemble
restricted to the activated sources.  The objective is the average output
accuracy: activated models count 1, predicted ones their normalized score.
"""
import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import restrict_to_subset
from .link import evaluate_link
from .metrics import evaluate_performance
from .registry import join_aligned

BYTES_PER_PARAM = 8.0
MS_PER_PARAM = 1e-6
MAX_BRUTE_FORCE = 20


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    kind: str  # "memory" | "time"
    limit: float

    def __post_init__(self):
        if self.kind not in ("memory", "time"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if not self.limit > 0:
            raise ValueError("budget limit must be positive")

    @property
    def per_param_cost(self):
        return BYTES_PER_PARAM if self.kind == "memory" else MS_PER_PARAM


@dataclass(frozen=True)
class ActivationProfile:
    model_id: str
    p_out: float  # mean performance of links leaving the model
    p_in: float  # mean performance of links entering the model
    cost: float
    probability: float


@dataclass
class Schedule:
    activated: tuple
    total_cost: float
    routes: dict = field(default_factory=dict)  # predicted model -> sources used
    value: float = None
    feasible: bool = True


def output_accuracy(activated, perfs, k):
    """``(|A| + sum of predicted scores) / k``; ``perfs`` maps j -> p for j not in A."""
    if k < 1:
        raise ValueError("need at least one model")
    activated = set(activated)
    if len(activated) > k:
        raise ValueError("more activated models than models")
    return (len(activated) + sum(p for j, p in perfs.items() if j not in activated)) / k


def activation_probability(matrix, costs, model_ids=None):
    """Activation probability of each model from link performances and costs.

    ``matrix[i][j]`` is the performance of the link from model i to model j
    (diagonal ignored).  With ``w = 2 / min(cost)`` the probability is
    ``(1 + P_out - P_in) / (w * cost)``, evaluated as
    ``(1 + P_out - P_in) / 2 * (min(cost) / cost)`` so the cheapest model with
    perfect outgoing and useless incoming links lands exactly on 1.
    """
    m = np.array(matrix, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    k = len(costs)
    if k < 2 or m.shape != (k, k):
        raise ValueError("need a k x k matrix and k >= 2 costs")
    if np.any(costs <= 0):
        raise ValueError("model costs must be positive")
    off = ~np.eye(k, dtype=bool)
    if np.any(~np.isfinite(m[off])) or np.any((m[off] < 0) | (m[off] > 1)):
        raise ValueError("link performances must lie in [0, 1]")
    m[~off] = 0.0
    ids = list(model_ids) if model_ids is not None else [str(i) for i in range(k)]
    cmin = costs.min()
    out = []
    for i in range(k):
        p_out = m[i].sum() / (k - 1)
        p_in = m[:, i].sum() / (k - 1)
        prob = (1.0 + p_out - p_in) / 2.0 * (cmin / costs[i])
        out.append(ActivationProfile(ids[i], float(p_out), float(p_in), float(costs[i]), float(prob)))
    return out


def _total_cost(active, ids, cost_of, link_cost):
    # fsum keeps totals independent of the order models were added in
    terms = [cost_of[i] for i in active]
    if active and link_cost is not None:
        key = tuple(sorted(active))
        terms += [link_cost(key, j) for j in ids if j not in active]
    return math.fsum(terms)


def greedy_select(profiles, budget, link_cost=None):
    """Add the highest-probability model that still fits until none does.

    Ties go to the cheaper model, then the smaller model id.  ``link_cost(A, j)``
    prices the restricted ensemble predicting model j from sources A.
    """
    limit = budget.limit if isinstance(budget, Budget) else float(budget)
    ids = [p.model_id for p in profiles]
    cost_of = {p.model_id: p.cost for p in profiles}
    order = sorted(profiles, key=lambda p: (-p.probability, p.cost, p.model_id))
    active = []
    total = 0.0
    while True:
        for cand in order:
            if cand.model_id in active:
                continue
            trial = active + [cand.model_id]
            cost = _total_cost(trial, ids, cost_of, link_cost)
            if cost <= limit:
                active, total = trial, cost
                break
        else:
            break
    if not active:
        return Schedule((), 0.0, feasible=False)
    key = tuple(sorted(active))
    return Schedule(tuple(active), total, {j: key for j in ids if j not in active})


def brute_force_optimal(model_ids, costs, perf, budget, link_cost=None):
    """Exact maximizer of the average output accuracy under the budget.

    ``perf(A, j)`` gives the score of predicting j from the sorted tuple A.
    Ties prefer lower cost, then the lexicographically smaller id tuple.
    """
    ids = list(model_ids)
    k = len(ids)
    if k > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE} models, got {k}")
    limit = budget.limit if isinstance(budget, Budget) else float(budget)
    cost_of = dict(zip(ids, costs))
    best = None
    for r in range(1, k + 1):
        for combo in itertools.combinations(sorted(ids), r):
            total = _total_cost(combo, ids, cost_of, link_cost)
            if total > limit:
                continue
            value = output_accuracy(combo, {j: perf(combo, j) for j in ids if j not in combo}, k)
            key = (-value, total, combo)
            if best is None or key < best[0]:
                best = (key, combo, total, value)
    if best is None:
        return Schedule((), 0.0, feasible=False, value=0.0)
    _, combo, total, value = best
    return Schedule(combo, total, {j: combo for j in ids if j not in combo}, value)


def standalone(model_ids, costs, budget):
    """Best schedule that runs models exactly and predicts nothing."""
    ids = list(model_ids)
    return brute_force_optimal(ids, costs, lambda A, j: 0.0, budget)


def restricted_link_cost(ensembles, budget):
    """Price of h_{A,j}: parameters of the links used plus combiner weights."""
    coeff = budget.per_param_cost

    def cost(active, j):
        ens = ensembles[j]
        srcs = [a for a in active if a in ens.members]
        if not srcs:
            return 0.0
        d = ens.target.output_format.width
        n = (len(srcs) + 1) * d + sum(ens.members[s].param_count() for s in srcs)
        return n * coeff

    return cost


# --------------------------------------------------------------------------
# periodic serve loop
# --------------------------------------------------------------------------


@dataclass
class PeriodReport:
    period: int
    activated: tuple
    total_cost: float
    accuracy: dict
    average: float
    profiled: int
    served: int
    flagged: bool = False
    link_matrix: np.ndarray = None


def profile_count(period_len, ratio):
    return max(1, math.ceil(ratio * period_len - 1e-12))


def link_matrix(ids, links, data):
    k = len(ids)
    m = np.zeros((k, k))
    for a, i in enumerate(ids):
        for b, j in enumerate(ids):
            if a != b:
                link = links[(i, j)]
                m[a, b] = evaluate_link(link, data.with_roles([i], j)).p
    return m


def run_period(data, ids, descriptors, links, ensembles, budget, profile_ratio, period_index=0):
    """Profile, re-select and serve one period of aligned items.

    Returns ``(served outputs by model, PeriodReport)``.
    """
    if not 0 < profile_ratio <= 0.5:
        raise ValueError("profile_ratio must lie in (0, 0.5]")
    n = len(data)
    n_prof = profile_count(n, profile_ratio)
    if n_prof >= n:
        raise ValueError("period too short to leave items after profiling")
    prof = data.subset(range(n_prof))
    serve = data.subset(range(n_prof, n))
    matrix = link_matrix(ids, links, prof)
    costs = [descriptors[i].cost(budget.kind) for i in ids]
    profiles = activation_probability(matrix, costs, ids)
    sched = greedy_select(profiles, budget, restricted_link_cost(ensembles, budget))
    flagged = not sched.feasible
    if flagged:
        cheapest = min(ids, key=lambda i: (descriptors[i].cost(budget.kind), i))
        sched = Schedule((cheapest,), descriptors[cheapest].cost(budget.kind), {}, feasible=False)
    served, acc = {}, {}
    active = set(sched.activated)
    exact = {i: serve.column(i) for i in ids}
    for j in ids:
        if j in active:
            served[j] = exact[j]
            acc[j] = 1.0
        elif flagged:
            served[j] = None
            acc[j] = 0.0
        else:
            ens = restrict_to_subset(ensembles[j], [a for a in ids if a in active])
            pred = ens.predict({a: exact[a] for a in ens.source_ids})
            served[j] = pred
            acc[j] = evaluate_performance(
                pred, exact[j], descriptors[j].metric, ens.mae_range or None
            ).p
    avg = output_accuracy(active, {j: acc[j] for j in ids if j not in active}, len(ids))
    if flagged:
        avg = 1.0 / len(ids)
    report = PeriodReport(
        period_index, tuple(sched.activated), float(sched.total_cost), acc, avg,
        n_prof, n - n_prof, flagged, matrix,
    )
    return served, report


def run_periods(traces, links, ensembles, budget, period_length, profile_ratio):
    """Serve a whole aligned stream period by period."""
    if period_length < 1 / profile_ratio:
        raise ValueError("period length must be at least 1 / profile_ratio")
    data = join_aligned(*traces)
    ids = sorted(t.model_id for t in traces)
    descriptors = {t.model_id: t.descriptor for t in traces}
    reports, served = [], []
    for p, start in enumerate(range(0, len(data), period_length)):
        chunk = data.subset(range(start, min(start + period_length, len(data))))
        if len(chunk) < 2:
            break
        out, rep = run_period(chunk, ids, descriptors, links, ensembles, budget, profile_ratio, p)
        reports.append(rep)
        served.append(out)
    return served, reports


def reports_to_csv(reports, seed=None):
    ids = sorted(reports[0].accuracy) if reports else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["period", "activated_ids", "total_cost"] + [f"acc_{i}" for i in ids]
    header += ["average_output_accuracy", "flagged"]
    if seed is not None:
        header.append("seed")
    w.writerow(header)
    for r in reports:
        row = [r.period, "|".join(sorted(r.activated)), repr(r.total_cost)]
        row += [repr(float(r.accuracy[i])) for i in ids]
        row += [repr(float(r.average)), int(r.flagged)]
        if seed is not None:
            row.append(seed)
        w.writerow(row)
    return buf.getvalue()
