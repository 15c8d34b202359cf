"""Scheduling simulation over randomly drawn link performances and costs.

Compares three schedules at each point of a budget grid: standalone (run
models exactly, predict nothing), the greedy activation-probability schedule,
and the brute-force optimum.  Link costs are not charged here.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scheduler import activation_probability, greedy_select

COST_FLOOR = 1e-3


@dataclass(frozen=True)
class Distribution:
    family: str  # "normal" | "beta"
    a: float  # mean or alpha
    b: float  # std or beta

    def sample(self, rng, size):
        if self.family == "normal":
            return rng.normal(self.a, self.b, size=size)
        if self.family == "beta":
            return rng.beta(self.a, self.b, size=size)
        raise ValueError(f"unknown distribution family {self.family!r}")


NORMAL = Distribution("normal", 0.5, 0.2)
BETA = Distribution("beta", 0.5, 0.5)


@dataclass(frozen=True)
class SimulationSpec:
    k: int = 10
    perf: Distribution = NORMAL
    cost: Distribution = None  # defaults to the perf family
    gain: float = 0.02
    budget_points: int = 11
    trials: int = 20
    seed: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need k >= 2")
        if self.gain < 0:
            raise ValueError("ensemble gain must be non-negative")

    @property
    def cost_dist(self):
        return self.cost or self.perf


def simulate_link_matrix(spec, rng):
    """Draw one (performance matrix, costs) instance; the diagonal is zero."""
    perf = np.clip(spec.perf.sample(rng, (spec.k, spec.k)), 0.0, 1.0)
    np.fill_diagonal(perf, 0.0)
    costs = np.maximum(spec.cost_dist.sample(rng, spec.k), COST_FLOOR)
    return perf, costs


def ensemble_perf(perf, gain):
    """p(A, j) = min(1, max_{i in A} perf[i, j] + gain * (|A| - 1))."""

    def p(active, j):
        if not active:
            return 0.0
        best = max(perf[i, j] for i in active)
        return min(1.0, best + gain * (len(active) - 1))

    return p


def schedule_value(active, perf, gain):
    k = perf.shape[0]
    p = ensemble_perf(perf, gain)
    a = set(active)
    return (len(a) + sum(p(sorted(a), j) for j in range(k) if j not in a)) / k


def budget_grid(costs, points):
    lo, hi = float(np.min(costs)), math.fsum(costs)
    grid = np.linspace(lo, hi, points)
    grid[-1] = hi
    return grid


def _exact_totals(costs):
    k = len(costs)
    return np.array(
        [math.fsum(costs[i] for i in range(k) if (mask >> i) & 1) for mask in range(1 << k)]
    )


def run_trial(spec, rng):
    """One instance: per-budget (standalone, greedy, optimal) values."""
    perf, costs = simulate_link_matrix(spec, rng)
    k = spec.k
    values, _ = kernels.subset_table(perf, costs, spec.gain)
    totals = _exact_totals(costs)
    sizes = np.array([bin(m).count("1") for m in range(1 << k)])
    ids = list(range(k))
    profiles = activation_probability(perf, costs, [str(i) for i in ids])
    rows = []
    for budget in budget_grid(costs, spec.budget_points):
        feasible = totals <= budget
        feasible[0] = False
        optimal = float(values[feasible].max()) if feasible.any() else 0.0
        alone = float(sizes[feasible].max()) / k if feasible.any() else 0.0
        sched = greedy_select(profiles, budget)
        greedy = schedule_value([int(i) for i in sched.activated], perf, spec.gain) if sched.feasible else 0.0
        rows.append((float(budget), alone, greedy, optimal))
    return rows


def simulate_schedule(spec):
    """Mean standalone/greedy/optimal value per budget-grid index over trials.

    Returns ``(summary, per_trial)`` where ``summary`` rows are dicts with keys
    ``point, budget, standalone, greedy, optimal, ratio``.
    """
    if spec.k > 20:
        raise ValueError("brute force limited to k <= 20")
    rng = np.random.default_rng(spec.seed)
    per_trial = [run_trial(spec, rng) for _ in range(spec.trials)]
    arr = np.array(per_trial)  # (trials, points, 4)
    summary = []
    for p in range(spec.budget_points):
        mean = arr[:, p].mean(axis=0)
        summary.append(
            {
                "point": p,
                "budget": float(mean[0]),
                "standalone": float(mean[1]),
                "greedy": float(mean[2]),
                "optimal": float(mean[3]),
                "ratio": float(mean[2] / mean[3]) if mean[3] > 0 else 1.0,
            }
        )
    return summary, per_trial
