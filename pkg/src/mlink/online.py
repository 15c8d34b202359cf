"""Online link adaptation on a drifting stream under a labeling budget.

"Labeling" an item means consuming both the source and the target model's
exact outputs for it.  A short warm-start prefix trains the initial link; the
policies then decide item by item which of the remaining items to label.
"""
import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .link import Hyper, TrainingDivergedError, _check_source_format, train_link
from .metrics import evaluate_performance
from .nn import MLP, BOS, EOS, LossKind, RMSprop, train_step
from .nn.losses import per_sample_vector_loss
from .nn.nets import NonFiniteLossError, greedy_tokens, take_rows
from .registry import TaskClass

WINDOW = 32


class BudgetExceededError(RuntimeError):
    pass


class LabelBudget:
    """Allows ``consumed <= ratio * seen + 1`` after every item."""

    def __init__(self, ratio):
        if not 0 < ratio <= 1:
            raise ValueError("label ratio must lie in (0, 1]")
        self.ratio = ratio
        self.seen = 0
        self.consumed = 0

    def observe(self):
        self.seen += 1

    def can_label(self):
        return self.consumed + 1 <= self.ratio * self.seen + 1 + 1e-12

    def charge(self):
        if not self.can_label():
            raise BudgetExceededError(f"{self.consumed} labels already spent after {self.seen} items")
        self.consumed += 1


@dataclass(frozen=True)
class SamplingPolicy:
    kind: str  # offline | periodic | uncertainty | losspred
    interval: int = 1000
    chunk: int = 10
    threshold: float = None  # None: max score over the profiling window
    q: float = 0.0025
    window: int = 4000
    prefix: int = 0  # offline-init labeled prefix length

    KINDS = ("offline", "periodic", "uncertainty", "losspred")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "periodic" and not 0 < self.chunk <= self.interval:
            raise ValueError("periodic policy needs 0 < chunk <= interval")
        if self.kind == "losspred" and not (0 < self.q < 1 and self.window >= 1):
            raise ValueError("loss-prediction policy needs 0 < q < 1 and window >= 1")

    @classmethod
    def offline_init(cls, ratio, stream_length):
        return cls("offline", prefix=int(math.ceil(ratio * stream_length - 1e-9)))

    @classmethod
    def periodic(cls, interval, chunk):
        return cls("periodic", interval=interval, chunk=chunk)

    @classmethod
    def uncertainty(cls, threshold=None):
        return cls("uncertainty", threshold=threshold)

    @classmethod
    def loss_prediction(cls, q=0.0025, window=4000):
        return cls("losspred", q=q, window=window)


def entropy(probs):
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def binary_entropy(probs):
    p = np.asarray(probs, dtype=np.float64)
    return entropy(np.stack([p, 1.0 - p], axis=-1)).sum(axis=-1)


def peer_variance(peers):
    """Variance across >= 2 peer predictions (mean over output dimensions)."""
    arr = np.asarray(peers, dtype=np.float64)
    if arr.shape[0] < 2:
        return None
    return float(np.var(arr, axis=0).mean())


def _sequence_entropy(link, x):
    state = link.net.start(x)
    n = len(state["h"])
    prev = np.full(n, BOS, dtype=np.int64)
    total, steps = np.zeros(n), np.zeros(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(link.target.output_format.max_len + 1):
        probs = link.net.step_probs(state, prev)
        h = entropy(probs)
        total[~done] += h[~done]
        steps[~done] += 1
        prev = greedy_tokens(probs)
        done |= prev == EOS
        if done.all():
            break
    return total / np.maximum(steps, 1)


def batch_scores(link, source_outputs):
    """Entropy-type uncertainty per row for classification and sequence targets."""
    x = _check_source_format(link, source_outputs)
    task = link.target.task_class
    if task is TaskClass.SEQUENCE:
        return _sequence_entropy(link, x)
    pred = link.net.predict(x, link.output_activation)
    if task is TaskClass.SINGLE_LABEL:
        return entropy(pred)
    if task is TaskClass.MULTI_LABEL:
        return binary_entropy(pred)
    raise ValueError("regression-type targets are scored by variance, not entropy")


def uncertainty_score(link, source_output, peers=None, history=None):
    """Non-negative uncertainty of one item.

    Classification: Shannon entropy of the link output.  Regression and
    localization: variance across peer predictions when at least two are
    given, else variance of the recent outputs in ``history``; with neither
    the score is ``inf`` (treated as maximally uncertain).
    """
    task = link.target.task_class
    if task in (TaskClass.REGRESSION, TaskClass.LOCALIZATION):
        if peers is not None:
            v = peer_variance(peers)
            if v is not None:
                return v
        if history is not None and len(history) >= 2:
            return float(np.var(np.asarray(history, dtype=np.float64), axis=0).mean())
        return math.inf
    return float(batch_scores(link, take_rows(_as_batch(link, source_output), [0]))[0])


def _as_batch(link, item):
    if link.source.output_format.is_seq:
        return [list(item)]
    return np.asarray(item, dtype=np.float64).reshape(1, -1)


def topq_selected(value, buffer, q, rng=None):
    """True when the candidate ranks among the top ``max(1, floor(q * len(buffer)))``.

    The rank counts buffer entries above ``value``; ties are broken uniformly
    at random (by ``rng``) so a flat predictor labels at the base rate q
    instead of always or never.
    """
    buffer = np.asarray(buffer if buffer is not None else (), dtype=np.float64)
    if buffer.size == 0:
        return True
    allowed = max(1, int(math.floor(q * buffer.size)))
    above = int(np.count_nonzero(buffer > value))
    ties = int(np.count_nonzero(buffer == value))
    if ties and rng is not None:
        above += int(rng.integers(0, ties + 1))
    return above < allowed


def select_for_labeling(policy, position, score=None, budget=None, buffer=None, rng=None):
    """Labeling decision for the item at absolute stream ``position``."""
    if budget is not None and not budget.can_label():
        return False
    if policy.kind == "offline":
        return position < policy.prefix
    if policy.kind == "periodic":
        return position % policy.interval < policy.chunk
    if policy.kind == "uncertainty":
        tau = math.inf if policy.threshold is None else policy.threshold
        return score is not None and score >= tau
    return score is not None and topq_selected(score, buffer, policy.q, rng)


LOSS_FLOOR = 1e-12


class LossPredictor:
    """Small MLP from a link's hidden activation to its predicted sample loss.

    With ``log_space`` (the default) the MSE is taken on ``log(loss + 1e-12)``.
    Losses of a well-fit link span many decades; on the raw scale they all look
    like zero and the fit carries no ranking information.  ``predict_loss``
    answers on the loss scale either way.
    """

    def __init__(self, d_in, hidden=32, seed=0, learning_rate=0.01, log_space=True):
        self.d_in = d_in
        self.log_space = log_space
        self.net = MLP(d_in, hidden, 1, seed=seed)
        self.opt = RMSprop(self.net.params, learning_rate)

    def _check(self, h):
        h = np.asarray(h, dtype=np.float64)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        if h.shape[1] != self.d_in:
            raise ValueError(f"expected hidden width {self.d_in}, got {h.shape[1]}")
        return h

    def step(self, hidden, actual_loss):
        """One MSE gradient step; returns the pre-update loss."""
        h = self._check(hidden)
        y = np.asarray(actual_loss, dtype=np.float64).reshape(-1, 1)
        if self.log_space:
            y = np.log(np.maximum(y, 0.0) + LOSS_FLOOR)
        return train_step(self.net, h, y, LossKind.MSE, self.opt)

    def predict_loss(self, hidden):
        out = self.net.predict(self._check(hidden), "linear")[:, 0]
        if self.log_space:
            out = np.exp(out)
        return out if np.ndim(hidden) > 1 else float(out[0])


def per_sample_loss(link, x, y):
    """Unreduced training loss of each row."""
    if link.target.output_format.is_seq:
        return np.array([link.net.loss(take_rows(x, [i]), take_rows(y, [i]), link.loss_kind)
                         for i in range(len(y))])
    logits, _ = link.net.forward(x)
    return per_sample_vector_loss(link.loss_kind, logits, np.asarray(y, dtype=np.float64))


def online_update(link, buffer, steps=10, opt=None):
    """Full-batch gradient steps on the labeled buffer; returns the last loss.

    ``buffer`` is a sequence of (source_output, target_output) pairs.  An empty
    buffer leaves the link untouched and returns None.
    """
    if not buffer:
        return None
    if link.source.output_format.is_seq:
        x = [list(b[0]) for b in buffer]
    else:
        x = np.stack([np.asarray(b[0], dtype=np.float64) for b in buffer])
    if link.target.output_format.is_seq:
        y = [list(b[1]) for b in buffer]
    else:
        y = np.stack([np.asarray(b[1], dtype=np.float64) for b in buffer])
    opt = opt or RMSprop(link.net.params)
    loss = None
    for s in range(steps):
        try:
            loss = train_step(link.net, x, y, link.loss_kind, opt)
        except NonFiniteLossError as exc:
            raise TrainingDivergedError(s, exc) from exc
    return loss


@dataclass
class SegmentRecord:
    segment: int
    labels: int
    accuracy: float
    items: int


@dataclass
class StreamResult:
    policy: str
    segments: list
    labeled: list = field(default_factory=list)  # absolute positions
    threshold: float = None
    budget: LabelBudget = None

    def labels_between(self, start, stop):
        return sum(1 for p in self.labeled if start <= p < stop)


def _rows(col, lo, hi):
    return col[lo:hi]


def _observe(link, src, tgt, positions):
    """Hidden activations and losses of labeled items under the current link."""
    x = _check_source_format(link, take_rows(src, positions))
    return link.net.hidden(x), per_sample_loss(link, x, take_rows(tgt, positions))


def run_stream(link, stream, policy, label_ratio=0.01, segment=1000, warm_hyper=None,
               steps=10, buffer_size=WINDOW, block=256, seed=0, predictor_steps=100,
               predictor_warm_steps=1000, predictor_lr=0.01):
    """Warm-start on the prefix, then serve and adapt item by item.

    ``stream`` is an AlignedDataset with the link's source and target columns,
    in stream order.  Returns a StreamResult with per-segment accuracy of the
    live predictions (prefix items excluded) and labels spent.
    """
    n = len(stream)
    prefix = int(math.ceil(label_ratio * n - 1e-9))
    if not 0 < prefix < n:
        raise ValueError("stream too short for the label ratio")
    if segment < 1:
        raise ValueError("segment length must be positive")
    src = stream.column(link.source_id)
    tgt = stream.column(link.target_id)
    warm = stream.subset(range(prefix)).with_roles([link.source_id], link.target_id)
    train_link(link, warm, warm_hyper or Hyper(seed=seed))

    task = link.target.task_class
    entropy_task = task not in (TaskClass.REGRESSION, TaskClass.LOCALIZATION)
    threshold = policy.threshold
    predictor = None
    if policy.kind == "uncertainty" and threshold is None:
        if entropy_task:
            threshold = float(np.max(batch_scores(link, _rows(src, 0, prefix))))
        else:
            preds = link.net.predict(_check_source_format(link, _rows(src, 0, prefix)), "linear")
            threshold = max(
                float(np.var(preds[max(0, i - WINDOW):i], axis=0).mean()) for i in range(2, prefix + 1)
            )
        policy = replace(policy, threshold=threshold)
    if policy.kind == "losspred":
        # (hidden, loss) pairs as observed when each item was labeled
        obs_h, obs_l = _observe(link, src, tgt, list(range(prefix)))
        predictor = LossPredictor(link.hidden, seed=seed, learning_rate=predictor_lr)
        for _ in range(predictor_warm_steps):
            predictor.step(obs_h, obs_l)

    budget = LabelBudget(label_ratio)
    tie_rng = np.random.default_rng(seed)
    opt = RMSprop(link.net.params)
    labeled_buf = deque(maxlen=buffer_size)
    pred_hist = deque(maxlen=WINDOW)
    preds_all = [None] * n
    labeled = []
    cache_lo = cache_hi = prefix
    cache = None
    for pos in range(prefix, n):
        budget.observe()
        if cache is None or pos >= cache_hi:
            cache_lo, cache_hi = pos, min(n, pos + block)
            x = _check_source_format(link, _rows(src, cache_lo, cache_hi))
            cache = {"pred": link.net.predict(x, link.output_activation)}
            if policy.kind == "uncertainty" and entropy_task:
                cache["score"] = batch_scores(link, x)
            if policy.kind == "losspred":
                # the whole sliding buffer is re-scored by the current link and
                # predictor so the ranking never mixes stale predictions
                hist_lo = max(prefix, pos - policy.window)
                xh = _check_source_format(link, _rows(src, hist_lo, cache_hi))
                cache["hist_lo"] = hist_lo
                cache["ploss"] = predictor.predict_loss(link.net.hidden(xh))
        k = pos - cache_lo
        pred = cache["pred"][k]
        preds_all[pos] = pred
        score, window = None, None
        if policy.kind == "uncertainty":
            if entropy_task:
                score = float(cache["score"][k])
            else:
                score = uncertainty_score(link, None, history=list(pred_hist))
                pred_hist.append(np.asarray(pred))
        elif policy.kind == "losspred":
            h_lo = cache["hist_lo"]
            score = float(cache["ploss"][pos - h_lo])
            window = cache["ploss"][max(h_lo, pos - policy.window) - h_lo : pos - h_lo]
        if not select_for_labeling(policy, pos, score, budget, window, tie_rng):
            continue
        budget.charge()
        labeled.append(pos)
        if predictor is not None:
            h, l = _observe(link, src, tgt, [pos])
            obs_h, obs_l = np.vstack([obs_h, h]), np.concatenate([obs_l, l])
            for _ in range(predictor_steps):
                predictor.step(obs_h, obs_l)
        labeled_buf.append((src[pos], tgt[pos]))
        online_update(link, list(labeled_buf), steps, opt)
        cache = None

    segments = []
    labeled_arr = np.asarray(labeled, dtype=np.int64)
    metric = link.target.metric
    for s, lo in enumerate(range(0, n, segment)):
        hi = min(n, lo + segment)
        a = max(lo, prefix)
        if a >= hi:
            continue
        p = _stack_preds(preds_all[a:hi])
        acc = evaluate_performance(p, _rows(tgt, a, hi), metric, link.mae_range or None).p
        spent = int(np.sum((labeled_arr >= lo) & (labeled_arr < hi)))
        segments.append(SegmentRecord(s, spent, float(acc), hi - a))
    return StreamResult(policy.kind, segments, labeled, threshold, budget)


def _stack_preds(preds):
    if preds and isinstance(preds[0], np.ndarray):
        return np.stack(preds)
    return list(preds)


def segments_to_csv(result, seed=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["segment", "labels", "accuracy", "items"] + (["seed"] if seed is not None else [])
    w.writerow(header)
    for r in result.segments:
        row = [r.segment, r.labels, repr(r.accuracy), r.items]
        if seed is not None:
            row.append(seed)
        w.writerow(row)
    return buf.getvalue()
