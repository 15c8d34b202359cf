"""The four link network shapes plus training helpers.

Vector inputs are float arrays of shape (N, d).  Sequence inputs and targets
are lists of integer token lists; ids 0-3 are reserved (PAD, BOS, EOS, UNK).
"""
import numpy as np

from .layers import (
    ACTIVATIONS,
    BOS,
    EOS,
    PAD,
    Attention,
    Dense,
    Embedding,
    LSTM,
    ShapeError,
    relu,
    softmax,
)
from .losses import LossKind, sequence_cross_entropy, vector_loss
from .params import ParamSet


class NonFiniteLossError(FloatingPointError):
    pass


def encode_sources(seqs):
    """BOS-prefixed, PAD-filled token matrix plus float mask."""
    seqs = [list(s) for s in seqs]
    t_len = 1 + max((len(s) for s in seqs), default=0)
    tokens = np.full((len(seqs), t_len), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), t_len))
    for r, s in enumerate(seqs):
        tokens[r, 0] = BOS
        tokens[r, 1 : 1 + len(s)] = s
        mask[r, : 1 + len(s)] = 1.0
    return tokens, mask


def encode_targets(seqs):
    """Teacher-forcing inputs ``[BOS, y...]`` and outputs ``[y..., EOS]``."""
    seqs = [list(s) for s in seqs]
    t_len = 1 + max((len(s) for s in seqs), default=0)
    dec_in = np.full((len(seqs), t_len), PAD, dtype=np.int64)
    dec_out = np.full((len(seqs), t_len), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), t_len))
    for r, s in enumerate(seqs):
        dec_in[r, 0] = BOS
        dec_in[r, 1 : 1 + len(s)] = s
        dec_out[r, : len(s)] = s
        dec_out[r, len(s)] = EOS
        mask[r, : 1 + len(s)] = 1.0
    return dec_in, dec_out, mask


def greedy_tokens(probs):
    """Argmax per row, never PAD or BOS (neither is ever a training target)."""
    probs = np.array(probs, dtype=np.float64)
    probs[:, PAD] = -1.0
    probs[:, BOS] = -1.0
    return np.argmax(probs, axis=1)


class Decoder:
    """Embedding -> LSTM -> attention -> dense over the output vocabulary."""

    def __init__(self, name, vocab, hidden, d_mem):
        self.vocab, self.hidden = vocab, hidden
        self.emb = Embedding(f"{name}.emb", vocab, hidden)
        self.lstm = LSTM(f"{name}.lstm", hidden, hidden)
        self.att = Attention(f"{name}.att", hidden, d_mem, hidden)
        self.out = Dense(f"{name}.out", hidden + d_mem, vocab)

    def layers(self):
        return [self.emb, self.lstm, self.att, self.out]

    def step(self, params, prev, h, c, mem, mem_mask):
        e, emb_cache = self.emb.forward(params, prev)
        h, c, lstm_cache = self.lstm.step(params, e, h, c)
        ctx, att_cache = self.att.forward(params, h, mem, mem_mask)
        logits, out_cache = self.out.forward(params, np.concatenate([h, ctx], axis=1))
        return logits, h, c, (emb_cache, lstm_cache, att_cache, out_cache)

    def forward(self, params, dec_in, h0, c0, mem, mem_mask):
        h, c = h0, c0
        logits, caches = [], []
        for t in range(dec_in.shape[1]):
            lg, h, c, cache = self.step(params, dec_in[:, t], h, c, mem, mem_mask)
            logits.append(lg)
            caches.append(cache)
        return np.stack(logits, axis=1), caches

    def backward(self, params, dlogits, caches, grads, d_mem_shape):
        n = dlogits.shape[0]
        dh = np.zeros((n, self.hidden))
        dc = np.zeros((n, self.hidden))
        dmem = np.zeros(d_mem_shape)
        for t in reversed(range(len(caches))):
            emb_cache, lstm_cache, att_cache, out_cache = caches[t]
            dcat = self.out.backward(params, dlogits[:, t], out_cache, grads)
            dh = dh + dcat[:, : self.hidden]
            dh = dh + self.att.backward(params, dcat[:, self.hidden :], att_cache, grads, dmem)
            de, dh, dc = self.lstm.step_backward(params, dh, dc, lstm_cache, grads)
            self.emb.backward(params, de, emb_cache, grads)
        return dh, dc, dmem


class Net:
    """Common training/inference surface; subclasses define the graph."""

    source_is_seq = False
    target_is_seq = False

    def __init__(self, seed):
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        for layer in self.layers():
            layer.init(self.params, rng)

    # -- subclass hooks ---------------------------------------------------
    def layers(self):
        raise NotImplementedError

    def forward(self, x, y=None):
        """Pre-activation output (teacher-forced for sequence targets)."""
        raise NotImplementedError

    def backward(self, dlogits, cache):
        raise NotImplementedError

    def hidden(self, x):
        """Last hidden activation before the output head, one row per sample."""
        raise NotImplementedError

    # -- shared -----------------------------------------------------------
    def _check_source(self, x):
        if self.source_is_seq:
            if isinstance(x, np.ndarray) and x.dtype.kind == "f":
                raise ShapeError("sequence-input net received a float array")
            return x
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"expected a 2-D (batch, features) array, got shape {x.shape}")
        return x

    def loss_and_grads(self, x, y, loss_kind):
        logits, cache = self.forward(x, y)
        if self.target_is_seq:
            loss, dlogits = sequence_cross_entropy(logits, cache["dec_out"], cache["dec_mask"])
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != logits.shape:
                raise ShapeError(f"target shape {y.shape} does not match output {logits.shape}")
            loss, dlogits = vector_loss(loss_kind, logits, y)
        return loss, self.backward(dlogits, cache)

    def loss(self, x, y, loss_kind):
        logits, cache = self.forward(x, y)
        if self.target_is_seq:
            return sequence_cross_entropy(logits, cache["dec_out"], cache["dec_mask"])[0]
        return vector_loss(loss_kind, logits, np.asarray(y, dtype=np.float64))[0]

    def predict(self, x, activation):
        """Activated vector outputs, or greedy-decoded token lists."""
        logits, _ = self.forward(x)
        return ACTIVATIONS[activation](logits)

    def param_count(self):
        return self.params.total_count


class MLP(Net):
    """Dense -> ReLU -> Dense (vector to vector)."""

    def __init__(self, d_in, hidden, d_out, seed=0):
        self.d_in, self.hidden_width, self.d_out = d_in, hidden, d_out
        self.l1 = Dense("mlp.0", d_in, hidden)
        self.l2 = Dense("mlp.1", hidden, d_out)
        super().__init__(seed)

    def layers(self):
        return [self.l1, self.l2]

    def forward(self, x, y=None):
        x = self._check_source(x)
        a, c1 = self.l1.forward(self.params, x)
        r = relu(a)
        out, c2 = self.l2.forward(self.params, r)
        return out, {"c1": c1, "a": a, "r": r, "c2": c2}

    def backward(self, dlogits, cache):
        grads = self.params.zeros_like()
        dr = self.l2.backward(self.params, dlogits, cache["c2"], grads)
        self.l1.backward(self.params, dr * (cache["a"] > 0), cache["c1"], grads)
        return grads

    def hidden(self, x):
        return self.forward(x)[1]["r"]


class SeqToVec(Net):
    """Embedding -> LSTM -> (optional attention pooling) -> Dense/ReLU -> Dense."""

    source_is_seq = True

    def __init__(self, vocab_in, hidden, d_out, seed=0, attention_pool=False):
        self.vocab_in, self.hidden_width, self.d_out = vocab_in, hidden, d_out
        self.attention_pool = attention_pool
        self.emb = Embedding("enc.emb", vocab_in, hidden)
        self.lstm = LSTM("enc.lstm", hidden, hidden)
        self.att = Attention("pool.att", hidden, hidden, hidden) if attention_pool else None
        self.l1 = Dense("head.0", hidden, hidden)
        self.l2 = Dense("head.1", hidden, d_out)
        super().__init__(seed)

    def layers(self):
        return [l for l in (self.emb, self.lstm, self.att, self.l1, self.l2) if l is not None]

    def forward(self, x, y=None):
        tokens, mask = encode_sources(self._check_source(x))
        e, emb_cache = self.emb.forward(self.params, tokens)
        hs, h, c, lstm_cache = self.lstm.forward(self.params, e, mask)
        cache = {"emb": emb_cache, "lstm": lstm_cache, "hs": hs, "mask": mask}
        feat = h
        if self.att is not None:
            feat, cache["att"] = self.att.forward(self.params, h, hs, mask)
        a, cache["c1"] = self.l1.forward(self.params, feat)
        r = relu(a)
        out, cache["c2"] = self.l2.forward(self.params, r)
        cache.update(a=a, r=r)
        return out, cache

    def backward(self, dlogits, cache):
        p = self.params
        grads = p.zeros_like()
        dr = self.l2.backward(p, dlogits, cache["c2"], grads)
        dfeat = self.l1.backward(p, dr * (cache["a"] > 0), cache["c1"], grads)
        dhs = np.zeros_like(cache["hs"])
        dh = dfeat
        if self.att is not None:
            dh = self.att.backward(p, dfeat, cache["att"], grads, dhs)
        de, _, _ = self.lstm.backward(p, dhs, dh, np.zeros_like(dh), cache["lstm"], grads)
        self.emb.backward(p, de, cache["emb"], grads)
        return grads

    def hidden(self, x):
        return self.forward(x)[1]["r"]


class _SeqTarget(Net):
    """Shared decoder plumbing for vec2seq and seq2seq."""

    target_is_seq = True

    def encode(self, x):
        """Return (h0, c0, memory, memory mask, encoder cache)."""
        raise NotImplementedError

    def encode_backward(self, dh0, dc0, dmem, enc_cache, grads):
        raise NotImplementedError

    def forward(self, x, y=None):
        h0, c0, mem, mem_mask, enc_cache = self.encode(x)
        if y is None:
            raise ValueError("sequence-target forward needs targets for teacher forcing")
        dec_in, dec_out, dec_mask = encode_targets(y)
        if len(dec_in) != len(h0):
            raise ShapeError(f"{len(h0)} sources but {len(dec_in)} targets")
        if dec_in.shape[1] - 1 > self.max_len:
            raise ShapeError(f"target longer than max_len {self.max_len}")
        logits, dec_cache = self.decoder.forward(self.params, dec_in, h0, c0, mem, mem_mask)
        return logits, {
            "enc": enc_cache,
            "dec": dec_cache,
            "mem_shape": mem.shape,
            "dec_out": dec_out,
            "dec_mask": dec_mask,
        }

    def backward(self, dlogits, cache):
        grads = self.params.zeros_like()
        dh0, dc0, dmem = self.decoder.backward(
            self.params, dlogits, cache["dec"], grads, cache["mem_shape"]
        )
        self.encode_backward(dh0, dc0, dmem, cache["enc"], grads)
        return grads

    def hidden(self, x):
        return self.encode(x)[0]

    def start(self, x):
        """Decoder state for step-wise decoding."""
        h0, c0, mem, mem_mask, _ = self.encode(x)
        return {"h": h0, "c": c0, "mem": mem, "mask": mem_mask}

    def step_probs(self, state, prev):
        """Advance one step given previous tokens; returns token distributions."""
        logits, h, c, _ = self.decoder.step(
            self.params, np.asarray(prev, dtype=np.int64), state["h"], state["c"],
            state["mem"], state["mask"],
        )
        state["h"], state["c"] = h, c
        return softmax(logits)

    def teacher_probs(self, x, y):
        """Teacher-forced per-step token distributions (N, T, V) and mask."""
        logits, cache = self.forward(x, y)
        return softmax(logits), cache["dec_out"], cache["dec_mask"]

    def predict(self, x, activation="softmax"):
        state = self.start(x)
        n = len(state["h"])
        prev = np.full(n, BOS, dtype=np.int64)
        out = [[] for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        for _ in range(self.max_len + 1):
            prev = greedy_tokens(self.step_probs(state, prev))
            for r in range(n):
                if done[r]:
                    continue
                if prev[r] == EOS or len(out[r]) >= self.max_len:
                    done[r] = True
                else:
                    out[r].append(int(prev[r]))
            if done.all():
                break
        return out


class VecToSeq(_SeqTarget):
    def __init__(self, d_in, hidden, vocab_out, max_len, seed=0):
        self.d_in, self.hidden_width, self.vocab_out, self.max_len = d_in, hidden, vocab_out, max_len
        self.enc = Dense("enc.0", d_in, hidden)
        self.decoder = Decoder("dec", vocab_out, hidden, hidden)
        super().__init__(seed)

    def layers(self):
        return [self.enc] + self.decoder.layers()

    def encode(self, x):
        x = self._check_source(x)
        a, c1 = self.enc.forward(self.params, x)
        h0 = relu(a)
        mem = h0[:, None, :]
        return h0, np.zeros_like(h0), mem, np.ones((len(x), 1)), (c1, a)

    def encode_backward(self, dh0, dc0, dmem, enc_cache, grads):
        c1, a = enc_cache
        dh = dh0 + dmem[:, 0, :]
        self.enc.backward(self.params, dh * (a > 0), c1, grads)


class SeqToSeq(_SeqTarget):
    source_is_seq = True

    def __init__(self, vocab_in, hidden, vocab_out, max_len, seed=0):
        self.vocab_in, self.hidden_width = vocab_in, hidden
        self.vocab_out, self.max_len = vocab_out, max_len
        self.emb = Embedding("enc.emb", vocab_in, hidden)
        self.lstm = LSTM("enc.lstm", hidden, hidden)
        self.decoder = Decoder("dec", vocab_out, hidden, hidden)
        super().__init__(seed)

    def layers(self):
        return [self.emb, self.lstm] + self.decoder.layers()

    def encode(self, x):
        tokens, mask = encode_sources(self._check_source(x))
        e, emb_cache = self.emb.forward(self.params, tokens)
        hs, h, c, lstm_cache = self.lstm.forward(self.params, e, mask)
        return h, c, hs, mask, (emb_cache, lstm_cache)

    def encode_backward(self, dh0, dc0, dmem, enc_cache, grads):
        emb_cache, lstm_cache = enc_cache
        de, _, _ = self.lstm.backward(self.params, dmem, dh0, dc0, lstm_cache, grads)
        self.emb.backward(self.params, de, emb_cache, grads)


# --------------------------------------------------------------------------
# training utilities
# --------------------------------------------------------------------------


def _all_finite(grads):
    return all(np.all(np.isfinite(g)) for _, g in grads.items())


def train_step(net, x, y, loss_kind, opt):
    """One RMSprop step; returns the pre-update mean batch loss."""
    if len(x) == 0:
        raise ValueError("empty batch")
    if not net.target_is_seq and not np.all(np.isfinite(np.asarray(y, dtype=np.float64))):
        raise ValueError("non-finite targets")
    loss, grads = net.loss_and_grads(x, y, loss_kind)
    if not np.isfinite(loss) or not _all_finite(grads):
        raise NonFiniteLossError(f"non-finite loss {loss}; step aborted, parameters unchanged")
    opt.step(net.params, grads)
    return loss


def take_rows(x, idx):
    if isinstance(x, np.ndarray):
        return x[idx]
    return [x[i] for i in idx]


def grad_check(net, x, y, loss_kind, h=1e-5):
    """Max over parameters of |analytic - central FD| / max(|FD|, 1e-8)."""
    if net.param_count() > 10_000:
        raise ValueError("grad_check is limited to nets with at most 10^4 parameters")
    _, grads = net.loss_and_grads(x, y, loss_kind)
    worst = 0.0
    for name, value in net.params.items():
        flat = value.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            plus = net.loss(x, y, loss_kind)
            flat[k] = orig - h
            minus = net.loss(x, y, loss_kind)
            flat[k] = orig
            fd = (plus - minus) / (2.0 * h)
            worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-8))
    return worst
