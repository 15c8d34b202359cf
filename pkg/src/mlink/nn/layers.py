"""Layer kinds with hand-written backward passes.

Each layer owns a name prefix inside a shared :class:`ParamSet`.  ``forward``
returns ``(output, cache)`` and ``backward`` takes the upstream gradient plus
that cache, accumulates parameter gradients into ``grads`` and returns the
gradient with respect to the layer input.
"""
import numpy as np

from .. import kernels

PAD, BOS, EOS, UNK = 0, 1, 2, 3
N_RESERVED = 4


class ShapeError(ValueError):
    pass


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


ACTIVATIONS = {"softmax": softmax, "sigmoid": sigmoid, "linear": lambda x: x}


class Dense:
    def __init__(self, name, d_in, d_out):
        self.name, self.d_in, self.d_out = name, d_in, d_out
        self.w, self.b = f"{name}.W", f"{name}.b"

    def init(self, params, rng):
        params.add(self.w, _uniform(rng, (self.d_in, self.d_out), self.d_in))
        params.add(self.b, _uniform(rng, (self.d_out,), self.d_in))

    def forward(self, params, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(
                f"{self.name}: expected last dimension {self.d_in}, got shape {x.shape}"
            )
        return x @ params[self.w] + params[self.b], x

    def backward(self, params, dy, x, grads):
        x2 = x.reshape(-1, self.d_in)
        dy2 = dy.reshape(-1, self.d_out)
        grads[self.w] += x2.T @ dy2
        grads[self.b] += dy2.sum(axis=0)
        return dy @ params[self.w].T


class Embedding:
    def __init__(self, name, vocab, dim):
        self.name, self.vocab, self.dim = name, vocab, dim
        self.e = f"{name}.E"

    def init(self, params, rng):
        params.add(self.e, _uniform(rng, (self.vocab, self.dim), self.vocab))

    def forward(self, params, tokens):
        tokens = np.asarray(tokens)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab):
            bad = tokens[(tokens < 0) | (tokens >= self.vocab)].ravel()[0]
            raise ShapeError(f"{self.name}: token id {bad} outside vocabulary of size {self.vocab}")
        return params[self.e][tokens], tokens

    def backward(self, params, dy, tokens, grads):
        np.add.at(grads[self.e], tokens.ravel(), dy.reshape(-1, self.dim))
        return None


class LSTM:
    """Single-layer LSTM; gates stacked as (input, forget, cell, output)."""

    def __init__(self, name, d_in, hidden):
        self.name, self.d_in, self.hidden = name, d_in, hidden
        self.wx, self.wh, self.b = f"{name}.Wx", f"{name}.Wh", f"{name}.b"

    def init(self, params, rng):
        fan_in = self.d_in + self.hidden
        params.add(self.wx, _uniform(rng, (self.d_in, 4 * self.hidden), fan_in))
        params.add(self.wh, _uniform(rng, (self.hidden, 4 * self.hidden), fan_in))
        params.add(self.b, _uniform(rng, (4 * self.hidden,), fan_in))

    def step(self, params, x, h, c):
        z = np.ascontiguousarray(x @ params[self.wx] + h @ params[self.wh] + params[self.b])
        h_new, c_new, acts, tanh_c = kernels.lstm_pointwise_forward(z, np.ascontiguousarray(c))
        return h_new, c_new, (x, h, c, acts, tanh_c)

    def step_backward(self, params, dh, dc, cache, grads):
        x, h, c, acts, tanh_c = cache
        dz, dc_prev = kernels.lstm_pointwise_backward(
            np.ascontiguousarray(dh), np.ascontiguousarray(dc), acts, c, tanh_c
        )
        grads[self.wx] += x.T @ dz
        grads[self.wh] += h.T @ dz
        grads[self.b] += dz.sum(axis=0)
        return dz @ params[self.wx].T, dz @ params[self.wh].T, dc_prev

    def forward(self, params, xs, mask, h0=None, c0=None):
        """Run over ``xs`` of shape (N, T, d_in); masked steps carry state."""
        n, t_len, _ = xs.shape
        h = np.zeros((n, self.hidden)) if h0 is None else h0
        c = np.zeros((n, self.hidden)) if c0 is None else c0
        hs = np.empty((n, t_len, self.hidden))
        caches = []
        for t in range(t_len):
            h_new, c_new, cache = self.step(params, xs[:, t], h, c)
            m = mask[:, t : t + 1]
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            hs[:, t] = h
            caches.append(cache)
        return hs, h, c, (caches, mask)

    def backward(self, params, dhs, dh_last, dc_last, cache, grads):
        caches, mask = cache
        n, t_len = mask.shape
        dxs = np.zeros((n, t_len, self.d_in))
        dh = dh_last.copy()
        dc = dc_last.copy()
        for t in reversed(range(t_len)):
            dh = dh + dhs[:, t]
            m = mask[:, t : t + 1]
            dx, dh_prev, dc_prev = self.step_backward(params, m * dh, m * dc, caches[t], grads)
            dxs[:, t] = dx
            dh = dh_prev + (1.0 - m) * dh
            dc = dc_prev + (1.0 - m) * dc
        return dxs, dh, dc


class Attention:
    """Additive attention: score_s = v . tanh(q Wq + m_s Wm), softmax over s."""

    def __init__(self, name, d_query, d_mem, d_att):
        self.name = name
        self.d_query, self.d_mem, self.d_att = d_query, d_mem, d_att
        self.wq, self.wm, self.v = f"{name}.Wq", f"{name}.Wm", f"{name}.v"

    def init(self, params, rng):
        params.add(self.wq, _uniform(rng, (self.d_query, self.d_att), self.d_query))
        params.add(self.wm, _uniform(rng, (self.d_mem, self.d_att), self.d_mem))
        params.add(self.v, _uniform(rng, (self.d_att,), self.d_att))

    def forward(self, params, q, mem, mem_mask):
        u = np.tanh((q @ params[self.wq])[:, None, :] + mem @ params[self.wm])
        scores = u @ params[self.v]
        scores = np.where(mem_mask > 0, scores, -np.inf)
        alpha = softmax(scores, axis=1)
        ctx = np.einsum("ns,nsd->nd", alpha, mem)
        return ctx, (q, mem, u, alpha)

    def backward(self, params, dctx, cache, grads, dmem):
        """Returns dq and accumulates the memory gradient into ``dmem``."""
        q, mem, u, alpha = cache
        dalpha = np.einsum("nd,nsd->ns", dctx, mem)
        dmem += alpha[:, :, None] * dctx[:, None, :]
        dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        grads[self.v] += np.einsum("ns,nsa->a", dscores, u)
        du = dscores[:, :, None] * params[self.v] * (1.0 - u * u)
        du_q = du.sum(axis=1)
        grads[self.wq] += q.T @ du_q
        grads[self.wm] += np.einsum("nsd,nsa->da", mem, du)
        dmem += du @ params[self.wm].T
        return du_q @ params[self.wq].T
