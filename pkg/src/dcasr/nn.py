"""Layers, losses, the optimizer, and gradient verification.

All trainable state lives in a :class:`ParamStore` (name -> Tensor with
lexicographic iteration order).  Layers are plain functions over autodiff
tensors so the same code path serves training, inference (under
``no_grad``), and finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConsistencyError, InvalidInputError, NumericError, ShapeError


class ParamStore:
    """Named collection of trainable tensors.

    Iteration is always in lexicographic name order so that checkpoints,
    optimizer sweeps, and finite-difference sweeps are deterministic.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self.version = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._entries:
            raise ConsistencyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def grads(self) -> dict[str, np.ndarray]:
        """Collect gradients after backward(); unused parameters get zeros."""
        out = {}
        for name, t in self.items():
            out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out

    def zero_grads(self):
        for t in self._entries.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self.items():
            dup.add(name, t.data.copy())
        dup.version = self.version
        return dup

    def equals(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.array_equal(self._entries[n].data, other._entries[n].data)
            for n in self.names()
        )


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam step, in place. Returns (params, state)."""
    names = params.names()
    for name in names:
        if name not in grads:
            raise ConsistencyError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != params[name].data.shape:
            raise ShapeError(
                f"gradient shape {grads[name].shape} != parameter shape "
                f"{params[name].data.shape} for {name!r}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in names:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name].data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.version += 1
    return params, state


# -- layers ---------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with an explicit shape check."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"affine: input shape {x.data.shape} incompatible with weight "
            f"shape {w.data.shape}"
        )
    return ad.matmul(x, w) + b


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = ad.reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered * ad.power(var + eps, -0.5) * gain + bias


def init_encoder_params(store: ParamStore, prefix: str, d: int, max_len: int,
                        rng: np.random.Generator, d_ff: int | None = None):
    """Register the weights of one self-attention encoder block."""
    if d_ff is None:
        d_ff = 2 * d
    s = 1.0 / np.sqrt(d)
    store.add(prefix + "pos", rng.normal(0.0, 0.1, size=(max_len, d)))
    for name in ("wq", "wk", "wv", "wo"):
        store.add(prefix + name, rng.normal(0.0, s, size=(d, d)))
    store.add(prefix + "ln1_g", np.ones(d))
    store.add(prefix + "ln1_b", np.zeros(d))
    store.add(prefix + "ff_w1", rng.normal(0.0, s, size=(d, d_ff)))
    store.add(prefix + "ff_b1", np.zeros(d_ff))
    store.add(prefix + "ff_w2", rng.normal(0.0, 1.0 / np.sqrt(d_ff), size=(d_ff, d)))
    store.add(prefix + "ff_b2", np.zeros(d))
    store.add(prefix + "ln2_g", np.ones(d))
    store.add(prefix + "ln2_b", np.zeros(d))


def attention_encode_batch(seqs: Tensor, lengths: np.ndarray, store: ParamStore,
                           prefix: str = "enc.") -> Tensor:
    """Run the encoder block over padded sequences.

    seqs: B x L x d embeddings (rows past each length are padding and are
    masked out of the attention); returns the output at each sequence's
    final valid position, B x d.
    """
    B, L, d = seqs.data.shape
    pos = store[prefix + "pos"]
    if L > pos.data.shape[0]:
        raise InvalidInputError(
            f"sequence length {L} exceeds positional table {pos.data.shape[0]}"
        )
    x = seqs + ad.take(pos, slice(0, L))
    q = ad.matmul(x, store[prefix + "wq"])
    k = ad.matmul(x, store[prefix + "wk"])
    v = ad.matmul(x, store[prefix + "wv"])
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
    key_mask = (np.arange(L)[None, :] < np.asarray(lengths)[:, None])
    penalty = np.where(key_mask, 0.0, -1e9)[:, None, :]  # B x 1 x L
    attn = ad.softmax(scores + Tensor(penalty), axis=-1)
    ctx = ad.matmul(attn, v)
    h = layer_norm(x + ad.matmul(ctx, store[prefix + "wo"]),
                   store[prefix + "ln1_g"], store[prefix + "ln1_b"])
    ff = affine(ad.tanh(affine(h, store[prefix + "ff_w1"], store[prefix + "ff_b1"])),
                store[prefix + "ff_w2"], store[prefix + "ff_b2"])
    out = layer_norm(h + ff, store[prefix + "ln2_g"], store[prefix + "ln2_b"])
    last = (np.asarray(lengths) - 1).astype(int)
    return ad.take(out, (np.arange(B), last))


def attention_encode(seq: Tensor, store: ParamStore, prefix: str = "enc.") -> Tensor:
    """Encode one sequence (l x d) to a single d-vector (final position)."""
    if seq.data.ndim != 2 or seq.data.shape[0] < 1:
        raise InvalidInputError(f"attention_encode needs a nonempty l x d input, got {seq.data.shape}")
    l = seq.data.shape[0]
    batched = ad.reshape(seq, (1, l, seq.data.shape[1]))
    return ad.take(attention_encode_batch(batched, np.array([l]), store, prefix), 0)


def attention_weights(seq: np.ndarray, store: ParamStore, prefix: str = "enc.") -> np.ndarray:
    """Attention matrix for one sequence, for inspection/testing."""
    with ad.no_grad():
        l, d = seq.shape
        x = seq + store[prefix + "pos"].data[:l]
        q = x @ store[prefix + "wq"].data
        k = x @ store[prefix + "wk"].data
        scores = q @ k.T / np.sqrt(d)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=-1, keepdims=True)


# -- losses ---------------------------------------------------------------


def softmax_cross_entropy(logits, target: int):
    """Stable cross-entropy of one logit vector against a class index.

    Returns (loss: float, grad: ndarray) with grad = softmax - onehot.
    """
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits,
                   dtype=np.float64)
    m = z.shape[0]
    if not (0 <= target < m):
        raise IndexError(f"target {target} out of range for {m} classes")
    shifted = z - z.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[target])
    grad = np.exp(shifted - log_z)
    grad[target] -= 1.0
    return loss, grad


def cross_entropy_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy over a batch of logit rows (autodiff path)."""
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.take(logp, (np.arange(logits.data.shape[0]), np.asarray(targets)))
    return -ad.reduce_mean(picked)


def sinusoidal_time_table(T: int, d: int) -> np.ndarray:
    """Fixed sinusoidal embeddings for timesteps 1..T (row t-1 is step t)."""
    t = np.arange(1, T + 1, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, (2.0 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


# -- verification ---------------------------------------------------------


def finite_diff_check(f, params: ParamStore, eps: float = 1e-5) -> float:
    """Compare analytic gradients of scalar f(params) to central differences.

    Returns the max over all coordinates of |g_fd - g| / max(1, |g_fd|, |g|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise InvalidInputError(f"eps {eps} outside [1e-7, 1e-3]")
    params.zero_grads()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise NumericError("objective is not finite at the given parameters")
    out.backward()
    analytic = params.grads()
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        g = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            with ad.no_grad():
                flat[j] = orig + eps
                hi = f(params).item()
                flat[j] = orig - eps
                lo = f(params).item()
            flat[j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"objective not finite when perturbing {name!r}")
            g_fd = (hi - lo) / (2.0 * eps)
            err = abs(g_fd - g[j]) / max(1.0, abs(g_fd), abs(g[j]))
            worst = max(worst, err)
    return worst
