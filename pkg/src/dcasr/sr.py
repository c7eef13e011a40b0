"""Attention-readout session recommender with m-way softmax training.

The encoder attends over the prefix's item embeddings with the last item
as query, concatenates the attended summary with the last embedding, and
projects back to d dimensions.  Scoring is a dot product against the item
table, or a scaled cosine under the normalized variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ClickSession, PopularityTable
from .errors import EmptyDatasetError, InvalidInputError
from .nn import AdamState, ParamStore, adam_update, cross_entropy_loss
from .rng import substream


@dataclass
class SRConfig:
    d: int = 64
    variant: str = "plain"          # "plain" | "normalized"
    scale: float = 16.0             # sigma for the normalized variant
    max_len: int = 10
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    patience: int = 3               # on validation Recall@1; <=0 disables

    def __post_init__(self):
        if self.variant not in ("plain", "normalized"):
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.variant == "normalized" and self.scale <= 0:
            raise InvalidInputError("scale must be positive for the normalized variant")
        if self.d < 2:
            raise InvalidInputError("embedding dimension must be >= 2")


def init_sr_params(n_items: int, cfg: SRConfig, seed: int) -> ParamStore:
    rng = substream(seed, "sr-init")
    store = ParamStore()
    d = cfg.d
    s = 1.0 / np.sqrt(d)
    store.add("emb", rng.normal(0.0, s, size=(n_items, d)))
    store.add("wq", rng.normal(0.0, s, size=(d, d)))
    store.add("wk", rng.normal(0.0, s, size=(d, d)))
    store.add("wproj", rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, d)))
    return store


def _pad_prefixes(prefixes: list[list[int]], max_len: int):
    lengths = np.array([min(len(p), max_len) for p in prefixes])
    L = int(lengths.max())
    ids = np.zeros((len(prefixes), L), dtype=np.intp)
    for i, p in enumerate(prefixes):
        tail = p[-max_len:]
        ids[i, :len(tail)] = tail
    return ids, lengths


def encode_session_batch(prefixes: list[list[int]], store: ParamStore) -> Tensor:
    """Encode a batch of prefixes to B x d session vectors."""
    if any(len(p) < 1 for p in prefixes):
        raise InvalidInputError("empty session prefix")
    ids, lengths = _pad_prefixes(prefixes, max_len=4096)
    B, L = ids.shape
    d = store["emb"].data.shape[1]
    x = ad.take(store["emb"], ids)                        # B x L x d
    last = ad.take(x, (np.arange(B), lengths - 1))        # B x d
    q = ad.matmul(last, store["wq"])                      # B x d
    keys = ad.matmul(x, store["wk"])                      # B x L x d
    scores = ad.reduce_sum(keys * ad.reshape(q, (B, 1, d)), axis=-1) * (1.0 / np.sqrt(d))
    mask = np.arange(L)[None, :] < lengths[:, None]
    alpha = ad.softmax(scores + Tensor(np.where(mask, 0.0, -1e9)), axis=-1)
    summary = ad.reduce_sum(x * ad.reshape(alpha, (B, L, 1)), axis=1)
    return ad.matmul(ad.concat([summary, last], axis=1), store["wproj"])


def encode_session(prefix: list[int], store: ParamStore) -> Tensor:
    return ad.take(encode_session_batch([list(prefix)], store), 0)


def attention_readout_weights(prefix: list[int], store: ParamStore) -> np.ndarray:
    """Attention weights over the prefix, for tests and diagnostics."""
    with ad.no_grad():
        d = store["emb"].data.shape[1]
        x = store["emb"].data[np.asarray(prefix)]
        q = x[-1] @ store["wq"].data
        scores = (x @ store["wk"].data) @ q / np.sqrt(d)
        scores -= scores.max()
        e = np.exp(scores)
        return e / e.sum()


def score_items(session_vec: Tensor, store: ParamStore, cfg: SRConfig) -> Tensor:
    """Relevance scores for all items given session vector(s)."""
    emb = store["emb"]
    if cfg.variant == "plain":
        return ad.matmul(session_vec, ad.swapaxes(emb, 0, 1))
    # normalized: sigma * cosine, with norms floored near 1e-8
    floor = 1e-16
    v_norm = ad.power(ad.reduce_sum(session_vec * session_vec, axis=-1, keepdims=True) + floor, -0.5)
    e_norm = ad.power(ad.reduce_sum(emb * emb, axis=-1, keepdims=True) + floor, -0.5)
    return cfg.scale * ad.matmul(session_vec * v_norm,
                                 ad.swapaxes(emb * e_norm, 0, 1))


def _pairs_from_sessions(sessions: list[ClickSession]):
    prefixes, targets = [], []
    for s in sessions:
        for t in range(1, len(s.items)):
            prefixes.append(s.items[:t])
            targets.append(s.items[t])
    return prefixes, np.array(targets, dtype=np.intp)


def sr_loss(store: ParamStore, cfg: SRConfig, prefixes, targets) -> Tensor:
    vecs = encode_session_batch(prefixes, store)
    return cross_entropy_loss(score_items(vecs, store, cfg), targets)


def recall_at_1(store: ParamStore, cfg: SRConfig, sessions: list[ClickSession]) -> float:
    prefixes, targets = _pairs_from_sessions(sessions)
    if not prefixes:
        return 0.0
    with ad.no_grad():
        hits = 0
        for lo in range(0, len(prefixes), 512):
            chunk = prefixes[lo:lo + 512]
            scores = score_items(encode_session_batch(chunk, store), store, cfg).data
            hits += int((scores.argmax(axis=1) == targets[lo:lo + 512]).sum())
    return hits / len(prefixes)


def train_sr(train_sessions: list[ClickSession], n_items: int, cfg: SRConfig,
             seed: int, valid_sessions: list[ClickSession] | None = None) -> ParamStore:
    """Minibatch Adam on cross-entropy over all (prefix, next-item) pairs."""
    prefixes, targets = _pairs_from_sessions(
        [s for s in train_sessions if len(s.items) >= 2])
    if len(prefixes) == 0:
        raise EmptyDatasetError("no (prefix, target) pairs in training data")
    store = init_sr_params(n_items, cfg, seed)
    state = AdamState(lr=cfg.lr)
    best: ParamStore | None = None
    best_recall = -1.0
    bad_epochs = 0
    n = len(prefixes)
    for epoch in range(cfg.epochs):
        order = substream(seed, "sr-epoch", epoch).permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch_prefixes = [prefixes[i] for i in idx]
            store.zero_grads()
            loss = sr_loss(store, cfg, batch_prefixes, targets[idx])
            loss.backward()
            adam_update(store, store.grads(), state)
        if valid_sessions and cfg.patience > 0:
            r1 = recall_at_1(store, cfg, valid_sessions)
            if r1 > best_recall + 1e-12:
                best_recall = r1
                best = store.copy()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    return best if best is not None else store


def recommend_topk(store: ParamStore, cfg: SRConfig, prefix: list[int], K: int,
                   exclude: set[int] | None = None) -> list[int]:
    """K distinct highest-scoring items outside `exclude`; ties by item id."""
    exclude = exclude or set()
    m = store["emb"].data.shape[0]
    if K > m - len(exclude):
        raise InvalidInputError(f"K={K} exceeds {m - len(exclude)} eligible items")
    with ad.no_grad():
        scores = score_items(encode_session(prefix, store), store, cfg).data.copy()
    if exclude:
        scores[list(exclude)] = -np.inf
    order = np.lexsort((np.arange(m), -scores))
    return [int(i) for i in order[:K]]


def make_agent(store: ParamStore, cfg: SRConfig, K: int, pop: PopularityTable):
    """Agent for online evaluation: score the clicked-item history.

    With no history yet there is nothing to encode; fall back to the most
    popular training items (same fallback for every model under test).
    """
    m = store["emb"].data.shape[0]
    pop_order = np.lexsort((np.arange(m), -pop.counts))
    cold = [int(i) for i in pop_order[:K]]

    def agent(history: list[int]) -> list[int]:
        if not history:
            return list(cold)
        return recommend_topk(store, cfg, history, K, exclude=set(history))

    return agent
