"""Temporal structural-causal response model.

A gated-recurrent interest state drives item affinities ⟨h, V_i⟩; a
per-item scalar confounder with a mean-field Gaussian posterior captures
exposure effects; responses are a softmax over the slate plus a learned
no-click option.  Training maximizes an ELBO with one reparameterized
confounder sample per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SlateInteraction
from .errors import DataError, EmptyDatasetError, InvalidInputError
from .nn import AdamState, ParamStore, adam_update, affine
from .rng import substream

SIGMA_FLOOR = 1e-6


@dataclass
class SCMConfig:
    d: int = 16                  # interest-state dimension (independent of diffusion)
    lr: float = 1e-2
    batch_size: int = 64
    epochs: int = 15

    def __post_init__(self):
        if self.d < 2:
            raise InvalidInputError("interest dimension must be >= 2")


def init_scm_params(n_items: int, cfg: SCMConfig, seed: int) -> ParamStore:
    rng = substream(seed, "scm-init")
    store = ParamStore()
    d = cfg.d
    s = 1.0 / np.sqrt(d)
    store.add("V", rng.normal(0.0, s, size=(n_items, d)))
    store.add("h0", rng.normal(0.0, s, size=(d,)))
    for gate in ("r", "z", "c"):
        store.add(f"gru.w{gate}", rng.normal(0.0, s, size=(d, d)))
        store.add(f"gru.u{gate}", rng.normal(0.0, s, size=(d, d)))
        store.add(f"gru.b{gate}", np.zeros(d))
    store.add("w_conf", rng.normal(0.0, 0.1, size=(n_items,)))
    store.add("b0", np.zeros(()))
    store.add("q_mu", np.zeros(n_items))
    store.add("q_logsigma", np.zeros(n_items))
    return store


def posterior_sigma(store: ParamStore) -> np.ndarray:
    return np.maximum(np.exp(store["q_logsigma"].data), SIGMA_FLOOR)


def sample_confounder(store: ParamStore, rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw beta_hat = mu + sigma * zeta over all items."""
    zeta = rng.standard_normal(store["q_mu"].data.shape[0])
    return store["q_mu"].data + posterior_sigma(store) * zeta


def update_interest(h: Tensor, clicked: list[int], store: ParamStore) -> Tensor:
    """Gated recurrent update from the mean clicked embedding; identity on
    empty click sets."""
    if not clicked:
        return h
    n_items = store["V"].data.shape[0]
    if any(not (0 <= i < n_items) for i in clicked):
        raise IndexError(f"clicked item outside catalog of {n_items}")
    x = ad.reduce_mean(ad.take(store["V"], np.asarray(clicked, dtype=np.intp)), axis=0)
    r = ad.sigmoid(affine(x, store["gru.wr"], store["gru.br"]) + ad.matmul(h, store["gru.ur"]))
    z = ad.sigmoid(affine(x, store["gru.wz"], store["gru.bz"]) + ad.matmul(h, store["gru.uz"]))
    cand = ad.tanh(affine(x, store["gru.wc"], store["gru.bc"]) + ad.matmul(r * h, store["gru.uc"]))
    return (1.0 - z) * h + z * cand


def response_logits(h, slate: list[int], beta_hat, store: ParamStore):
    """K+1 logits: slate affinities plus confounder terms, then no-click."""
    if len(set(slate)) != len(slate):
        raise InvalidInputError(f"slate has duplicates: {slate}")
    idx = np.asarray(slate, dtype=np.intp)
    v = ad.take(store["V"], idx)
    affinity = ad.reduce_sum(v * h, axis=-1)
    conf = ad.take(store["w_conf"], idx) * ad.as_tensor(np.asarray(beta_hat)[idx])
    noclick = ad.reshape(store["b0"], (1,))
    return ad.concat([affinity + conf, noclick], axis=0)


def response_probabilities(h, slate: list[int], beta_hat, store: ParamStore) -> np.ndarray:
    with ad.no_grad():
        return ad.softmax(response_logits(ad.as_tensor(h), slate, beta_hat, store)).data


def generate_response(h, slate: list[int], beta_hat, M: int,
                      store: ParamStore) -> list[bool]:
    """Counterfactual response: all-false if no-click wins, else the top
    min(M, K) slate items by probability (ties by slate position)."""
    K = len(slate)
    if not (0 <= M <= K):
        raise InvalidInputError(f"click budget M={M} outside 0..{K}")
    p = response_probabilities(h, slate, beta_hat, store)
    if M == 0 or p[K] >= p[:K].max():
        return [False] * K
    top = np.argsort(-p[:K], kind="stable")[:min(M, K)]
    chosen = set(int(i) for i in top)
    return [n in chosen for n in range(K)]


def elbo_loss(batch: list[SlateInteraction], store: ParamStore,
              rng: np.random.Generator) -> Tensor:
    """Negative ELBO: response NLL under one reparameterized confounder
    sample plus the KL of the posterior from the standard-normal prior."""
    if not batch:
        raise EmptyDatasetError("empty batch")
    n_items = store["V"].data.shape[0]
    zeta = Tensor(rng.standard_normal(n_items))
    sigma = ad.exp(store["q_logsigma"]) + SIGMA_FLOOR
    beta_hat = store["q_mu"] + sigma * zeta
    nll_terms = []
    for inter in batch:
        h = store["h0"]
        for step in inter.steps:
            if len(step.clicks) != len(step.slate):
                raise DataError("response length differs from slate length")
            idx = np.asarray(step.slate, dtype=np.intp)
            v = ad.take(store["V"], idx)
            affinity = ad.reduce_sum(v * h, axis=-1)
            conf = ad.take(store["w_conf"], idx) * ad.take(beta_hat, idx)
            logits = ad.concat([affinity + conf, ad.reshape(store["b0"], (1,))], axis=0)
            logp = ad.log_softmax(logits)
            outcome = step.clicks.index(True) if any(step.clicks) else len(step.slate)
            nll_terms.append(-ad.take(logp, outcome))
            clicked = [i for i, c in zip(step.slate, step.clicks) if c]
            if clicked:
                h = update_interest(h, clicked, store)
    nll = ad.reduce_sum(ad.concat([ad.reshape(t, (1,)) for t in nll_terms], axis=0))
    mu = store["q_mu"]
    kl = 0.5 * ad.reduce_sum(mu * mu + sigma * sigma - 1.0 - 2.0 * ad.log(sigma))
    return nll + kl


def kl_to_prior(store: ParamStore) -> float:
    mu = store["q_mu"].data
    sigma = posterior_sigma(store)
    return float(0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma)))


def train_scm(slate_log: list[SlateInteraction], n_items: int, cfg: SCMConfig,
              seed: int) -> ParamStore:
    if not slate_log:
        raise EmptyDatasetError("empty slate log")
    store = init_scm_params(n_items, cfg, seed)
    state = AdamState(lr=cfg.lr)
    n = len(slate_log)
    for epoch in range(cfg.epochs):
        rng = substream(seed, "scm-epoch", epoch)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            store.zero_grads()
            loss = elbo_loss([slate_log[i] for i in idx], store, rng)
            loss.backward()
            adam_update(store, store.grads(), state)
    return store
