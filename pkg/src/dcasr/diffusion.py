"""Guided diffusion over item embeddings: schedule, forward noising,
session-conditioned denoiser, classifier-free guidance, the sampling
recursion, and K-nearest-neighbour slate retrieval.

The denoiser predicts the clean embedding (x0-parameterization): the
sampling recursion applies the fixed-variance posterior-mean coefficients
to the guided prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ClickSession
from .errors import EmptyDatasetError, InvalidInputError
from .nn import (AdamState, ParamStore, adam_update, affine,
                 attention_encode_batch, init_encoder_params,
                 sinusoidal_time_table)
from .rng import substream


@dataclass
class DiffusionSchedule:
    T: int
    beta: np.ndarray        # beta[t-1] is the step-t variance
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray  # posterior variance; beta_tilde[0] == 0

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar[t-1] with alpha_bar[0] defined as 1."""
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])


def make_schedule(T: int, beta_1: float = 1e-4, beta_T: float = 0.02,
                  kind: str = "linear") -> DiffusionSchedule:
    if kind != "linear":
        raise InvalidInputError(f"unknown schedule kind {kind!r}")
    if T < 1 or not (0.0 < beta_1 <= beta_T < 1.0):
        raise InvalidInputError(f"bad schedule: T={T}, beta range ({beta_1}, {beta_T})")
    beta = np.linspace(beta_1, beta_T, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - prev) / (1.0 - alpha_bar) * beta
    return DiffusionSchedule(T, beta, alpha, alpha_bar, beta_tilde)


def forward_diffuse(e0: np.ndarray, t: int, eps: np.ndarray,
                    sched: DiffusionSchedule) -> np.ndarray:
    """Closed-form corruption to step t: sqrt(abar)*e0 + sqrt(1-abar)*eps."""
    if not (1 <= t <= sched.T):
        raise IndexError(f"t={t} outside 1..{sched.T}")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * e0 + np.sqrt(1.0 - ab) * eps


def cfg_combine(f_cond: np.ndarray, f_uncond: np.ndarray, w: float) -> np.ndarray:
    """(1 + w) * conditional - w * unconditional."""
    f_cond = np.asarray(f_cond, dtype=np.float64)
    f_uncond = np.asarray(f_uncond, dtype=np.float64)
    if f_cond.shape != f_uncond.shape:
        raise InvalidInputError(f"shape mismatch {f_cond.shape} vs {f_uncond.shape}")
    return (1.0 + w) * f_cond - w * f_uncond


def reverse_step(e_t: np.ndarray, f_tilde: np.ndarray, t: int,
                 sched: DiffusionSchedule, z: np.ndarray) -> np.ndarray:
    """One posterior-mean sampling step from e^t to e^{t-1}."""
    if not (1 <= t <= sched.T):
        raise IndexError(f"t={t} outside 1..{sched.T}")
    ab_prev = sched.alpha_bar_prev(t)
    ab = sched.alpha_bar[t - 1]
    coef_x0 = np.sqrt(ab_prev) * sched.beta[t - 1] / (1.0 - ab)
    coef_xt = np.sqrt(sched.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab)
    return coef_x0 * f_tilde + coef_xt * e_t + np.sqrt(sched.beta_tilde[t - 1]) * z


@dataclass
class DiffusionConfig:
    d: int = 32
    T: int = 500
    beta_1: float = 1e-4
    beta_T: float = 0.02
    hidden_mult: int = 4    # denoiser hidden width = hidden_mult * d
    max_len: int = 10
    p_uncond: float = 0.1
    guidance_w: float = 2.0
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 20


@dataclass
class DiffusionModel:
    store: ParamStore
    config: DiffusionConfig
    time_table: np.ndarray = field(init=False)

    def __post_init__(self):
        self.time_table = sinusoidal_time_table(self.config.T, self.config.d)

    @property
    def n_items(self) -> int:
        return self.store["emb"].data.shape[0]


def init_diffusion(n_items: int, cfg: DiffusionConfig, seed: int) -> DiffusionModel:
    rng = substream(seed, "diffusion-init")
    store = ParamStore()
    d, h = cfg.d, cfg.hidden_mult * cfg.d
    s = 1.0 / np.sqrt(d)
    store.add("emb", rng.normal(0.0, s, size=(n_items, d)))
    store.add("phi", rng.normal(0.0, s, size=(d,)))
    init_encoder_params(store, "enc.", d, cfg.max_len, rng)
    d_in = 3 * d  # [noisy embedding | context | timestep embedding]
    store.add("den.w1", rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, h)))
    store.add("den.b1", np.zeros(h))
    store.add("den.w2", rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, h)))
    store.add("den.b2", np.zeros(h))
    store.add("den.w3", rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, d)))
    store.add("den.b3", np.zeros(d))
    return DiffusionModel(store, cfg)


# -- forward passes -------------------------------------------------------


def denoise(model: DiffusionModel, e_t: Tensor, ctx: Tensor, t_idx: np.ndarray) -> Tensor:
    """Denoiser prediction of the clean embedding (autodiff path, batched)."""
    temb = Tensor(model.time_table[np.asarray(t_idx) - 1])
    x = ad.concat([e_t, ctx, temb], axis=-1)
    st = model.store
    h1 = ad.tanh(affine(x, st["den.w1"], st["den.b1"]))
    h2 = ad.tanh(affine(h1, st["den.w2"], st["den.b2"]))
    return affine(h2, st["den.w3"], st["den.b3"])


def denoise_np(model: DiffusionModel, e_t: np.ndarray, ctx: np.ndarray, t: int) -> np.ndarray:
    """Plain-numpy denoiser forward for the sampling loop (one vector)."""
    st = model.store
    x = np.concatenate([e_t, ctx, model.time_table[t - 1]])
    h1 = np.tanh(x @ st["den.w1"].data + st["den.b1"].data)
    h2 = np.tanh(h1 @ st["den.w2"].data + st["den.b2"].data)
    return h2 @ st["den.w3"].data + st["den.b3"].data


def encode_guidance(prefix: list[int], model: DiffusionModel) -> np.ndarray:
    """Context vector for a session prefix; empty prefix -> the null token."""
    with ad.no_grad():
        if not prefix:
            return model.store["phi"].data.copy()
        return encode_guidance_batch([list(prefix)], model).data[0].copy()


def encode_guidance_batch(prefixes: list[list[int]], model: DiffusionModel) -> Tensor:
    ids_max = model.config.max_len
    lengths = np.array([min(len(p), ids_max) for p in prefixes])
    L = int(lengths.max())
    ids = np.zeros((len(prefixes), L), dtype=np.intp)
    for i, p in enumerate(prefixes):
        tail = p[-ids_max:]
        ids[i, :len(tail)] = tail
    seqs = ad.take(model.store["emb"], ids)
    return attention_encode_batch(seqs, lengths, model.store, prefix="enc.")


# -- sampling -------------------------------------------------------------


def sample_next_item_embedding(prefix: list[int], model: DiffusionModel,
                               sched: DiffusionSchedule, w: float,
                               rng: np.random.Generator) -> np.ndarray:
    """Denoise a Gaussian draw for T steps under classifier-free guidance."""
    if w < 0:
        raise InvalidInputError("guidance weight must be >= 0")
    d = model.config.d
    with ad.no_grad():
        ctx = encode_guidance(prefix, model)
        phi = model.store["phi"].data
        e = rng.standard_normal(d)
        for t in range(sched.T, 0, -1):
            f_cond = denoise_np(model, e, ctx, t)
            f_uncond = denoise_np(model, e, phi, t)
            f_tilde = cfg_combine(f_cond, f_uncond, w)
            z = np.zeros(d) if t == 1 else rng.standard_normal(d)
            e = reverse_step(e, f_tilde, t, sched, z)
    return e


def retrieve_slate(e0: np.ndarray, embeddings: np.ndarray, K: int,
                   exclude: set[int] | None = None) -> list[int]:
    """K items nearest to e0 in Euclidean distance; ties by smaller id."""
    exclude = exclude or set()
    m = embeddings.shape[0]
    if K > m - len(exclude):
        raise InvalidInputError(f"K={K} exceeds {m - len(exclude)} eligible items")
    diff = embeddings - e0[None, :]
    dist = np.einsum("ij,ij->i", diff, diff)
    if exclude:
        dist = dist.copy()
        dist[list(exclude)] = np.inf
    order = np.lexsort((np.arange(m), dist))
    return [int(i) for i in order[:K]]


# -- training -------------------------------------------------------------


def diffusion_loss(model: DiffusionModel, sched: DiffusionSchedule,
                   prefixes: list[list[int]], targets: np.ndarray,
                   t_idx: np.ndarray, eps: np.ndarray,
                   uncond_mask: np.ndarray) -> Tensor:
    """Mean squared reconstruction of the clean target embedding."""
    B = len(prefixes)
    target_emb = ad.take(model.store["emb"], np.asarray(targets))
    ab = sched.alpha_bar[np.asarray(t_idx) - 1][:, None]
    e_t = ad.as_tensor(np.sqrt(ab)) * target_emb + Tensor(np.sqrt(1.0 - ab) * eps)
    ctx_cond = encode_guidance_batch(prefixes, model)
    phi_rows = ad.matmul(Tensor(np.ones((B, 1))),
                         ad.reshape(model.store["phi"], (1, model.config.d)))
    mask = uncond_mask.astype(np.float64)[:, None]
    ctx = ctx_cond * Tensor(1.0 - mask) + phi_rows * Tensor(mask)
    pred = denoise(model, e_t, ctx, t_idx)
    diff = pred - target_emb
    return ad.reduce_mean(ad.reduce_sum(diff * diff, axis=-1))


def train_diffusion(sessions: list[ClickSession], n_items: int,
                    cfg: DiffusionConfig, seed: int) -> DiffusionModel:
    """Joint Adam training of embeddings, encoder, null token, and denoiser."""
    prefixes, targets = [], []
    for s in sessions:
        for t in range(1, len(s.items)):
            prefixes.append(s.items[:t])
            targets.append(s.items[t])
    if not prefixes:
        raise EmptyDatasetError("no sessions of length >= 2 for diffusion training")
    targets = np.array(targets, dtype=np.intp)
    model = init_diffusion(n_items, cfg, seed)
    sched = make_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    state = AdamState(lr=cfg.lr)
    n = len(prefixes)
    for epoch in range(cfg.epochs):
        rng = substream(seed, "diffusion-epoch", epoch)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            B = len(idx)
            t_idx = rng.integers(1, cfg.T + 1, size=B)
            eps = rng.standard_normal((B, cfg.d))
            uncond = rng.random(B) < cfg.p_uncond
            model.store.zero_grads()
            loss = diffusion_loss(model, sched, [prefixes[i] for i in idx],
                                  targets[idx], t_idx, eps, uncond)
            loss.backward()
            adam_update(model.store, model.store.grads(), state)
    return model
