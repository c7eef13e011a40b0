"""Popularity-biased slate simulator for log generation and online evaluation.

Two user types prefer different item subsets; a skewed training mixture
makes one type's items rare in logs produced by the random logging policy,
which is the popularity bias the rest of the pipeline tries to undo.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import PopularityTable, SlateInteraction, SlateStep
from .errors import ContractViolationError, InvalidInputError
from .rng import substream


@dataclass
class WorldConfig:
    n_items: int = 1000
    preferred_subsets: list[list[int]] = field(default_factory=list)
    train_mixture: list[float] = field(default_factory=lambda: [0.8, 0.2])
    eval_mixture: list[float] = field(default_factory=lambda: [0.5, 0.5])
    mu_high: float = 1.0
    mu_low: float = -1.0
    affinity_noise: float = 0.5
    tau: float = 1.0
    u_noclick: float = 0.0
    session_length: int = 5
    slate_size: int = 3

    def __post_init__(self):
        if not self.preferred_subsets:
            # default: user types prefer disjoint halves of the catalog
            half = self.n_items // 2
            self.preferred_subsets = [list(range(half)),
                                      list(range(half, self.n_items))]
        self.validate()

    def validate(self):
        for mix in (self.train_mixture, self.eval_mixture):
            if len(mix) != len(self.preferred_subsets):
                raise InvalidInputError("mixture length differs from number of user types")
            if min(mix) <= 0 or abs(sum(mix) - 1.0) > 1e-9:
                raise InvalidInputError(f"mixture weights must be positive and sum to 1: {mix}")
        for sub in self.preferred_subsets:
            if not sub:
                raise InvalidInputError("empty preferred subset")
            if min(sub) < 0 or max(sub) >= self.n_items:
                raise InvalidInputError("preferred subset outside catalog")
        if self.tau <= 0 or self.slate_size < 1 or self.session_length < 1:
            raise InvalidInputError("tau, slate size, and session length must be positive")


@dataclass
class UserState:
    user_type: int
    utilities: np.ndarray


@dataclass
class World:
    config: WorldConfig
    base_utilities: np.ndarray  # n_types x n_items
    seed: int

    def sample_user(self, mixture, rng: np.random.Generator) -> UserState:
        utype = int(rng.choice(len(mixture), p=np.asarray(mixture)))
        noise = self.config.affinity_noise * rng.standard_normal(self.config.n_items)
        return UserState(utype, self.base_utilities[utype] + noise)


def init_world(config: WorldConfig, seed: int) -> World:
    config.validate()
    seen: set[int] = set()
    for sub in config.preferred_subsets:
        overlap = seen.intersection(sub)
        if overlap:
            warnings.warn(f"preferred subsets overlap on {len(overlap)} items")
        seen.update(sub)
    base = np.full((len(config.preferred_subsets), config.n_items), config.mu_low)
    for t, sub in enumerate(config.preferred_subsets):
        base[t, sub] = config.mu_high
    return World(config, base, seed)


def user_choice(user: UserState, slate: list[int], tau: float, u_noclick: float,
                rng: np.random.Generator) -> list[bool]:
    """Conditional-logit draw over the slate plus a no-click option."""
    if len(set(slate)) != len(slate):
        raise InvalidInputError(f"slate has duplicates: {slate}")
    logits = np.append(user.utilities[np.asarray(slate)] / tau, u_noclick / tau)
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    pick = int(rng.choice(len(slate) + 1, p=p))
    return [i == pick for i in range(len(slate))]


def choice_probabilities(user: UserState, slate: list[int], tau: float,
                         u_noclick: float) -> np.ndarray:
    logits = np.append(user.utilities[np.asarray(slate)] / tau, u_noclick / tau)
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def run_logging_policy(world: World, n_sessions: int, seed: int) -> list[SlateInteraction]:
    """Generate logs with a uniform-random agent over the training mixture."""
    if n_sessions < 1:
        raise InvalidInputError("n_sessions must be >= 1")
    cfg = world.config
    logs = []
    for ep in range(n_sessions):
        rng = substream(seed, "log-episode", ep)
        user = world.sample_user(cfg.train_mixture, rng)
        steps = []
        for _ in range(cfg.session_length):
            slate = list(rng.choice(cfg.n_items, size=cfg.slate_size, replace=False))
            slate = [int(i) for i in slate]
            steps.append(SlateStep(slate, user_choice(user, slate, cfg.tau,
                                                     cfg.u_noclick, rng)))
        logs.append(SlateInteraction(user_id=ep, steps=steps, user_type=user.user_type))
    return logs


@dataclass
class OnlineReport:
    ctr: float                     # percent of steps with a click
    arp: float                     # mean slate popularity, in [0, 1]
    session_click_rate: float      # percent of sessions with >= 1 click
    per_type: dict[int, dict[str, float]]
    n_sessions: int
    n_steps: int


def run_online_eval(world: World, agent, n_sessions: int, eval_mixture,
                    pop: PopularityTable, seed: int) -> OnlineReport:
    """Evaluate an agent (clicked-history -> slate) against the simulator.

    ARP is computed against the supplied popularity table (from the logged
    training data, not the world's internals).
    """
    cfg = world.config
    total_steps = 0
    total_clicks = 0
    arp_sum = 0.0
    sessions_with_click = 0
    per_type: dict[int, dict[str, float]] = {}
    for ep in range(n_sessions):
        rng = substream(seed, "eval-episode", ep)
        user = world.sample_user(eval_mixture, rng)
        stats = per_type.setdefault(user.user_type,
                                    {"steps": 0, "clicks": 0, "arp_sum": 0.0, "sessions": 0})
        stats["sessions"] += 1
        history: list[int] = []
        clicked_any = False
        for _ in range(cfg.session_length):
            slate = [int(i) for i in agent(list(history))]
            if len(slate) != cfg.slate_size or len(set(slate)) != cfg.slate_size:
                raise ContractViolationError(
                    f"agent returned a bad slate of size {len(slate)} "
                    f"(expected {cfg.slate_size} distinct items)")
            response = user_choice(user, slate, cfg.tau, cfg.u_noclick, rng)
            slate_pop = float(np.mean([pop.pop_of(i) for i in slate]))
            arp_sum += slate_pop
            stats["arp_sum"] += slate_pop
            total_steps += 1
            stats["steps"] += 1
            if any(response):
                total_clicks += 1
                stats["clicks"] += 1
                clicked_any = True
                history.append(slate[response.index(True)])
        if clicked_any:
            sessions_with_click += 1
    per_type_out = {
        t: {"ctr": 100.0 * s["clicks"] / s["steps"],
            "arp": s["arp_sum"] / s["steps"],
            "sessions": s["sessions"]}
        for t, s in sorted(per_type.items())
    }
    return OnlineReport(
        ctr=100.0 * total_clicks / total_steps,
        arp=arp_sum / total_steps,
        session_click_rate=100.0 * sessions_with_click / n_sessions,
        per_type=per_type_out,
        n_sessions=n_sessions,
        n_steps=total_steps,
    )
