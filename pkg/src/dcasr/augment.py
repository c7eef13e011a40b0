"""Counterfactual session synthesis and recommender retraining.

For each attempt a source interaction is drawn from the observed log; the
first clicked item seeds a counterfactual session, diffusion proposes a
slate at every remaining timestep conditioned on the growing counterfactual
prefix, and the response model decides what (if anything) gets clicked.
Kept sessions retrain the recommender together with the observed ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import autodiff as ad
from .data import ClickSession, SlateInteraction
from .diffusion import (DiffusionModel, DiffusionSchedule, retrieve_slate,
                        sample_next_item_embedding)
from .errors import EmptyDatasetError, FormatError, InvalidInputError
from .nn import ParamStore
from .rng import substream
from .scm import generate_response, response_probabilities, sample_confounder, update_interest
from .sr import SRConfig, train_sr


@dataclass
class AugmentConfig:
    n_attempts: int
    guidance_w: float = 2.0
    slate_size: int = 3
    min_length: int = 2
    beta_mode: str = "per-session"   # or "per-step"
    seed: int = 0

    def __post_init__(self):
        if self.n_attempts < 1 or self.slate_size < 1 or self.min_length < 2:
            raise InvalidInputError("n_attempts >= 1, K >= 1, min length >= 2 required")
        if self.beta_mode not in ("per-session", "per-step"):
            raise InvalidInputError(f"unknown beta sampling mode {self.beta_mode!r}")


@dataclass
class CounterfactualSession:
    user_id: int
    items: list[int]
    source_index: int
    start_step: int            # d': first clicked step in the source
    slates: list[list[int]] = field(default_factory=list)
    responses: list[list[bool]] = field(default_factory=list)


@dataclass
class SynthesisResult:
    sessions: list[CounterfactualSession]
    attempts: int
    skipped_clickless: int


def _first_click(interaction: SlateInteraction):
    for step_idx, step in enumerate(interaction.steps):
        if any(step.clicks):
            item = step.slate[step.clicks.index(True)]
            return step_idx, item
    return None


def synthesize_counterfactuals(observed: list[SlateInteraction],
                               model: DiffusionModel, sched: DiffusionSchedule,
                               scm_store: ParamStore,
                               config: AugmentConfig) -> SynthesisResult:
    if not observed:
        raise EmptyDatasetError("observed log is empty")
    emb = model.store["emb"].data
    kept: list[CounterfactualSession] = []
    skipped = 0
    for attempt in range(config.n_attempts):
        rng = substream(config.seed, "augment-attempt", attempt)
        src_idx = int(rng.integers(0, len(observed)))
        source = observed[src_idx]
        first = _first_click(source)
        if first is None:
            skipped += 1
            continue
        d_prime, seed_item = first
        s_c = [seed_item]
        slates: list[list[int]] = []
        responses: list[list[bool]] = []
        beta_hat = sample_confounder(scm_store, rng)
        with ad.no_grad():
            h = update_interest(scm_store["h0"], [seed_item], scm_store)
        for j in range(d_prime + 1, len(source.steps)):
            if config.beta_mode == "per-step":
                beta_hat = sample_confounder(scm_store, rng)
            e0 = sample_next_item_embedding(s_c, model, sched, config.guidance_w, rng)
            slate = retrieve_slate(e0, emb, config.slate_size, exclude=set(s_c))
            M = sum(source.steps[j].clicks)
            resp = generate_response(h.data, slate, beta_hat, M, scm_store)
            slates.append(slate)
            responses.append(resp)
            clicked = [i for i, c in zip(slate, resp) if c]
            if clicked:
                probs = response_probabilities(h.data, slate, beta_hat, scm_store)
                best = max(clicked, key=lambda i: (probs[slate.index(i)], -slate.index(i)))
                s_c.append(best)
                with ad.no_grad():
                    h = update_interest(h, clicked, scm_store)
        if len(s_c) >= config.min_length:
            kept.append(CounterfactualSession(source.user_id, s_c, src_idx,
                                              d_prime, slates, responses))
    return SynthesisResult(kept, config.n_attempts, skipped)


def observed_click_sessions(observed: list[SlateInteraction]) -> list[ClickSession]:
    """Observed interactions as click sessions (clicked items in step order)."""
    out = []
    for idx, inter in enumerate(observed):
        items = inter.clicked_items()
        if items:
            out.append(ClickSession(session_id=idx, items=items,
                                    timestamps=list(range(len(items))),
                                    user_id=inter.user_id))
    return out


def counterfactual_click_sessions(result: SynthesisResult,
                                  id_offset: int) -> list[ClickSession]:
    return [ClickSession(session_id=id_offset + i, items=cs.items,
                         timestamps=list(range(len(cs.items))), user_id=cs.user_id)
            for i, cs in enumerate(result.sessions)]


def retrain_with_counterfactuals(observed: list[SlateInteraction],
                                 result: SynthesisResult | None,
                                 n_items: int, sr_config: SRConfig, seed: int,
                                 valid_sessions=None) -> ParamStore:
    """Train the recommender on observed plus counterfactual sessions."""
    sessions = observed_click_sessions(observed)
    if result is not None:
        sessions = sessions + counterfactual_click_sessions(result, len(sessions))
    return train_sr(sessions, n_items, sr_config, seed, valid_sessions=valid_sessions)


# -- provenance -----------------------------------------------------------


def check_provenance(cs: CounterfactualSession,
                     observed: list[SlateInteraction]) -> list[str]:
    """Audit one counterfactual session; returns a list of violations."""
    problems = []
    if not (0 <= cs.source_index < len(observed)):
        return [f"source index {cs.source_index} out of range"]
    source = observed[cs.source_index]
    if not (0 <= cs.start_step < len(source.steps)):
        problems.append(f"start step {cs.start_step} out of range")
        return problems
    step = source.steps[cs.start_step]
    clicked_in_source = [i for i, c in zip(step.slate, step.clicks) if c]
    if not cs.items:
        problems.append("empty item sequence")
        return problems
    if cs.items[0] not in clicked_in_source:
        problems.append(f"seed item {cs.items[0]} was not clicked in the source step")
    if len(cs.items) != len(set(cs.items)):
        problems.append("item repeats within the counterfactual session")
    if len(cs.items) > len(source.steps) - cs.start_step:
        problems.append("session longer than the remaining source steps")
    appended = cs.items[1:]
    pos = 0
    for slate, resp in zip(cs.slates, cs.responses):
        clicked = [i for i, c in zip(slate, resp) if c]
        if clicked:
            if pos >= len(appended):
                problems.append("clicked step without a matching appended item")
                break
            if appended[pos] not in clicked:
                problems.append(f"appended item {appended[pos]} not marked clicked in its slate")
            if appended[pos] not in slate:
                problems.append(f"appended item {appended[pos]} not in its slate")
            pos += 1
    if pos != len(appended):
        problems.append("appended items without matching clicked steps")
    return problems


# -- persistence ----------------------------------------------------------


def write_counterfactuals_jsonl(result: SynthesisResult, path):
    with open(path, "w") as fh:
        for cs in result.sessions:
            obj = {"user": cs.user_id, "items": cs.items,
                   "source": cs.source_index, "start_step": cs.start_step,
                   "slates": cs.slates, "responses": cs.responses}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_counterfactuals_jsonl(path) -> list[CounterfactualSession]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(CounterfactualSession(
                    obj["user"], obj["items"], obj["source"], obj["start_step"],
                    obj["slates"], [[bool(c) for c in r] for r in obj["responses"]]))
            except (KeyError, ValueError) as e:
                raise FormatError(f"line {line_no}: bad counterfactual record") from e
    return out
