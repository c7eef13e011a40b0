"""Offline metrics and bucketed reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import ClickSession, PopularityTable, bucket_by_target_popularity
from .errors import InvalidInputError
from .nn import ParamStore
from .sr import SRConfig, encode_session_batch, score_items


def recall_at_k(ranked: list[int], target: int, K: int) -> int:
    if len(ranked) != len(set(ranked)):
        raise InvalidInputError("ranked list has duplicates")
    return 1 if target in ranked[:K] else 0


def mrr_at_k(ranked: list[int], target: int, K: int) -> float:
    if len(ranked) != len(set(ranked)):
        raise InvalidInputError("ranked list has duplicates")
    for r, item in enumerate(ranked[:K], start=1):
        if item == target:
            return 1.0 / r
    return 0.0


def arp(recommendation_lists: list[list[int]], pop: PopularityTable) -> float:
    if not recommendation_lists:
        raise InvalidInputError("no recommendation lists")
    return float(np.mean([np.mean([pop.pop_of(i) for i in lst])
                          for lst in recommendation_lists]))


@dataclass
class ScopeMetrics:
    recall: float
    mrr: float
    arp: float
    n: int


@dataclass
class OfflineReport:
    K: int
    overall: ScopeMetrics
    buckets: dict[str, ScopeMetrics] = field(default_factory=dict)
    skipped_short: int = 0

    def as_dict(self) -> dict:
        def conv(s: ScopeMetrics):
            return {"recall": s.recall, "mrr": s.mrr, "arp": s.arp, "n": s.n}
        return {"K": self.K, "overall": conv(self.overall),
                "buckets": {k: conv(v) for k, v in sorted(self.buckets.items())},
                "skipped_short": self.skipped_short}


def _evaluate_sessions(store: ParamStore, cfg: SRConfig,
                       sessions: list[ClickSession], K: int,
                       pop: PopularityTable) -> ScopeMetrics:
    prefixes = [s.items[:-1] for s in sessions]
    targets = [s.items[-1] for s in sessions]
    recalls, mrrs, rec_lists = [], [], []
    m = store["emb"].data.shape[0]
    with ad.no_grad():
        for lo in range(0, len(prefixes), 512):
            chunk = prefixes[lo:lo + 512]
            scores = score_items(encode_session_batch(chunk, store), store, cfg).data
            for row, target in zip(scores, targets[lo:lo + 512]):
                order = np.lexsort((np.arange(m), -row))
                topk = [int(i) for i in order[:K]]
                recalls.append(recall_at_k(topk, target, K))
                mrrs.append(mrr_at_k(topk, target, K))
                rec_lists.append(topk)
    return ScopeMetrics(float(np.mean(recalls)), float(np.mean(mrrs)),
                        arp(rec_lists, pop), len(sessions))


def evaluate_offline(store: ParamStore, cfg: SRConfig,
                     test_sessions: list[ClickSession], K: int,
                     pop: PopularityTable) -> OfflineReport:
    """Next-item evaluation: rank all items for each session's prefix (all
    but the last item) against the last item, overall and per popularity
    bucket of the target."""
    usable = [s for s in test_sessions if len(s.items) >= 2]
    skipped = len(test_sessions) - len(usable)
    if not usable:
        raise InvalidInputError("no test sessions of length >= 2")
    overall = _evaluate_sessions(store, cfg, usable, K, pop)
    long_tail, mid, head = bucket_by_target_popularity(usable, pop)
    buckets = {}
    for name, group in (("long_tail", long_tail), ("mid", mid), ("head", head)):
        if group:
            buckets[name] = _evaluate_sessions(store, cfg, group, K, pop)
    return OfflineReport(K, overall, buckets, skipped)


def format_report_txt(report_dict: dict, title: str) -> str:
    """Human-readable table; recall/MRR/CTR are x100 with 2 decimals."""
    lines = [title, "=" * len(title)]

    def fmt_offline_scope(name: str, s: dict, K):
        lines.append(f"  {name:<10} R@{K}={100 * s['recall']:6.2f}  "
                     f"MRR@{K}={100 * s['mrr']:6.2f}  ARP={s['arp']:.3f}  n={s['n']}")

    def fmt_model(tag: str, body: dict):
        lines.append(f"[{tag}]")
        if "overall" in body and "recall" in body.get("overall", {}):
            K = body.get("K", report_dict.get("K", "?"))
            fmt_offline_scope("overall", body["overall"], K)
            for bucket, s in sorted(body.get("buckets", {}).items()):
                fmt_offline_scope(bucket, s, K)
        if "ctr" in body:
            lines.append(f"  overall    CTR={body['ctr']:6.2f}  ARP={body['arp']:.3f}  "
                         f"session-click-rate={body['session_click_rate']:.2f}")
            for utype, s in sorted(body.get("per_type", {}).items()):
                lines.append(f"  type {utype:<5} CTR={s['ctr']:6.2f}  "
                             f"ARP={s['arp']:.3f}  sessions={s['sessions']}")

    for tag, body in sorted(report_dict.get("models", {}).items()):
        fmt_model(tag, body)
    for key in ("attempts", "kept", "skipped_clickless", "mean_length"):
        if key in report_dict:
            val = report_dict[key]
            lines.append(f"{key:>18} = {val:.2f}" if isinstance(val, float)
                         else f"{key:>18} = {val}")
    lines.append(f"config_fingerprint = {report_dict.get('config_fingerprint', '?')}"
                 f"   seed = {report_dict.get('seed', '?')}")
    return "\n".join(lines) + "\n"
