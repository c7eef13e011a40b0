"""Click-log ingestion, filtering, splitting, popularity stats, bucketing,
and slate-log construction for response-model training."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import DataError, EmptyDatasetError, FormatError, InvalidInputError
from .rng import substream


@dataclass
class ClickSession:
    session_id: int
    items: list[int]
    timestamps: list[int]
    user_id: int | None = None

    def __post_init__(self):
        if len(self.items) < 1:
            raise InvalidInputError(f"session {self.session_id} is empty")
        if len(self.items) != len(self.timestamps):
            raise InvalidInputError(f"session {self.session_id}: items/timestamps length mismatch")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise InvalidInputError(f"session {self.session_id}: timestamps decrease")

    @property
    def end_time(self) -> int:
        return self.timestamps[-1]


@dataclass
class SlateStep:
    slate: list[int]
    clicks: list[bool]

    def __post_init__(self):
        if len(self.slate) != len(set(self.slate)):
            raise InvalidInputError(f"slate has duplicate items: {self.slate}")
        if len(self.clicks) != len(self.slate):
            raise InvalidInputError("response length differs from slate length")


@dataclass
class SlateInteraction:
    user_id: int
    steps: list[SlateStep]
    user_type: int | None = None

    def clicked_items(self) -> list[int]:
        """Clicked items in step order (at most one per step in this package)."""
        out = []
        for step in self.steps:
            for item, clicked in zip(step.slate, step.clicks):
                if clicked:
                    out.append(item)
        return out


@dataclass
class PopularityTable:
    counts: np.ndarray  # per-item click counts over the training data

    @property
    def pop(self) -> np.ndarray:
        mx = self.counts.max()
        if mx <= 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts.astype(np.float64) / float(mx)

    def pop_of(self, item: int) -> float:
        if not (0 <= item < len(self.counts)):
            raise IndexError(f"item {item} outside catalog of {len(self.counts)}")
        return float(self.pop[item])


@dataclass
class DatasetSplit:
    train: list[ClickSession]
    valid: list[ClickSession]
    test: list[ClickSession]


@dataclass
class Catalog:
    """Dense re-indexing produced by filter_sessions."""
    orig_to_dense: dict[int, int]
    dense_to_orig: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.dense_to_orig:
            self.dense_to_orig = [0] * len(self.orig_to_dense)
            for orig, dense in self.orig_to_dense.items():
                self.dense_to_orig[dense] = orig

    @property
    def n_items(self) -> int:
        return len(self.orig_to_dense)


# -- ingestion ------------------------------------------------------------


def _parse_timestamp(raw: str, iso: bool, line_no: int) -> int:
    try:
        if iso:
            return int(datetime.fromisoformat(raw).timestamp())
        return int(raw)
    except ValueError as e:
        raise FormatError(f"line {line_no}: unparseable timestamp {raw!r}") from e


def parse_click_log(path, iso_timestamps: bool = False) -> list[ClickSession]:
    """Read a `session_id,item_id,timestamp` CSV into sessions.

    Rows are grouped by session, sorted by timestamp (stable, so original
    row order breaks ties); duplicate consecutive clicks are preserved.
    """
    rows: dict[int, list[tuple[int, int, int]]] = {}
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot read click log: {e}") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError("empty file")
        if [h.strip() for h in header] != ["session_id", "item_id", "timestamp"]:
            raise FormatError(f"line 1: expected header session_id,item_id,timestamp, got {header}")
        n = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"line {line_no}: expected 3 columns, got {len(row)}")
            try:
                sid = int(row[0])
                item = int(row[1])
            except ValueError as e:
                raise FormatError(f"line {line_no}: unparseable id in {row!r}") from e
            ts = _parse_timestamp(row[2], iso_timestamps, line_no)
            rows.setdefault(sid, []).append((ts, n, item))
            n += 1
    if not rows:
        raise FormatError("no data rows in file")
    sessions = []
    for sid in sorted(rows):
        events = sorted(rows[sid])  # by (timestamp, original row order)
        sessions.append(ClickSession(sid, [e[2] for e in events], [e[0] for e in events]))
    return sessions


def filter_sessions(sessions: list[ClickSession], top_m: int, min_len: int,
                    max_len: int) -> tuple[list[ClickSession], Catalog]:
    """Keep clicks on the top_m items, then sessions within the length band.

    Item ids are densely re-indexed 0..m-1 (ascending original id) and the
    mapping is returned alongside the filtered sessions.
    """
    if top_m < 1 or not (1 <= min_len <= max_len):
        raise InvalidInputError(f"bad filter config top_m={top_m}, len=[{min_len},{max_len}]")
    counts: dict[int, int] = {}
    for s in sessions:
        for item in s.items:
            counts[item] = counts.get(item, 0) + 1
    # most-clicked first, ties broken by smaller item id
    ranked = sorted(counts, key=lambda i: (-counts[i], i))[:top_m]
    kept_ids = sorted(ranked)
    catalog = Catalog({orig: dense for dense, orig in enumerate(kept_ids)})
    keep = set(kept_ids)
    out = []
    for s in sessions:
        ev = [(i, t) for i, t in zip(s.items, s.timestamps) if i in keep]
        if min_len <= len(ev) <= max_len:
            out.append(ClickSession(s.session_id,
                                    [catalog.orig_to_dense[i] for i, _ in ev],
                                    [t for _, t in ev], s.user_id))
    if not out:
        raise EmptyDatasetError("all sessions removed by filtering")
    return out, catalog


def chronological_split(sessions: list[ClickSession],
                        fractions: tuple[float, float, float]) -> DatasetSplit:
    f_train, f_valid, f_test = fractions
    if min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidInputError(f"fractions must be positive and sum to 1, got {fractions}")
    if len(sessions) < 3:
        raise InvalidInputError("need at least 3 sessions to split")
    ordered = sorted(sessions, key=lambda s: (s.end_time, s.session_id))
    n = len(ordered)
    n_train = int(round(f_train * n))
    n_valid = int(round(f_valid * n))
    n_train = min(max(n_train, 1), n - 2)
    n_valid = min(max(n_valid, 1), n - n_train - 1)
    return DatasetSplit(ordered[:n_train],
                        ordered[n_train:n_train + n_valid],
                        ordered[n_train + n_valid:])


# -- statistics -----------------------------------------------------------


def popularity_stats(train_sessions: list[ClickSession], n_items: int) -> PopularityTable:
    if not train_sessions:
        raise EmptyDatasetError("no training sessions")
    counts = np.zeros(n_items, dtype=np.int64)
    for s in train_sessions:
        for item in s.items:
            counts[item] += 1
    return PopularityTable(counts)


def bucket_by_target_popularity(test_sessions: list[ClickSession],
                                pop: PopularityTable):
    """Split test sessions into (long-tail, mid, head) by target popularity.

    Sorted ascending by pop(last item) with session_id as tie-break; sizes
    differ by at most one, remainder going to long-tail then mid.
    """
    ordered = sorted(test_sessions,
                     key=lambda s: (pop.pop_of(s.items[-1]), s.session_id))
    n = len(ordered)
    base, rem = divmod(n, 3)
    sizes = [base + (1 if rem >= 1 else 0), base + (1 if rem >= 2 else 0), base]
    long_tail = ordered[:sizes[0]]
    mid = ordered[sizes[0]:sizes[0] + sizes[1]]
    head = ordered[sizes[0] + sizes[1]:]
    return long_tail, mid, head


# -- slate-log construction ----------------------------------------------


def build_slate_log(sessions: list[ClickSession], K: int, pop: PopularityTable,
                    seed: int) -> list[SlateInteraction]:
    """Construct K-item slates around each observed click for SCM training.

    Each timestep t >= 2 of each session yields one slate: the clicked item
    plus K-1 popularity-proportional negatives (excluding the session's
    items when enough candidates remain); exactly the clicked item is
    marked true; slate order is shuffled.
    """
    m = len(pop.counts)
    if K < 2:
        raise InvalidInputError(f"slate size K={K} must be >= 2")
    if m < K:
        raise InvalidInputError(f"catalog of {m} items cannot fill slates of {K}")
    weights = pop.counts.astype(np.float64)
    out = []
    for s in sessions:
        rng = substream(seed, "slate-log", s.session_id)
        steps = []
        for t in range(1, len(s.items)):
            clicked = s.items[t]
            negs = _sample_negatives(weights, K - 1, clicked, set(s.items), rng, m)
            slate = [clicked] + negs
            order = rng.permutation(K)
            slate = [slate[i] for i in order]
            steps.append(SlateStep(slate, [i == clicked for i in slate]))
        if steps:
            out.append(SlateInteraction(user_id=s.user_id if s.user_id is not None
                                        else s.session_id, steps=steps))
    return out


def _sample_negatives(weights: np.ndarray, n: int, clicked: int,
                      session_items: set[int], rng, m: int) -> list[int]:
    w = weights.copy()
    w[list(session_items)] = 0.0
    w[clicked] = 0.0
    if (w > 0).sum() < n:
        # not enough clicked candidates outside the session: relax to uniform
        w = np.ones(m)
        w[clicked] = 0.0
        if (w > 0).sum() < n:
            raise InvalidInputError("catalog too small to fill slate")
    p = w / w.sum()
    return [int(i) for i in rng.choice(m, size=n, replace=False, p=p)]


# -- JSONL persistence ----------------------------------------------------


def write_sessions_jsonl(sessions: list[ClickSession], path):
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(json.dumps({"session": s.session_id, "items": s.items,
                                 "timestamps": s.timestamps},
                                separators=(",", ":")) + "\n")


def read_sessions_jsonl(path) -> list[ClickSession]:
    out = []
    try:
        fh = open(path)
    except OSError as e:
        raise DataError(f"cannot read sessions file: {e}") from e
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(ClickSession(obj["session"], obj["items"],
                                        obj.get("timestamps", list(range(len(obj["items"]))))))
            except (KeyError, ValueError) as e:
                raise FormatError(f"line {line_no}: bad session record") from e
    return out


def write_slate_log_jsonl(log: list[SlateInteraction], path):
    with open(path, "w") as fh:
        for it in log:
            obj = {"user": it.user_id, "user_type": it.user_type,
                   "steps": [{"slate": st.slate, "clicks": st.clicks}
                             for st in it.steps]}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_slate_log_jsonl(path) -> list[SlateInteraction]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                steps = [SlateStep(st["slate"], [bool(c) for c in st["clicks"]])
                         for st in obj["steps"]]
                out.append(SlateInteraction(obj["user"], steps, obj.get("user_type")))
            except (KeyError, ValueError) as e:
                raise FormatError(f"line {line_no}: bad interaction record") from e
    return out
