import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcasr.data import (ClickSession, PopularityTable, SlateStep,
                        bucket_by_target_popularity, build_slate_log,
                        chronological_split, filter_sessions, parse_click_log,
                        popularity_stats, read_sessions_jsonl,
                        read_slate_log_jsonl, write_sessions_jsonl,
                        write_slate_log_jsonl)
from dcasr.errors import EmptyDatasetError, FormatError, InvalidInputError


def write_csv(path, rows, header="session_id,item_id,timestamp"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


# -- parsing --------------------------------------------------------------

def test_parse_single_session(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10,100", "1,11,101", "1,12,102"])
    sessions = parse_click_log(p)
    assert len(sessions) == 1
    assert sessions[0].items == [10, 11, 12]


def test_parse_sorts_within_session(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10,105", "1,11,101", "1,12,103"])
    assert parse_click_log(p)[0].items == [11, 12, 10]


def test_parse_preserves_duplicate_clicks(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10,100", "1,10,100", "1,10,101"])
    assert parse_click_log(p)[0].items == [10, 10, 10]


def test_parse_missing_column(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10"], header="session_id,item_id")
    with pytest.raises(FormatError, match="line 1"):
        parse_click_log(p)


def test_parse_bad_timestamp_reports_line(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10,100", "1,11,oops"])
    with pytest.raises(FormatError, match="line 3"):
        parse_click_log(p)


def test_parse_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(FormatError):
        parse_click_log(p)


def test_parse_iso_timestamps(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["1,10,2020-01-01T00:00:00",
                                       "1,11,2020-01-01T00:00:05"])
    s = parse_click_log(p, iso_timestamps=True)[0]
    assert s.timestamps[1] - s.timestamps[0] == 5


# -- filtering ------------------------------------------------------------

def sessions_fixture():
    return [
        ClickSession(1, [5, 6, 7], [1, 2, 3]),
        ClickSession(2, [5, 6], [4, 5]),
        ClickSession(3, [5, 7, 8, 7], [6, 7, 8, 9]),
    ]


def test_filter_identity_when_loose():
    out, catalog = filter_sessions(sessions_fixture(), top_m=10, min_len=1, max_len=100)
    assert len(out) == 3
    # dense re-indexing is a bijection back to the original ids
    for s_orig, s_new in zip(sessions_fixture(), out):
        assert [catalog.dense_to_orig[i] for i in s_new.items] == s_orig.items


def test_filter_drops_short_sessions():
    out, _ = filter_sessions(sessions_fixture(), top_m=10, min_len=3, max_len=10)
    assert [s.session_id for s in out] == [1, 3]


def test_filter_top_m_by_count_then_id():
    # counts: 5 -> 3, 7 -> 3, 6 -> 2, 8 -> 1; top 3 keeps 5, 7 (tie on 3), then 6
    out, catalog = filter_sessions(sessions_fixture(), top_m=3, min_len=1, max_len=10)
    assert sorted(catalog.orig_to_dense) == [5, 6, 7]


def test_filter_all_removed():
    with pytest.raises(EmptyDatasetError):
        filter_sessions(sessions_fixture(), top_m=10, min_len=5, max_len=10)


def test_filter_then_refilter_is_identity():
    out1, cat1 = filter_sessions(sessions_fixture(), top_m=10, min_len=2, max_len=10)
    out2, cat2 = filter_sessions(out1, top_m=10, min_len=2, max_len=10)
    assert [s.items for s in out2] == [
        [cat2.orig_to_dense[i] for i in s.items] for s in out1]
    assert len(out1) == len(out2)


# -- splitting ------------------------------------------------------------

def test_split_counts():
    sessions = [ClickSession(i, [0], [i]) for i in range(10)]
    split = chronological_split(sessions, (0.8, 0.1, 0.1))
    assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)


def test_split_tie_by_session_id():
    sessions = [ClickSession(i, [0], [7]) for i in (3, 1, 2)]
    split = chronological_split(sessions, (0.4, 0.3, 0.3))
    assert split.train[0].session_id == 1


def test_split_chronology_invariant():
    rng = np.random.default_rng(0)
    sessions = [ClickSession(i, [0], [int(t)]) for i, t in
                enumerate(rng.integers(0, 1000, size=40))]
    split = chronological_split(sessions, (0.5, 0.25, 0.25))
    assert max(s.end_time for s in split.train) <= min(s.end_time for s in split.test)


def test_split_too_few():
    with pytest.raises(InvalidInputError):
        chronological_split([ClickSession(0, [0], [0])], (0.4, 0.3, 0.3))


# -- popularity -----------------------------------------------------------

def test_popularity_normalization():
    sessions = [ClickSession(0, [0, 0, 1], [0, 1, 2])]
    pop = popularity_stats(sessions, 3)
    assert pop.pop_of(0) == 1.0
    assert pop.pop_of(1) == 0.5
    assert pop.pop_of(2) == 0.0  # unclicked catalog item


def test_popularity_matches_full_scan():
    rng = np.random.default_rng(1)
    sessions = [ClickSession(i, list(map(int, rng.integers(0, 20, size=5))),
                             list(range(5))) for i in range(30)]
    pop = popularity_stats(sessions, 20)
    brute = np.zeros(20, dtype=int)
    for s in sessions:
        for i in s.items:
            brute[i] += 1
    np.testing.assert_array_equal(pop.counts, brute)


# -- bucketing ------------------------------------------------------------

def make_test_sessions(n, pops):
    counts = (np.asarray(pops) * 100).astype(int)
    pop = PopularityTable(counts)
    sessions = [ClickSession(i, [0, i % len(pops)], [0, 1]) for i in range(n)]
    return sessions, pop


def test_bucket_sizes_even():
    sessions, pop = make_test_sessions(9, [0.1, 0.5, 1.0])
    lt, mid, head = bucket_by_target_popularity(sessions, pop)
    assert (len(lt), len(mid), len(head)) == (3, 3, 3)


def test_bucket_remainder_to_long_tail():
    sessions, pop = make_test_sessions(10, [0.1, 0.5, 1.0])
    lt, mid, head = bucket_by_target_popularity(sessions, pop)
    assert (len(lt), len(mid), len(head)) == (4, 3, 3)


def test_bucket_tie_by_session_id():
    sessions, pop = make_test_sessions(6, [0.5])
    lt, mid, head = bucket_by_target_popularity(sessions, pop)
    assert [s.session_id for s in lt + mid + head] == list(range(6))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=3, max_value=40))
def test_bucket_partition_property(n):
    sessions, pop = make_test_sessions(n, [0.2, 0.6, 1.0])
    lt, mid, head = bucket_by_target_popularity(sessions, pop)
    sizes = sorted([len(lt), len(mid), len(head)])
    assert sizes[-1] - sizes[0] <= 1
    ids = [s.session_id for s in lt + mid + head]
    assert sorted(ids) == sorted(s.session_id for s in sessions)


# -- slate log ------------------------------------------------------------

def test_build_slate_log_basic():
    sessions = [ClickSession(0, [0, 1], [0, 1])]
    pop = PopularityTable(np.array([5, 5, 3, 2, 1]))
    log = build_slate_log(sessions, K=3, pop=pop, seed=0)
    assert len(log) == 1 and len(log[0].steps) == 1
    step = log[0].steps[0]
    assert 1 in step.slate and len(step.slate) == 3
    assert step.clicks[step.slate.index(1)] is True
    assert sum(step.clicks) == 1


def test_build_slate_log_interaction_count():
    rng = np.random.default_rng(2)
    sessions = [ClickSession(i, list(map(int, rng.integers(0, 10, size=l))),
                             list(range(l)))
                for i, l in enumerate([2, 3, 5, 4])]
    pop = PopularityTable(np.ones(10, dtype=int))
    log = build_slate_log(sessions, K=3, pop=pop, seed=1)
    assert sum(len(it.steps) for it in log) == sum(len(s.items) - 1 for s in sessions)


def test_build_slate_log_negative_distribution():
    # negatives should follow the popularity weights within 3 standard errors
    counts = np.array([0, 100, 300, 600])
    pop = PopularityTable(counts)
    sessions = [ClickSession(i, [0, 0], [0, 1]) for i in range(20000)]
    log = build_slate_log(sessions, K=2, pop=pop, seed=3)
    drawn = np.zeros(4)
    for it in log:
        for step in it.steps:
            for item, clicked in zip(step.slate, step.clicks):
                if not clicked:
                    drawn[item] += 1
    n = drawn.sum()
    p = counts / counts.sum()
    for i in (1, 2, 3):
        se = np.sqrt(p[i] * (1 - p[i]) * n)
        assert abs(drawn[i] - n * p[i]) < 3 * se


def test_build_slate_log_catalog_too_small():
    pop = PopularityTable(np.array([1, 1]))
    with pytest.raises(InvalidInputError):
        build_slate_log([ClickSession(0, [0, 1], [0, 1])], K=3, pop=pop, seed=0)


# -- JSONL round trips ----------------------------------------------------

def test_sessions_jsonl_round_trip(tmp_path):
    sessions = sessions_fixture()
    write_sessions_jsonl(sessions, tmp_path / "s.jsonl")
    back = read_sessions_jsonl(tmp_path / "s.jsonl")
    assert [(s.session_id, s.items) for s in back] == \
        [(s.session_id, s.items) for s in sessions]


def test_slate_log_jsonl_round_trip(tmp_path):
    from dcasr.data import SlateInteraction
    log = [SlateInteraction(7, [SlateStep([1, 2, 3], [False, True, False])],
                            user_type=1)]
    write_slate_log_jsonl(log, tmp_path / "o.jsonl")
    back = read_slate_log_jsonl(tmp_path / "o.jsonl")
    assert back[0].user_id == 7 and back[0].user_type == 1
    assert back[0].steps[0].slate == [1, 2, 3]
    assert back[0].steps[0].clicks == [False, True, False]
