import io
import json
from collections import Counter
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import tree
from memealert.data_ingest import (DataError, ExogenousSeries, daily_returns, filter_bots,
                                   is_placeholder_user, load_activity_totals,
                                   load_exogenous_csv, load_market_csv, parse_thread_dump,
                                   write_thread_csv, write_thread_dump)


def _jsonl(rows):
    return io.StringIO("".join(json.dumps(r) + "\n" for r in rows))


def _sub(sid, author="alice", **kw):
    row = {"submission_id": sid, "title": "GME to the moon", "author_name": author, "depth": 0,
           "score_submission": 50, "upvote_ratio": 0.9,
           "time_submission": "2021-01-14T10:00:00Z", "num_comment": 0, "flair": "DD",
           "name": None, "parent_id": None, "body": "", "distinguished": None}
    row.update(kw)
    return row


def _com(sid, cid, parent, author, **kw):
    row = _sub(sid)
    row.update({"name": cid, "parent_id": parent, "author": author, "depth": 1,
                "body": "nice", "score": 3, "time_comment": "2021-01-14T10:05:00Z"})
    row.update(kw)
    return row


class TestParseThreadDump:
    def test_submission_with_three_comments(self):
        rows = [_sub("t3_a"), _com("t3_a", "t1_1", "t3_a", "b"),
                _com("t3_a", "t1_2", "t1_1", "c"), _com("t3_a", "t1_3", "t3_a", "d")]
        res = parse_thread_dump(_jsonl(rows), "GME")
        assert len(res.trees) == 1
        t = res.trees[0]
        assert len(t.nodes) == 4 and len(t.edges) == 3
        assert dict(t.edges)["t1_2"] == "t1_1"
        assert {c.message_id: c.depth for c in t.comments} == {"t1_1": 1, "t1_2": 2, "t1_3": 1}

    def test_bare_submission_row(self):
        res = parse_thread_dump(_jsonl([_sub("t3_a")]), "GME")
        assert [(len(t.nodes), len(t.edges)) for t in res.trees] == [(1, 0)]

    def test_two_submissions_five_and_zero_comments(self):
        # hand count: 1 + 5 nodes and 1 node
        rows = [_sub("t3_a"), _sub("t3_b", author="bob", time_submission="2021-01-14T11:00:00Z")]
        rows += [_com("t3_a", f"t1_{j}", "t3_a", f"u{j}") for j in range(5)]
        res = parse_thread_dump(_jsonl(rows), "GME")
        assert sorted(len(t.nodes) for t in res.trees) == [1, 6]

    def test_csv_input_without_extension_columns(self):
        text = ("title,body,name,parent_id,author_name,depth,score,score_submission,"
                "upvote_ratio,time_submission,time_comment,num_comment,flair,distinguished\n"
                "GME,,,,alice,,,12,0.9,2021-01-14T10:00:00Z,,2,DD,\n"
                "GME,hi,c1,t3_x,alice,1,4,12,0.9,2021-01-14T10:00:00Z,2021-01-14T10:02:00Z,2,DD,\n"
                "GME,yo,c2,t1_c1,alice,2,1,12,0.9,2021-01-14T10:00:00Z,2021-01-14T10:03:00Z,2,DD,\n")
        res = parse_thread_dump(io.StringIO(text), "GME")
        assert len(res.trees) == 1
        t = res.trees[0]
        assert len(t.comments) == 2
        # without an author column the commenters are unknown placeholder users
        assert all(is_placeholder_user(c.author) for c in t.comments)

    def test_malformed_line_reported_not_fatal(self):
        text = json.dumps(_sub("t3_a")) + "\n{not json\n" + json.dumps(
            _com("t3_a", "t1_1", "t3_a", "b")) + "\n"
        res = parse_thread_dump(io.StringIO(text), "GME")
        assert res.dropped == 1
        assert res.diagnostics and res.diagnostics[0].startswith("line 2:")
        assert len(res.trees[0].comments) == 1

    def test_orphan_reattached_and_counted(self):
        rows = [_sub("t3_a"), _com("t3_a", "t1_1", "t1_missing", "b")]
        res = parse_thread_dump(_jsonl(rows), "GME")
        assert res.repaired == 1
        assert res.trees[0].comments[0].parent_id == "t3_a"

    def test_parent_cycle_broken(self):
        rows = [_sub("t3_a"), _com("t3_a", "t1_1", "t1_2", "b"), _com("t3_a", "t1_2", "t1_1", "c")]
        res = parse_thread_dump(_jsonl(rows), "GME")
        t = res.trees[0]
        assert len(t.edges) == 2 and res.repaired >= 1

    def test_deleted_authors_become_distinct_placeholders(self):
        rows = [_sub("t3_a"), _com("t3_a", "t1_1", "t3_a", "[deleted]"),
                _com("t3_a", "t1_2", "t3_a", None)]
        t = parse_thread_dump(_jsonl(rows), "GME").trees[0]
        users = [c.author for c in t.comments]
        assert len(set(users)) == 2 and all(is_placeholder_user(u) for u in users)

    def test_empty_input(self):
        res = parse_thread_dump(io.StringIO(""), "GME")
        assert res.trees == [] and res.rows == 0

    def test_tree_day_is_submission_utc_date(self):
        rows = [_sub("t3_a", time_submission="2021-01-14T23:30:00-05:00")]
        assert parse_thread_dump(_jsonl(rows), "GME").trees[0].day == date(2021, 1, 15)


# random forests: parent index chosen among earlier messages (0 = root)
forest = st.lists(
    st.lists(st.tuples(st.integers(0, 50), st.sampled_from(["a", "b", "c", "d", "e"])),
             max_size=12),
    min_size=1, max_size=5)


def _build(spec):
    trees = []
    for k, comments in enumerate(spec):
        entries = []
        for j, (p, who) in enumerate(comments):
            parent = None if p % (j + 1) == 0 else f"t1_{k}_{p % (j + 1) - 1}"
            entries.append((f"t1_{k}_{j}", parent, who))
        trees.append(tree(f"t3_{k}", f"sub{k}", entries))
    return trees


def _shape(trees):
    return sorted((t.tree_id, tuple(sorted(t.edges)), tuple(sorted(
        (m.message_id, m.author, m.depth) for m in t.nodes))) for t in trees)


@settings(max_examples=60, deadline=None)
@given(forest, st.booleans())
def test_round_trip_preserves_nodes_and_edges(spec, as_csv):
    trees = _build(spec)
    buf = io.StringIO()
    (write_thread_csv if as_csv else write_thread_dump)(trees, buf)
    buf.seek(0)
    again = parse_thread_dump(buf, "GME").trees
    assert _shape(again) == _shape(trees)
    for t in again:
        assert len(t.edges) == len(t.nodes) - 1
        assert [m.depth for m in t.nodes].count(0) == 1


class TestFilterBots:
    def test_moderator_leaf_removed(self):
        t = tree("t3_a", "x", [("c1", None, "a"), ("c2", None, "b"),
                               ("c3", None, "AutoModerator", "moderator")])
        (out,) = filter_bots([t])
        assert len(out.nodes) == 3

    def test_moderator_root_drops_tree(self):
        t = tree("t3_a", "mod", [("c1", None, "a")], root_distinguished="moderator")
        assert filter_bots([t]) == []

    def test_moderator_with_children_reparented(self):
        # hand-built: root <- bot <- {k1, k2}; removing bot gives root <- {k1, k2}
        t = tree("t3_a", "x", [("bot", None, "AutoModerator", "moderator"),
                               ("k1", "bot", "a"), ("k2", "bot", "b"), ("k3", "k1", "c")])
        (out,) = filter_bots([t])
        assert len(out.nodes) == len(t.nodes) - 1
        assert len(out.edges) == len(t.edges) - 1
        parents = dict(out.edges)
        assert parents == {"k1": "t3_a", "k2": "t3_a", "k3": "k1"}
        assert {c.message_id: c.depth for c in out.comments} == {"k1": 1, "k2": 1, "k3": 2}

    @settings(max_examples=60, deadline=None)
    @given(forest, st.data())
    def test_idempotent(self, spec, data):
        trees = _build(spec)
        marked = []
        for t in trees:
            bots = data.draw(st.sets(st.sampled_from([c.message_id for c in t.comments]))
                             if t.comments else st.just(set()))
            entries = [(c.message_id, None if c.parent_id == t.tree_id else c.parent_id,
                        c.author, "moderator" if c.message_id in bots else None)
                       for c in t.comments]
            marked.append(tree(t.tree_id, t.submitter, entries))
        once = filter_bots(marked)
        assert filter_bots(once) == once
        for t in once:
            assert not any(m.is_bot for m in t.nodes)
            assert len(t.edges) == len(t.nodes) - 1


MARKET = "date,open,close,volume\n2021-01-04,99,100,1000\n2021-01-05,101,110,1500\n2021-01-06,108,99,900\n"


class TestMarket:
    def test_returns(self):
        s = load_market_csv(io.StringIO(MARKET), "GME")
        np.testing.assert_allclose(daily_returns(s), [0.10, -0.10], atol=1e-15)

    def test_two_prices(self):
        np.testing.assert_allclose(daily_returns([100, 110]), [0.10])
        np.testing.assert_array_equal(daily_returns([50, 50]), [0.0])

    def test_too_short(self):
        with pytest.raises(DataError):
            daily_returns([100])

    def test_duplicate_date_named(self):
        with pytest.raises(DataError, match="2021-01-05"):
            load_market_csv(io.StringIO(MARKET + "2021-01-05,1,1,1\n"))

    def test_bad_price_names_line(self):
        with pytest.raises(DataError, match="line 3"):
            load_market_csv(io.StringIO(MARKET.replace("101,110", "101,0")))

    def test_negative_volume(self):
        with pytest.raises(DataError, match="volume"):
            load_market_csv(io.StringIO(MARKET.replace("1500", "-1")))

    def test_weekend_gap_accepted(self):
        text = "date,open,close,volume\n2021-01-08,1,1,1\n2021-01-11,1,2,1\n"
        s = load_market_csv(io.StringIO(text))
        assert len(s) == 2 and daily_returns(s).tolist() == [1.0]

    def test_index_attach(self):
        s = load_market_csv(io.StringIO(MARKET))
        idx = {d: 0.01 for d in s.dates}
        assert s.with_market_returns(idx).market_return.tolist() == [0.01] * 3
        with pytest.raises(DataError, match="missing"):
            s.with_market_returns({})

    @given(st.floats(0.01, 1e6), st.integers(2, 40))
    def test_constant_price_zero_returns(self, p, n):
        assert np.all(daily_returns([p] * n) == 0.0)


def test_exogenous_outage_flag():
    text = ("date,outage_reports,subscriber_rank,subscribers,avg_user_rank\n"
            "2021-01-04,0,3,100,50\n2021-01-05,12,2,120,40\n")
    exo = load_exogenous_csv(io.StringIO(text))
    assert isinstance(exo, ExogenousSeries)
    assert exo.outage_flag.tolist() == [0.0, 1.0]
    assert exo.as_dict()["outage_flag"][date(2021, 1, 5)] == 1.0


def test_exogenous_rank_below_one_rejected():
    text = "date,outage_reports,subscriber_rank,subscribers,avg_user_rank\n2021-01-04,0,0,1,1\n"
    with pytest.raises(DataError, match="rank"):
        load_exogenous_csv(io.StringIO(text))


def test_activity_totals():
    text = "date,total_submissions,total_users\n2021-01-04,10,20\n"
    assert load_activity_totals(io.StringIO(text)) == {date(2021, 1, 4): (10, 20)}


def test_comment_count_consistency_with_activity():
    from memealert.alert_engine import daily_activity
    trees = _build([[(0, "a"), (1, "b")], [], [(0, "c")]])
    acts = daily_activity({trees[0].day: trees}, {trees[0].day: (100, 100)}, "GME")
    assert acts[0].ticker_comments == sum(len(t.nodes) - 1 for t in trees) == 3
    assert Counter(len(t.nodes) for t in trees) == Counter({3: 1, 1: 1, 2: 1})
