from hypothesis import given, settings

from _factories import AS_OF, DAY, act, histories, tp, window
from mtabudget.core import UserHistory
from mtabudget.sequencing import (
    Label,
    count_unattributable,
    extract_sequences,
    filter_window,
    sequences_for_user,
)


def test_filter_window_keeps_recent_action():
    h = UserHistory.build("u1", [], [act(AS_OF - 3 * DAY)])
    assert len(filter_window(h, window()).actions) == 1


def test_filter_window_drops_old_impression():
    h = UserHistory.build("u1", [tp("A", AS_OF - 40 * DAY)])
    assert filter_window(h, window()).touch_points == ()


def test_filter_window_empty():
    assert filter_window(UserHistory("u1"), window()) == UserHistory("u1")


def test_filter_window_boundaries_inclusive():
    w = window(7, 30)
    tps = [tp("A", AS_OF - 37 * DAY), tp("B", AS_OF - 37 * DAY - 1), tp("C", AS_OF),
           tp("D", AS_OF + 1)]
    acts = [act(AS_OF - 7 * DAY), act(AS_OF - 7 * DAY - 1), act(AS_OF), act(AS_OF + 1)]
    out = filter_window(UserHistory.build("u1", tps, acts), w)
    assert [t.line_item_id for t in out.touch_points] == ["A", "C"]
    assert [a.timestamp for a in out.actions] == [AS_OF - 7 * DAY, AS_OF]


def test_one_action_record_with_both_touch_points():
    t3 = AS_OF - DAY
    h = UserHistory.build("u1", [tp("A", t3 - 5 * DAY), tp("B", t3 - DAY)], [act(t3, 70)])
    recs = extract_sequences(h, window())
    assert len(recs) == 1
    assert recs[0].label is Label.ACTION
    assert recs[0].line_items == ("A", "B")
    assert recs[0].action_value == 70 and recs[0].action_timestamp == t3
    assert recs[0].last_touch == "B"


def test_residual_sequence_without_actions():
    recs = extract_sequences(UserHistory.build("u1", [tp("A", AS_OF - DAY)]), window())
    assert [(r.label, r.line_items) for r in recs] == [(Label.NO_ACTION, ("A",))]


def test_member_costs_sum_duplicates():
    t = AS_OF - DAY
    h = UserHistory.build("u1", [tp("A", t - 30, 1), tp("A", t - 20, 2), tp("B", t - 10, 5)],
                          [act(t)])
    (rec,) = extract_sequences(h, window())
    assert rec.line_items == ("A", "B")
    assert rec.member_costs == {"A": 3, "B": 5}
    assert rec.touch_count == 3


def test_association_window_boundary_inclusive():
    t = AS_OF - DAY
    w = window(7, 30)
    h = UserHistory.build("u1", [tp("A", t - 30 * DAY), tp("B", t - 30 * DAY - 1), tp("C", t)],
                          [act(t)])
    recs = extract_sequences(filter_window(h, w), w)
    action = [r for r in recs if r.is_action]
    assert action[0].line_items == ("A", "C")
    residual = [r for r in recs if not r.is_action]
    assert residual[0].line_items == ("B",)


def test_touch_point_after_action_is_residual():
    t = AS_OF - 2 * DAY
    h = UserHistory.build("u1", [tp("A", t - 1), tp("B", t + 1)], [act(t)])
    recs = extract_sequences(h, window())
    assert [(r.label, r.line_items) for r in recs] == [
        (Label.ACTION, ("A",)), (Label.NO_ACTION, ("B",))]


def test_sequences_scoped_per_advertiser():
    t = AS_OF - DAY
    h = UserHistory.build("u1", [tp("A", t - 5, adv="x"), tp("B", t - 4, adv="y")],
                          [act(t, adv="x")])
    recs = extract_sequences(h, window())
    assert [(r.advertiser_id, r.label, r.line_items) for r in recs] == [
        ("x", Label.ACTION, ("A",)), ("y", Label.NO_ACTION, ("B",))]


def test_count_unattributable():
    w = window()
    t = AS_OF - DAY
    assert count_unattributable(UserHistory.build("u1", [], [act(t)]), w) == 1
    assert count_unattributable(UserHistory.build("u1", [tp("A", t - 10)], [act(t)]), w) == 0
    two = UserHistory.build("u1", [tp("A", t - 10)], [act(t), act(t - 31 * DAY)])
    assert count_unattributable(two, window(40, 30)) == 1


# --- brute-force oracle ------------------------------------------------------


def brute_force(history, w):
    """Recompute the records straight from the definitions, one window test
    per (action, touch-point) pair."""
    h = filter_window(history, w)
    out = []
    for adv in sorted({e.advertiser_id for e in (*h.touch_points, *h.actions)}):
        tps = [t for t in h.touch_points if t.advertiser_id == adv]
        used = set()
        for a in (x for x in h.actions if x.advertiser_id == adv):
            members = [i for i, t in enumerate(tps)
                       if a.timestamp - w.association_seconds <= t.timestamp <= a.timestamp]
            if not members:
                continue
            costs = {}
            for i in members:
                costs[tps[i].line_item_id] = costs.get(tps[i].line_item_id, 0) + tps[i].cost
            out.append(("action", adv, tuple(sorted(costs)), a.value, costs))
            used.update(members)
        rest = [t for i, t in enumerate(tps) if i not in used]
        if rest:
            costs = {}
            for t in rest:
                costs[t.line_item_id] = costs.get(t.line_item_id, 0) + t.cost
            out.append(("no_action", adv, tuple(sorted(costs)), None, costs))
    return out


@settings(max_examples=300, deadline=None)
@given(histories(advertisers=("x", "y")))
def test_extract_matches_brute_force(h):
    w = window(7, 10)
    recs, _ = sequences_for_user(h, w)
    got = [(r.label.value, r.advertiser_id, r.line_items, r.action_value, r.member_costs)
           for r in recs]
    assert got == brute_force(h, w)


@settings(max_examples=300, deadline=None)
@given(histories())
def test_record_invariants(h):
    w = window(7, 10)
    filtered = filter_window(h, w)
    recs, bare = sequences_for_user(h, w)
    # every in-window action is either a record or unattributable
    assert sum(r.is_action for r in recs) + bare == len(filtered.actions)
    raw = sum(t.cost for t in filtered.touch_points)
    claimed = sum(sum(r.claimed_costs.values()) for r in recs)
    member = sum(sum(r.member_costs.values()) for r in recs)
    assert claimed == raw
    assert member >= raw
    windows = [(a.timestamp - w.association_seconds, a.timestamp) for a in filtered.actions]
    overlap = any(
        sum(lo <= t.timestamp <= hi for lo, hi in windows) > 1 for t in filtered.touch_points
    )
    if not overlap:
        assert member == raw
    for r in recs:
        assert r.line_items
        assert set(r.member_costs) <= set(r.line_items)
        assert set(r.claimed_costs) <= set(r.line_items)
        assert len(r.line_items) <= r.touch_count
        if r.is_action:
            assert r.action_value is not None and r.action_value >= 0
            assert r.action_timestamp is not None
    assert sum(1 for r in recs if not r.is_action) <= 1
