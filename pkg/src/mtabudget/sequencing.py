"""Window filtering and extraction of labeled touch-point sequences."""

from __future__ import annotations

import enum
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Sequence

from .core import ActionEvent, TouchPoint, UserHistory, WindowConfig


class Label(str, enum.Enum):
    ACTION = "action"
    NO_ACTION = "no_action"


@dataclass(frozen=True, slots=True)
class SequenceRecord:
    """Deduplicated line items of one touch-point sequence.

    ``member_costs`` sums every contributing touch-point. ``claimed_costs``
    only counts touch-points not already claimed by an earlier record of the
    same user, so summing it across records never double counts spend when
    action windows overlap. ``last_touch`` is the line item of the latest
    contributing touch-point.
    """

    user_id: str
    advertiser_id: str
    line_items: tuple[str, ...]
    label: Label
    action_value: int | None = None
    action_timestamp: int | None = None
    member_costs: dict[str, int] = field(default_factory=dict)
    claimed_costs: dict[str, int] = field(default_factory=dict)
    last_touch: str | None = None
    touch_count: int = 0

    @property
    def is_action(self) -> bool:
        return self.label is Label.ACTION


def filter_window(history: UserHistory, w: WindowConfig) -> UserHistory:
    """Keep actions in ``[as_of - t_action, as_of]`` and touch-points in
    ``[as_of - (t_action + t_association), as_of]``, both ends inclusive."""
    act_lo = w.as_of - w.action_seconds
    tp_lo = act_lo - w.association_seconds
    tps = tuple(tp for tp in history.touch_points if tp_lo <= tp.timestamp <= w.as_of)
    acts = tuple(a for a in history.actions if act_lo <= a.timestamp <= w.as_of)
    return UserHistory(history.user_id, tps, acts)


def _by_advertiser(history: UserHistory):
    tps: dict[str, list[TouchPoint]] = {}
    acts: dict[str, list[ActionEvent]] = {}
    for tp in history.touch_points:
        tps.setdefault(tp.advertiser_id, []).append(tp)
    for a in history.actions:
        acts.setdefault(a.advertiser_id, []).append(a)
    return tps, acts


def _record(
    user_id: str,
    advertiser_id: str,
    members: Sequence[TouchPoint],
    claimed: Sequence[TouchPoint],
    label: Label,
    action: ActionEvent | None = None,
) -> SequenceRecord:
    member_costs: dict[str, int] = {}
    for tp in members:
        member_costs[tp.line_item_id] = member_costs.get(tp.line_item_id, 0) + tp.cost
    claimed_costs: dict[str, int] = {}
    for tp in claimed:
        claimed_costs[tp.line_item_id] = claimed_costs.get(tp.line_item_id, 0) + tp.cost
    return SequenceRecord(
        user_id=user_id,
        advertiser_id=advertiser_id,
        line_items=tuple(sorted(member_costs)),
        label=label,
        action_value=action.value if action is not None else None,
        action_timestamp=action.timestamp if action is not None else None,
        member_costs=member_costs,
        claimed_costs=claimed_costs,
        last_touch=members[-1].line_item_id,
        touch_count=len(members),
    )


def _extract(history: UserHistory, w: WindowConfig) -> tuple[list[SequenceRecord], int]:
    records: list[SequenceRecord] = []
    unattributable = 0
    assoc = w.association_seconds
    tps_by_adv, acts_by_adv = _by_advertiser(history)
    for adv in sorted(set(tps_by_adv) | set(acts_by_adv)):
        tps = tps_by_adv.get(adv, [])
        times = [tp.timestamp for tp in tps]
        covered = [False] * len(tps)
        for action in acts_by_adv.get(adv, ()):
            lo = bisect_left(times, action.timestamp - assoc)
            hi = bisect_right(times, action.timestamp)
            if lo == hi:
                unattributable += 1
                continue
            claimed = [tps[i] for i in range(lo, hi) if not covered[i]]
            for i in range(lo, hi):
                covered[i] = True
            records.append(_record(history.user_id, adv, tps[lo:hi], claimed, Label.ACTION, action))
        residual = [tp for tp, c in zip(tps, covered) if not c]
        if residual:
            records.append(_record(history.user_id, adv, residual, residual, Label.NO_ACTION))
    return records, unattributable


def extract_sequences(history: UserHistory, w: WindowConfig) -> list[SequenceRecord]:
    """Labeled sequence records of one window-filtered user history.

    One action record per action with at least one same-advertiser touch-point
    in ``[action.ts - t_association, action.ts]``; one no-action record per
    advertiser for touch-points outside every action window. Records come out
    grouped by advertiser id, action records in action order first.
    """
    return _extract(history, w)[0]


def count_unattributable(history: UserHistory, w: WindowConfig) -> int:
    """Number of actions with no touch-point in their association window."""
    return _extract(history, w)[1]


def sequences_for_user(history: UserHistory, w: WindowConfig) -> tuple[list[SequenceRecord], int]:
    """Filter then extract; returns the records and the unattributable count."""
    return _extract(filter_window(history, w), w)
