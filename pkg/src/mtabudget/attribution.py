"""Action probabilities, attribution weights, fractional credit and ROI.

The functions here are the sequential reference path. The sharded pipeline
reuses the per-sequence primitives and must reproduce these results exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, NamedTuple, Sequence

from .core import TouchPoint
from .sequencing import SequenceRecord, sequences_for_user

INF_ROI = math.inf


class Order(str, enum.Enum):
    FIRST = "first"
    SECOND = "second"


class Method(str, enum.Enum):
    LTA = "lta"
    MTA = "mta"


class AttributionError(ValueError):
    pass


@dataclass(slots=True)
class LineItemStats:
    n_plus: int = 0
    n_minus: int = 0
    total_cost: int = 0
    weight: float = 0.0

    @property
    def cold_start(self) -> bool:
        return self.n_plus + self.n_minus == 0


@dataclass(slots=True)
class PairStats:
    n_plus: int = 0
    n_minus: int = 0


@dataclass
class WeightTable:
    advertiser_id: str
    order: Order = Order.FIRST
    items: dict[str, LineItemStats] = field(default_factory=dict)
    pairs: dict[tuple[str, str], PairStats] = field(default_factory=dict)
    n_action_sequences: int = 0
    n_no_action_sequences: int = 0

    def weights(self) -> dict[str, float]:
        return {li: s.weight for li, s in self.items.items()}

    def canonical(self) -> "WeightTable":
        """Copy with items and pairs in sorted key order."""
        return replace(
            self,
            items={k: replace(self.items[k]) for k in sorted(self.items)},
            pairs={k: replace(self.pairs[k]) for k in sorted(self.pairs)},
        )


def merge_tables(a: WeightTable, b: WeightTable) -> WeightTable:
    """Add the counts and costs of two partial tables. Weights are not merged;
    recompute them with :func:`compute_weights` after the last merge."""
    if a.advertiser_id != b.advertiser_id or a.order != b.order:
        raise AttributionError("cannot merge tables of different advertisers or orders")
    out = WeightTable(a.advertiser_id, a.order)
    for src in (a, b):
        for li, s in src.items.items():
            t = out.items.setdefault(li, LineItemStats())
            t.n_plus += s.n_plus
            t.n_minus += s.n_minus
            t.total_cost += s.total_cost
        for key, p in src.pairs.items():
            t = out.pairs.setdefault(key, PairStats())
            t.n_plus += p.n_plus
            t.n_minus += p.n_minus
    out.n_action_sequences = a.n_action_sequences + b.n_action_sequences
    out.n_no_action_sequences = a.n_no_action_sequences + b.n_no_action_sequences
    return out.canonical()


def accumulate_stats(
    records: Iterable[SequenceRecord], order: Order = Order.FIRST, advertiser_id: str | None = None
) -> WeightTable:
    """Count N+ / N- per line item (and per co-occurring pair for second
    order) and total the spend claimed by each line item."""
    order = Order(order)
    table: WeightTable | None = None
    for rec in records:
        if table is None:
            if advertiser_id is not None and rec.advertiser_id != advertiser_id:
                raise AttributionError("records span more than one advertiser")
            table = WeightTable(rec.advertiser_id, order)
        elif rec.advertiser_id != table.advertiser_id:
            raise AttributionError("records span more than one advertiser")
        add_record(table, rec)
    if table is None:
        table = WeightTable(advertiser_id or "", order)
    return table.canonical()


def add_record(table: WeightTable, rec: SequenceRecord) -> None:
    is_action = rec.is_action
    if is_action:
        table.n_action_sequences += 1
    else:
        table.n_no_action_sequences += 1
    items = table.items
    for li in rec.line_items:
        s = items.get(li)
        if s is None:
            s = items[li] = LineItemStats()
        if is_action:
            s.n_plus += 1
        else:
            s.n_minus += 1
    for li, cost in rec.claimed_costs.items():
        items[li].total_cost += cost
    if table.order is Order.SECOND:
        for key in combinations(rec.line_items, 2):
            p = table.pairs.get(key)
            if p is None:
                p = table.pairs[key] = PairStats()
            if is_action:
                p.n_plus += 1
            else:
                p.n_minus += 1


def first_order_weight(n_plus: int, n_minus: int) -> float:
    """Empirical action probability ``N+ / (N+ + N-)``; 0 for a cold start."""
    total = n_plus + n_minus
    if total == 0:
        return 0.0
    return n_plus / total


def second_order_weight(li: str, table: WeightTable, n_total_line_items: int | None = None) -> float:
    """First-order probability plus the averaged pairwise interaction term::

        w(i) = p(i) + 1 / (2 (N - 1)) * sum_{j != i} [p(i, j) - p(i) - p(j)]

    Pairs never seen together contribute nothing. Clamped below at 0. Falls
    back to the first-order weight when there are fewer than two line items.
    """
    n = len(table.items) if n_total_line_items is None else n_total_line_items
    me = table.items[li]
    p_i = first_order_weight(me.n_plus, me.n_minus)
    if n < 2:
        return p_i
    acc = 0.0
    for lj in sorted(table.items):
        if lj == li:
            continue
        pair = table.pairs.get((li, lj) if li < lj else (lj, li))
        if pair is None or pair.n_plus + pair.n_minus == 0:
            continue
        other = table.items[lj]
        p_ij = pair.n_plus / (pair.n_plus + pair.n_minus)
        acc += p_ij - p_i - first_order_weight(other.n_plus, other.n_minus)
    return max(p_i + acc / (2 * (n - 1)), 0.0)


def compute_weights(table: WeightTable, n_total_line_items: int | None = None) -> WeightTable:
    out = table.canonical()
    for li, s in out.items.items():
        if out.order is Order.SECOND:
            s.weight = second_order_weight(li, table, n_total_line_items)
        else:
            s.weight = first_order_weight(s.n_plus, s.n_minus)
    return out


class Split(NamedTuple):
    fractions: dict[str, float]
    uniform: bool = False


def attribute_action_sequence(record: SequenceRecord, weights: Mapping[str, float]) -> Split:
    """Normalize member weights into action fractions.

    Members missing from ``weights`` count as weight 0. If every member
    weight is 0 the action is split uniformly and ``uniform`` is set.
    """
    members = record.line_items
    ws = [weights.get(li, 0.0) for li in members]
    total = 0.0
    for w in ws:
        total += w
    if total <= 0.0:
        share = 1.0 / len(members)
        return Split({li: share for li in members}, True)
    return Split({li: w / total for li, w in zip(members, ws)})


def attribute_lta(touch_points: Sequence[TouchPoint]) -> dict[str, float]:
    """One-hot credit to the line item of the latest touch-point; ties on
    timestamp go to the later-ingested event."""
    if not touch_points:
        raise AttributionError("cannot attribute an empty touch-point sequence")
    last = max(touch_points, key=lambda tp: (tp.timestamp, tp.seq))
    return {last.line_item_id: 1.0}


def lta_split(record: SequenceRecord) -> Split:
    if record.last_touch is None:
        raise AttributionError("record carries no touch-points")
    return Split({record.last_touch: 1.0})


def compute_roi(total_action_value: float, total_cost: int) -> float:
    """Attributed value per unit of spend. Zero spend gives 0 when nothing was
    earned and :data:`INF_ROI` otherwise."""
    if total_cost < 0:
        raise AttributionError("negative cost")
    if total_cost == 0:
        return INF_ROI if total_action_value > 0 else 0.0
    return total_action_value / total_cost


@dataclass(slots=True)
class LineItemAttribution:
    attributed: float = 0.0
    value: float = 0.0
    cost: int = 0
    roi: float = 0.0


@dataclass
class AttributionResult:
    advertiser_id: str
    method: Method = Method.MTA
    lines: dict[str, LineItemAttribution] = field(default_factory=dict)
    n_sequences: int = 0
    uniform_splits: int = 0
    missing_weight: list[str] = field(default_factory=list)

    def roi(self) -> dict[str, float]:
        return {li: a.roi for li, a in self.lines.items()}


def finalize_result(
    advertiser_id: str,
    method: Method,
    table: WeightTable,
    attributed: Mapping[str, float],
    values: Mapping[str, float],
    n_sequences: int,
    uniform_splits: int,
) -> AttributionResult:
    """Join reduced per-line-item totals with the step-one costs."""
    result = AttributionResult(advertiser_id, Method(method), n_sequences=n_sequences,
                               uniform_splits=uniform_splits)
    keys = sorted(set(table.items) | set(attributed))
    for li in keys:
        stats = table.items.get(li)
        if stats is None:
            result.missing_weight.append(li)
        cost = stats.total_cost if stats is not None else 0
        value = values.get(li, 0.0)
        result.lines[li] = LineItemAttribution(
            attributed=attributed.get(li, 0.0),
            value=value,
            cost=cost,
            roi=compute_roi(value, cost),
        )
    return result


def attribute_records(
    records: Iterable[SequenceRecord], table: WeightTable, method: Method = Method.MTA
) -> AttributionResult:
    """Sequential attribution over the action records of one advertiser."""
    method = Method(method)
    weights = table.weights()
    fractions: dict[str, list[float]] = {}
    values: dict[str, list[float]] = {}
    n_seq = 0
    uniform = 0
    for rec in records:
        if not rec.is_action:
            continue
        if rec.advertiser_id != table.advertiser_id:
            raise AttributionError("record advertiser does not match the weight table")
        n_seq += 1
        split = lta_split(rec) if method is Method.LTA else attribute_action_sequence(rec, weights)
        uniform += split.uniform
        for li, frac in split.fractions.items():
            fractions.setdefault(li, []).append(frac)
            values.setdefault(li, []).append(frac * rec.action_value)
    return finalize_result(
        table.advertiser_id,
        method,
        table,
        {li: math.fsum(v) for li, v in fractions.items()},
        {li: math.fsum(v) for li, v in values.items()},
        n_seq,
        uniform,
    )


# --- inclusion-exclusion check ---------------------------------------------


@dataclass(frozen=True)
class InclusionExclusionReport:
    direct: float
    decomposed: float
    n_line_items: int

    @property
    def difference(self) -> float:
        return abs(self.direct - self.decomposed)


def verify_inclusion_exclusion(
    records: Sequence[SequenceRecord], max_line_items: int = 12
) -> InclusionExclusionReport:
    """Compare ``p(a) = N+ / (N+ + N-)`` with the signed sum over every
    non-empty line-item subset ``S`` of ``p(a|S) p(S)``, where a record counts
    toward ``S`` when its line items contain ``S``."""
    universe = sorted({li for rec in records for li in rec.line_items})
    if len(universe) > max_line_items:
        raise AttributionError(
            f"{len(universe)} line items exceed the enumeration bound of {max_line_items}"
        )
    total = len(records)
    if total == 0:
        return InclusionExclusionReport(0.0, 0.0, 0)
    bit = {li: 1 << i for i, li in enumerate(universe)}
    plus_masks = []
    minus_masks = []
    for rec in records:
        mask = 0
        for li in rec.line_items:
            mask |= bit[li]
        (plus_masks if rec.is_action else minus_masks).append(mask)
    direct = len(plus_masks) / total
    terms = []
    for subset in range(1, 1 << len(universe)):
        n_plus = sum(1 for m in plus_masks if m & subset == subset)
        n_minus = sum(1 for m in minus_masks if m & subset == subset)
        n_s = n_plus + n_minus
        if n_s == 0:
            continue
        sign = 1.0 if bin(subset).count("1") % 2 else -1.0
        terms.append(sign * (n_plus / n_s) * (n_s / total))
    return InclusionExclusionReport(direct, math.fsum(terms), len(universe))


def attribute_corpus(users, w, order: Order = Order.FIRST, method: Method = Method.MTA):
    """Single-threaded attribution of a whole corpus, advertiser by advertiser.

    Returns ``(weights, results, unattributable)`` keyed by advertiser id.
    """
    by_adv: dict[str, list[SequenceRecord]] = {}
    bare = 0
    for h in users:
        records, n = sequences_for_user(h, w)
        bare += n
        for rec in records:
            by_adv.setdefault(rec.advertiser_id, []).append(rec)
    weights = {}
    results = {}
    for adv in sorted(by_adv):
        table = compute_weights(accumulate_stats(by_adv[adv], order, adv))
        weights[adv] = table
        results[adv] = attribute_records(by_adv[adv], table, method)
    return weights, results, bare
