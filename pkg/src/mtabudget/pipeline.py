"""Two-step sharded attribution dataflow.

Step one maps each user to ``Step1Emit`` records keyed by line item and
reduces them into counts and costs, from which weights are computed. Step two
maps only action sequences to ``Step2Emit`` records carrying fractional credit
and reduces them into attributed totals and ROI.

Reduction is exact: counts and money are integers and fractional credit is
accumulated with :class:`ExactSum`, so any shard count and any merge order
produce bit-identical tables.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Mapping, Sequence

from .attribution import (
    AttributionResult,
    LineItemStats,
    Method,
    Order,
    PairStats,
    WeightTable,
    attribute_action_sequence,
    compute_weights,
    finalize_result,
    lta_split,
)
from .core import UserHistory, WindowConfig
from .sequencing import sequences_for_user

logger = logging.getLogger(__name__)

_SCALE_BITS = 1074


class ExactSum:
    """Order-independent float accumulator.

    Every finite double is an integer multiple of ``2**-1074``, so scaling by
    ``2**1074`` turns float addition into exact integer addition.
    """

    __slots__ = ("_n",)

    def __init__(self, n: int = 0) -> None:
        self._n = n

    def add(self, x: float) -> None:
        num, den = x.as_integer_ratio()
        self._n += num << (_SCALE_BITS - den.bit_length() + 1)

    def merge(self, other: "ExactSum") -> "ExactSum":
        return ExactSum(self._n + other._n)

    def __float__(self) -> float:
        return self._n / (1 << _SCALE_BITS)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ExactSum) and other._n == self._n

    def __repr__(self) -> str:
        return f"ExactSum({float(self)!r})"


class PipelineError(RuntimeError):
    def __init__(self, shard: int, cause: BaseException) -> None:
        super().__init__(f"shard {shard} failed: {cause!r}")
        self.shard = shard
        self.cause = cause


@dataclass(frozen=True, slots=True)
class Step1Emit:
    advertiser_id: str
    key: str
    cost: int
    is_action_seq: int
    is_no_action_seq: int


@dataclass(frozen=True, slots=True)
class Step1PairEmit:
    advertiser_id: str
    key: tuple[str, str]
    is_action_seq: int
    is_no_action_seq: int


@dataclass(frozen=True, slots=True)
class Step2Emit:
    advertiser_id: str
    key: str
    total_cost: int
    attributed_action: float
    attributed_action_value: float


@dataclass(frozen=True)
class ShardPlan:
    shard_count: int = 1

    def __post_init__(self) -> None:
        if self.shard_count < 1:
            raise ValueError("shard_count must be positive")

    def shard_of(self, user_id: str) -> int:
        return zlib.crc32(user_id.encode("utf-8")) % self.shard_count

    def split(self, users: Iterable[UserHistory]) -> list[list[UserHistory]]:
        shards: list[list[UserHistory]] = [[] for _ in range(self.shard_count)]
        for h in users:
            shards[self.shard_of(h.user_id)].append(h)
        return shards


# --- step 1 ----------------------------------------------------------------


def _step1_emits(records, order: Order) -> Iterator[Step1Emit | Step1PairEmit]:
    for rec in records:
        a = 1 if rec.is_action else 0
        for li in rec.line_items:
            yield Step1Emit(rec.advertiser_id, li, rec.claimed_costs.get(li, 0), a, 1 - a)
        if order is Order.SECOND:
            for pair in combinations(rec.line_items, 2):
                yield Step1PairEmit(rec.advertiser_id, pair, a, 1 - a)


def map_step1(history: UserHistory, w: WindowConfig, order: Order = Order.FIRST):
    """Step-one emits of one user: one per (sequence, line item), plus one
    per co-occurring pair for second order."""
    records, _ = sequences_for_user(history, w)
    return _step1_emits(records, Order(order))


@dataclass
class Step1Partial:
    items: dict[tuple[str, str], list[int]] = field(default_factory=dict)
    pairs: dict[tuple[str, tuple[str, str]], list[int]] = field(default_factory=dict)
    sequences: dict[str, list[int]] = field(default_factory=dict)
    unattributable: int = 0

    def add(self, emit: Step1Emit | Step1PairEmit) -> None:
        if isinstance(emit, Step1Emit):
            acc = self.items.setdefault((emit.advertiser_id, emit.key), [0, 0, 0])
            acc[0] += emit.is_action_seq
            acc[1] += emit.is_no_action_seq
            acc[2] += emit.cost
        else:
            acc = self.pairs.setdefault((emit.advertiser_id, emit.key), [0, 0])
            acc[0] += emit.is_action_seq
            acc[1] += emit.is_no_action_seq

    def merge(self, other: "Step1Partial") -> "Step1Partial":
        out = Step1Partial(unattributable=self.unattributable + other.unattributable)
        for src in (self, other):
            for target, items in ((out.items, src.items), (out.pairs, src.pairs),
                                  (out.sequences, src.sequences)):
                for k, v in items.items():
                    acc = target.get(k)
                    target[k] = list(v) if acc is None else [x + y for x, y in zip(acc, v)]
        return out


def _step1_shard(users: Sequence[UserHistory], w: WindowConfig, order: Order) -> Step1Partial:
    part = Step1Partial()
    for h in users:
        records, bare = sequences_for_user(h, w)
        part.unattributable += bare
        for rec in records:
            seq = part.sequences.setdefault(rec.advertiser_id, [0, 0])
            seq[0 if rec.is_action else 1] += 1
        for emit in _step1_emits(records, order):
            part.add(emit)
    return part


def reduce_step1(partial: Step1Partial, order: Order) -> dict[str, WeightTable]:
    tables: dict[str, WeightTable] = {}

    def table(adv: str) -> WeightTable:
        t = tables.get(adv)
        if t is None:
            t = tables[adv] = WeightTable(adv, order)
        return t

    for (adv, li), (n_plus, n_minus, cost) in sorted(partial.items.items()):
        table(adv).items[li] = LineItemStats(n_plus, n_minus, cost)
    for (adv, pair), (n_plus, n_minus) in sorted(partial.pairs.items()):
        table(adv).pairs[pair] = PairStats(n_plus, n_minus)
    for adv, (n_act, n_no) in partial.sequences.items():
        t = table(adv)
        t.n_action_sequences = n_act
        t.n_no_action_sequences = n_no
    return {adv: compute_weights(tables[adv]) for adv in sorted(tables)}


# --- step 2 ----------------------------------------------------------------


def _step2_emits(records, weights: Mapping[str, WeightTable], method: Method):
    """Per action sequence: its advertiser, whether it fell back to a uniform
    split, and its emits."""
    for rec in records:
        if not rec.is_action:
            continue
        table = weights.get(rec.advertiser_id)
        items = table.items if table is not None else {}
        if method is Method.LTA:
            split = lta_split(rec)
        else:
            split = attribute_action_sequence(
                rec, {li: items[li].weight for li in rec.line_items if li in items}
            )
        emits = []
        for li, frac in split.fractions.items():
            stats = items.get(li)
            emits.append(Step2Emit(rec.advertiser_id, li, stats.total_cost if stats else 0,
                                   frac, frac * rec.action_value))
        yield rec.advertiser_id, split.uniform, emits


def map_step2(
    history: UserHistory,
    w: WindowConfig,
    weights: Mapping[str, WeightTable],
    method: Method = Method.MTA,
) -> list[Step2Emit]:
    """Step-two emits of one user, action sequences only."""
    records, _ = sequences_for_user(history, w)
    return [e for _, _, emits in _step2_emits(records, weights, Method(method)) for e in emits]


@dataclass
class Step2Partial:
    attributed: dict[tuple[str, str], ExactSum] = field(default_factory=dict)
    values: dict[tuple[str, str], ExactSum] = field(default_factory=dict)
    sequences: dict[str, list[int]] = field(default_factory=dict)

    def add(self, emit: Step2Emit) -> None:
        key = (emit.advertiser_id, emit.key)
        acc = self.attributed.get(key)
        if acc is None:
            acc = self.attributed[key] = ExactSum()
            self.values[key] = ExactSum()
        acc.add(emit.attributed_action)
        self.values[key].add(emit.attributed_action_value)

    def merge(self, other: "Step2Partial") -> "Step2Partial":
        out = Step2Partial()
        for src in (self, other):
            for target, items in ((out.attributed, src.attributed), (out.values, src.values)):
                for k, v in items.items():
                    acc = target.get(k)
                    target[k] = v.merge(ExactSum()) if acc is None else acc.merge(v)
            for adv, v in src.sequences.items():
                acc = out.sequences.get(adv)
                out.sequences[adv] = list(v) if acc is None else [x + y for x, y in zip(acc, v)]
        return out


def _step2_shard(
    users: Sequence[UserHistory], w: WindowConfig, weights: Mapping[str, WeightTable], method: Method
) -> Step2Partial:
    part = Step2Partial()
    for h in users:
        records, _ = sequences_for_user(h, w)
        for adv, uniform, emits in _step2_emits(records, weights, method):
            seq = part.sequences.setdefault(adv, [0, 0])
            seq[0] += 1
            seq[1] += uniform
            for emit in emits:
                part.add(emit)
    return part


def reduce_step2(
    partial: Step2Partial, weights: Mapping[str, WeightTable], method: Method
) -> dict[str, AttributionResult]:
    by_adv: dict[str, tuple[dict[str, float], dict[str, float]]] = {}
    for (adv, li), acc in sorted(partial.attributed.items()):
        att, val = by_adv.setdefault(adv, ({}, {}))
        att[li] = float(acc)
        val[li] = float(partial.values[(adv, li)])
    results = {}
    for adv in sorted(set(weights) | set(by_adv)):
        att, val = by_adv.get(adv, ({}, {}))
        n_seq, n_uniform = partial.sequences.get(adv, (0, 0))
        table = weights.get(adv) or WeightTable(adv)
        results[adv] = finalize_result(adv, method, table, att, val, n_seq, n_uniform)
        if results[adv].missing_weight:
            logger.warning("advertiser %s: no step-one weight for %s", adv,
                           ", ".join(results[adv].missing_weight))
    return results


# --- execution -------------------------------------------------------------

_JOB: dict = {}


def _run_job(index: int):
    fn, shards, args = _JOB["fn"], _JOB["shards"], _JOB["args"]
    return fn(shards[index], *args)


def _execute(fn, shards: list[list[UserHistory]], args: tuple, workers: int | None):
    """Run ``fn`` over every shard and return results in shard-index order."""
    n_workers = min(workers or 1, len(shards))
    if n_workers <= 1 or "fork" not in multiprocessing.get_all_start_methods():
        results = []
        for i, shard in enumerate(shards):
            try:
                results.append(fn(shard, *args))
            except Exception as exc:
                raise PipelineError(i, exc) from exc
        return results
    # Forked workers read the shards from module state instead of pickling them.
    _JOB.update(fn=fn, shards=shards, args=args)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(n_workers, mp_context=ctx) as pool:
            futures = [pool.submit(_run_job, i) for i in range(len(shards))]
            results = []
            for i, fut in enumerate(futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    for f in futures:
                        f.cancel()
                    raise PipelineError(i, exc) from exc
            return results
    finally:
        _JOB.clear()


def _fold(partials):
    it = iter(partials)
    acc = next(it)
    for p in it:
        acc = acc.merge(p)
    return acc


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_step1(
    users: Iterable[UserHistory],
    w: WindowConfig,
    shards: ShardPlan = ShardPlan(),
    order: Order = Order.FIRST,
    workers: int | None = None,
) -> tuple[dict[str, WeightTable], int]:
    """Weights per advertiser plus the number of unattributable actions."""
    order = Order(order)
    parts = _execute(_step1_shard, shards.split(users), (w, order), workers)
    total = _fold(parts)
    return reduce_step1(total, order), total.unattributable


def run_step2(
    users: Iterable[UserHistory],
    w: WindowConfig,
    weights: Mapping[str, WeightTable],
    shards: ShardPlan = ShardPlan(),
    method: Method = Method.MTA,
    workers: int | None = None,
) -> dict[str, AttributionResult]:
    method = Method(method)
    parts = _execute(_step2_shard, shards.split(users), (w, weights, method), workers)
    return reduce_step2(_fold(parts), weights, method)


@dataclass
class PipelineOutput:
    weights: dict[str, WeightTable]
    results: dict[str, AttributionResult]
    unattributable: int = 0


def run_both(
    users: Iterable[UserHistory],
    w: WindowConfig,
    shards: ShardPlan = ShardPlan(),
    order: Order = Order.FIRST,
    method: Method = Method.MTA,
    workers: int | None = None,
) -> PipelineOutput:
    users = list(users)
    weights, bare = run_step1(users, w, shards, order, workers)
    results = run_step2(users, w, weights, shards, method, workers)
    return PipelineOutput(weights, results, bare)
