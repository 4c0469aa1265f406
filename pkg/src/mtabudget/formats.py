"""Line-delimited record files exchanged between pipeline steps and the CLI.

Every file is one JSON object per line with sorted keys. Money fields ending
in ``_minor`` are minor units; a sibling field without the suffix carries the
same amount as a human-readable decimal string. Floats use the shortest
round-trip repr, and an infinite ROI is written as the string ``"inf"``.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, Iterator, Mapping

from .allocation import AllocationPlan, LineItemBudgetState
from .attribution import (
    AttributionResult,
    LineItemAttribution,
    LineItemStats,
    Method,
    Order,
    PairStats,
    WeightTable,
)
from .core import LineItemMeta, format_money


class FormatError(ValueError):
    pass


def dumps(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _float_out(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _float_in(x) -> float:
    # infinite ROI is written as the string "inf"
    return float(x)


def _lines(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{n}: {exc.msg}") from None


def _write(path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")


def _io_of(catalog: Mapping[str, LineItemMeta] | None, li: str) -> str:
    if catalog and li in catalog:
        return catalog[li].insertion_order_id
    return ""


# --- weight tables -----------------------------------------------------------


def weight_rows(tables: Mapping[str, WeightTable], catalog=None) -> Iterator[dict]:
    for adv in sorted(tables):
        t = tables[adv]
        yield {
            "kind": "advertiser",
            "advertiser": adv,
            "order": t.order.value,
            "n_action_sequences": t.n_action_sequences,
            "n_no_action_sequences": t.n_no_action_sequences,
        }
        for li in sorted(t.items):
            s = t.items[li]
            yield {
                "kind": "line_item",
                "advertiser": adv,
                "io": _io_of(catalog, li),
                "li": li,
                "n_plus": s.n_plus,
                "n_minus": s.n_minus,
                "weight": s.weight,
                "total_cost_minor": s.total_cost,
                "total_cost": format_money(s.total_cost),
            }
        for pair in sorted(t.pairs):
            p = t.pairs[pair]
            yield {
                "kind": "pair",
                "advertiser": adv,
                "li": list(pair),
                "n_plus": p.n_plus,
                "n_minus": p.n_minus,
            }


def write_weights(path, tables: Mapping[str, WeightTable], catalog=None) -> None:
    _write(path, weight_rows(tables, catalog))


def read_weights(path) -> tuple[dict[str, WeightTable], dict[str, str]]:
    """Tables keyed by advertiser, plus the line item to IO mapping found."""
    tables: dict[str, WeightTable] = {}
    ios: dict[str, str] = {}
    for row in _lines(path):
        kind = row.get("kind")
        adv = row["advertiser"]
        if kind == "advertiser":
            t = tables.setdefault(adv, WeightTable(adv))
            t.order = Order(row["order"])
            t.n_action_sequences = row["n_action_sequences"]
            t.n_no_action_sequences = row["n_no_action_sequences"]
        elif kind == "line_item":
            t = tables.setdefault(adv, WeightTable(adv))
            t.items[row["li"]] = LineItemStats(
                row["n_plus"], row["n_minus"], row["total_cost_minor"], _float_in(row["weight"])
            )
            if row.get("io"):
                ios[row["li"]] = row["io"]
        elif kind == "pair":
            t = tables.setdefault(adv, WeightTable(adv))
            a, b = row["li"]
            t.pairs[(a, b)] = PairStats(row["n_plus"], row["n_minus"])
        else:
            raise FormatError(f"unknown weight row kind {kind!r}")
    return tables, ios


# --- attribution results -----------------------------------------------------


def result_rows(results: Mapping[str, AttributionResult], catalog=None) -> Iterator[dict]:
    for adv in sorted(results):
        r = results[adv]
        yield {
            "kind": "advertiser",
            "advertiser": adv,
            "method": r.method.value,
            "n_sequences": r.n_sequences,
            "uniform_splits": r.uniform_splits,
            "missing_weight": list(r.missing_weight),
        }
        for li in sorted(r.lines):
            a = r.lines[li]
            yield {
                "kind": "line_item",
                "advertiser": adv,
                "io": _io_of(catalog, li),
                "li": li,
                "attributed": a.attributed,
                "value_minor": a.value,
                "value": format_money(a.value),
                "cost_minor": a.cost,
                "roi": _float_out(a.roi),
            }


def write_results(path, results: Mapping[str, AttributionResult], catalog=None) -> None:
    _write(path, result_rows(results, catalog))


def read_results(path) -> tuple[dict[str, AttributionResult], dict[str, str]]:
    results: dict[str, AttributionResult] = {}
    ios: dict[str, str] = {}
    for row in _lines(path):
        kind = row.get("kind")
        adv = row["advertiser"]
        r = results.setdefault(adv, AttributionResult(adv))
        if kind == "advertiser":
            r.method = Method(row["method"])
            r.n_sequences = row["n_sequences"]
            r.uniform_splits = row["uniform_splits"]
            r.missing_weight = list(row["missing_weight"])
        elif kind == "line_item":
            r.lines[row["li"]] = LineItemAttribution(
                _float_in(row["attributed"]),
                _float_in(row["value_minor"]),
                row["cost_minor"],
                _float_in(row["roi"]),
            )
            if row.get("io"):
                ios[row["li"]] = row["io"]
        else:
            raise FormatError(f"unknown result row kind {kind!r}")
    return results, ios


# --- allocation plans and budget states ---------------------------------------


def plan_rows(plans: Iterable[AllocationPlan]) -> Iterator[dict]:
    for plan in plans:
        yield {
            "kind": "plan",
            "io": plan.insertion_order_id,
            "total_budget_minor": plan.total_budget,
            "total_budget": format_money(plan.total_budget),
            "residual_minor": plan.residual_unassigned,
            "redistributed_minor": plan.redistributed,
            "uniform_redistribution": plan.uniform_redistribution,
        }
        for rank, li in enumerate(plan.order):
            yield {
                "kind": "line_item",
                "io": plan.insertion_order_id,
                "li": li,
                "rank": rank,
                "budget_minor": plan.allocated[li],
                "budget": format_money(plan.allocated[li]),
                "capability_minor": plan.capabilities.get(li, 0),
                "roi": _float_out(plan.roi.get(li, 0.0)),
                "cap_hit": li in plan.caps_hit,
            }


def write_plans(path, plans: Iterable[AllocationPlan]) -> None:
    _write(path, plan_rows(plans))


def read_plans(path) -> list[AllocationPlan]:
    plans: dict[str, AllocationPlan] = {}
    for row in _lines(path):
        io = row["io"]
        if row.get("kind") == "plan":
            plans[io] = AllocationPlan(
                io,
                row["total_budget_minor"],
                residual_unassigned=row["residual_minor"],
                redistributed=row["redistributed_minor"],
                uniform_redistribution=row["uniform_redistribution"],
            )
        elif row.get("kind") == "line_item":
            plan = plans.get(io)
            if plan is None:
                raise FormatError(f"line item row before plan row for io {io!r}")
            li = row["li"]
            plan.order.append(li)
            plan.allocated[li] = row["budget_minor"]
            plan.capabilities[li] = row["capability_minor"]
            plan.roi[li] = _float_in(row["roi"])
            if row["cap_hit"]:
                plan.caps_hit.append(li)
        else:
            raise FormatError(f"unknown plan row kind {row.get('kind')!r}")
    return list(plans.values())


def state_rows(states: Iterable[LineItemBudgetState]) -> Iterator[dict]:
    for s in sorted(states, key=lambda s: s.line_item_id):
        yield {
            "li": s.line_item_id,
            "yesterday_budget_minor": s.yesterday_budget,
            "yesterday_spend_minor": s.yesterday_spend,
            "is_new": s.is_new,
        }


def write_states(path, states: Iterable[LineItemBudgetState]) -> None:
    _write(path, state_rows(states))


def read_states(path) -> list[LineItemBudgetState]:
    out = []
    for row in _lines(path):
        try:
            out.append(
                LineItemBudgetState(
                    row["li"],
                    yesterday_budget=int(row["yesterday_budget_minor"]),
                    yesterday_spend=int(row["yesterday_spend_minor"]),
                    is_new=bool(row.get("is_new", False)),
                )
            )
        except KeyError as exc:
            raise FormatError(f"{path}: state row missing field {exc}") from None
    return out
