"""Daily budget allocation across the line items of one insertion order."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationConfig:
    explore_rate: float = 0.10
    learning_budget: int | None = None
    learning_fraction: float = 0.05
    learning_budget_cap: int | None = None
    min_budget: int = 0

    def learning_budget_for(self, io_budget: int) -> int:
        if self.learning_budget is not None:
            return self.learning_budget
        amount = int(io_budget * self.learning_fraction)
        if self.learning_budget_cap is not None:
            amount = min(amount, self.learning_budget_cap)
        return amount


@dataclass
class LineItemBudgetState:
    line_item_id: str
    roi_estimate: float = math.inf
    capability_estimate: int = 0
    yesterday_budget: int = 0
    yesterday_spend: int = 0
    is_new: bool = True
    overdelivered: bool = False

    def __post_init__(self) -> None:
        if self.yesterday_spend > self.yesterday_budget and not self.is_new:
            self.yesterday_spend = self.yesterday_budget
            self.overdelivered = True


@dataclass
class AllocationPlan:
    insertion_order_id: str
    total_budget: int
    allocated: dict[str, int] = field(default_factory=dict)
    residual_unassigned: int = 0
    order: list[str] = field(default_factory=list)
    caps_hit: list[str] = field(default_factory=list)
    capabilities: dict[str, int] = field(default_factory=dict)
    roi: dict[str, float] = field(default_factory=dict)
    redistributed: int = 0
    uniform_redistribution: bool = False

    @property
    def assigned(self) -> int:
        return sum(self.allocated.values())


def estimate_capability(state: LineItemBudgetState, cfg: AllocationConfig, io_budget: int = 0) -> int:
    """Learning budget for new items, otherwise yesterday's spend grown by the
    exploration rate and floored at ``min_budget``."""
    if state.is_new:
        return cfg.learning_budget_for(io_budget)
    grown = int(round(state.yesterday_spend * (1.0 + cfg.explore_rate)))
    return max(grown, cfg.min_budget)


def _rank_key(item: LineItemBudgetState):
    return (-item.roi_estimate, item.line_item_id)


def greedy_allocate(
    items: Sequence[LineItemBudgetState], budget: int, insertion_order_id: str = ""
) -> AllocationPlan:
    """Walk items by descending ROI (ties by id) giving each
    ``min(remaining, capability)`` until the budget runs out."""
    if budget < 0:
        raise AllocationError("budget must be non-negative")
    plan = AllocationPlan(insertion_order_id, budget)
    remaining = budget
    for item in sorted(items, key=_rank_key):
        share = min(remaining, max(item.capability_estimate, 0))
        plan.allocated[item.line_item_id] = share
        plan.order.append(item.line_item_id)
        plan.capabilities[item.line_item_id] = item.capability_estimate
        plan.roi[item.line_item_id] = item.roi_estimate
        if share == item.capability_estimate and remaining > 0:
            plan.caps_hit.append(item.line_item_id)
        remaining -= share
    plan.residual_unassigned = remaining
    return plan


def objective(plan: AllocationPlan, items: Iterable[LineItemBudgetState]) -> float:
    """Expected return ``sum R_i * min(B_i, S_i)``."""
    return sum(
        it.roi_estimate * min(plan.allocated.get(it.line_item_id, 0), it.capability_estimate)
        for it in items
    )


def largest_remainder(total: int, weights: Mapping[str, int]) -> dict[str, int]:
    """Split ``total`` proportionally to integer weights. Leftover units go to
    the largest remainders, ties by key."""
    denom = sum(weights.values())
    if denom <= 0:
        raise AllocationError("weights must have a positive sum")
    base = {}
    rems = []
    for key in sorted(weights):
        q, r = divmod(total * weights[key], denom)
        base[key] = q
        rems.append((-r, key))
    leftover = total - sum(base.values())
    for _, key in sorted(rems)[:leftover]:
        base[key] += 1
    return base


def redistribute_residual(plan: AllocationPlan) -> AllocationPlan:
    """Spread the unassigned budget over line items in proportion to what
    greedy already gave them, so the plan sums to the full budget."""
    residual = plan.residual_unassigned
    if residual == 0 or not plan.allocated:
        return plan
    weights = dict(plan.allocated)
    uniform = sum(weights.values()) == 0
    if uniform:
        weights = {k: 1 for k in weights}
    extra = largest_remainder(residual, weights)
    new = AllocationPlan(
        plan.insertion_order_id,
        plan.total_budget,
        {k: v + extra[k] for k, v in plan.allocated.items()},
        0,
        list(plan.order),
        list(plan.caps_hit),
        dict(plan.capabilities),
        dict(plan.roi),
        redistributed=residual,
        uniform_redistribution=uniform,
    )
    return new


def daily_allocation(
    io_budget: int,
    roi: Mapping[str, float],
    prior_states: Iterable[LineItemBudgetState] = (),
    line_items: Iterable[str] | None = None,
    cfg: AllocationConfig = AllocationConfig(),
    insertion_order_id: str = "",
) -> AllocationPlan:
    """Next-day plan for one IO.

    ``roi`` holds the attributed ROI per line item. Items with no ROI are
    ranked with the infinite sentinel so they get explored first; items with
    no prior state are new and receive the learning budget as capability.
    """
    if io_budget < 0:
        raise AllocationError("io budget must be non-negative")
    prior = {s.line_item_id: s for s in prior_states}
    ids = sorted(set(line_items) if line_items is not None else set(roi) | set(prior))
    states = []
    for li in ids:
        p = prior.get(li)
        state = LineItemBudgetState(
            li,
            roi_estimate=roi.get(li, math.inf),
            yesterday_budget=p.yesterday_budget if p else 0,
            yesterday_spend=p.yesterday_spend if p else 0,
            is_new=p.is_new if p else True,
        )
        state.capability_estimate = estimate_capability(state, cfg, io_budget)
        states.append(state)
    plan = greedy_allocate(states, io_budget, insertion_order_id)
    return redistribute_residual(plan)
