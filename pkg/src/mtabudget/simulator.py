"""Seeded two-arm ad market for comparing LTA- and MTA-steered allocation.

Each arm runs one insertion order with identical line items over the same
synthetic population. Every random draw comes from a substream keyed by
``(seed, day, purpose, line item)``, so two arms that serve the same
exposures see the same user behavior (common random numbers).

User model, per user and day::

    p(convert) = logistic(base_logit + sum_l exposures_l * true_lift_l)

Regular line items serve during the first 60% of the day. Retargeting line
items serve in the following 20% and only to users a regular line item has
reached within ``engagement_days``. Actions land in the last 20%.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np
import yaml

from .allocation import AllocationConfig, AllocationPlan, LineItemBudgetState, daily_allocation
from .attribution import Method, Order
from .core import SECONDS_PER_DAY, ActionEvent, Kind, TouchPoint, UserHistory, WindowConfig
from .pipeline import ShardPlan, run_both
from .report import ArmReport, DayRecord, ExperimentReport, LineItemSummary, compute_metrics

logger = logging.getLogger(__name__)

# 2013-11-01T00:00:00Z
DEFAULT_START = 1_383_264_000

_TARGETING, _SERVE, _CONVERT, _VALUE = 1, 2, 3, 4
_REGULAR_SLOT = (0.0, 0.6)
_RETARGET_SLOT = (0.6, 0.8)
_ACTION_SLOT = (0.8, 1.0)


class ScenarioError(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class LineItemProfile:
    line_item_id: str
    reach: float
    cost_min: int
    cost_max: int
    true_lift: float
    ctr: float = 0.01
    is_retargeting: bool = False
    value_min: int = 2000
    value_max: int = 6000
    display_name: str = ""

    @property
    def mean_value(self) -> float:
        return (self.value_min + self.value_max) / 2


@dataclass(frozen=True)
class MarketConfig:
    line_item_profiles: tuple[LineItemProfile, ...]
    seed: int = 0
    days: int = 12
    io_budget_per_day: int = 20_000
    user_population: int = 4000
    t_action: int = 7
    t_association: int = 30
    base_logit: float = -5.0
    frequency_cap: int = 5
    engagement_days: int = 1
    base_value_min: int = 2000
    base_value_max: int = 6000
    advertiser_id: str = "adv1"
    insertion_order_id: str = "io1"
    start: int = DEFAULT_START
    allocation: AllocationConfig = AllocationConfig()
    static_plan: Mapping[str, int] | None = None

    def __post_init__(self) -> None:
        validate_market(self)

    @property
    def line_item_ids(self) -> list[str]:
        return [p.line_item_id for p in self.line_item_profiles]

    def day_start(self, day: int) -> int:
        return self.start + day * SECONDS_PER_DAY


def validate_market(m: MarketConfig) -> None:
    if m.days < 1:
        raise ScenarioError("days", "must be >= 1")
    if m.user_population < 1:
        raise ScenarioError("user_population", "must be >= 1")
    if m.io_budget_per_day < 0:
        raise ScenarioError("io_budget_per_day", "must be >= 0")
    if m.frequency_cap < 1:
        raise ScenarioError("frequency_cap", "must be >= 1")
    if m.t_action < 1 or m.t_association < 1:
        raise ScenarioError("t_action", "windows must be >= 1 day")
    if not m.line_item_profiles:
        raise ScenarioError("line_items", "at least one line item is required")
    ids = m.line_item_ids
    if len(set(ids)) != len(ids):
        raise ScenarioError("line_items", "line item ids must be unique")
    for i, p in enumerate(m.line_item_profiles):
        where = f"line_items[{i}]"
        if not 0 < p.reach <= 1:
            raise ScenarioError(f"{where}.reach", "must be in (0, 1]")
        if not 1 <= p.cost_min <= p.cost_max:
            raise ScenarioError(f"{where}.cost_min", "need 1 <= cost_min <= cost_max")
        if not 0 <= p.ctr <= 1:
            raise ScenarioError(f"{where}.ctr", "must be in [0, 1]")
        if not 0 <= p.value_min <= p.value_max:
            raise ScenarioError(f"{where}.value_min", "need 0 <= value_min <= value_max")


def default_profiles() -> tuple[LineItemProfile, ...]:
    return (
        LineItemProfile("li1", reach=0.30, cost_min=2, cost_max=4, true_lift=0.50, ctr=0.020,
                        value_min=3000, value_max=7000, display_name="prospecting, in-market"),
        LineItemProfile("li2", reach=0.30, cost_min=2, cost_max=4, true_lift=0.30, ctr=0.012,
                        display_name="prospecting, lookalike"),
        LineItemProfile("li3", reach=0.90, cost_min=3, cost_max=5, true_lift=0.0, ctr=0.006,
                        is_retargeting=True, display_name="retargeting"),
        LineItemProfile("li4", reach=0.50, cost_min=2, cost_max=4, true_lift=0.08, ctr=0.005,
                        display_name="broad reach"),
    )


def null_profiles() -> tuple[LineItemProfile, ...]:
    """Four interchangeable line items: equal lift, no retargeting."""
    return tuple(
        LineItemProfile(f"li{i}", reach=0.40, cost_min=2, cost_max=4, true_lift=0.15, ctr=0.01)
        for i in range(1, 5)
    )


def default_market(seed: int = 0, **overrides) -> MarketConfig:
    return MarketConfig(default_profiles(), seed=seed, **overrides)


def null_market(seed: int = 0, **overrides) -> MarketConfig:
    """Control market where the arms should differ only by noise.

    Line items are interchangeable and each user sees at most one impression
    per line item a day. A small lift keeps the response close to linear, so
    concentrating budget on one line item earns nothing in expectation.
    """
    kwargs = dict(user_population=20_000, frequency_cap=1)
    kwargs.update(overrides)
    return MarketConfig(null_profiles(), seed=seed, **kwargs)


# --- scenario files ----------------------------------------------------------

_MARKET_KEYS = {f.name for f in fields(MarketConfig)} - {"line_item_profiles", "allocation"}
_PROFILE_KEYS = {f.name for f in fields(LineItemProfile)}
_ALLOC_KEYS = {f.name for f in fields(AllocationConfig)}


def market_from_dict(data: Mapping) -> MarketConfig:
    """Build a config from parsed scenario data; unknown keys are rejected."""
    if not isinstance(data, Mapping):
        raise ScenarioError("<root>", "scenario must be a mapping")
    unknown = set(data) - _MARKET_KEYS - {"line_items", "allocation"}
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown field")
    raw_items = data.get("line_items")
    if raw_items is None:
        profiles = default_profiles()
    else:
        if not isinstance(raw_items, list):
            raise ScenarioError("line_items", "must be a list")
        profiles = []
        for i, item in enumerate(raw_items):
            if not isinstance(item, Mapping):
                raise ScenarioError(f"line_items[{i}]", "must be a mapping")
            bad = set(item) - _PROFILE_KEYS
            if bad:
                raise ScenarioError(f"line_items[{i}].{sorted(bad)[0]}", "unknown field")
            try:
                profiles.append(LineItemProfile(**item))
            except TypeError as exc:
                raise ScenarioError(f"line_items[{i}]", str(exc)) from None
        profiles = tuple(profiles)
    kwargs = {k: data[k] for k in _MARKET_KEYS if k in data}
    if "allocation" in data:
        alloc = data["allocation"]
        if not isinstance(alloc, Mapping) or set(alloc) - _ALLOC_KEYS:
            bad = sorted(set(alloc) - _ALLOC_KEYS) if isinstance(alloc, Mapping) else []
            raise ScenarioError(f"allocation.{bad[0]}" if bad else "allocation", "invalid")
        kwargs["allocation"] = AllocationConfig(**alloc)
    for key, kind in (("seed", int), ("days", int), ("io_budget_per_day", int),
                      ("user_population", int), ("t_action", int), ("t_association", int),
                      ("frequency_cap", int), ("engagement_days", int)):
        if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], kind)):
            raise ScenarioError(key, f"must be an integer, got {kwargs[key]!r}")
    return MarketConfig(profiles, **kwargs)


def load_scenario(path) -> MarketConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ScenarioError("<file>", f"not valid YAML: {exc}") from None
    return market_from_dict(data)


# --- simulation --------------------------------------------------------------


def _rng(market: MarketConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng([market.seed, *key])


@dataclass
class DayOutcome:
    day: int
    spend: dict[str, int]
    impressions: dict[str, int]
    clicks: int
    actions: int
    value: int
    incremental_value: dict[str, float]
    events: list


@dataclass
class ArmState:
    arm: Method
    market: MarketConfig
    touch_points: list[list[TouchPoint]] = field(default_factory=list)
    actions: list[list[ActionEvent]] = field(default_factory=list)
    last_engaged: np.ndarray | None = None
    plans: list[AllocationPlan] = field(default_factory=list)
    outcomes: list[DayOutcome] = field(default_factory=list)
    seq: int = 0

    @classmethod
    def create(cls, arm: Method, market: MarketConfig) -> "ArmState":
        n = market.user_population
        return cls(
            Method(arm),
            market,
            [[] for _ in range(n)],
            [[] for _ in range(n)],
            np.full(n, -(10**9), dtype=np.int64),
        )

    def histories(self) -> list[UserHistory]:
        return [
            UserHistory(_user_id(i), tuple(tps), tuple(acts))
            for i, (tps, acts) in enumerate(zip(self.touch_points, self.actions))
            if tps or acts
        ]

    def events(self) -> list:
        out = [e for o in self.outcomes for e in o.events]
        return out


def _user_id(i: int) -> str:
    return f"u{i:06d}"


def _segments(market: MarketConfig) -> list[np.ndarray]:
    n = market.user_population
    return [
        _rng(market, 0, _TARGETING, k).random(n) < p.reach
        for k, p in enumerate(market.line_item_profiles)
    ]


def _slot_times(rng: np.random.Generator, start: int, slot: tuple[float, float], size: int) -> np.ndarray:
    lo = start + int(slot[0] * SECONDS_PER_DAY)
    hi = start + int(slot[1] * SECONDS_PER_DAY) - 120
    return rng.integers(lo, hi, size=size)


def _serve(market, k, profile, eligible, budget, day):
    """Impressions of one line item: users, costs, timestamps, click flags."""
    rng = _rng(market, day + 1, _SERVE, k)
    if budget <= 0 or eligible.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros(0, dtype=bool)
    order = rng.permutation(eligible)
    max_imps = order.size * market.frequency_cap
    costs = rng.integers(profile.cost_min, profile.cost_max + 1, size=max_imps)
    n = int(np.searchsorted(np.cumsum(costs), budget, side="right"))
    users = order[np.arange(n) % order.size]
    slot = _RETARGET_SLOT if profile.is_retargeting else _REGULAR_SLOT
    times = _slot_times(rng, market.day_start(day), slot, max_imps)[:n]
    clicks = (rng.random(max_imps) < profile.ctr)[:n]
    return users, costs[:n], times, clicks


def simulate_day(arm: ArmState, plan: Mapping[str, int], market: MarketConfig, day: int) -> DayOutcome:
    """Serve one day of impressions under ``plan`` and sample user actions;
    events are appended to the arm's per-user histories."""
    n_users = market.user_population
    profiles = market.line_item_profiles
    segments = _segments(market)
    exposures = np.zeros((n_users, len(profiles)), dtype=np.int64)
    served = {}
    regular = [k for k, p in enumerate(profiles) if not p.is_retargeting]
    retarget = [k for k, p in enumerate(profiles) if p.is_retargeting]
    for k in regular + retarget:
        p = profiles[k]
        mask = segments[k]
        if p.is_retargeting:
            if k == retarget[0]:
                arm.last_engaged[exposures[:, regular].sum(axis=1) > 0] = day
            mask = mask & (arm.last_engaged > day - market.engagement_days)
        served[k] = _serve(market, k, p, np.flatnonzero(mask), int(plan.get(p.line_item_id, 0)), day)
        np.add.at(exposures[:, k], served[k][0], 1)
    order = regular + retarget

    lifts = np.array([p.true_lift for p in profiles])
    logit = market.base_logit + exposures @ lifts
    prob = 1.0 / (1.0 + np.exp(-logit))
    conv_rng = _rng(market, day + 1, _CONVERT, 0)
    converted = conv_rng.random(n_users) < prob
    action_times = _slot_times(conv_rng, market.day_start(day), _ACTION_SLOT, n_users)
    value_u = _rng(market, day + 1, _VALUE, 0).random(n_users)

    contrib = exposures * lifts
    source = np.where(contrib.max(axis=1) > 0, contrib.argmax(axis=1), -1)
    incremental = {}
    for k, p in enumerate(profiles):
        if p.true_lift == 0:
            incremental[p.line_item_id] = 0.0
            continue
        without = 1.0 / (1.0 + np.exp(-(logit - exposures[:, k] * p.true_lift)))
        incremental[p.line_item_id] = float((prob - without).sum()) * p.mean_value

    events: list = []
    adv, io = market.advertiser_id, market.insertion_order_id
    spend: dict[str, int] = {}
    imps: dict[str, int] = {}
    n_clicks = 0
    for k in order:
        p = profiles[k]
        users, costs, times, clicks = served[k]
        spend[p.line_item_id] = int(costs.sum())
        imps[p.line_item_id] = int(users.size)
        n_clicks += int(clicks.sum())
        for u, c, t, clicked in zip(users.tolist(), costs.tolist(), times.tolist(), clicks.tolist()):
            events.append(TouchPoint(_user_id(u), t, Kind.IMPRESSION, p.line_item_id, io, adv, c))
            if clicked:
                events.append(TouchPoint(_user_id(u), t + 30, Kind.CLICK, p.line_item_id, io, adv, 0))
    total_value = 0
    n_actions = 0
    for u in np.flatnonzero(converted).tolist():
        src = int(source[u])
        if src >= 0:
            lo, hi = profiles[src].value_min, profiles[src].value_max
        else:
            lo, hi = market.base_value_min, market.base_value_max
        value = lo + int(value_u[u] * (hi - lo + 1))
        total_value += value
        n_actions += 1
        events.append(ActionEvent(_user_id(u), int(action_times[u]), adv, io, value))

    events.sort(key=lambda e: (e.timestamp, e.user_id))
    stamped = []
    for e in events:
        e = replace(e, seq=arm.seq)
        arm.seq += 1
        stamped.append(e)
        idx = int(e.user_id[1:])
        if isinstance(e, TouchPoint):
            arm.touch_points[idx].append(e)
        else:
            arm.actions[idx].append(e)
    outcome = DayOutcome(day, spend, imps, n_clicks, n_actions, total_value, incremental, stamped)
    arm.outcomes.append(outcome)
    return outcome


def plan_for_day(arm: ArmState, market: MarketConfig, day: int, shards: ShardPlan = ShardPlan()) -> AllocationPlan:
    """Attribute the arm's log up to the end of ``day - 1`` and allocate."""
    budget = market.io_budget_per_day
    ids = market.line_item_ids
    if market.static_plan is not None:
        return AllocationPlan(market.insertion_order_id, budget,
                              {li: int(market.static_plan.get(li, 0)) for li in ids},
                              order=list(ids))
    if day == 0:
        return daily_allocation(budget, {}, (), ids, market.allocation, market.insertion_order_id)
    w = WindowConfig(market.day_start(day) - 1, market.t_action, market.t_association)
    out = run_both(arm.histories(), w, shards, Order.FIRST, arm.arm)
    result = out.results.get(market.advertiser_id)
    roi = result.roi() if result is not None else {}
    prev_plan, prev = arm.plans[-1], arm.outcomes[-1]
    states = [
        LineItemBudgetState(li, yesterday_budget=prev_plan.allocated.get(li, 0),
                            yesterday_spend=prev.spend.get(li, 0), is_new=False)
        for li in ids
    ]
    return daily_allocation(budget, roi, states, ids, market.allocation, market.insertion_order_id)


def run_arm(market: MarketConfig, arm: Method) -> ArmState:
    state = ArmState.create(arm, market)
    for day in range(market.days):
        plan = plan_for_day(state, market, day)
        state.plans.append(plan)
        simulate_day(state, plan.allocated, market, day)
    return state


def summarize_arm(state: ArmState) -> ArmReport:
    market = state.market
    report = ArmReport(state.arm.value)
    total_budget = 0
    budget_by_li = {li: 0 for li in market.line_item_ids}
    spend_by_li = {li: 0 for li in market.line_item_ids}
    inc_by_li = {li: 0.0 for li in market.line_item_ids}
    for plan, o in zip(state.plans, state.outcomes):
        spend = sum(o.spend.values())
        m = compute_metrics(spend, o.actions, o.clicks, o.value)
        report.days.append(DayRecord(o.day, spend, o.value, o.actions, o.clicks,
                                     sum(o.impressions.values()), m.roi, m.ecpa, m.ecpc,
                                     dict(plan.allocated), dict(o.spend)))
        total_budget += plan.total_budget
        for li in market.line_item_ids:
            budget_by_li[li] += plan.allocated.get(li, 0)
            spend_by_li[li] += o.spend.get(li, 0)
            inc_by_li[li] += o.incremental_value[li]
    for li in market.line_item_ids:
        share = budget_by_li[li] / total_budget if total_budget else 0.0
        realized = inc_by_li[li] / spend_by_li[li] if spend_by_li[li] else None
        report.line_items[li] = LineItemSummary(share, realized, spend_by_li[li], budget_by_li[li])
    return report


def run_experiment(market: MarketConfig) -> tuple[ExperimentReport, dict[str, ArmState]]:
    """Run the LTA and MTA arms and collect per-day series and line-item
    budget shares against realized ROI.

    Realized ROI is the expected incremental action value a line item caused
    under the ground-truth response model, per unit of its spend.
    """
    report = ExperimentReport(market.seed, market.days)
    states = {}
    for arm in (Method.LTA, Method.MTA):
        states[arm.value] = state = run_arm(market, arm)
        report.arms[arm.value] = summarize_arm(state)
    return report, states
