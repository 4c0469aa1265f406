"""Event, hierarchy and window vocabulary shared by the rest of the package.

Money is always an ``int`` count of minor units (cents). Timestamps are UTC
epoch seconds.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400


class Kind(str, enum.Enum):
    IMPRESSION = "imp"
    CLICK = "click"


@dataclass(frozen=True, slots=True)
class TouchPoint:
    user_id: str
    timestamp: int
    kind: Kind
    line_item_id: str
    insertion_order_id: str
    advertiser_id: str
    cost: int = 0
    seq: int = 0

    def __post_init__(self) -> None:
        if self.cost < 0:
            raise ValueError(f"negative cost on touch-point: {self.cost}")


@dataclass(frozen=True, slots=True)
class ActionEvent:
    user_id: str
    timestamp: int
    advertiser_id: str
    insertion_order_id: str
    value: int = 0
    seq: int = 0

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"negative action value: {self.value}")


@dataclass(frozen=True, slots=True)
class WindowConfig:
    """Attribution windows, in whole days, ending at ``as_of``."""

    as_of: int
    t_action: int = 7
    t_association: int = 30

    def __post_init__(self) -> None:
        if self.t_action <= 0 or self.t_association <= 0:
            raise ValueError("t_action and t_association must be positive")

    @property
    def action_seconds(self) -> int:
        return self.t_action * SECONDS_PER_DAY

    @property
    def association_seconds(self) -> int:
        return self.t_association * SECONDS_PER_DAY


def _order_key(event: TouchPoint | ActionEvent) -> tuple[int, int]:
    return (event.timestamp, event.seq)


@dataclass(frozen=True, slots=True)
class UserHistory:
    user_id: str
    touch_points: tuple[TouchPoint, ...] = ()
    actions: tuple[ActionEvent, ...] = ()

    @classmethod
    def build(
        cls,
        user_id: str,
        touch_points: Iterable[TouchPoint] = (),
        actions: Iterable[ActionEvent] = (),
    ) -> "UserHistory":
        """Sort events by ``(timestamp, seq)`` and freeze them."""
        return cls(
            user_id,
            tuple(sorted(touch_points, key=_order_key)),
            tuple(sorted(actions, key=_order_key)),
        )


@dataclass(frozen=True, slots=True)
class LineItemMeta:
    line_item_id: str
    insertion_order_id: str
    advertiser_id: str
    display_name: str = ""


@dataclass
class CatalogValidation:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_catalog(catalog: Iterable[LineItemMeta]) -> CatalogValidation:
    """Check that every line item sits under exactly one IO and advertiser."""
    result = CatalogValidation()
    seen: dict[str, LineItemMeta] = {}
    io_owner: dict[str, str] = {}
    for meta in catalog:
        prev = seen.get(meta.line_item_id)
        if prev is not None:
            if (prev.insertion_order_id, prev.advertiser_id) != (
                meta.insertion_order_id,
                meta.advertiser_id,
            ):
                result.violations.append(
                    f"duplicate line_item_id {meta.line_item_id!r}: under "
                    f"{prev.insertion_order_id!r} and {meta.insertion_order_id!r}"
                )
            else:
                result.violations.append(f"duplicate line_item_id {meta.line_item_id!r}")
            continue
        seen[meta.line_item_id] = meta
        owner = io_owner.setdefault(meta.insertion_order_id, meta.advertiser_id)
        if owner != meta.advertiser_id:
            result.violations.append(
                f"orphan insertion_order_id {meta.insertion_order_id!r}: claimed by "
                f"advertisers {owner!r} and {meta.advertiser_id!r}"
            )
    return result


# --- ingestion -------------------------------------------------------------


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    lines: int = 0
    malformed: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def malformed_ratio(self) -> float:
        return self.malformed / self.lines if self.lines else 0.0


@dataclass
class Corpus:
    """Ingested events grouped per user, plus the hierarchy seen in the log."""

    histories: dict[str, UserHistory]
    catalog: dict[str, LineItemMeta]
    report: IngestReport


def _require(record: Mapping, name: str, kind: type) -> object:
    if name not in record:
        raise IngestError(f"missing field {name!r}")
    value = record[name]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise IngestError(f"field {name!r} must be an integer")
    elif not isinstance(value, str) or not value:
        raise IngestError(f"field {name!r} must be a non-empty string")
    return value


def parse_event(line: str, seq: int = 0) -> TouchPoint | ActionEvent:
    """Parse one ingestion-format line. Raises :class:`IngestError`."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(record, dict):
        raise IngestError("record is not an object")
    etype = record.get("type")
    user = _require(record, "user", str)
    ts = _require(record, "ts", int)
    adv = _require(record, "advertiser", str)
    io = _require(record, "io", str)
    if etype == "action":
        value = _require(record, "value_minor", int)
        if value < 0:
            raise IngestError("negative value_minor")
        return ActionEvent(user, ts, adv, io, value, seq)
    if etype in ("imp", "click"):
        li = _require(record, "li", str)
        cost = _require(record, "cost_minor", int)
        if cost < 0:
            raise IngestError("negative cost_minor")
        return TouchPoint(user, ts, Kind(etype), li, io, adv, cost, seq)
    raise IngestError(f"unknown event type {etype!r}")


def format_event(event: TouchPoint | ActionEvent) -> str:
    if isinstance(event, ActionEvent):
        record = {
            "type": "action",
            "user": event.user_id,
            "ts": event.timestamp,
            "advertiser": event.advertiser_id,
            "io": event.insertion_order_id,
            "value_minor": event.value,
        }
    else:
        record = {
            "type": event.kind.value,
            "user": event.user_id,
            "ts": event.timestamp,
            "advertiser": event.advertiser_id,
            "io": event.insertion_order_id,
            "li": event.line_item_id,
            "cost_minor": event.cost,
        }
    return json.dumps(record, separators=(",", ":"))


def ingest_lines(lines: Iterable[str]) -> Corpus:
    """Parse a line-delimited event log.

    Malformed lines, including touch-points whose line item contradicts the
    hierarchy established by earlier lines, are counted in the report and
    skipped. Blank lines are ignored.
    """
    report = IngestReport()
    tps: dict[str, list[TouchPoint]] = {}
    acts: dict[str, list[ActionEvent]] = {}
    catalog: dict[str, LineItemMeta] = {}
    io_owner: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        report.lines += 1
        try:
            event = parse_event(raw, seq=lineno)
            owner = io_owner.get(event.insertion_order_id)
            if owner is not None and owner != event.advertiser_id:
                raise IngestError(
                    f"io {event.insertion_order_id!r} already belongs to advertiser {owner!r}"
                )
            if isinstance(event, TouchPoint):
                meta = catalog.get(event.line_item_id)
                if meta is not None and (
                    meta.insertion_order_id != event.insertion_order_id
                    or meta.advertiser_id != event.advertiser_id
                ):
                    raise IngestError(
                        f"li {event.line_item_id!r} already belongs to io "
                        f"{meta.insertion_order_id!r}"
                    )
        except IngestError as exc:
            report.malformed += 1
            report.errors.append((lineno, str(exc)))
            continue
        io_owner[event.insertion_order_id] = event.advertiser_id
        if isinstance(event, TouchPoint):
            catalog.setdefault(
                event.line_item_id,
                LineItemMeta(event.line_item_id, event.insertion_order_id, event.advertiser_id),
            )
            tps.setdefault(event.user_id, []).append(event)
        else:
            acts.setdefault(event.user_id, []).append(event)
    if report.malformed:
        logger.warning("skipped %d malformed line(s) of %d", report.malformed, report.lines)
    users = sorted(set(tps) | set(acts))
    histories = {u: UserHistory.build(u, tps.get(u, ()), acts.get(u, ())) for u in users}
    return Corpus(histories, catalog, report)


def read_log(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return ingest_lines(fh)


def iter_events(histories: Iterable[UserHistory]) -> Iterator[TouchPoint | ActionEvent]:
    """All events of the given histories, ordered by ``(timestamp, seq)``."""
    events: list[TouchPoint | ActionEvent] = []
    for h in histories:
        events.extend(h.touch_points)
        events.extend(h.actions)
    events.sort(key=_order_key)
    return iter(events)


def write_log(path, events: Iterable[TouchPoint | ActionEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(format_event(event))
            fh.write("\n")


def catalog_from_histories(histories: Iterable[UserHistory]) -> dict[str, LineItemMeta]:
    catalog: dict[str, LineItemMeta] = {}
    for h in histories:
        for tp in h.touch_points:
            if tp.line_item_id not in catalog:
                catalog[tp.line_item_id] = LineItemMeta(
                    tp.line_item_id, tp.insertion_order_id, tp.advertiser_id
                )
    return catalog


def format_money(minor: int | float) -> str:
    """Human-readable decimal rendering of a minor-unit amount."""
    return f"{minor / 100:.2f}"
