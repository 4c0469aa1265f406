"""Campaign-level metrics and the experiment report written by ``simulate``."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from scipy import stats

from .core import format_money


@dataclass(frozen=True)
class Metrics:
    roi: float | None
    ecpa: float | None
    ecpc: float | None


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def compute_metrics(spend: int, actions: float, clicks: int, action_value: float) -> Metrics:
    """ROI, eCPA and eCPC; a zero denominator gives ``None``."""
    if spend < 0:
        raise ValueError("spend must be non-negative")
    return Metrics(_ratio(action_value, spend), _ratio(spend, actions), _ratio(spend, clicks))


@dataclass
class DayRecord:
    day: int
    spend: int
    value: int
    actions: int
    clicks: int
    impressions: int
    roi: float | None
    ecpa: float | None
    ecpc: float | None
    budgets: dict[str, int] = field(default_factory=dict)
    spend_by_line_item: dict[str, int] = field(default_factory=dict)


@dataclass
class LineItemSummary:
    budget_share: float
    realized_roi: float | None
    spend: int
    budget: int


@dataclass
class ArmReport:
    arm: str
    days: list[DayRecord] = field(default_factory=list)
    line_items: dict[str, LineItemSummary] = field(default_factory=dict)

    @property
    def spend(self) -> int:
        return sum(d.spend for d in self.days)

    @property
    def value(self) -> int:
        return sum(d.value for d in self.days)

    @property
    def actions(self) -> int:
        return sum(d.actions for d in self.days)

    @property
    def clicks(self) -> int:
        return sum(d.clicks for d in self.days)

    def cumulative(self) -> Metrics:
        return compute_metrics(self.spend, self.actions, self.clicks, self.value)

    def share_roi_correlation(self) -> float | None:
        """Spearman rank correlation of budget share against realized ROI."""
        ids = sorted(self.line_items)
        shares = [self.line_items[li].budget_share for li in ids]
        rois = [self.line_items[li].realized_roi or 0.0 for li in ids]
        if len(ids) < 2 or len(set(shares)) < 2 or len(set(rois)) < 2:
            return None
        rho = float(stats.spearmanr(shares, rois).statistic)
        return None if math.isnan(rho) else rho


@dataclass
class ExperimentReport:
    seed: int
    days: int
    arms: dict[str, ArmReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed, "days": self.days, "arms": {}}
        for name in sorted(self.arms):
            arm = self.arms[name]
            m = arm.cumulative()
            out["arms"][name] = {
                "days": [asdict(d) for d in arm.days],
                "line_items": {li: asdict(arm.line_items[li]) for li in sorted(arm.line_items)},
                "cumulative": {
                    "spend_minor": arm.spend,
                    "value_minor": arm.value,
                    "actions": arm.actions,
                    "clicks": arm.clicks,
                    "roi": m.roi,
                    "ecpa": m.ecpa,
                    "ecpc": m.ecpc,
                    "share_roi_spearman": arm.share_roi_correlation(),
                },
            }
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentReport":
        report = cls(data["seed"], data["days"])
        for name, arm in data["arms"].items():
            report.arms[name] = ArmReport(
                name,
                [DayRecord(**d) for d in arm["days"]],
                {li: LineItemSummary(**v) for li, v in arm["line_items"].items()},
            )
        return report


def write_report_json(path, report: ExperimentReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def read_report_json(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_daily_csv(path, report: ExperimentReport) -> None:
    """One row per arm-day; empty cells mark undefined eCPA / eCPC."""
    cols = ["arm", "day", "spend_minor", "spend", "value_minor", "actions", "clicks",
            "impressions", "roi", "ecpa", "ecpc"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for name in sorted(report.arms):
            for d in report.arms[name].days:
                w.writerow([name, d.day, d.spend, format_money(d.spend), d.value, d.actions,
                            d.clicks, d.impressions, _cell(d.roi), _cell(d.ecpa), _cell(d.ecpc)])


def write_budget_share_csv(path, report: ExperimentReport) -> None:
    cols = ["arm", "li", "budget_share", "realized_roi", "budget_minor", "spend_minor"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for name in sorted(report.arms):
            arm = report.arms[name]
            for li in sorted(arm.line_items):
                s = arm.line_items[li]
                w.writerow([name, li, repr(s.budget_share), _cell(s.realized_roi),
                            s.budget, s.spend])


def summarize(report: ExperimentReport) -> str:
    lines = [f"seed {report.seed}, {report.days} day(s)"]
    for name in sorted(report.arms):
        arm = report.arms[name]
        m = arm.cumulative()
        rho = arm.share_roi_correlation()
        lines.append(
            f"  {name}: spend {format_money(arm.spend)}  value {format_money(arm.value)}  "
            f"actions {arm.actions}  clicks {arm.clicks}  roi {_fmt(m.roi)}  "
            f"ecpa {_fmt(m.ecpa)}  ecpc {_fmt(m.ecpc)}  share/roi rho {_fmt(rho)}"
        )
        for li in sorted(arm.line_items):
            s = arm.line_items[li]
            lines.append(f"      {li}: share {s.budget_share:.3f}  realized roi {_fmt(s.realized_roi)}")
    return "\n".join(lines)


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.4f}"
