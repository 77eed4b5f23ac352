"""Episode reports, plot-ready series files and the comparison table."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError

REPORT_VERSION = 1


@dataclass
class EpisodeReport:
    agent: str
    reward: str
    instrument: str
    date: str
    action_repeat: int
    daily_return_pct: float
    avg_trade_return_pct: float
    trade_count: int
    max_inventory: int
    fee_total: float
    realized_pnl: float = 0.0
    unrealized_pnl: float = 0.0
    trade_returns: List[float] = field(default_factory=list)
    timestamps: List[int] = field(default_factory=list)
    equity: List[float] = field(default_factory=list)
    inventory: List[int] = field(default_factory=list)
    fills: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def summary(self) -> dict:
        keys = ("agent", "reward", "instrument", "date", "action_repeat", "daily_return_pct",
                "avg_trade_return_pct", "trade_count", "max_inventory", "fee_total")
        return {k: getattr(self, k) for k in keys}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = REPORT_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeReport":
        d = dict(d)
        version = d.pop("version", REPORT_VERSION)
        if version != REPORT_VERSION:
            raise DataError(f"report version {version} is not supported")
        return cls(**d)

    def write(self, path) -> Path:
        """Write ``<path>`` (JSON) and ``<stem>.series.csv`` next to it."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        self.write_series(series_path(path))
        return path

    def write_series(self, path) -> None:
        """Equity curve per step with buy/sell fill markers."""
        buys: Dict[int, List[float]] = {}
        sells: Dict[int, List[float]] = {}
        for f in self.fills:
            (buys if f["side"] == "buy" else sells).setdefault(f["timestamp"], []).append(f["price"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp_ns", "equity", "inventory", "buy_price", "sell_price"])
            for t, e, i in zip(self.timestamps, self.equity, self.inventory):
                b = buys.get(t)
                s = sells.get(t)
                w.writerow([t, repr(e), i, repr(float(np.mean(b))) if b else "", repr(float(np.mean(s))) if s else ""])


def series_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".series.csv")


def read_report(path) -> EpisodeReport:
    try:
        return EpisodeReport.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"{path}: not a report file ({exc})") from None


def report_table(reports: Sequence[EpisodeReport]) -> List[dict]:
    """One row per (agent, reward, instrument, action repeat).

    Reports sharing a key (several days) are averaged.
    """
    groups: Dict[Tuple[str, str, str, int], List[EpisodeReport]] = {}
    for r in reports:
        groups.setdefault((r.agent, r.reward, r.instrument, r.action_repeat), []).append(r)
    rows = []
    for (agent, reward, inst, repeat), rs in sorted(groups.items()):
        rows.append({
            "agent": agent,
            "reward": reward,
            "instrument": inst,
            "action_repeat": repeat,
            "days": len(rs),
            "daily_return_pct": rs[0].daily_return_pct if len(rs) == 1 else float(np.mean([r.daily_return_pct for r in rs])),
            "avg_trade_return_pct": rs[0].avg_trade_return_pct if len(rs) == 1 else float(np.mean([r.avg_trade_return_pct for r in rs])),
            "trade_count": sum(r.trade_count for r in rs),
        })
    return rows


def format_table(rows: Sequence[dict]) -> str:
    head = ["agent", "reward", "instrument", "action_repeat", "days", "daily_return_pct", "avg_trade_return_pct", "trade_count"]
    cells = [head] + [[
        r["agent"], r["reward"], r["instrument"], str(r["action_repeat"]), str(r["days"]),
        f"{r['daily_return_pct']:.4f}", f"{r['avg_trade_return_pct']:.4f}", str(r["trade_count"]),
    ] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
