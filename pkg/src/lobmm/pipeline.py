"""Tick files, snapshot replay and the snapshot CSV dataset.

Tick file layout (one header line, then one event per line)::

    BTC-USD,0.01,2019-11-01,1
    timestamp_ns,kind,side,price_ticks,quantity,order_id
    ...

``kind`` is ``L``/``C``/``M``, ``side`` is ``B``/``A``.  For market
events the side is the aggressor and ``price_ticks`` is ignored (0).

A snapshot dataset is written as ``<name>.csv`` plus a trade sidecar
``<name>.trades.csv``; both start with a ``#lobmm-snapshots`` metadata
line followed by a column header row.  Floats use the shortest
round-trip decimal form so write/read/write is byte-stable.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import features as F
from .book import EventKind, OrderEvent, Side
from .errors import (
    DataError,
    InsufficientData,
    MalformedHeader,
    MalformedRow,
    OutOfOrderTimestamp,
    SchemaMismatch,
    UnknownEventKind,
)
from .kernels import get_kernel

log = logging.getLogger(__name__)

TICK_FORMAT_VERSION = 1
SNAPSHOT_VERSION = 1
NS_PER_SECOND = 1_000_000_000

_KIND_CODES = {"L": 0, "C": 1, "M": 2}
_KIND_LETTERS = "LCM"
_SIDE_CODES = {"B": 0, "A": 1}
_SIDE_LETTERS = "BA"


@dataclass
class TickFile:
    """Columnar event stream for one instrument and day.

    ``order_index`` holds interned ids (``-1`` for none); the original
    tokens live in ``order_ids``.
    """

    instrument: str
    tick_size: float
    date: str
    timestamp: np.ndarray
    kind: np.ndarray
    side: np.ndarray
    price: np.ndarray
    quantity: np.ndarray
    order_index: np.ndarray
    order_ids: List[str] = field(default_factory=list)
    version: int = TICK_FORMAT_VERSION

    def __len__(self):
        return len(self.timestamp)

    @property
    def events(self) -> List[OrderEvent]:
        ids = self.order_ids
        return [
            OrderEvent(EventKind(k), Side(s), int(p), float(q), int(t), ids[o] if o >= 0 else None)
            for t, k, s, p, q, o in zip(
                self.timestamp.tolist(), self.kind.tolist(), self.side.tolist(),
                self.price.tolist(), self.quantity.tolist(), self.order_index.tolist(),
            )
        ]

    @classmethod
    def from_events(cls, events: Sequence[OrderEvent], instrument: str, tick_size: float, date: str) -> "TickFile":
        intern: Dict[str, int] = {}
        ids: List[str] = []
        idx = []
        for ev in events:
            if ev.order_id is None or ev.order_id == "":
                idx.append(-1)
                continue
            tok = str(ev.order_id)
            j = intern.get(tok)
            if j is None:
                j = intern[tok] = len(ids)
                ids.append(tok)
            idx.append(j)
        return cls(
            instrument=instrument,
            tick_size=float(tick_size),
            date=date,
            timestamp=np.array([e.timestamp for e in events], dtype=np.int64),
            kind=np.array([int(e.kind) for e in events], dtype=np.int8),
            side=np.array([int(e.side) for e in events], dtype=np.int8),
            price=np.array([e.price for e in events], dtype=np.int64),
            quantity=np.array([e.quantity for e in events], dtype=np.float64),
            order_index=np.array(idx, dtype=np.int64),
            order_ids=ids,
        )


def _parse_header(line: str, path) -> Tuple[str, float, str, int]:
    parts = line.strip().split(",")
    if len(parts) != 4:
        raise MalformedHeader(f"{path}: header must be 'instrument,tick_size,date,version'")
    instrument, tick, date, version = parts
    try:
        tick_size = float(tick)
        dt.date.fromisoformat(date)
        version = int(version)
    except ValueError as exc:
        raise MalformedHeader(f"{path}: {exc}") from None
    if not instrument or not tick_size > 0:
        raise MalformedHeader(f"{path}: empty instrument or non-positive tick size")
    if version != TICK_FORMAT_VERSION:
        raise MalformedHeader(f"{path}: unsupported tick format version {version}")
    return instrument, tick_size, date, version


def parse_ticks(path) -> TickFile:
    """Read and validate a tick file; any defect rejects the whole file."""
    path = Path(path)
    ts, kinds, sides, prices, qtys, idx = [], [], [], [], [], []
    intern: Dict[str, int] = {}
    ids: List[str] = []
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header:
            raise MalformedHeader(f"{path}: empty file")
        instrument, tick_size, date, version = _parse_header(header, path)
        last = None
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != 6:
                raise MalformedRow(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            t_s, k_s, s_s, p_s, q_s, oid = row
            k = _KIND_CODES.get(k_s)
            if k is None:
                raise UnknownEventKind(f"{path}:{lineno}: unknown event kind {k_s!r}")
            s = _SIDE_CODES.get(s_s)
            if s is None:
                raise MalformedRow(f"{path}:{lineno}: unknown side {s_s!r}")
            try:
                t = int(t_s)
                p = int(p_s)
                q = float(q_s)
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            if last is not None and t < last:
                raise OutOfOrderTimestamp(f"{path}:{lineno}: timestamp {t} precedes {last}")
            last = t
            if not q > 0.0:
                raise MalformedRow(f"{path}:{lineno}: quantity must be positive")
            if k != 2 and p <= 0:
                raise MalformedRow(f"{path}:{lineno}: price must be positive")
            if k != 2 and not oid:
                raise MalformedRow(f"{path}:{lineno}: limit/cancel needs an order id")
            if oid:
                j = intern.get(oid)
                if j is None:
                    j = intern[oid] = len(ids)
                    ids.append(oid)
            else:
                j = -1
            ts.append(t)
            kinds.append(k)
            sides.append(s)
            prices.append(p)
            qtys.append(q)
            idx.append(j)
    tf = TickFile(
        instrument, tick_size, date,
        np.array(ts, dtype=np.int64), np.array(kinds, dtype=np.int8), np.array(sides, dtype=np.int8),
        np.array(prices, dtype=np.int64), np.array(qtys, dtype=np.float64), np.array(idx, dtype=np.int64),
        ids, version,
    )
    _warn_partial_day(tf)
    return tf


def _day_bounds(date: str) -> Tuple[int, int]:
    d = dt.datetime.fromisoformat(date).replace(tzinfo=dt.timezone.utc)
    start = int(d.timestamp()) * NS_PER_SECOND
    return start, start + 86_400 * NS_PER_SECOND


def _warn_partial_day(tf: TickFile) -> None:
    if not len(tf):
        return
    lo, hi = _day_bounds(tf.date)
    if tf.timestamp[0] < lo or tf.timestamp[-1] >= hi:
        log.warning("%s %s: events fall outside the UTC day", tf.instrument, tf.date)
    elif tf.timestamp[-1] - tf.timestamp[0] < 86_000 * NS_PER_SECOND:
        log.warning("%s %s: partial day", tf.instrument, tf.date)


def write_ticks(path, tf: TickFile) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{tf.instrument},{tf.tick_size!r},{tf.date},{tf.version}\n")
        ids = tf.order_ids
        for t, k, s, p, q, o in zip(
            tf.timestamp.tolist(), tf.kind.tolist(), tf.side.tolist(),
            tf.price.tolist(), tf.quantity.tolist(), tf.order_index.tolist(),
        ):
            fh.write(f"{t},{_KIND_LETTERS[k]},{_SIDE_LETTERS[s]},{p},{q!r},{ids[o] if o >= 0 else ''}\n")


# -- snapshots ------------------------------------------------------------------------
_META_COLUMNS = ("timestamp_ns", "midpoint", "best_bid", "best_ask", "bi_notional", "si_notional", "bi_count", "si_count")


@dataclass
class SnapshotDataset:
    """One row per snapshot interval, raw (unnormalized) features.

    Depth columns (prices in ticks) and the per-interval trade prints
    are carried along because the environment needs them to place
    orders and simulate fills.  ``trade_row[j]`` is the row whose
    interval contains print ``j``; ``trade_side`` is the book side the
    print consumed.
    """

    instrument: str
    tick_size: float
    date: str
    interval_ns: int
    windows: Tuple[int, ...]
    columns: Tuple[str, ...]
    timestamp: np.ndarray
    features: np.ndarray
    bi_notional: np.ndarray
    si_notional: np.ndarray
    bi_count: np.ndarray
    si_count: np.ndarray
    bid_px: np.ndarray
    bid_qty: np.ndarray
    ask_px: np.ndarray
    ask_qty: np.ndarray
    trade_row: np.ndarray
    trade_side: np.ndarray
    trade_px: np.ndarray
    trade_qty: np.ndarray
    n_events: int = 0
    n_rejected: int = 0
    version: int = SNAPSHOT_VERSION

    def __len__(self):
        return len(self.timestamp)

    @property
    def n_levels(self) -> int:
        return self.bid_px.shape[1]

    @property
    def midpoint(self) -> np.ndarray:
        return (self.bid_px[:, 0] + self.ask_px[:, 0]) * self.tick_size / 2.0

    @property
    def best_bid(self) -> np.ndarray:
        return self.bid_px[:, 0] * self.tick_size

    @property
    def best_ask(self) -> np.ndarray:
        return self.ask_px[:, 0] * self.tick_size

    def trade_offsets(self) -> np.ndarray:
        """``offsets[k]:offsets[k+1]`` slices the prints of row ``k``."""
        return np.searchsorted(self.trade_row, np.arange(len(self) + 1), side="left")

    def depth_columns(self) -> List[str]:
        L = self.n_levels
        return [f"{name}_{i}" for name in ("bid_px", "bid_qty", "ask_px", "ask_qty") for i in range(L)]

    def all_columns(self) -> List[str]:
        return list(_META_COLUMNS) + list(self.columns) + self.depth_columns()


def replay_to_snapshots(
    ticks: TickFile,
    interval_ns: int = NS_PER_SECOND,
    n_levels: int = F.N_LEVELS,
    windows_s: Sequence[int] = F.WINDOWS,
    backend: Optional[str] = None,
) -> SnapshotDataset:
    """Replay a tick file through the book and sample it every interval.

    Seconds without events still produce a row from the standing book.
    Leading rows taken before both sides of the book were populated are
    dropped.  Feature windows are given in seconds and converted to
    snapshot counts.
    """
    kernel = get_kernel(backend)
    raw = kernel(
        np.ascontiguousarray(ticks.timestamp, dtype=np.int64),
        np.ascontiguousarray(ticks.kind, dtype=np.int8),
        np.ascontiguousarray(ticks.side, dtype=np.int8),
        np.ascontiguousarray(ticks.price, dtype=np.int64),
        np.ascontiguousarray(ticks.quantity, dtype=np.float64),
        np.ascontiguousarray(ticks.order_index, dtype=np.int64),
        float(ticks.tick_size), int(interval_ns), int(n_levels),
    )
    if raw["n_rejected"]:
        log.info("%s: %d events rejected during replay", ticks.instrument, raw["n_rejected"])
    two_sided = (raw["bid_qty"][:, 0] > 0.0) & (raw["ask_qty"][:, 0] > 0.0)
    first = int(np.argmax(two_sided)) if two_sided.any() else len(two_sided)
    if first:
        log.warning("%s: dropping %d leading one-sided snapshots", ticks.instrument, first)
    rows = slice(first, None)
    trimmed = {k: raw[k][rows] for k in ("row_ts", "bid_px", "bid_qty", "ask_px", "ask_qty", "ofi",
                                         "bi_notional", "si_notional", "bi_count", "si_count")}
    if np.any((trimmed["bid_px"][:, 0] + trimmed["ask_px"][:, 0]) <= 0):
        raise DataError(f"{ticks.instrument}: book emptied on both sides mid-replay")
    windows_rows = tuple(max(1, int(round(w * NS_PER_SECOND / interval_ns))) for w in windows_s)
    feats = F.market_features(trimmed, ticks.tick_size, windows_rows)
    keep = raw["trade_row"] >= first
    return SnapshotDataset(
        instrument=ticks.instrument,
        tick_size=float(ticks.tick_size),
        date=ticks.date,
        interval_ns=int(interval_ns),
        windows=tuple(int(w) for w in windows_s),
        columns=tuple(F.market_feature_names(n_levels, windows_s)),
        timestamp=trimmed["row_ts"],
        features=feats,
        bi_notional=trimmed["bi_notional"],
        si_notional=trimmed["si_notional"],
        bi_count=trimmed["bi_count"],
        si_count=trimmed["si_count"],
        bid_px=trimmed["bid_px"],
        bid_qty=trimmed["bid_qty"],
        ask_px=trimmed["ask_px"],
        ask_qty=trimmed["ask_qty"],
        trade_row=raw["trade_row"][keep] - first,
        trade_side=raw["trade_side"][keep],
        trade_px=raw["trade_px"][keep],
        trade_qty=raw["trade_qty"][keep],
        n_events=len(ticks),
        n_rejected=int(raw["n_rejected"]),
    )


def _meta_line(ds: SnapshotDataset) -> str:
    return (
        f"#lobmm-snapshots,version={ds.version},instrument={ds.instrument},tick_size={ds.tick_size!r},"
        f"date={ds.date},interval_ns={ds.interval_ns},levels={ds.n_levels},"
        f"windows={';'.join(str(w) for w in ds.windows)},events={ds.n_events},rejected={ds.n_rejected}\n"
    )


def _parse_meta(line: str, path) -> Dict[str, str]:
    if not line.startswith("#lobmm-snapshots,"):
        raise SchemaMismatch(f"{path}: not a snapshot file")
    meta = dict(kv.split("=", 1) for kv in line.strip().split(",")[1:])
    if int(meta.get("version", -1)) != SNAPSHOT_VERSION:
        raise SchemaMismatch(f"{path}: snapshot version {meta.get('version')} != {SNAPSHOT_VERSION}")
    return meta


def trades_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".trades" + path.suffix)


def _atomic_write(path: Path, write) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_snapshots(path, ds: SnapshotDataset) -> None:
    path = Path(path)
    meta = _meta_line(ds)

    def body(fh):
        fh.write(meta)
        fh.write(",".join(ds.all_columns()) + "\n")
        fr = repr
        ts = ds.timestamp.tolist()
        mid, bb, ba = ds.midpoint.tolist(), ds.best_bid.tolist(), ds.best_ask.tolist()
        bin_, sin_ = ds.bi_notional.tolist(), ds.si_notional.tolist()
        bic, sic = ds.bi_count.tolist(), ds.si_count.tolist()
        feats = ds.features.tolist()
        bpx, bq, apx, aq = ds.bid_px.tolist(), ds.bid_qty.tolist(), ds.ask_px.tolist(), ds.ask_qty.tolist()
        for i in range(len(ts)):
            parts = [str(ts[i]), fr(mid[i]), fr(bb[i]), fr(ba[i]), fr(bin_[i]), fr(sin_[i]), str(bic[i]), str(sic[i])]
            parts += map(fr, feats[i])
            parts += map(str, bpx[i])
            parts += map(fr, bq[i])
            parts += map(str, apx[i])
            parts += map(fr, aq[i])
            fh.write(",".join(parts) + "\n")

    def trades(fh):
        fh.write(meta)
        fh.write("row,side,price_ticks,quantity\n")
        for r, s, p, q in zip(ds.trade_row.tolist(), ds.trade_side.tolist(), ds.trade_px.tolist(), ds.trade_qty.tolist()):
            fh.write(f"{r},{_SIDE_LETTERS[s]},{p},{q!r}\n")

    _atomic_write(trades_path(path), trades)
    _atomic_write(path, body)


def read_snapshots(path) -> SnapshotDataset:
    path = Path(path)
    tpath = trades_path(path)
    for p in (path, tpath):
        if not p.exists():
            raise DataError(f"missing snapshot file {p}")
    with open(path) as fh:
        meta = _parse_meta(fh.readline(), path)
        header = fh.readline().strip().split(",")
    L = int(meta["levels"])
    windows = tuple(int(w) for w in meta["windows"].split(";"))
    feat_cols = F.market_feature_names(L, windows)
    expected = list(_META_COLUMNS) + feat_cols + [
        f"{name}_{i}" for name in ("bid_px", "bid_qty", "ask_px", "ask_qty") for i in range(L)
    ]
    if header != expected:
        raise SchemaMismatch(f"{path}: column header does not match schema v{SNAPSHOT_VERSION}")
    n_cols = len(expected)
    data = np.loadtxt(path, delimiter=",", skiprows=2, dtype=np.float64, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, n_cols))
    ts = np.loadtxt(path, delimiter=",", skiprows=2, usecols=0, dtype=np.int64, ndmin=1)
    if data.shape[1] != n_cols:
        raise SchemaMismatch(f"{path}: expected {n_cols} columns, got {data.shape[1]}")
    nf = len(feat_cols)
    off = len(_META_COLUMNS)
    feats = data[:, off:off + nf]
    depth = data[:, off + nf:]

    with open(tpath) as fh:
        tmeta = _parse_meta(fh.readline(), tpath)
        fh.readline()
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if tmeta != meta:
        raise SchemaMismatch(f"{tpath}: metadata differs from {path}")
    return SnapshotDataset(
        instrument=meta["instrument"],
        tick_size=float(meta["tick_size"]),
        date=meta["date"],
        interval_ns=int(meta["interval_ns"]),
        windows=windows,
        columns=tuple(feat_cols),
        timestamp=ts,
        features=feats,
        bi_notional=data[:, 4].copy(),
        si_notional=data[:, 5].copy(),
        bi_count=data[:, 6].astype(np.int64),
        si_count=data[:, 7].astype(np.int64),
        bid_px=depth[:, 0:L].astype(np.int64),
        bid_qty=depth[:, L:2 * L].copy(),
        ask_px=depth[:, 2 * L:3 * L].astype(np.int64),
        ask_qty=depth[:, 3 * L:4 * L].copy(),
        trade_row=np.array([int(r[0]) for r in rows], dtype=np.int64),
        trade_side=np.array([_SIDE_CODES[r[1]] for r in rows], dtype=np.int8),
        trade_px=np.array([int(r[2]) for r in rows], dtype=np.int64),
        trade_qty=np.array([float(r[3]) for r in rows], dtype=np.float64),
        n_events=int(meta.get("events", 0)),
        n_rejected=int(meta.get("rejected", 0)),
    )


@dataclass
class MarketDay:
    """A snapshot day with its market features z-scored by another day."""

    dataset: SnapshotDataset
    stats: F.NormalizerStats
    features: np.ndarray

    def __len__(self):
        return len(self.dataset)


def normalize_day(ds: SnapshotDataset, stats: F.NormalizerStats) -> MarketDay:
    if stats.columns and tuple(stats.columns) != tuple(ds.columns):
        raise SchemaMismatch("normalizer columns do not match the dataset")
    return MarketDay(ds, stats, F.normalize(ds.features, stats))


def fit_day(ds: SnapshotDataset) -> F.NormalizerStats:
    if len(ds) < 2:
        raise InsufficientData(f"{ds.instrument} {ds.date}: need at least 2 snapshots to fit")
    return F.fit_normalizer(ds.features, ds.columns)


def load_dataset(fit_path, eval_path) -> Tuple[F.NormalizerStats, MarketDay]:
    """Fit the normalizer on one day and apply it to another.

    Both files are read and validated before anything is returned.
    """
    fit_ds = read_snapshots(fit_path)
    eval_ds = fit_ds if Path(eval_path) == Path(fit_path) else read_snapshots(eval_path)
    if fit_ds.columns != eval_ds.columns or fit_ds.interval_ns != eval_ds.interval_ns:
        raise SchemaMismatch(f"{fit_path} and {eval_path} have different schemas")
    stats = fit_day(fit_ds)
    return stats, normalize_day(eval_ds, stats)
