"""Pure-Python replay kernel; reference for the compiled ``_replay_ext``.

Both kernels share one contract (see :func:`replay_kernel`) and must
produce bit-identical arrays, so the floating-point operations here are
ordered exactly like the Cython loop.
"""

import numpy as np

from .book import OrderBook, Side

OFI_ADD, OFI_CANCEL, OFI_MARKET = 0, 1, 2


def _alloc(n_rows, n_levels):
    return {
        "row_ts": np.zeros(n_rows, dtype=np.int64),
        "bid_px": np.zeros((n_rows, n_levels), dtype=np.int64),
        "bid_qty": np.zeros((n_rows, n_levels), dtype=np.float64),
        "ask_px": np.zeros((n_rows, n_levels), dtype=np.int64),
        "ask_qty": np.zeros((n_rows, n_levels), dtype=np.float64),
        "ofi": np.zeros((n_rows, 3, 2, n_levels), dtype=np.float64),
        "bi_notional": np.zeros(n_rows, dtype=np.float64),
        "si_notional": np.zeros(n_rows, dtype=np.float64),
        "bi_count": np.zeros(n_rows, dtype=np.int64),
        "si_count": np.zeros(n_rows, dtype=np.int64),
    }


def row_count(ts, interval_ns):
    if len(ts) == 0:
        return 0, 0
    start = (int(ts[0]) // interval_ns) * interval_ns
    return start, (int(ts[-1]) - start) // interval_ns + 1


def replay_kernel(ts, kind, side, price, qty, oid, tick_size, interval_ns, n_levels):
    """Replay columnar events and sample the book every ``interval_ns``.

    Row ``k`` holds the book after every event with timestamp below
    ``start + (k + 1) * interval_ns`` and the flow accumulated over
    ``[start + k * interval_ns, start + (k + 1) * interval_ns)``.  OFI
    slots are indexed by the level's rank at the moment of the event;
    events beyond ``n_levels`` are not counted.  Trades are emitted per
    consumed price level as ``(row, book side, price_ticks, quantity)``.
    """
    n = len(ts)
    start, n_rows = row_count(ts, interval_ns)
    out = _alloc(n_rows, n_levels)
    ofi = out["ofi"]
    bi_notional, si_notional = out["bi_notional"], out["si_notional"]
    bi_count, si_count = out["bi_count"], out["si_count"]
    t_row, t_side, t_px, t_qty = [], [], [], []
    rejected = 0

    book = OrderBook(tick_size)
    orders = book._orders
    levels = book._levels
    ts_l = ts.tolist()
    kind_l = kind.tolist()
    side_l = side.tolist()
    price_l = price.tolist()
    qty_l = qty.tolist()
    oid_l = oid.tolist()

    row = 0
    boundary = start + interval_ns

    def emit(r):
        out["row_ts"][r] = start + (r + 1) * interval_ns
        for s, pk, qk in ((Side.BID, "bid_px", "bid_qty"), (Side.ASK, "ask_px", "ask_qty")):
            d = book.depth(s, n_levels)
            out[pk][r] = [p for p, _ in d]
            out[qk][r] = [q for _, q in d]

    def record_sweep(fills, consumed_side, aggressor):
        # group consecutive fills by price; ranks count from the touch
        notional_total = 0.0
        rank = 0
        i = 0
        nf = len(fills)
        while i < nf:
            px = fills[i].price
            lvl = 0.0
            while i < nf and fills[i].price == px:
                lvl += fills[i].quantity
                i += 1
            notional = px * tick_size * lvl
            if rank < n_levels:
                ofi[row, OFI_MARKET, consumed_side, rank] += notional
            notional_total += notional
            t_row.append(row)
            t_side.append(consumed_side)
            t_px.append(px)
            t_qty.append(lvl)
            rank += 1
        if nf:
            if aggressor == 0:
                bi_notional[row] += notional_total
                bi_count[row] += 1
            else:
                si_notional[row] += notional_total
                si_count[row] += 1

    for i in range(n):
        t = ts_l[i]
        while t >= boundary:
            emit(row)
            row += 1
            boundary += interval_ns
        k = kind_l[i]
        s = side_l[i]
        o = oid_l[i]
        if k == 0:
            if o in orders:
                rejected += 1
                continue
            p = price_l[i]
            fills = book._limit(Side(s), p, qty_l[i], o)
            if fills:
                record_sweep(fills, 1 - s, s)
            if o in orders:
                rank = book.rank(Side(s), p)
                if rank < n_levels:
                    ofi[row, OFI_ADD, s, rank] += p * tick_size * levels[s][p].orders[o]
        elif k == 1:
            loc = orders.get(o)
            if loc is None:
                rejected += 1
                continue
            s, p = loc
            rank = book.rank(s, p)
            removed = book.cancel(o)
            if rank < n_levels:
                ofi[row, OFI_CANCEL, s, rank] += p * tick_size * removed
        elif k == 2:
            fills, _ = book._sweep(Side(1 - s), qty_l[i], None)
            record_sweep(fills, 1 - s, s)
        else:
            raise ValueError(f"unknown event kind code {k}")
    while row < n_rows:
        emit(row)
        row += 1

    out["trade_row"] = np.asarray(t_row, dtype=np.int64)
    out["trade_side"] = np.asarray(t_side, dtype=np.int8)
    out["trade_px"] = np.asarray(t_px, dtype=np.int64)
    out["trade_qty"] = np.asarray(t_qty, dtype=np.float64)
    out["n_rejected"] = rejected
    return out
