# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled replay kernel.  Same contract and arithmetic as ``_replay_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, int8_t
from libcpp.map cimport map as cmap
from libcpp.deque cimport deque
from libcpp.vector cimport vector
from libcpp.unordered_map cimport unordered_map
from cython.operator cimport dereference as deref, preincrement as inc

cnp.import_array()

# Bid keys are negated prices so that begin() is the touch on both sides.
ctypedef cmap[int64_t, int64_t] SideMap


cdef class _Book:
    cdef SideMap bids
    cdef SideMap asks
    cdef vector[deque[int64_t]] queues
    cdef vector[double] totals
    cdef vector[int64_t] live
    cdef vector[int64_t] free_slots
    # per event index (order "seq")
    cdef vector[double] oqty
    cdef vector[int8_t] oalive
    cdef vector[int8_t] oside
    cdef vector[int64_t] oprice
    cdef unordered_map[int64_t, int64_t] by_oid
    cdef vector[int64_t] seq_oid

    def __cinit__(self, int64_t n_events):
        self.oqty.resize(n_events, 0.0)
        self.oalive.resize(n_events, 0)
        self.oside.resize(n_events, 0)
        self.oprice.resize(n_events, 0)
        self.seq_oid.resize(n_events, 0)

    cdef inline SideMap* side(self, int s):
        return &self.bids if s == 0 else &self.asks

    cdef inline int64_t key(self, int s, int64_t p):
        return -p if s == 0 else p

    cdef int64_t new_level(self, int s, int64_t p):
        cdef int64_t li
        if self.free_slots.size() > 0:
            li = self.free_slots.back()
            self.free_slots.pop_back()
            self.totals[li] = 0.0
            self.live[li] = 0
        else:
            li = self.queues.size()
            self.queues.push_back(deque[int64_t]())
            self.totals.push_back(0.0)
            self.live.push_back(0)
        deref(self.side(s))[self.key(s, p)] = li
        return li

    cdef void drop_level(self, int s, int64_t p, int64_t li):
        deref(self.side(s)).erase(self.key(s, p))
        self.queues[li].clear()
        self.free_slots.push_back(li)

    cdef int64_t rank(self, int s, int64_t p, int64_t cap):
        cdef int64_t k = self.key(s, p)
        cdef int64_t r = 0
        cdef SideMap.iterator it = deref(self.side(s)).begin()
        while it != deref(self.side(s)).end() and r < cap:
            if deref(it).first >= k:
                break
            r += 1
            inc(it)
        return r

    cdef bint has_best(self, int s):
        return not deref(self.side(s)).empty()

    cdef int64_t best(self, int s):
        cdef int64_t k = deref(deref(self.side(s)).begin()).first
        return -k if s == 0 else k


def replay_kernel(cnp.int64_t[::1] ts, cnp.int8_t[::1] kind, cnp.int8_t[::1] side,
                  cnp.int64_t[::1] price, cnp.float64_t[::1] qty, cnp.int64_t[::1] oid,
                  double tick_size, int64_t interval_ns, int n_levels):
    cdef int64_t n = ts.shape[0]
    cdef int64_t start = 0, n_rows = 0
    if n > 0:
        start = (ts[0] // interval_ns) * interval_ns
        n_rows = (ts[n - 1] - start) // interval_ns + 1

    row_ts_a = np.zeros(n_rows, dtype=np.int64)
    depth_px_a = np.zeros((2, n_rows, n_levels), dtype=np.int64)
    depth_qty_a = np.zeros((2, n_rows, n_levels), dtype=np.float64)
    ofi_a = np.zeros((n_rows, 3, 2, n_levels), dtype=np.float64)
    bin_a = np.zeros(n_rows, dtype=np.float64)
    sin_a = np.zeros(n_rows, dtype=np.float64)
    bic_a = np.zeros(n_rows, dtype=np.int64)
    sic_a = np.zeros(n_rows, dtype=np.int64)

    cdef cnp.int64_t[::1] row_ts = row_ts_a
    cdef cnp.int64_t[:, :, ::1] px_out = depth_px_a
    cdef cnp.float64_t[:, :, ::1] qty_out = depth_qty_a
    cdef cnp.float64_t[:, :, :, ::1] ofi = ofi_a
    cdef cnp.float64_t[::1] bi_notional = bin_a
    cdef cnp.float64_t[::1] si_notional = sin_a
    cdef cnp.int64_t[::1] bi_count = bic_a
    cdef cnp.int64_t[::1] si_count = sic_a

    cdef vector[int64_t] t_row
    cdef vector[int8_t] t_side
    cdef vector[int64_t] t_px
    cdef vector[double] t_qty

    cdef _Book book = _Book(n)
    cdef int64_t rejected = 0
    cdef int64_t row = 0
    cdef int64_t boundary = start + interval_ns
    cdef int64_t i, t, p, o, li, seq, px, last, r, lvl_rank
    cdef int k, s, c, d, j, step
    cdef double remaining, oq, f, lvl, notional, notional_total, rest
    cdef bint swept
    cdef SideMap.iterator it
    cdef unordered_map[int64_t, int64_t].iterator fit

    for i in range(n + 1):
        if i < n:
            t = ts[i]
        else:
            t = start + n_rows * interval_ns  # flush remaining rows
        while t >= boundary and row < n_rows:
            row_ts[row] = start + (row + 1) * interval_ns
            for d in range(2):
                step = -1 if d == 0 else 1
                j = 0
                it = deref(book.side(d)).begin()
                while j < n_levels and it != deref(book.side(d)).end():
                    px = -deref(it).first if d == 0 else deref(it).first
                    px_out[d, row, j] = px
                    qty_out[d, row, j] = book.totals[deref(it).second]
                    j += 1
                    inc(it)
                if j < n_levels:
                    if j > 0:
                        last = px_out[d, row, j - 1]
                    elif book.has_best(1 - d):
                        last = book.best(1 - d)
                    else:
                        last = 0
                    while j < n_levels:
                        last += step
                        px_out[d, row, j] = last
                        qty_out[d, row, j] = 0.0
                        j += 1
            row += 1
            boundary += interval_ns
        if i == n:
            break

        k = kind[i]
        s = side[i]
        o = oid[i]
        if k == 0 or k == 2:
            if k == 0 and book.by_oid.count(o):
                rejected += 1
                continue
            # sweep the contra side (crossing part of a limit, or a market order)
            c = 1 - s
            remaining = qty[i]
            p = price[i]
            swept = False
            notional_total = 0.0
            lvl_rank = 0
            while remaining > 0.0 and not deref(book.side(c)).empty():
                it = deref(book.side(c)).begin()
                px = -deref(it).first if c == 0 else deref(it).first
                if k == 0 and ((s == 0 and px > p) or (s == 1 and px < p)):
                    break
                li = deref(it).second
                lvl = 0.0
                while remaining > 0.0 and book.live[li] > 0:
                    seq = book.queues[li].front()
                    if not book.oalive[seq]:
                        book.queues[li].pop_front()
                        continue
                    oq = book.oqty[seq]
                    if oq <= remaining:
                        f = oq
                        remaining -= oq
                        book.oalive[seq] = 0
                        book.by_oid.erase(book.seq_oid[seq])
                        book.queues[li].pop_front()
                        book.live[li] -= 1
                    else:
                        f = remaining
                        book.oqty[seq] = oq - remaining
                        remaining = 0.0
                    book.totals[li] -= f
                    lvl += f
                notional = px * tick_size * lvl
                if lvl_rank < n_levels:
                    ofi[row, 2, c, lvl_rank] += notional
                notional_total += notional
                t_row.push_back(row)
                t_side.push_back(c)
                t_px.push_back(px)
                t_qty.push_back(lvl)
                lvl_rank += 1
                swept = True
                if book.live[li] == 0:
                    book.drop_level(c, px, li)
            if swept:
                if s == 0:
                    bi_notional[row] += notional_total
                    bi_count[row] += 1
                else:
                    si_notional[row] += notional_total
                    si_count[row] += 1
            if k == 0 and remaining > 0.0:
                it = deref(book.side(s)).find(book.key(s, p))
                if it == deref(book.side(s)).end():
                    li = book.new_level(s, p)
                else:
                    li = deref(it).second
                book.queues[li].push_back(i)
                book.live[li] += 1
                book.totals[li] += remaining
                book.oqty[i] = remaining
                book.oalive[i] = 1
                book.oside[i] = s
                book.oprice[i] = p
                book.seq_oid[i] = o
                book.by_oid[o] = i
                r = book.rank(s, p, n_levels)
                if r < n_levels:
                    ofi[row, 0, s, r] += p * tick_size * remaining
        elif k == 1:
            fit = book.by_oid.find(o)
            if fit == book.by_oid.end():
                rejected += 1
                continue
            seq = deref(fit).second
            s = book.oside[seq]
            p = book.oprice[seq]
            r = book.rank(s, p, n_levels)
            li = deref(book.side(s))[book.key(s, p)]
            rest = book.oqty[seq]
            book.oalive[seq] = 0
            book.by_oid.erase(fit)
            book.totals[li] -= rest
            book.live[li] -= 1
            if book.live[li] == 0:
                book.drop_level(s, p, li)
            if r < n_levels:
                ofi[row, 1, s, r] += p * tick_size * rest
        else:
            raise ValueError(f"unknown event kind code {k}")

    cdef Py_ssize_t nt = t_row.size()
    trade_row = np.empty(nt, dtype=np.int64)
    trade_side = np.empty(nt, dtype=np.int8)
    trade_px = np.empty(nt, dtype=np.int64)
    trade_qty = np.empty(nt, dtype=np.float64)
    cdef cnp.int64_t[::1] tr = trade_row
    cdef cnp.int8_t[::1] tsd = trade_side
    cdef cnp.int64_t[::1] tp = trade_px
    cdef cnp.float64_t[::1] tq = trade_qty
    cdef Py_ssize_t m
    for m in range(nt):
        tr[m] = t_row[m]
        tsd[m] = t_side[m]
        tp[m] = t_px[m]
        tq[m] = t_qty[m]

    return {
        "row_ts": row_ts_a,
        "bid_px": depth_px_a[0],
        "bid_qty": depth_qty_a[0],
        "ask_px": depth_px_a[1],
        "ask_qty": depth_qty_a[1],
        "ofi": ofi_a,
        "bi_notional": bin_a,
        "si_notional": sin_a,
        "bi_count": bic_a,
        "si_count": sic_a,
        "trade_row": trade_row,
        "trade_side": trade_side,
        "trade_px": trade_px,
        "trade_qty": trade_qty,
        "n_rejected": rejected,
    }
