"""Synthetic level-3 event streams around a mean-reverting fair price.

The fair price follows a discretized Ornstein-Uhlenbeck process in
ticks.  Limit orders are posted a random number of ticks away from the
fair price, resting orders are cancelled at a constant hazard rate and
market orders arrive symmetrically (with a small tilt towards the fair
price, which is what pulls the midpoint back).  The stream is generated
against a live :class:`~lobmm.book.OrderBook` so cancels always
reference live orders.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .book import EventKind, OrderBook, OrderEvent, Side
from .pipeline import NS_PER_SECOND, TickFile


@dataclass
class SyntheticMarket:
    instrument: str = "SYN-USD"
    tick_size: float = 0.01
    mean_price_ticks: int = 10_000
    kappa: float = 0.02          # mean reversion per second
    sigma: float = 1.5           # fair-price noise, ticks per sqrt(second)
    limit_rate: float = 12.0     # limit orders per second
    cancel_hazard: float = 0.02  # per resting order per second
    market_rate: float = 2.0     # market orders per second
    tilt: float = 0.15           # buy-probability tilt per tick of mispricing
    mean_offset: float = 6.0     # mean distance of new limits from fair, ticks
    seed_levels: int = 25

    def generate(self, seconds: int, seed: int, date: str = "2019-11-01") -> TickFile:
        rng = np.random.default_rng(seed)
        day0 = int(dt.datetime.fromisoformat(date).replace(tzinfo=dt.timezone.utc).timestamp()) * NS_PER_SECOND
        book = OrderBook(self.tick_size)
        events = []
        live = []          # resting order ids, swap-remove via index map
        where = {}
        next_id = 0

        def add_live(oid):
            where[oid] = len(live)
            live.append(oid)

        def drop_live(oid):
            j = where.pop(oid)
            last = live.pop()
            if last != oid:
                live[j] = last
                where[last] = j

        def emit(ev):
            fills = book.apply(ev)
            for f in fills:
                if f.order_id not in book:
                    drop_live(f.order_id)
            if ev.kind == EventKind.LIMIT and ev.order_id in book:
                add_live(ev.order_id)
            elif ev.kind == EventKind.CANCEL:
                drop_live(ev.order_id)
            events.append(ev)

        def qty():
            return float(max(0.001, round(float(rng.lognormal(-0.5, 0.7)), 3)))

        fair = float(self.mean_price_ticks)
        c = self.mean_price_ticks
        t0 = day0
        for k in range(1, self.seed_levels + 1):
            for _ in range(2):
                emit(OrderEvent(EventKind.LIMIT, Side.BID, c - k, qty(), t0, f"o{next_id}"))
                next_id += 1
                emit(OrderEvent(EventKind.LIMIT, Side.ASK, c + k, qty(), t0, f"o{next_id}"))
                next_id += 1

        for sec in range(seconds):
            fair += -self.kappa * (fair - self.mean_price_ticks) + self.sigma * rng.standard_normal()
            base = day0 + sec * NS_PER_SECOND
            n_lim = rng.poisson(self.limit_rate)
            n_mkt = rng.poisson(self.market_rate)
            n_can = rng.binomial(len(live), self.cancel_hazard) if live else 0
            kinds = np.array([0] * n_lim + [2] * n_mkt + [1] * n_can)
            rng.shuffle(kinds)
            stamps = np.sort(rng.integers(0, NS_PER_SECOND, size=len(kinds)))
            for kd, off in zip(kinds.tolist(), stamps.tolist()):
                t = base + off
                if kd == 0:
                    side = Side.BID if rng.random() < 0.5 else Side.ASK
                    dist = int(rng.geometric(1.0 / self.mean_offset))
                    f = int(round(fair))
                    price = f - dist if side == Side.BID else f + dist
                    if price <= 0:
                        continue
                    emit(OrderEvent(EventKind.LIMIT, side, price, qty(), t, f"o{next_id}"))
                    next_id += 1
                elif kd == 2:
                    bb, ba = book.best_bid, book.best_ask
                    mid = (bb + ba) / 2.0 if bb is not None and ba is not None else fair
                    p_buy = float(np.clip(0.5 + self.tilt * (fair - mid), 0.05, 0.95))
                    side = Side.BID if rng.random() < p_buy else Side.ASK
                    emit(OrderEvent(EventKind.MARKET, side, 0, qty(), t, None))
                else:
                    if not live:
                        continue
                    oid = live[int(rng.integers(len(live)))]
                    s, p = book._orders[oid]
                    emit(OrderEvent(EventKind.CANCEL, s, p, book._levels[s][p].orders[oid], t, oid))
        return TickFile.from_events(events, self.instrument, self.tick_size, date)


def synthetic_day(seconds: int = 3600, seed: int = 0, date: str = "2019-11-01", **kw) -> TickFile:
    return SyntheticMarket(**kw).generate(seconds, seed, date)
