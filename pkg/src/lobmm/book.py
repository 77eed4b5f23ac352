"""Price-time priority limit order book.

Prices are integer tick counts; the instrument's tick size is only used
when a monetary value is requested (midpoint, spread, notional).  Each
price level keeps its resting orders in an insertion-ordered dict, which
gives FIFO iteration plus O(1) cancellation from the middle of the queue.
"""

from __future__ import annotations

import enum
import logging
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from typing import Hashable, Iterator, List, Optional, Sequence, Tuple

from .errors import DuplicateOrder, EmptySide, UnknownOrder

log = logging.getLogger(__name__)


class Side(enum.IntEnum):
    BID = 0
    ASK = 1

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


class EventKind(enum.IntEnum):
    LIMIT = 0
    CANCEL = 1
    MARKET = 2


@dataclass(frozen=True)
class OrderEvent:
    """One exchange message.

    For ``LIMIT`` and ``CANCEL`` the side is the book side the order rests
    on.  For ``MARKET`` it is the aggressor: a ``BID`` market order buys
    and consumes ask liquidity.  Market prices are ignored (use 0).
    """

    kind: EventKind
    side: Side
    price: int
    quantity: float
    timestamp: int
    order_id: Hashable = None


@dataclass(frozen=True)
class Fill:
    order_id: Hashable
    price: int
    quantity: float


class PriceLevel:
    """Aggregated level with its FIFO queue of ``order_id -> remaining``."""

    __slots__ = ("price", "orders", "total_quantity")

    def __init__(self, price: int):
        self.price = price
        self.orders: dict = {}
        self.total_quantity = 0.0

    def queue(self) -> List[Tuple[Hashable, float]]:
        return list(self.orders.items())

    def __repr__(self):
        return f"PriceLevel({self.price}, {self.total_quantity!r}, n={len(self.orders)})"


class OrderBook:
    """Full-depth order book reconstructed from an event stream.

    Single writer.  Readers may query concurrently as long as no
    :meth:`apply` is in flight.
    """

    def __init__(self, tick_size: float = 1.0):
        self.tick_size = tick_size
        self._levels: Tuple[dict, dict] = ({}, {})
        # ascending prices per side; best bid is [-1], best ask is [0]
        self._prices: Tuple[list, list] = ([], [])
        self._orders: dict = {}  # order_id -> (side, price)
        self.last_event_time = 0

    # -- queries -------------------------------------------------------------------
    @property
    def bids(self) -> List[PriceLevel]:
        """Bid levels, best first."""
        lv = self._levels[Side.BID]
        return [lv[p] for p in reversed(self._prices[Side.BID])]

    @property
    def asks(self) -> List[PriceLevel]:
        lv = self._levels[Side.ASK]
        return [lv[p] for p in self._prices[Side.ASK]]

    def levels(self, side: Side) -> List[PriceLevel]:
        return self.bids if side == Side.BID else self.asks

    def best_price(self, side: Side) -> Optional[int]:
        prices = self._prices[side]
        if not prices:
            return None
        return prices[-1] if side == Side.BID else prices[0]

    @property
    def best_bid(self) -> Optional[int]:
        return self.best_price(Side.BID)

    @property
    def best_ask(self) -> Optional[int]:
        return self.best_price(Side.ASK)

    def _touch(self) -> Tuple[int, int]:
        bb, ba = self.best_bid, self.best_ask
        if bb is None or ba is None:
            raise EmptySide("midpoint/spread need both sides of the book")
        return bb, ba

    def midpoint(self) -> float:
        bb, ba = self._touch()
        return (bb + ba) * self.tick_size / 2.0

    def spread(self) -> float:
        bb, ba = self._touch()
        return (ba - bb) * self.tick_size

    def level_quantity(self, side: Side, price: int) -> float:
        level = self._levels[side].get(price)
        return 0.0 if level is None else level.total_quantity

    def rank(self, side: Side, price: int) -> int:
        """Number of occupied levels strictly better than ``price``."""
        prices = self._prices[side]
        if side == Side.BID:
            return len(prices) - bisect_right(prices, price)
        return bisect_left(prices, price)

    def depth(self, side: Side, n_levels: int) -> List[Tuple[int, float]]:
        """Best ``n_levels`` as ``(price_ticks, quantity)``, padded.

        Missing levels continue one tick further from the last real price
        with quantity 0.  An empty side pads outward from one tick beyond
        the opposite best price (or from 0 when the book is empty).
        """
        prices = self._prices[side]
        lv = self._levels[side]
        step = -1 if side == Side.BID else 1
        if side == Side.BID:
            real = prices[:-n_levels - 1:-1] if n_levels else []
        else:
            real = prices[:n_levels]
        out = [(p, lv[p].total_quantity) for p in real]
        if len(out) < n_levels:
            if out:
                last = out[-1][0]
            else:
                other = self.best_price(side.opposite)
                last = 0 if other is None else other
            for _ in range(n_levels - len(out)):
                last += step
                out.append((last, 0.0))
        return out

    def queue_ahead(self, side: Side, price: int, order_id: Hashable) -> float:
        level = self._levels[side].get(price)
        if level is None or order_id not in level.orders:
            raise UnknownOrder(f"order {order_id!r} is not live at {side.name} {price}")
        ahead = 0.0
        for oid, qty in level.orders.items():
            if oid == order_id:
                return ahead
            ahead += qty
        raise AssertionError("unreachable")

    def __contains__(self, order_id) -> bool:
        return order_id in self._orders

    def __len__(self) -> int:
        return len(self._orders)

    def iter_orders(self) -> Iterator[Tuple[Side, int, Hashable, float]]:
        for side in (Side.BID, Side.ASK):
            for level in self.levels(side):
                for oid, qty in level.orders.items():
                    yield side, level.price, oid, qty

    def state(self):
        """Hashable structural snapshot, used for replay comparisons."""
        return tuple(
            tuple((lv.price, lv.total_quantity, tuple(lv.orders.items())) for lv in self.levels(s))
            for s in (Side.BID, Side.ASK)
        )

    # -- mutation --------------------------------------------------------------------
    def apply(self, event: OrderEvent) -> List[Fill]:
        """Apply one event; returns the resting liquidity it consumed.

        Raises :class:`UnknownOrder` for a cancel of a non-live order and
        :class:`DuplicateOrder` for a limit reusing a live id.  Both leave
        the book untouched.
        """
        self.last_event_time = event.timestamp
        kind = event.kind
        if kind == EventKind.LIMIT:
            return self._limit(Side(event.side), event.price, event.quantity, event.order_id)
        if kind == EventKind.CANCEL:
            self.cancel(event.order_id)
            return []
        if kind == EventKind.MARKET:
            return self._sweep(Side(event.side).opposite, event.quantity, None)[0]
        raise ValueError(f"unknown event kind {kind!r}")

    def cancel(self, order_id: Hashable) -> float:
        """Remove a live order, returning its remaining quantity."""
        try:
            side, price = self._orders.pop(order_id)
        except KeyError:
            log.debug("cancel of unknown order %r", order_id)
            raise UnknownOrder(f"cancel of unknown order {order_id!r}") from None
        level = self._levels[side][price]
        qty = level.orders.pop(order_id)
        level.total_quantity -= qty
        if not level.orders:
            self._drop_level(side, price)
        return qty

    def _limit(self, side: Side, price: int, qty: float, order_id) -> List[Fill]:
        if order_id in self._orders:
            raise DuplicateOrder(f"order id {order_id!r} is already live")
        fills: List[Fill] = []
        contra = self.best_price(side.opposite)
        if contra is not None and (price >= contra if side == Side.BID else price <= contra):
            # marketable: match first, rest the remainder
            fills, qty = self._sweep(side.opposite, qty, price)
            if qty <= 0.0:
                return fills
        level = self._levels[side].get(price)
        if level is None:
            level = PriceLevel(price)
            self._levels[side][price] = level
            insort(self._prices[side], price)
        level.orders[order_id] = qty
        level.total_quantity += qty
        self._orders[order_id] = (side, price)
        return fills

    def _sweep(self, side: Side, qty: float, limit_price: Optional[int]) -> Tuple[List[Fill], float]:
        """Consume ``side`` from the best price inward, FIFO within a level.

        Returns the fills and the unfilled remainder.
        """
        fills: List[Fill] = []
        prices = self._prices[side]
        levels = self._levels[side]
        remaining = qty
        while remaining > 0.0 and prices:
            price = prices[-1] if side == Side.BID else prices[0]
            if limit_price is not None and (price < limit_price if side == Side.BID else price > limit_price):
                break
            level = levels[price]
            orders = level.orders
            while remaining > 0.0 and orders:
                oid = next(iter(orders))
                oq = orders[oid]
                if oq <= remaining:
                    f = oq
                    remaining -= oq
                    del orders[oid]
                    del self._orders[oid]
                else:
                    f = remaining
                    orders[oid] = oq - remaining
                    remaining = 0.0
                level.total_quantity -= f
                fills.append(Fill(oid, price, f))
            if not orders:
                self._drop_level(side, price)
        return fills, remaining

    def _drop_level(self, side: Side, price: int) -> None:
        del self._levels[side][price]
        prices = self._prices[side]
        if side == Side.BID and prices[-1] == price:
            prices.pop()
        elif side == Side.ASK and prices[0] == price:
            del prices[0]
        else:
            del prices[bisect_left(prices, price)]


def apply_event(book: OrderBook, event: OrderEvent) -> List[Fill]:
    return book.apply(event)


def replay(events: Sequence[OrderEvent], tick_size: float = 1.0, strict: bool = False) -> OrderBook:
    """Build a book from scratch; rejected events are skipped unless ``strict``."""
    book = OrderBook(tick_size)
    for ev in events:
        try:
            book.apply(ev)
        except (UnknownOrder, DuplicateOrder):
            if strict:
                raise
    return book
