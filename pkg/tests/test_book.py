import pytest
from hypothesis import given, strategies as st

from lobmm.book import EventKind, Fill, OrderBook, OrderEvent, Side, replay
from lobmm.errors import DuplicateOrder, EmptySide, UnknownOrder

from oracles import NaiveBook, random_events

L, C, M = EventKind.LIMIT, EventKind.CANCEL, EventKind.MARKET
B, A = Side.BID, Side.ASK


def lim(side, price, qty, oid, t=0):
    return OrderEvent(L, side, price, qty, t, oid)


def test_single_insertion():
    book = OrderBook(tick_size=0.01)
    book.apply(lim(B, 10000, 2.0, "a"))
    assert [(lv.price, lv.total_quantity) for lv in book.bids] == [(10000, 2.0)]
    assert book.asks == []


def test_partial_consumption_by_market():
    book = OrderBook()
    book.apply(lim(B, 100, 2.0, "a"))
    fills = book.apply(OrderEvent(M, A, 0, 0.5, 1))
    assert fills == [Fill("a", 100, 0.5)]
    assert book.level_quantity(B, 100) == 1.5


def test_fifo_consumption_within_level():
    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "A"))
    book.apply(lim(B, 100, 2.0, "B"))
    fills = book.apply(OrderEvent(M, A, 0, 2.5, 2))
    assert fills == [Fill("A", 100, 1.0), Fill("B", 100, 1.5)]
    # 1.0 + 2.0 resting, 2.5 consumed: B keeps 0.5
    assert book.level_quantity(B, 100) == 0.5
    assert "A" not in book and "B" in book


def test_market_sweeps_levels_best_first():
    book = OrderBook()
    for i, p in enumerate((101, 103, 102)):
        book.apply(lim(A, p, 1.0, f"a{i}"))
    fills = book.apply(OrderEvent(M, B, 0, 2.5, 1))
    assert [(f.price, f.quantity) for f in fills] == [(101, 1.0), (102, 1.0), (103, 0.5)]


def test_market_on_empty_side_fills_nothing():
    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "a"))
    assert book.apply(OrderEvent(M, B, 0, 1.0, 1)) == []
    assert book.level_quantity(B, 100) == 1.0


def test_crossing_limit_matches_then_rests():
    book = OrderBook()
    book.apply(lim(A, 101, 1.0, "a"))
    book.apply(lim(A, 102, 1.0, "b"))
    fills = book.apply(lim(B, 101, 1.5, "x"))
    assert fills == [Fill("a", 101, 1.0)]
    assert book.best_bid == 101 and book.level_quantity(B, 101) == 0.5
    assert book.best_ask == 102


def test_cancel_and_unknown_cancel():
    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "a"))
    book.apply(lim(B, 100, 2.0, "b"))
    assert book.cancel("a") == 1.0
    assert book.level_quantity(B, 100) == 2.0
    before = book.state()
    with pytest.raises(UnknownOrder):
        book.apply(OrderEvent(C, B, 100, 1.0, 3, "zzz"))
    assert book.state() == before
    book.cancel("b")
    assert book.bids == [] and len(book) == 0


def test_duplicate_live_id_rejected():
    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "a"))
    with pytest.raises(DuplicateOrder):
        book.apply(lim(A, 105, 1.0, "a"))
    assert book.asks == []


def test_midpoint_and_spread():
    book = OrderBook(tick_size=1.0)
    book.apply(lim(B, 100, 1.0, "b"))
    with pytest.raises(EmptySide):
        book.midpoint()
    book.apply(lim(A, 102, 1.0, "a"))
    assert book.midpoint() == 101.0
    assert book.spread() == 2.0

    book = OrderBook(tick_size=0.1)
    book.apply(lim(B, 94005, 1.0, "b"))
    book.apply(lim(A, 94006, 1.0, "a"))
    assert book.midpoint() == pytest.approx(9400.55, abs=1e-9)
    assert book.spread() == pytest.approx(0.1, abs=1e-12)

    book = OrderBook(tick_size=0.01)
    book.apply(lim(B, 10000, 1.0, "b"))
    book.apply(lim(A, 10001, 1.0, "a"))
    assert book.spread() == pytest.approx(0.01, abs=1e-12)


def test_spread_empty_side():
    with pytest.raises(EmptySide):
        OrderBook().spread()


def test_depth_padding():
    book = OrderBook()
    for i, p in enumerate((100, 99, 97)):
        book.apply(lim(B, p, 1.0 + i, f"b{i}"))
    book.apply(lim(A, 103, 1.0, "a"))
    d = book.depth(B, 15)
    assert len(d) == 15
    assert d[:3] == [(100, 1.0), (99, 2.0), (97, 3.0)]
    assert d[3:] == [(96 - k, 0.0) for k in range(12)]
    assert book.depth(B, 1) == [(100, 1.0)]
    assert book.depth(A, 3) == [(103, 1.0), (104, 0.0), (105, 0.0)]


def test_depth_empty_side_pads_from_opposite_best():
    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "b"))
    assert book.depth(A, 2) == [(101, 0.0), (102, 0.0)]
    assert OrderBook().depth(B, 2) == [(-1, 0.0), (-2, 0.0)]


def test_queue_ahead():
    book = OrderBook()
    book.apply(lim(B, 100, 0.5, "agent"))
    assert book.queue_ahead(B, 100, "agent") == 0.0

    book = OrderBook()
    book.apply(lim(B, 100, 1.0, "X"))
    book.apply(lim(B, 100, 0.5, "agent"))
    assert book.queue_ahead(B, 100, "agent") == 1.0
    book.apply(OrderEvent(M, A, 0, 0.4, 1))
    assert book.queue_ahead(B, 100, "agent") == pytest.approx(0.6)
    with pytest.raises(UnknownOrder):
        book.queue_ahead(B, 100, "nobody")


def test_rank():
    book = OrderBook()
    for i, p in enumerate((100, 98, 95)):
        book.apply(lim(B, p, 1.0, f"b{i}"))
    assert [book.rank(B, p) for p in (100, 99, 98, 95, 90)] == [0, 1, 1, 2, 3]


def _bookkeeping_ok(book):
    for side in (B, A):
        for lv in book.levels(side):
            if lv.total_quantity <= 0 or abs(lv.total_quantity - sum(lv.orders.values())) > 1e-9:
                return False
    bb, ba = book.best_bid, book.best_ask
    return bb is None or ba is None or bb < ba


event_lists = st.integers(0, 2**32 - 1).flatmap(
    lambda seed: st.integers(1, 300).map(lambda n: (seed, n)))


@given(event_lists)
def test_invariants_hold_after_every_event(params):
    import numpy as np

    seed, n = params
    book = OrderBook()
    for ev in random_events(np.random.default_rng(seed), n):
        try:
            book.apply(ev)
        except (UnknownOrder, DuplicateOrder):
            continue
        assert _bookkeeping_ok(book)


@given(event_lists)
def test_conservation_per_side(params):
    """Rested - cancelled - traded equals what is left resting, per side."""
    import numpy as np

    seed, n = params
    book = OrderBook()
    flow = {B: 0.0, A: 0.0}
    for ev in random_events(np.random.default_rng(seed), n):
        if ev.kind == C:
            if ev.order_id in book:
                side = book._orders[ev.order_id][0]
                flow[side] -= book.cancel(ev.order_id)
            continue
        try:
            fills = book.apply(ev)
        except DuplicateOrder:
            continue
        traded = sum(f.quantity for f in fills)
        if ev.kind == L:
            flow[ev.side] += ev.quantity - traded
        flow[ev.side.opposite] -= traded
    for side in (B, A):
        resting = sum(lv.total_quantity for lv in book.levels(side))
        assert flow[side] == pytest.approx(resting, abs=1e-9)


@given(event_lists)
def test_fifo_fairness(params):
    import numpy as np

    seed, n = params
    events = random_events(np.random.default_rng(seed), n)
    book = OrderBook()
    arrival = {}
    for i, ev in enumerate(events):
        try:
            fills = book.apply(ev)
        except (UnknownOrder, DuplicateOrder):
            continue
        if ev.kind == L and ev.order_id in book:
            arrival[ev.order_id] = i
        for f in fills:
            side = B if ev.side == A else A
            # nothing older than the filled order may still rest at its price
            level = book._levels[side].get(f.price)
            if level is not None:
                for oid in level.orders:
                    if oid != f.order_id:
                        assert arrival[oid] > arrival.get(f.order_id, -1)


@given(event_lists)
def test_matches_naive_reference(params):
    import numpy as np

    seed, n = params
    events = random_events(np.random.default_rng(seed), n)
    book, naive = OrderBook(), NaiveBook()
    for ev in events:
        ref = naive.apply(ev)
        try:
            got = [(f.order_id, f.price, f.quantity) for f in book.apply(ev)]
        except (UnknownOrder, DuplicateOrder):
            got = None
        assert got == ref
        assert book.state() == naive.state()


def test_replay_is_deterministic(rng):
    events = random_events(rng, 500)
    assert replay(events).state() == replay(events).state()


def test_replay_strict_raises(rng):
    events = [lim(B, 100, 1.0, "a"), OrderEvent(C, B, 100, 1.0, 1, "nope")]
    assert len(replay(events)) == 1
    with pytest.raises(UnknownOrder):
        replay(events, strict=True)
