"""Market-making environment replaying one snapshot day.

At each step the agent quotes at most one order per side, chosen by
distance (in book levels) from the touch, or flattens its inventory
with a market order.  Fills are simulated against the trade prints of
the following snapshot interval using the agent's estimated queue
position; the agent's orders are virtual and never alter the replayed
book.

PnL is tracked per lot in return units: a long lot closed at ``x``
earns ``x / entry - 1`` and a short lot earns ``entry / x - 1``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from .book import Side
from .errors import ConfigError, EmptyDataset, MissingNormalizer, SteppedAfterDone
from .pipeline import MarketDay

log = logging.getLogger(__name__)

NO_ACTION = 1
FLATTEN = 17
N_ACTIONS = 17
ACTION_IDS = tuple(range(1, N_ACTIONS + 1))

_BID_LEVELS = (0, 0, 0, 4, 4, 4, 4, 9, 9, 9, 9, 14, 14, 14, 14)
_ASK_LEVELS = (4, 9, 14, 0, 4, 9, 14, 0, 4, 9, 14, 0, 4, 9, 14)
# action id -> (bid level, ask level)
ACTION_LEVELS: Dict[int, Tuple[int, int]] = {i + 2: lv for i, lv in enumerate(zip(_BID_LEVELS, _ASK_LEVELS))}

ASS_NAMES = (
    "inventory_long", "inventory_short", "total_pnl", "unrealized_long", "unrealized_short",
    "order_distance_bid", "order_distance_ask", "order_completion_bid", "order_completion_ask",
)
BASE_WIDTH_EXTRA = 1 + len(ASS_NAMES) + N_ACTIONS  # reward slot + agent state + last action


@dataclass
class EnvConfig:
    reward: str = "trade_completion"
    window: int = 100
    feature_width: Optional[int] = None  # defaults to the natural width (142 for 15 levels)
    max_positions: int = 10
    lot_size: float = 1.0
    market_fee: float = 0.002
    rho: float = 0.01
    epsilon: float = 2.0
    varpi: float = 0.002
    ruin_threshold: Optional[float] = 0.05
    episode_length: Optional[int] = None
    random_start: bool = False

    def validate(self) -> List[str]:
        errs = []
        if self.reward not in ("positional", "trade_completion"):
            errs.append(f"reward must be 'positional' or 'trade_completion', got {self.reward!r}")
        for name in ("window", "max_positions"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        for name in ("lot_size", "rho", "epsilon", "varpi"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        if self.market_fee < 0:
            errs.append("market_fee must be >= 0")
        if self.episode_length is not None and self.episode_length < 1:
            errs.append("episode_length must be >= 1")
        return errs

    def to_dict(self):
        return asdict(self)


# -- rewards --------------------------------------------------------------------------
def reward_positional_pnl(inventory: float, midpoint: float, prev_midpoint: float, realized: float = 0.0) -> float:
    """Midpoint return times signed inventory plus PnL realized this step."""
    return (midpoint / prev_midpoint - 1.0) * inventory + realized


def reward_trade_completion(realized: float, epsilon: float = 2.0, varpi: float = 0.002, closed: bool = True) -> float:
    """Clipped reward: +1 at or above ``epsilon * varpi``, -1 at or below ``-varpi``."""
    if not closed:
        return 0.0
    if realized >= epsilon * varpi:
        return 1.0
    if realized <= -varpi:
        return -1.0
    return realized


# -- accounting ------------------------------------------------------------------------
@dataclass
class Lot:
    sign: int           # +1 long, -1 short
    price: float        # monetary entry price
    fee: float = 0.0    # return-units fee charged on entry, settled at close
    accrued: float = 0.0  # midpoint-return credit already paid out by the positional reward


class Account:
    """Signed lot inventory with FIFO netting."""

    def __init__(self, max_positions: int = 10, lot_size: float = 1.0, fee_rate: float = 0.002):
        self.max_positions = max_positions
        self.lot_size = lot_size
        self.fee_rate = fee_rate
        self.lots: deque = deque()
        self.realized_pnl = 0.0
        self.fee_paid = 0.0
        self.closed_returns: List[float] = []
        self.ledger: List[Tuple[int, float, bool]] = []  # (sign, price, market)

    @property
    def inventory(self) -> int:
        if not self.lots:
            return 0
        return self.lots[0].sign * len(self.lots)

    @property
    def long_count(self) -> int:
        return len(self.lots) if self.lots and self.lots[0].sign > 0 else 0

    @property
    def short_count(self) -> int:
        return len(self.lots) if self.lots and self.lots[0].sign < 0 else 0

    def average_price(self, sign: int) -> float:
        if not self.lots or self.lots[0].sign != sign:
            return 0.0
        return sum(l.price for l in self.lots) / len(self.lots)

    @staticmethod
    def lot_return(lot: Lot, price: float) -> float:
        return price / lot.price - 1.0 if lot.sign > 0 else lot.price / price - 1.0

    def unrealized(self, midpoint: float) -> float:
        return sum(self.lot_return(l, midpoint) for l in self.lots)

    def total_pnl(self, midpoint: float) -> float:
        return self.realized_pnl + self.unrealized(midpoint)

    def fill(self, sign: int, price: float, market: bool = False) -> List[Tuple[Lot, float]]:
        """Trade one lot. Returns the closed ``(lot, return)`` pairs (0 or 1)."""
        fee = 0.0
        if market:
            fee = self.fee_rate
            self.fee_paid += self.fee_rate * price * self.lot_size
        self.ledger.append((sign, price, market))
        if self.lots and self.lots[0].sign == -sign:
            lot = self.lots.popleft()
            ret = self.lot_return(lot, price) - lot.fee - fee
            self.realized_pnl += ret
            self.closed_returns.append(ret)
            return [(lot, ret)]
        self.lots.append(Lot(sign, price, fee))
        return []


@dataclass
class AgentOrder:
    side: Side
    price: int            # ticks
    size: float
    queue_ahead: float
    executed: float = 0.0
    exec_notional: float = 0.0

    @property
    def remaining(self) -> float:
        return self.size - self.executed


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class MarketMakingEnv:
    """One-day market-making episode driven by snapshot rows.

    ``step(action)`` takes action ids 1..17.  Step ``t -> t + 1`` places
    orders against the book at row ``t`` and fills them with the prints
    recorded in row ``t + 1``'s interval only.
    """

    action_ids = ACTION_IDS
    noop_action = NO_ACTION

    def __init__(self, day: Optional[MarketDay], config: Optional[EnvConfig] = None, seed: Optional[int] = None):
        self.config = config or EnvConfig()
        errs = self.config.validate()
        if errs:
            raise ConfigError(errs)
        self.day = day
        self._seed = seed
        self._rng = np.random.default_rng(seed)
        self.done = True
        if day is not None:
            self._bind(day)

    # -- data binding -----------------------------------------------------------------
    def _bind(self, day: MarketDay) -> None:
        ds = day.dataset
        self.n_market = day.features.shape[1]
        natural = self.n_market + BASE_WIDTH_EXTRA
        width = self.config.feature_width or natural
        if width < natural:
            raise ConfigError(f"feature_width {width} is below the {natural} columns the state needs")
        self.width = width
        self._tick = ds.tick_size
        self._mid = ds.midpoint
        self._bid_px = ds.bid_px
        self._bid_qty = ds.bid_qty
        self._ask_px = ds.ask_px
        self._ask_qty = ds.ask_qty
        self._offsets = ds.trade_offsets()
        self._t_side = ds.trade_side.tolist()
        self._t_px = ds.trade_px.tolist()
        self._t_qty = ds.trade_qty.tolist()

    @property
    def observation_shape(self) -> Tuple[int, int]:
        natural = (self.day.features.shape[1] if self.day is not None else 115) + BASE_WIDTH_EXTRA
        return (self.config.window, self.config.feature_width or natural)

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    # -- episode control ------------------------------------------------------------------
    def reset(self, seed: Optional[int] = None) -> StepResult:
        if self.day is None or self.day.stats is None or self.day.features is None:
            raise MissingNormalizer("environment needs a day normalized by a fitted normalizer")
        n = len(self.day)
        if n < 2:
            raise EmptyDataset("need at least two snapshots for an episode")
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        length = min(cfg.episode_length or (n - 1), n - 1)
        start = 0
        if cfg.random_start and n - 1 > length:
            start = int(self._rng.integers(0, n - 1 - length + 1))
        self.start, self.end, self.t = start, start + length, start
        self.account = Account(cfg.max_positions, cfg.lot_size, cfg.market_fee)
        self.orders: Dict[Side, Optional[AgentOrder]] = {Side.BID: None, Side.ASK: None}
        self.prev_reward = 0.0
        self.last_action = None
        self.steps = 0
        self.done = False
        self._frame = np.zeros(self.observation_shape)
        self._push_row()
        return StepResult(self._frame.copy(), 0.0, False, self._info([], 0.0, []))

    def step(self, action: int) -> StepResult:
        if self.done:
            raise SteppedAfterDone("episode is over; call reset()")
        action = int(action)
        if action not in ACTION_LEVELS and action not in (NO_ACTION, FLATTEN):
            raise ValueError(f"invalid action id {action}")
        closed: List[Tuple[Lot, float]] = []
        fills: List[dict] = []
        closed += self.apply_action(action, fills)
        self.t += 1
        closed += self.simulate_fills(fills)
        self.steps += 1

        m_prev, m = float(self._mid[self.t - 1]), float(self._mid[self.t])
        realized = sum(r for _, r in closed)
        ic = self.account.inventory
        cfg = self.config
        if cfg.reward == "positional":
            # realized term is net of the midpoint credit already paid while the lot was held
            adj = sum(r - lot.accrued for lot, r in closed)
            reward = reward_positional_pnl(ic, m, m_prev, adj)
        else:
            reward = reward_trade_completion(realized, cfg.epsilon, cfg.varpi, closed=bool(closed))
        dm = m / m_prev - 1.0
        for lot in self.account.lots:
            lot.accrued += lot.sign * dm

        self.prev_reward = reward
        self.last_action = action
        total = self.account.total_pnl(m)
        ruined = cfg.ruin_threshold is not None and cfg.ruin_threshold > 0 and total <= -cfg.ruin_threshold
        self.done = self.t >= self.end or ruined
        self._push_row()
        info = self._info(fills, realized, [r for _, r in closed])
        info["ruined"] = bool(ruined)
        return StepResult(self._frame.copy(), float(reward), self.done, info)

    # -- order handling -----------------------------------------------------------------
    def _target(self, side: Side, level: int) -> Tuple[int, float]:
        """Price and queue position for a new order ``level`` levels from the touch."""
        t = self.t
        if side == Side.BID:
            px, qty = self._bid_px[t], self._bid_qty[t]
            price, ahead = int(px[level]), float(qty[level])
            better = price + 1
            free = better < int(self._ask_px[t, 0]) and not np.any((px == better) & (qty > 0))
        else:
            px, qty = self._ask_px[t], self._ask_qty[t]
            price, ahead = int(px[level]), float(qty[level])
            better = price - 1
            free = better > int(self._bid_px[t, 0]) and not np.any((px == better) & (qty > 0))
        if ahead > 0.0 and free:
            return better, 0.0
        return price, ahead

    def _capacity(self, side: Side) -> int:
        ic = self.account.inventory
        cap = self.config.max_positions
        return cap - ic if side == Side.BID else cap + ic

    def _quote(self, side: Side, level: int) -> None:
        current = self.orders[side]
        if self._capacity(side) < 1:
            self.orders[side] = None
            return
        price, ahead = self._target(side, level)
        if current is not None and current.price == price:
            return
        if current is not None:
            # re-pricing keeps partial executions but loses queue priority
            current.price, current.queue_ahead = price, ahead
        else:
            self.orders[side] = AgentOrder(side, price, self.config.lot_size, ahead)

    def apply_action(self, action: int, fills: Optional[List[dict]] = None) -> List[Tuple[Lot, float]]:
        if fills is None:
            fills = []
        if action == NO_ACTION:
            return []
        if action == FLATTEN:
            ic = self.account.inventory
            if ic == 0:
                return []
            self.orders[Side.BID] = self.orders[Side.ASK] = None
            if ic > 0:
                price, sign = float(self._bid_px[self.t, 0]) * self._tick, -1
            else:
                price, sign = float(self._ask_px[self.t, 0]) * self._tick, 1
            closed = []
            for _ in range(abs(ic)):
                closed += self.account.fill(sign, price, market=True)
                fills.append({"t": self.t, "side": "buy" if sign > 0 else "sell", "price": price, "market": True})
            return closed
        bid_level, ask_level = ACTION_LEVELS[action]
        self._quote(Side.BID, bid_level)
        self._quote(Side.ASK, ask_level)
        return []

    def simulate_fills(self, fills: Optional[List[dict]] = None) -> List[Tuple[Lot, float]]:
        """Work the agent's orders against the prints of interval ``t``."""
        if fills is None:
            fills = []
        t = self.t
        closed: List[Tuple[Lot, float]] = []
        orders = self.orders
        for j in range(self._offsets[t], self._offsets[t + 1]):
            side = Side(self._t_side[j])
            order = orders[side]
            if order is None:
                continue
            px, q = self._t_px[j], self._t_qty[j]
            through = px < order.price if side == Side.BID else px > order.price
            if through:
                f = order.remaining
            elif px == order.price:
                x = min(q, order.queue_ahead)
                order.queue_ahead -= x
                f = min(q - x, order.remaining)
            else:
                continue
            if f <= 0.0:
                continue
            order.executed += f
            order.exec_notional += f * order.price * self._tick
            if order.remaining <= 1e-12:
                vwap = order.exec_notional / order.executed
                sign = 1 if side == Side.BID else -1
                closed += self.account.fill(sign, vwap)
                fills.append({"t": t, "side": "buy" if sign > 0 else "sell", "price": vwap, "market": False})
                orders[side] = None
        self._cap_queues()
        return closed

    def _cap_queues(self) -> None:
        # cancellations ahead of us show up as a smaller level in the next snapshot
        t = self.t
        for side, px_row, qty_row in ((Side.BID, self._bid_px[t], self._bid_qty[t]),
                                      (Side.ASK, self._ask_px[t], self._ask_qty[t])):
            order = self.orders[side]
            if order is None or order.queue_ahead <= 0.0:
                continue
            lo, hi = int(px_row.min()), int(px_row.max())
            if not lo <= order.price <= hi:
                continue
            hit = np.nonzero(px_row == order.price)[0]
            level_qty = float(qty_row[hit[0]]) if len(hit) else 0.0
            order.queue_ahead = min(order.queue_ahead, level_qty)

    # -- state ------------------------------------------------------------------------------
    def ass_vector(self) -> np.ndarray:
        acc = self.account
        cfg = self.config
        m = float(self._mid[self.t])
        out = np.zeros(len(ASS_NAMES))
        out[0] = acc.long_count / cfg.max_positions
        out[1] = acc.short_count / cfg.max_positions
        out[2] = acc.total_pnl(m) / cfg.rho
        if acc.long_count:
            out[3] = m / acc.average_price(1) - 1.0
        if acc.short_count:
            out[4] = acc.average_price(-1) / m - 1.0
        for k, side in ((0, Side.BID), (1, Side.ASK)):
            o = self.orders[side]
            if o is None:
                continue
            out[5 + k] = o.price * self._tick / m - 1.0
            out[7 + k] = (o.executed - o.queue_ahead) / (o.queue_ahead + o.size)
        return out

    def _row(self) -> np.ndarray:
        row = np.zeros(self.width)
        n = self.n_market
        row[:n] = self.day.features[self.t]
        row[n] = self.prev_reward
        row[n + 1:n + 1 + len(ASS_NAMES)] = self.ass_vector()
        if self.last_action is not None:
            row[n + 1 + len(ASS_NAMES) + self.last_action - 1] = 1.0
        return row

    def _push_row(self) -> None:
        self._frame[:-1] = self._frame[1:]
        self._frame[-1] = self._row()

    def _info(self, fills, realized, closed_returns) -> dict:
        m = float(self._mid[self.t])
        acc = self.account
        unreal = acc.unrealized(m)
        return {
            "t": self.t,
            "timestamp": int(self.day.dataset.timestamp[self.t]),
            "midpoint": m,
            "inventory": acc.inventory,
            "realized_pnl": acc.realized_pnl,
            "unrealized_pnl": unreal,
            "total_pnl": acc.realized_pnl + unreal,
            "fee_paid": acc.fee_paid,
            "step_realized": realized,
            "closed_returns": closed_returns,
            "fills": fills,
        }


class ActionRepeat:
    """Run the chosen action once, then ``no action`` for ``repeat - 1`` steps.

    Rewards are summed over the block; the block stops early at episode end.
    """

    def __init__(self, env, repeat: int = 5):
        if repeat < 1:
            raise ConfigError("action_repeat must be >= 1")
        self.env = env
        self.repeat = repeat

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, seed=None):
        return self.env.reset(seed=seed)

    def step(self, action):
        res = self.env.step(action)
        total = res.reward
        fills = list(res.info.get("fills", []))
        closed = list(res.info.get("closed_returns", []))
        k = 1
        while not res.done and k < self.repeat:
            res = self.env.step(self.env.noop_action)
            total += res.reward
            fills += res.info.get("fills", [])
            closed += res.info.get("closed_returns", [])
            k += 1
        info = dict(res.info)
        info["fills"] = fills
        info["closed_returns"] = closed
        info["env_steps"] = k
        return StepResult(res.observation, total, res.done, info)
