"""Order book, order flow and trade flow features plus z-score scaling.

Every function accepts numpy arrays with arbitrary leading batch
dimensions, so the same code evaluates one snapshot or a whole day.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientData, ZeroMidpoint

N_LEVELS = 15
# 5, 15 and 30 minutes at one snapshot per second
WINDOWS = (300, 900, 1800)
CLIP = 10.0


def _ratio(num, den):
    """``num / den`` with 0/0 mapped to 0."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0.0)
    return out


def price_distance(prices, midpoint):
    """Relative distance of each level price from the midpoint."""
    prices = np.asarray(prices, dtype=np.float64)
    midpoint = np.asarray(midpoint, dtype=np.float64)
    if np.any(midpoint <= 0.0):
        raise ZeroMidpoint("midpoint must be positive")
    return prices / midpoint[..., None] - 1.0


def cumulative_notional(prices, quantities):
    """Running sum of price * quantity from the touch outward."""
    return np.cumsum(np.asarray(prices, dtype=np.float64) * np.asarray(quantities, dtype=np.float64), axis=-1)


def notional_imbalance(chi_bid, chi_ask):
    """(ask - bid) / (ask + bid) per level, in [-1, 1]; 0 when both are 0."""
    chi_bid = np.asarray(chi_bid, dtype=np.float64)
    chi_ask = np.asarray(chi_ask, dtype=np.float64)
    return np.clip(_ratio(chi_ask - chi_bid, chi_ask + chi_bid), -1.0, 1.0)


@dataclass
class FlowAccumulators:
    """Per-interval notional sums.

    ``limit``, ``cancel`` and ``market`` have shape ``(2, n_levels)``
    indexed by book side (0 bid, 1 ask) and level rank at event time.
    """

    n_levels: int = N_LEVELS
    limit: np.ndarray = None
    cancel: np.ndarray = None
    market: np.ndarray = None
    buyer_initiated: float = 0.0
    seller_initiated: float = 0.0

    def __post_init__(self):
        for name in ("limit", "cancel", "market"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros((2, self.n_levels)))

    def reset(self) -> None:
        self.limit[:] = 0.0
        self.cancel[:] = 0.0
        self.market[:] = 0.0
        self.buyer_initiated = 0.0
        self.seller_initiated = 0.0


def order_flow_imbalance(acc: FlowAccumulators) -> np.ndarray:
    """Added minus cancelled minus traded notional; bid levels then ask."""
    return (acc.limit - acc.cancel - acc.market).reshape(-1)


def trade_flow_imbalance(bi_history: Sequence[float], si_history: Sequence[float], window: int) -> float:
    """Buyer vs seller initiated flow over the last ``window`` snapshots."""
    if window < 1:
        raise ValueError("window must be >= 1")
    bi = float(np.sum(np.asarray(bi_history, dtype=np.float64)[-window:]))
    si = float(np.sum(np.asarray(si_history, dtype=np.float64)[-window:]))
    if bi + si == 0.0:
        return 0.0
    return float(np.clip((bi - si) / (bi + si), -1.0, 1.0))


def midpoint_returns(midpoints) -> np.ndarray:
    m = np.asarray(midpoints, dtype=np.float64)
    r = np.zeros_like(m)
    r[1:] = m[1:] / m[:-1] - 1.0
    return r


def custom_rsi(midpoint_history: Sequence[float], window: int) -> float:
    """Summed gains vs summed losses of the last ``window`` midpoint returns."""
    m = np.asarray(midpoint_history, dtype=np.float64)
    if len(m) < 2:
        raise InsufficientData("need at least two midpoints")
    r = (m[1:] / m[:-1] - 1.0)[-window:]
    gain = float(r[r > 0.0].sum())
    loss = float(-r[r < 0.0].sum())
    if gain + loss == 0.0:
        return 0.0
    return float(np.clip((gain - loss) / (gain + loss), -1.0, 1.0))


def rolling_sum(x, window: int) -> np.ndarray:
    """Trailing sum over ``window`` rows (fewer at the start).

    Each window is summed directly rather than as a difference of prefix
    sums, so a quiet window next to a busy stretch keeps its precision
    and an all-zero window is exactly 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    padded = np.concatenate([np.zeros(window - 1), x])
    return sliding_window_view(padded, window).sum(axis=1)


def rolling_flow_imbalance(bi, si, window: int) -> np.ndarray:
    b = np.maximum(rolling_sum(bi, window), 0.0)
    s = np.maximum(rolling_sum(si, window), 0.0)
    return np.clip(_ratio(b - s, b + s), -1.0, 1.0)


def rolling_rsi(midpoints, window: int) -> np.ndarray:
    r = midpoint_returns(midpoints)
    g = np.maximum(rolling_sum(np.where(r > 0.0, r, 0.0), window), 0.0)
    l = np.maximum(rolling_sum(np.where(r < 0.0, -r, 0.0), window), 0.0)
    return np.clip(_ratio(g - l, g + l), -1.0, 1.0)


def market_feature_names(n_levels: int = N_LEVELS, windows: Sequence[int] = WINDOWS) -> List[str]:
    names = []
    for group in ("xi", "chi"):
        for side in ("bid", "ask"):
            names += [f"{group}_{side}_{i}" for i in range(n_levels)]
    names += [f"iota_{i}" for i in range(n_levels)]
    names += [f"ofi_{side}_{i}" for side in ("bid", "ask") for i in range(n_levels)]
    for w in windows:
        names += [f"tfi_notional_{w}", f"tfi_count_{w}"]
    names.append("spread")
    names += [f"crsi_{w}" for w in windows]
    return names


def market_features(raw: Dict[str, np.ndarray], tick_size: float, windows: Sequence[int] = WINDOWS) -> np.ndarray:
    """Whole-day market feature matrix from replay kernel output.

    Returns ``(n_rows, 115)`` for 15 levels and three windows; the
    reward slot of the full state vector is appended by the environment.
    """
    bid_p = raw["bid_px"] * tick_size
    ask_p = raw["ask_px"] * tick_size
    mid = (raw["bid_px"][:, 0] + raw["ask_px"][:, 0]) * tick_size / 2.0
    xi = np.concatenate([price_distance(bid_p, mid), price_distance(ask_p, mid)], axis=1)
    chi_b = cumulative_notional(bid_p, raw["bid_qty"])
    chi_a = cumulative_notional(ask_p, raw["ask_qty"])
    iota = notional_imbalance(chi_b, chi_a)
    ofi = raw["ofi"]
    flow = (ofi[:, 0] - ofi[:, 1] - ofi[:, 2]).reshape(len(mid), -1)
    tfi = []
    for w in windows:
        tfi.append(rolling_flow_imbalance(raw["bi_notional"], raw["si_notional"], w))
        tfi.append(rolling_flow_imbalance(raw["bi_count"], raw["si_count"], w))
    spread = (raw["ask_px"][:, 0] - raw["bid_px"][:, 0]) * tick_size
    crsi = [rolling_rsi(mid, w) for w in windows]
    return np.column_stack([xi, chi_b, chi_a, iota, flow, *tfi, spread, *crsi])


# -- normalization ------------------------------------------------------------------
@dataclass
class NormalizerStats:
    mean: np.ndarray
    std: np.ndarray
    columns: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64), tuple(d["columns"]))


def fit_normalizer(rows, columns: Sequence[str] = ()) -> NormalizerStats:
    """Per-column mean and population std; zero-variance columns get std 1."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientData("fitting needs at least two rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[~(std > 0.0)] = 1.0
    return NormalizerStats(mean, std, tuple(columns))


def normalize(rows, stats: NormalizerStats, clip: float = CLIP) -> np.ndarray:
    z = (np.asarray(rows, dtype=np.float64) - stats.mean) / stats.std
    return np.clip(z, -clip, clip)


def build_observation(history, window: int = 100) -> np.ndarray:
    """Stack the last ``window`` rows, newest last, zero rows in front."""
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("history must be 2-D (rows, features)")
    out = np.zeros((window, h.shape[1]))
    take = h[-window:]
    out[window - len(take):] = take
    return out
