"""Limit order book replay, market-making environment and A2C/PPO agents."""

__version__ = "0.1.0"

from .book import EventKind, Fill, OrderBook, OrderEvent, Side  # noqa: E402
from .kernels import KERNELS, default_backend  # noqa: E402

__all__ = ["EventKind", "Fill", "OrderBook", "OrderEvent", "Side", "KERNELS", "default_backend", "__version__"]
