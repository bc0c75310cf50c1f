"""impactlab: cross-impact response analysis of limit order book data.

Replays order-book event streams into quotes and trades, estimates
price and liquidity response matrices between stocks, decomposes them
and compares their factor structure against random null models.
"""

from .constants import VERSION

__version__ = VERSION
