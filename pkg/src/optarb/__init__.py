"""Graph-network prediction of synthetic-long mispricing and arbitrage-only portfolios."""

__version__ = "0.1.0"
