"""Closed-loop zone functionality-loss forecasting on a synthetic city."""
__version__ = "0.1.0"
