"""Futures-augmented day-ahead electricity price forecasting."""
