"""Minimal numpy autodiff engine and the self-attention encoder built on it."""
