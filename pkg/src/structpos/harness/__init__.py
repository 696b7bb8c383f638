"""Synthetic structural tasks, training loop and ablation runner."""
