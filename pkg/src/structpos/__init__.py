"""structpos: structural position representations for self-attention."""

__version__ = "0.1.0"
