"""Exception hierarchy for structpos.

Validation failures subclass ``ValueError`` and bad indices subclass
``IndexError`` so callers can catch them either way.
"""

from __future__ import annotations


class StructposError(Exception):
    """Base class for every error raised by structpos."""


# ---------------------------------------------------------------------------
# Dependency trees
# ---------------------------------------------------------------------------


class TreeError(StructposError, ValueError):
    """A dependency tree (parsed or hand-built) violates a tree invariant."""


class HeadOutOfRange(TreeError):
    """A HEAD value references a token that does not exist."""


class CycleDetected(TreeError):
    """Parent links contain a cycle."""


class MultipleRoots(TreeError):
    """More than one token is attached to the ROOT sentinel."""


class NoRoot(TreeError):
    """No token is attached to the ROOT sentinel."""


class MalformedLine(TreeError):
    """A CoNLL-U token line has the wrong shape."""


class InvariantViolation(TreeError):
    """Stored tree fields disagree with each other (e.g. depths vs. parents)."""


# ---------------------------------------------------------------------------
# Indices and positions
# ---------------------------------------------------------------------------


class IndexOutOfRange(StructposError, IndexError):
    """A token or sub-word index falls outside the sequence."""


class AlignmentOutOfRange(IndexOutOfRange):
    """A sub-word alignment points at a word the tree does not have."""


class IndexOutOfClipRange(IndexOutOfRange):
    """A relative position lies outside [-r_clip, r_clip]."""


class OddDimension(StructposError, ValueError):
    """Sinusoidal encodings need an even model width."""


# ---------------------------------------------------------------------------
# Tensor engine and encoder
# ---------------------------------------------------------------------------


class ShapeMismatch(StructposError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteInput(StructposError, ValueError):
    """An input tensor contains NaN or infinity."""


class ConfigMismatch(StructposError, ValueError):
    """Encoder flags ask for position data the annotation does not carry."""


class NoRecordedForward(StructposError, RuntimeError):
    """backward() was called on a value with no recorded computation graph."""


class PrecisionLoss(StructposError, ValueError):
    """A finite-difference step is too small to be meaningful."""


class CheckpointError(StructposError, ValueError):
    """A checkpoint file is truncated, corrupt, or from an unknown version."""


# ---------------------------------------------------------------------------
# Training harness
# ---------------------------------------------------------------------------


class NonFiniteLoss(StructposError, ArithmeticError):
    """Training produced a NaN or infinite loss."""


class DegenerateTree(StructposError, ValueError):
    """A tree cannot supply the stratified query pairs the distance task needs."""


class StorageError(StructposError, ValueError):
    """A stored dataset or annotation file cannot be decoded."""
