"""Core data models for structpos."""

from __future__ import annotations

import enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# Parent value of the root token; CoNLL-U writes it as HEAD = 0.
ROOT = -1


class FusionMode(enum.StrEnum):
    """How absolute sequential and structural encodings are combined."""

    NONLINEAR = "nonlinear"
    ADDITION = "addition"


class Rule1Interpretation(enum.StrEnum):
    """Reading of "same dependency edge" in the relative structural rules."""

    ANCESTOR_PATH = "ancestor_path"
    LITERAL_EDGE = "literal_edge"


class Scheme(enum.StrEnum):
    """Which position source a relative embedding table encodes."""

    SEQUENTIAL = "sequential"
    STRUCTURAL = "structural"


class RelRole(enum.StrEnum):
    """Whether a relative embedding table feeds the keys or the values."""

    KEY = "key"
    VALUE = "value"


class TaskKind(enum.StrEnum):
    """Synthetic supervision targets."""

    DEPTH = "depth"
    DISTANCE = "distance"


class DepTree(BaseModel):
    """A validated dependency tree over one sentence.

    ``parent[t]`` is a 0-based token index or ``ROOT``. Depths are measured
    from the root token, which plays the role of the sentence's main verb.
    Instances are immutable; build them with ``deptree.build_tree`` or
    ``deptree.parse_conllu`` and re-check hand-made ones with
    ``deptree.validate``.
    """

    model_config = ConfigDict(frozen=True)

    forms: tuple[str, ...] = Field(description="Surface form per token")
    parent: tuple[int, ...] = Field(description="Head index per token, ROOT for the root")
    deprel: tuple[str, ...] = Field(description="Dependency relation label per token")
    depth: tuple[int, ...] = Field(description="Distance from the root per token")
    root_index: int = Field(description="Index of the token attached to ROOT")
    columns: tuple[tuple[str, ...], ...] = Field(
        default=(),
        description="Opaque LEMMA, UPOS, XPOS, FEATS, DEPS, MISC per token (CoNLL-U round trip)",
    )
    comments: tuple[str, ...] = Field(default=(), description="Sentence-level '#' comment lines")

    @property
    def n(self) -> int:
        """Token count."""
        return len(self.parent)


class SubwordAlignment(BaseModel):
    """Projection from sub-word positions back to source words.

    ``word_of_subword[k]`` is the word index of sub-word ``k``. When
    ``has_eos`` is set an end-of-sentence symbol follows the last sub-word
    and maps to no word.
    """

    model_config = ConfigDict(frozen=True)

    word_of_subword: tuple[int, ...]
    has_eos: bool = False

    @property
    def total_len(self) -> int:
        """Sequence length including the end-of-sentence symbol."""
        return len(self.word_of_subword) + (1 if self.has_eos else 0)

    def word_at(self, position: int) -> int | None:
        """Return the source word of a position, or None for the EOS symbol."""
        if position < len(self.word_of_subword):
            return self.word_of_subword[position]
        return None


class PositionAnnotation(BaseModel):
    """All four position schemes for one sequence, at sub-word granularity."""

    abs_seq: list[int]
    abs_stru: list[int]
    rel_seq: list[list[int]]
    rel_stru: list[list[int]]
    r_clip: int = Field(ge=1)
    rule1_interpretation: Rule1Interpretation = Rule1Interpretation.ANCESTOR_PATH

    @property
    def length(self) -> int:
        """Sequence length."""
        return len(self.abs_seq)

    def abs_stru_array(self) -> np.ndarray:
        """Absolute structural positions as an int array."""
        return np.asarray(self.abs_stru, dtype=np.int64)

    def rel_seq_array(self) -> np.ndarray:
        """Relative sequential matrix as an int array."""
        return np.asarray(self.rel_seq, dtype=np.int64).reshape(self.length, self.length)

    def rel_stru_array(self) -> np.ndarray:
        """Relative structural matrix as an int array."""
        return np.asarray(self.rel_stru, dtype=np.int64).reshape(self.length, self.length)


class AnnotationRecord(BaseModel):
    """One line of ``structpos annotate`` output."""

    tokens: list[str]
    abs_seq: list[int]
    abs_stru: list[int]
    rel_seq: list[list[int]]
    rel_stru: list[list[int]]
    r_clip: int
    rule1_interpretation: Rule1Interpretation


class TaskSample(BaseModel):
    """One synthetic training example.

    Depth samples carry ``depth_labels`` (one per token); distance samples
    carry ``pairs`` of ``(i, j, label)`` with ``label = 1`` when the tree
    distance between ``i`` and ``j`` is within the task threshold.
    """

    task: TaskKind
    token_ids: list[int]
    tree: DepTree
    depth_labels: list[int] | None = None
    pairs: list[tuple[int, int, int]] | None = None


class TaskDataset(BaseModel):
    """A generated dataset plus the knobs that produced it."""

    task: TaskKind
    num_classes: int = Field(ge=2)
    vocab_size: int = Field(ge=1)
    seed: int
    label_ceiling: int | None = Field(default=None, description="Depth labels are capped here")
    threshold: int | None = Field(default=None, description="Distance task positive threshold")
    samples: list[TaskSample] = Field(default_factory=list)


class EpochStats(BaseModel):
    """Training statistics for one epoch."""

    epoch: int
    loss: float
    accuracy: float = Field(ge=0.0, le=1.0)


class RunReport(BaseModel):
    """Outcome of training one ablation row."""

    config_row: int | None = Field(default=None, ge=1, le=9, description="None for custom flags")
    task: TaskKind
    flags: dict[str, bool] = Field(default_factory=dict)
    seed: int
    train_size: int
    test_size: int
    epochs: list[EpochStats] = Field(default_factory=list)
    final_accuracy: float = Field(ge=0.0, le=1.0)
    baseline_accuracy: float = Field(
        ge=0.0, le=1.0, description="Majority-label accuracy on the held-out set"
    )
    baseline_standard_error: float = Field(ge=0.0)
    wall_clock_seconds: float = Field(ge=0.0)
    eval_sentences_per_second: float = Field(default=0.0, ge=0.0)
    checkpoint: str | None = None
