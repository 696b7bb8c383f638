"""Position schemes: absolute/relative x sequential/structural.

Integer position structures are plain numpy arrays. The learnable parts
(fusion of the two absolute encodings and relative embedding tables)
operate on ``nncore.tensor.Tensor`` so gradients reach them.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from structpos.config import PositionConfig
from structpos.deptree import is_on_same_path
from structpos.errors import (
    AlignmentOutOfRange,
    IndexOutOfClipRange,
    IndexOutOfRange,
    OddDimension,
    ShapeMismatch,
)
from structpos.models import (
    ROOT,
    AnnotationRecord,
    DepTree,
    FusionMode,
    PositionAnnotation,
    RelRole,
    Rule1Interpretation,
    Scheme,
    SubwordAlignment,
)
from structpos.nncore.tensor import Tensor, concat

EOS_TOKEN = "</s>"
BPE_CONTINUATION = "@@"

# ---------------------------------------------------------------------------
# Sinusoidal absolute encodings
# ---------------------------------------------------------------------------


def sinusoidal_table(positions: Sequence[int] | np.ndarray, d_model: int) -> np.ndarray:
    """Sinusoidal encodings for many positions, shape ``(len(positions), d_model)``.

    Dimension ``2i`` holds ``sin(pos / 10000^(2i/d))`` and ``2i+1`` the cosine.
    """
    if d_model <= 0 or d_model % 2:
        raise OddDimension(f"d_model must be a positive even integer, got {d_model}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    inv_freq = 1.0 / 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angles = pos * inv_freq
    table = np.empty((pos.shape[0], d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def sinusoidal_abs(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of one position."""
    return sinusoidal_table([pos], d_model)[0]


# ---------------------------------------------------------------------------
# Sequential positions
# ---------------------------------------------------------------------------


def rel_seq_index(i: int, j: int, r_clip: int) -> int:
    """Position of key ``j`` relative to query ``i``, clipped to ``[-r_clip, r_clip]``."""
    return max(-r_clip, min(r_clip, j - i))


def rel_seq_matrix(length: int, r_clip: int) -> np.ndarray:
    """``M[i, j] = rel_seq_index(i, j, r_clip)`` for a whole sequence."""
    idx = np.arange(length, dtype=np.int64)
    return np.clip(idx[None, :] - idx[:, None], -r_clip, r_clip)


# ---------------------------------------------------------------------------
# Sub-word alignment
# ---------------------------------------------------------------------------


def identity_alignment(n: int, has_eos: bool = False) -> SubwordAlignment:
    """One sub-word per word."""
    return SubwordAlignment(word_of_subword=tuple(range(n)), has_eos=has_eos)


def align_bpe(
    subwords: Sequence[str],
    continuation: str = BPE_CONTINUATION,
    has_eos: bool = False,
) -> SubwordAlignment:
    """Alignment for subword-nmt style tokens, where ``ta@@ lk`` is one word."""
    mapping: list[int] = []
    word = 0
    for piece in subwords:
        mapping.append(word)
        if not piece.endswith(continuation):
            word += 1
    return SubwordAlignment(word_of_subword=tuple(mapping), has_eos=has_eos)


def _word_array(align: SubwordAlignment) -> np.ndarray:
    """Word index per position, ``ROOT`` for the end-of-sentence symbol."""
    words = list(align.word_of_subword)
    if align.has_eos:
        words.append(ROOT)
    return np.asarray(words, dtype=np.int64)


def _check_alignment(tree: DepTree, align: SubwordAlignment) -> None:
    for position, word in enumerate(align.word_of_subword):
        if not 0 <= word < tree.n:
            raise AlignmentOutOfRange(
                f"Sub-word {position} maps to word {word}, tree has {tree.n} tokens"
            )


# ---------------------------------------------------------------------------
# Structural positions
# ---------------------------------------------------------------------------


def abs_structural(tree: DepTree, align: SubwordAlignment) -> np.ndarray:
    """Tree depth per sub-word position.

    Sub-words share their word's depth; the end-of-sentence symbol sits one
    level below the deepest token.
    """
    _check_alignment(tree, align)
    depths = [tree.depth[word] for word in align.word_of_subword]
    if align.has_eos:
        depths.append(max(tree.depth) + 1)
    return np.asarray(depths, dtype=np.int64)


def _path_matrix(tree: DepTree, interpretation: Rule1Interpretation) -> np.ndarray:
    """``P[u, v]`` is True when the first relative rule applies to words u and v."""
    n = tree.n
    related = np.eye(n, dtype=bool)
    if interpretation is Rule1Interpretation.LITERAL_EDGE:
        for token, head in enumerate(tree.parent):
            if head != ROOT:
                related[head, token] = True
    else:
        for token in range(n):
            node = tree.parent[token]
            while node != ROOT:
                related[node, token] = True
                node = tree.parent[node]
    return related | related.T


def _rule2_sign(offset: np.ndarray) -> np.ndarray:
    """Orientation of pairs off a shared path: +1 when the query follows the key."""
    return np.sign(offset)


def _rel_from_abs(
    abs_stru: np.ndarray,
    words: np.ndarray,
    tree: DepTree,
    cfg: PositionConfig,
    clip: bool,
) -> np.ndarray:
    length = abs_stru.shape[0]
    real = words >= 0
    both_real = real[:, None] & real[None, :]
    safe = np.where(real, words, 0)
    same_word = ((words[:, None] == words[None, :]) & both_real) | np.eye(length, dtype=bool)
    related = _path_matrix(tree, cfg.rule1_interpretation)[safe[:, None], safe[None, :]]
    related &= both_real

    idx = np.arange(length, dtype=np.int64)
    depth_difference = abs_stru[:, None] - abs_stru[None, :]
    orientation = _rule2_sign(idx[:, None] - idx[None, :])
    signed_sum = orientation * (abs_stru[:, None] + abs_stru[None, :])
    matrix = np.where(same_word, 0, np.where(related, depth_difference, signed_sum))
    if clip:
        matrix = np.clip(matrix, -cfg.r_clip, cfg.r_clip)
    return matrix.astype(np.int64)


def rel_structural(
    tree: DepTree,
    align: SubwordAlignment,
    i: int,
    j: int,
    cfg: PositionConfig,
    clip: bool = True,
) -> int:
    """Relative structural position of sub-word ``j`` with respect to ``i``.

    Sub-words of one word are at distance 0. Pairs on one tree path get
    their depth difference; all other pairs (including anything involving
    the end-of-sentence symbol) get ``sign(i - j) * (depth_i + depth_j)``.
    """
    length = align.total_len
    for index in (i, j):
        if not 0 <= index < length:
            raise IndexOutOfRange(f"Position {index} outside [0, {length})")
    depths = abs_structural(tree, align)
    a_i, a_j = int(depths[i]), int(depths[j])
    w_i, w_j = align.word_at(i), align.word_at(j)

    if i == j or (w_i is not None and w_i == w_j):
        value = 0
    elif (
        w_i is not None
        and w_j is not None
        and is_on_same_path(tree, w_i, w_j, cfg.rule1_interpretation)
    ):
        value = a_i - a_j
    else:
        value = int(_rule2_sign(np.asarray(i - j))) * (a_i + a_j)
    return max(-cfg.r_clip, min(cfg.r_clip, value)) if clip else value


def rel_structural_matrix(
    tree: DepTree,
    align: SubwordAlignment,
    cfg: PositionConfig,
    clip: bool = True,
) -> np.ndarray:
    """All pairwise relative structural positions, shape ``(len, len)``."""
    return _rel_from_abs(abs_structural(tree, align), _word_array(align), tree, cfg, clip)


# ---------------------------------------------------------------------------
# Whole-sequence annotation
# ---------------------------------------------------------------------------


def annotate(
    tree: DepTree,
    align: SubwordAlignment | None,
    cfg: PositionConfig,
) -> PositionAnnotation:
    """Compute every integer position structure for one sequence."""
    align = align or identity_alignment(tree.n)
    length = align.total_len
    return PositionAnnotation(
        abs_seq=list(range(length)),
        abs_stru=abs_structural(tree, align).tolist(),
        rel_seq=rel_seq_matrix(length, cfg.r_clip).tolist(),
        rel_stru=rel_structural_matrix(tree, align, cfg).tolist(),
        r_clip=cfg.r_clip,
        rule1_interpretation=cfg.rule1_interpretation,
    )


def to_record(annotation: PositionAnnotation, tokens: Sequence[str]) -> AnnotationRecord:
    """Wrap an annotation with its tokens for JSON-lines output."""
    if len(tokens) != annotation.length:
        raise ShapeMismatch(f"{len(tokens)} tokens for an annotation of length {annotation.length}")
    return AnnotationRecord(tokens=list(tokens), **annotation.model_dump())


def verify_annotation(
    record: AnnotationRecord | PositionAnnotation,
    tree: DepTree,
    align: SubwordAlignment,
    cfg: PositionConfig,
) -> bool:
    """Recompute the relative matrices from the stored absolute values and the tree."""
    length = align.total_len
    abs_stru = np.asarray(record.abs_stru, dtype=np.int64)
    if abs_stru.shape != (length,) or record.abs_seq != list(range(length)):
        return False
    if not np.array_equal(abs_stru, abs_structural(tree, align)):
        return False
    if not np.array_equal(np.asarray(record.rel_seq), rel_seq_matrix(length, cfg.r_clip)):
        return False
    expected = _rel_from_abs(abs_stru, _word_array(align), tree, cfg, clip=True)
    return bool(np.array_equal(np.asarray(record.rel_stru), expected))


# ---------------------------------------------------------------------------
# Learnable parts
# ---------------------------------------------------------------------------


@dataclass
class FusionParams:
    """Affine map for nonlinear fusion: ``tanh(W [seq; stru] + b)``."""

    weight: Tensor  # (d_model, 2 * d_model)
    bias: Tensor  # (d_model,)

    def __post_init__(self) -> None:
        d = self.bias.shape[0]
        if self.weight.shape != (d, 2 * d) or self.bias.shape != (d,):
            raise ShapeMismatch(
                f"Fusion weight {self.weight.shape} / bias {self.bias.shape} do not fit d={d}"
            )


@dataclass
class RelEmbeddingTable:
    """Learnable rows for relative positions ``-r_clip .. r_clip``."""

    entries: Tensor  # (2 * r_clip + 1, d_head)
    r_clip: int
    role: RelRole
    scheme: Scheme

    def __post_init__(self) -> None:
        if self.entries.ndim != 2 or self.entries.shape[0] != 2 * self.r_clip + 1:
            raise ShapeMismatch(
                f"Relative table needs {2 * self.r_clip + 1} rows, got shape {self.entries.shape}"
            )


def fuse_absolute(
    seq_vec: Tensor | np.ndarray,
    stru_vec: Tensor | np.ndarray,
    mode: FusionMode,
    params: FusionParams | None = None,
) -> Tensor:
    """Combine absolute sequential and structural encodings.

    Works on single vectors or on ``(len, d_model)`` stacks.
    """
    dtype = params.weight.dtype if params is not None else None
    seq = seq_vec if isinstance(seq_vec, Tensor) else Tensor(seq_vec, dtype=dtype)
    stru = stru_vec if isinstance(stru_vec, Tensor) else Tensor(stru_vec, dtype=dtype)
    if seq.shape != stru.shape:
        raise ShapeMismatch(f"Cannot fuse {seq.shape} with {stru.shape}")
    if mode is FusionMode.ADDITION:
        return seq + stru
    if params is None:
        raise ValueError("Nonlinear fusion needs FusionParams")
    if params.bias.shape[0] != seq.shape[-1]:
        raise ShapeMismatch(f"Fusion params of width {params.bias.shape[0]} for {seq.shape}")
    joined = concat([seq, stru], axis=-1)
    if joined.ndim == 1:
        return (joined.reshape(1, -1) @ params.weight.T + params.bias).tanh().reshape(-1)
    return (joined @ params.weight.T + params.bias).tanh()


def lookup_relative(indices: np.ndarray, table: RelEmbeddingTable) -> Tensor:
    """Embed a matrix of relative positions, shape ``(len, len, d_head)``."""
    index = np.asarray(indices, dtype=np.int64)
    if index.size and (index.min() < -table.r_clip or index.max() > table.r_clip):
        raise IndexOutOfClipRange(
            f"Relative positions span [{index.min()}, {index.max()}], "
            f"table covers [-{table.r_clip}, {table.r_clip}]"
        )
    return table.entries.take(index + table.r_clip)
