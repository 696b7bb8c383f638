"""Property suites run by ``structpos selftest``.

The oracle suite recomputes depths, tree distances and relative
structural positions with networkx graph searches and straight-line
loops, independent of the vectorised code in ``posenc``.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable

import networkx as nx
import numpy as np
from pydantic import BaseModel

from structpos.config import EncoderConfig, PositionConfig
from structpos.deptree import random_tree, tree_distance
from structpos.models import DepTree, Rule1Interpretation, SubwordAlignment
from structpos.nncore.encoder import EncoderParams, encoder_forward
from structpos.nncore.gradcheck import grad_check
from structpos.posenc import abs_structural, annotate, rel_seq_matrix, rel_structural_matrix

logger = logging.getLogger(__name__)

RelFn = Callable[[DepTree, SubwordAlignment, PositionConfig, bool], np.ndarray]

EQUIVARIANCE_TOLERANCE = 1e-6
BROKEN_SYMMETRY_MARGIN = 1e-3
GRADIENT_TOLERANCE = 1e-4

# Small enough that the whole grid runs in seconds, r_clip small enough to clip.
CHECK_ENCODER = EncoderConfig(vocab_size=16, d_model=8, n_heads=2, n_layers=2, d_ffn=16, r_clip=3)


class SuiteResult(BaseModel):
    """Outcome of one property suite."""

    name: str
    passed: bool
    checked: int
    detail: str = ""
    seconds: float = 0.0


def _random_alignment(tree: DepTree, rng: np.random.Generator) -> SubwordAlignment:
    """Split each word into one or two sub-words, sometimes with an EOS symbol."""
    pieces = rng.integers(1, 3, size=tree.n)
    words = tuple(word for word in range(tree.n) for _ in range(int(pieces[word])))
    return SubwordAlignment(word_of_subword=words, has_eos=bool(rng.random() < 0.5))


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def _graphs(tree: DepTree) -> tuple[nx.Graph, nx.DiGraph]:
    directed = nx.DiGraph()
    directed.add_nodes_from(range(tree.n))
    directed.add_edges_from(
        (head, token) for token, head in enumerate(tree.parent) if head >= 0
    )
    return directed.to_undirected(), directed


def oracle_rel_structural(
    tree: DepTree, align: SubwordAlignment, cfg: PositionConfig, clip: bool = True
) -> np.ndarray:
    """Relative structural matrix computed pair by pair from graph searches."""
    undirected, directed = _graphs(tree)
    depth = nx.single_source_shortest_path_length(undirected, tree.root_index)
    ancestors = {node: nx.ancestors(directed, node) for node in directed}

    def related(u: int, v: int) -> bool:
        if cfg.rule1_interpretation is Rule1Interpretation.LITERAL_EDGE:
            return directed.has_edge(u, v) or directed.has_edge(v, u)
        return u in ancestors[v] or v in ancestors[u]

    words: list[int | None] = [*align.word_of_subword]
    levels = [depth[w] for w in align.word_of_subword]
    if align.has_eos:
        words.append(None)
        levels.append(max(depth.values()) + 1)

    size = len(words)
    matrix = np.zeros((size, size), dtype=np.int64)
    for i in range(size):
        for j in range(size):
            w_i, w_j = words[i], words[j]
            if i == j or (w_i is not None and w_i == w_j):
                value = 0
            elif w_i is not None and w_j is not None and related(w_i, w_j):
                value = levels[i] - levels[j]
            else:
                value = (1 if i > j else -1) * (levels[i] + levels[j])
            if clip:
                value = max(-cfg.r_clip, min(cfg.r_clip, value))
            matrix[i, j] = value
    return matrix


def oracle_suite(trees: int = 1000, max_len: int = 30, seed: int = 0) -> SuiteResult:
    """Compare the library against graph-search oracles on random trees."""
    rng = np.random.default_rng(seed)
    failures: list[str] = []
    for index in range(trees):
        n = int(rng.integers(1, max_len + 1))
        tree = random_tree(n, rng, shuffle=bool(index % 2))
        align = _random_alignment(tree, rng)
        interpretation = list(Rule1Interpretation)[index % 2]
        cfg = PositionConfig(d_model=8, r_clip=4, rule1_interpretation=interpretation)

        undirected, _ = _graphs(tree)
        lengths = dict(nx.all_pairs_shortest_path_length(undirected))
        if any(tree.depth[t] != lengths[tree.root_index][t] for t in range(n)):
            failures.append(f"tree {index}: depths differ from BFS")
        if any(
            tree_distance(tree, i, j) != lengths[i][j] for i in range(n) for j in range(n)
        ):
            failures.append(f"tree {index}: tree_distance differs from BFS")
        expected_depths = [tree.depth[w] for w in align.word_of_subword]
        if align.has_eos:
            expected_depths.append(max(tree.depth) + 1)
        if abs_structural(tree, align).tolist() != expected_depths:
            failures.append(f"tree {index}: abs_structural differs")
        for clip in (True, False):
            got = rel_structural_matrix(tree, align, cfg, clip=clip)
            if not np.array_equal(got, oracle_rel_structural(tree, align, cfg, clip=clip)):
                failures.append(f"tree {index}: rel_structural ({interpretation}, clip={clip})")
    return SuiteResult(
        name="oracle",
        passed=not failures,
        checked=trees,
        detail="; ".join(failures[:3]),
    )


# ---------------------------------------------------------------------------
# Algebraic properties
# ---------------------------------------------------------------------------


def antisymmetry_suite(
    trees: int = 1000,
    max_len: int = 30,
    seed: int = 0,
    rel_fn: RelFn = rel_structural_matrix,
) -> SuiteResult:
    """Relative matrices must have a zero diagonal and satisfy ``M = -M.T``.

    ``rel_fn`` stands in for ``rel_structural_matrix`` so a deliberately
    broken implementation can be shown to fail.
    """
    rng = np.random.default_rng(seed)
    failures: list[str] = []
    for index in range(trees):
        n = int(rng.integers(1, max_len + 1))
        tree = random_tree(n, rng, shuffle=True)
        align = _random_alignment(tree, rng)
        cfg = PositionConfig(
            d_model=8, r_clip=4, rule1_interpretation=list(Rule1Interpretation)[index % 2]
        )
        matrices = {
            "rel_seq": rel_seq_matrix(align.total_len, cfg.r_clip),
            "rel_stru": rel_fn(tree, align, cfg, False),
            "rel_stru_clipped": rel_fn(tree, align, cfg, True),
        }
        for label, matrix in matrices.items():
            if np.any(np.diag(matrix) != 0) or not np.array_equal(matrix, -matrix.T):
                failures.append(f"tree {index}: {label} not antisymmetric")
    return SuiteResult(
        name="antisymmetry",
        passed=not failures,
        checked=trees,
        detail="; ".join(failures[:3]),
    )


def equivariance_suite(inputs: int = 100, seed: int = 0) -> SuiteResult:
    """Permutation behaviour and flag reductions of the encoder.

    * With every flag off, permuting the tokens permutes the outputs.
    * With absolute sequential positions on, the symmetry is broken.
    * With relative tables zeroed, rows 7 and 9 reproduce rows 4 and 5.
    """
    rng = np.random.default_rng(seed)
    base = CHECK_ENCODER
    params = EncoderParams.init(base, seed, dtype=np.float64)
    zeroed = params.astype(np.float64)
    for name in zeroed.rel_table_names():
        zeroed[name].data[...] = 0.0

    failures: list[str] = []
    for index in range(inputs):
        n = int(rng.integers(3, min(base.vocab_size, 12) + 1))
        tokens = rng.choice(base.vocab_size, size=n, replace=False)
        perm = rng.permutation(n)
        while np.array_equal(perm, np.arange(n)):
            perm = rng.permutation(n)
        tree = random_tree(n, rng, shuffle=True)
        annotation = annotate(tree, None, base.position())

        def run(row: int, store: EncoderParams, ids: np.ndarray) -> np.ndarray:
            return encoder_forward(ids, annotation, base.for_row(row), store).data

        plain = run(1, params, tokens)
        shuffled = run(1, params, tokens[perm])
        gap = float(np.max(np.abs(shuffled - plain[perm])))
        if gap > EQUIVARIANCE_TOLERANCE:
            failures.append(f"input {index}: flags off, permutation error {gap:.2e}")

        moved = run(4, params, tokens[perm]) - run(4, params, tokens)[perm]
        positional = float(np.max(np.abs(moved)))
        if positional <= BROKEN_SYMMETRY_MARGIN:
            failures.append(f"input {index}: abs_seq on, outputs still permute ({positional:.2e})")

        for with_rel, without_rel in ((7, 4), (9, 5)):
            if not np.array_equal(run(with_rel, zeroed, tokens), run(without_rel, zeroed, tokens)):
                failures.append(f"input {index}: zeroed tables change row {with_rel}")
    return SuiteResult(
        name="equivariance",
        passed=not failures,
        checked=inputs,
        detail="; ".join(failures[:3]),
    )


def gradcheck_suite(
    rows: tuple[int, ...] = tuple(range(1, 10)), seed: int = 7, epsilon: float = 1e-3
) -> SuiteResult:
    """Finite-difference gradient check of every parameter group per row."""
    worst: dict[int, float] = {}
    for row in rows:
        worst[row] = grad_check(CHECK_ENCODER.for_row(row), seed, epsilon)
        logger.info("grad check row %d: max relative error %.2e", row, worst[row])
    bad = {row: err for row, err in worst.items() if err >= GRADIENT_TOLERANCE}
    return SuiteResult(
        name="gradcheck",
        passed=not bad,
        checked=len(rows),
        detail=", ".join(f"row {row}: {err:.2e}" for row, err in bad.items()),
    )


def run_selftest(quick: bool = False, seed: int = 0) -> list[SuiteResult]:
    """Run every suite; ``quick`` shrinks the sample counts for CI."""
    suites: list[Callable[[], SuiteResult]] = [
        lambda: oracle_suite(trees=100 if quick else 1000, seed=seed),
        lambda: antisymmetry_suite(trees=100 if quick else 1000, seed=seed),
        lambda: equivariance_suite(inputs=10 if quick else 100, seed=seed),
        lambda: gradcheck_suite(rows=(1, 6, 9) if quick else tuple(range(1, 10))),
    ]
    results: list[SuiteResult] = []
    for suite in suites:
        start = time.perf_counter()
        result = suite()
        result.seconds = time.perf_counter() - start
        level = logging.INFO if result.passed else logging.ERROR
        status = "ok" if result.passed else "FAILED"
        logger.log(level, "suite %s: %s %s", result.name, status, result.detail)
        results.append(result)
    return results
