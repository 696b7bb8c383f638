"""Dependency trees: CoNLL-U ingestion, validation and path queries.

Every structural position is derived from the queries here. Depth is
measured from the tree root, which stands in for the sentence's main verb.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from typing import TYPE_CHECKING

from structpos.errors import (
    CycleDetected,
    HeadOutOfRange,
    IndexOutOfRange,
    InvariantViolation,
    MalformedLine,
    MultipleRoots,
    NoRoot,
    TreeError,
)
from structpos.models import ROOT, DepTree, Rule1Interpretation

if TYPE_CHECKING:
    import numpy as np

logger = logging.getLogger(__name__)

# CoNLL-U column indices
ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)
_OPAQUE = (LEMMA, UPOS, XPOS, FEATS, DEPS, MISC)
_EMPTY_COLUMNS = ("_",) * len(_OPAQUE)


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------


def _compute_depths(parent: Sequence[int]) -> list[int]:
    """Depth of every token, raising CycleDetected on cyclic parent links."""
    n = len(parent)
    depth = [-1] * n
    for start in range(n):
        path: list[int] = []
        on_path: set[int] = set()
        node = start
        while node != ROOT and depth[node] < 0:
            if node in on_path:
                raise CycleDetected(f"Parent links form a cycle through token {node}")
            on_path.add(node)
            path.append(node)
            node = parent[node]
        level = -1 if node == ROOT else depth[node]
        for token in reversed(path):
            level += 1
            depth[token] = level
    return depth


def _check_heads(parent: Sequence[int]) -> None:
    n = len(parent)
    for token, head in enumerate(parent):
        if head != ROOT and not 0 <= head < n:
            raise HeadOutOfRange(f"Token {token} has head {head}, sentence has {n} tokens")


def _find_root(parent: Sequence[int]) -> int:
    roots = [token for token, head in enumerate(parent) if head == ROOT]
    if not roots:
        raise NoRoot("No token is attached to ROOT")
    if len(roots) > 1:
        raise MultipleRoots(f"Tokens {roots} are all attached to ROOT")
    return roots[0]


def build_tree(
    parents: Sequence[int],
    forms: Sequence[str] | None = None,
    deprels: Sequence[str] | None = None,
    columns: Sequence[Sequence[str]] | None = None,
    comments: Sequence[str] = (),
) -> DepTree:
    """Build a validated tree from 0-based head indices.

    Args:
        parents: Head index per token, ``ROOT`` (-1) for the root.
        forms: Optional surface forms; defaults to ``w0``, ``w1``, ...
        deprels: Optional relation labels; defaults to ``dep`` (``root`` for the root).
        columns: Optional opaque CoNLL-U columns per token.
        comments: Optional sentence comment lines.

    Returns:
        A DepTree with depths filled in.

    Raises:
        HeadOutOfRange, CycleDetected, NoRoot, MultipleRoots: On invalid structure.
    """
    parent = tuple(int(p) for p in parents)
    _check_heads(parent)
    depth = _compute_depths(parent)
    root = _find_root(parent)
    n = len(parent)
    if forms is None:
        forms = [f"w{i}" for i in range(n)]
    if deprels is None:
        deprels = ["root" if head == ROOT else "dep" for head in parent]
    if len(forms) != n or len(deprels) != n:
        raise InvariantViolation(
            f"Expected {n} forms and relations, got {len(forms)} and {len(deprels)}"
        )
    return DepTree(
        forms=tuple(forms),
        parent=parent,
        deprel=tuple(deprels),
        depth=tuple(depth),
        root_index=root,
        columns=tuple(tuple(c) for c in columns) if columns else (),
        comments=tuple(comments),
    )


def validate(tree: DepTree) -> None:
    """Re-check every DepTree invariant.

    Use after constructing a DepTree by hand rather than through
    ``build_tree`` or ``parse_conllu``.

    Raises:
        InvariantViolation: If field lengths, root index or depths disagree.
        HeadOutOfRange, CycleDetected, NoRoot, MultipleRoots: On invalid structure.
    """
    n = tree.n
    if len(tree.forms) != n or len(tree.deprel) != n or len(tree.depth) != n:
        raise InvariantViolation(
            f"Field lengths disagree: {len(tree.forms)} forms, {n} parents, "
            f"{len(tree.deprel)} relations, {len(tree.depth)} depths"
        )
    if tree.columns and len(tree.columns) != n:
        raise InvariantViolation(f"{len(tree.columns)} column rows for {n} tokens")
    _check_heads(tree.parent)
    depth = _compute_depths(tree.parent)
    root = _find_root(tree.parent)
    if tree.root_index != root:
        raise InvariantViolation(f"root_index is {tree.root_index} but token {root} is the root")
    if tuple(depth) != tree.depth:
        raise InvariantViolation(f"Stored depths {list(tree.depth)} do not match parents {depth}")


# ---------------------------------------------------------------------------
# Path queries
# ---------------------------------------------------------------------------


def _check_index(tree: DepTree, *indices: int) -> None:
    for index in indices:
        if not 0 <= index < tree.n:
            raise IndexOutOfRange(f"Token index {index} outside [0, {tree.n})")


def ancestors(tree: DepTree, i: int) -> tuple[int, ...]:
    """Tokens on the path from ``i``'s head up to the root."""
    _check_index(tree, i)
    chain: list[int] = []
    node = tree.parent[i]
    while node != ROOT:
        chain.append(node)
        node = tree.parent[node]
    return tuple(chain)


def lowest_common_ancestor(tree: DepTree, i: int, j: int) -> int:
    """Deepest token that dominates both ``i`` and ``j`` (a token dominates itself)."""
    _check_index(tree, i, j)
    while tree.depth[i] > tree.depth[j]:
        i = tree.parent[i]
    while tree.depth[j] > tree.depth[i]:
        j = tree.parent[j]
    while i != j:
        i, j = tree.parent[i], tree.parent[j]
    return i


def tree_distance(tree: DepTree, i: int, j: int) -> int:
    """Length of the undirected dependency path between two tokens."""
    lca = lowest_common_ancestor(tree, i, j)
    return tree.depth[i] + tree.depth[j] - 2 * tree.depth[lca]


def is_ancestor(tree: DepTree, a: int, b: int) -> bool:
    """True if ``a`` dominates ``b`` (reflexive)."""
    _check_index(tree, a, b)
    while tree.depth[b] > tree.depth[a]:
        b = tree.parent[b]
    return a == b


def is_on_same_root_path(tree: DepTree, i: int, j: int) -> bool:
    """True iff one token is an ancestor of the other, or ``i == j``."""
    return is_ancestor(tree, i, j) or is_ancestor(tree, j, i)


def is_on_same_path(
    tree: DepTree,
    i: int,
    j: int,
    interpretation: Rule1Interpretation = Rule1Interpretation.ANCESTOR_PATH,
) -> bool:
    """Whether the first relative structural rule applies to ``(i, j)``.

    ``ancestor_path`` accepts any ancestor/descendant pair; ``literal_edge``
    accepts only a direct head-dependent pair.
    """
    if interpretation is Rule1Interpretation.ANCESTOR_PATH:
        return is_on_same_root_path(tree, i, j)
    _check_index(tree, i, j)
    return i == j or tree.parent[i] == j or tree.parent[j] == i


def random_tree(n: int, rng: np.random.Generator, shuffle: bool = False) -> DepTree:
    """Uniform random recursive tree over ``n`` tokens.

    Token ``t`` attaches to a uniformly chosen earlier token. With
    ``shuffle`` the tokens are relabelled by a random permutation so the
    root is not pinned to position 0.
    """
    if n < 1:
        raise ValueError(f"A tree needs at least one token, got n={n}")
    parents = [ROOT] + [int(rng.integers(0, t)) for t in range(1, n)]
    if shuffle:
        order = [int(k) for k in rng.permutation(n)]
        relabelled = [ROOT] * n
        for old, head in enumerate(parents):
            relabelled[order[old]] = ROOT if head == ROOT else order[head]
        parents = relabelled
    return build_tree(parents)


# ---------------------------------------------------------------------------
# CoNLL-U
# ---------------------------------------------------------------------------


def _blocks(text: str) -> Iterator[tuple[list[str], list[str]]]:
    """Yield (comments, token lines) per sentence block."""
    comments: list[str] = []
    lines: list[str] = []
    for raw in text.splitlines():
        line = raw.rstrip("\r\n")
        if not line.strip():
            if lines:
                yield comments, lines
            comments, lines = [], []
        elif line.startswith("#"):
            comments.append(line)
        else:
            lines.append(line)
    if lines:
        yield comments, lines


def _parse_block(comments: list[str], lines: list[str]) -> DepTree:
    forms: list[str] = []
    heads: list[int] = []
    deprels: list[str] = []
    columns: list[tuple[str, ...]] = []
    for line in lines:
        cols = line.split("\t")
        if len(cols) != 10:
            raise MalformedLine(f"Expected 10 tab-separated columns, got {len(cols)}: {line!r}")
        if "-" in cols[ID] or "." in cols[ID]:
            continue  # multiword range or empty node
        try:
            token_id = int(cols[ID])
            head = int(cols[HEAD])
        except ValueError as exc:
            raise MalformedLine(f"Non-integer ID or HEAD in line {line!r}") from exc
        if token_id != len(forms) + 1:
            raise MalformedLine(f"Token ID {token_id} out of sequence (expected {len(forms) + 1})")
        forms.append(cols[FORM])
        heads.append(head)
        deprels.append(cols[DEPREL])
        columns.append(tuple(cols[c] for c in _OPAQUE))

    n = len(forms)
    for token_id, head in enumerate(heads, start=1):
        if not 0 <= head <= n:
            raise HeadOutOfRange(f"Token {token_id} has HEAD {head}, sentence has {n} tokens")
    parents = [ROOT if head == 0 else head - 1 for head in heads]
    return build_tree(parents, forms, deprels, columns, comments)


def parse_conllu(text: str) -> list[DepTree]:
    """Parse every sentence block of a CoNLL-U document.

    Multiword ranges and empty nodes are skipped. Comment-only blocks
    produce no tree.

    Raises:
        MalformedLine, HeadOutOfRange, CycleDetected, NoRoot, MultipleRoots:
            On the first invalid sentence.
    """
    return [_parse_block(comments, lines) for comments, lines in _blocks(text)]


def parse_conllu_lenient(text: str) -> list[tuple[int, DepTree | TreeError]]:
    """Parse sentence by sentence, returning errors instead of raising.

    Returns:
        ``(sentence_index, tree_or_error)`` in input order.
    """
    results: list[tuple[int, DepTree | TreeError]] = []
    for index, (comments, lines) in enumerate(_blocks(text)):
        try:
            results.append((index, _parse_block(comments, lines)))
        except TreeError as exc:
            results.append((index, exc))
    return results


def serialize_conllu(trees: Sequence[DepTree]) -> str:
    """Write trees back to CoNLL-U; the inverse of ``parse_conllu``."""
    out: list[str] = []
    for tree in trees:
        out.extend(tree.comments)
        for token in range(tree.n):
            lemma, upos, xpos, feats, deps, misc = (
                tree.columns[token] if tree.columns else _EMPTY_COLUMNS
            )
            head = 0 if tree.parent[token] == ROOT else tree.parent[token] + 1
            out.append(
                "\t".join(
                    [
                        str(token + 1),
                        tree.forms[token],
                        lemma,
                        upos,
                        xpos,
                        feats,
                        str(head),
                        tree.deprel[token],
                        deps,
                        misc,
                    ]
                )
            )
        out.append("")
    return "\n".join(out) + ("\n" if out else "")
