"""Tests for dependency tree parsing, validation and path queries."""

from __future__ import annotations

import itertools

import networkx as nx
import numpy as np
import pytest

from structpos.deptree import (
    ancestors,
    build_tree,
    is_on_same_path,
    is_on_same_root_path,
    lowest_common_ancestor,
    parse_conllu,
    parse_conllu_lenient,
    random_tree,
    serialize_conllu,
    tree_distance,
    validate,
)
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
from tests.conftest import (
    BUSH,
    CYCLIC_CONLLU,
    FIXTURE_CONLLU,
    FIXTURE_DEPTHS,
    HELD,
    SHARON,
    TALK,
    WITH,
    A,
)


def _line(*cols: str) -> str:
    return "\t".join(cols) + "\n"


def _minimal(rows: list[tuple[str, str, str, str]]) -> str:
    """CoNLL-U block from (ID, FORM, HEAD, DEPREL) rows."""
    return "".join(_line(i, f, "_", "_", "_", "_", h, d, "_", "_") for i, f, h, d in rows) + "\n"


class TestParseConllu:
    """Reading CoNLL-U sentence blocks."""

    def test_two_token_block(self) -> None:
        """HEAD 0 marks the root; its dependent sits one level down."""
        trees = parse_conllu(_minimal([("1", "Bush", "2", "nsubj"), ("2", "held", "0", "root")]))
        assert len(trees) == 1
        assert trees[0].root_index == 1
        assert trees[0].depth == (1, 0)
        assert trees[0].parent == (1, ROOT)

    def test_fixture_depths(self) -> None:
        """The six-token fixture parses to the expected depths."""
        (tree,) = parse_conllu(FIXTURE_CONLLU)
        assert list(tree.depth) == FIXTURE_DEPTHS
        assert tree.forms[TALK] == "talk"
        assert tree.deprel[HELD] == "root"
        assert tree.comments[0].startswith("# sent_id")

    def test_two_cycle(self) -> None:
        """Tokens heading each other are a cycle, not a missing root."""
        with pytest.raises(CycleDetected):
            parse_conllu(CYCLIC_CONLLU)

    def test_head_out_of_range(self) -> None:
        """A HEAD beyond the sentence is rejected."""
        with pytest.raises(HeadOutOfRange):
            parse_conllu(_minimal([("1", "a", "0", "root"), ("2", "b", "7", "dep")]))

    def test_multiple_roots(self) -> None:
        """Two HEAD=0 tokens are rejected."""
        with pytest.raises(MultipleRoots):
            parse_conllu(_minimal([("1", "a", "0", "root"), ("2", "b", "0", "root")]))

    def test_wrong_column_count(self) -> None:
        """Lines without ten columns are malformed."""
        with pytest.raises(MalformedLine):
            parse_conllu("1\tBush\t2\tnsubj\n\n")

    def test_non_integer_head(self) -> None:
        """A non-numeric HEAD is malformed."""
        with pytest.raises(MalformedLine):
            parse_conllu(_minimal([("1", "a", "x", "root")]))

    def test_multiword_and_empty_nodes_skipped(self) -> None:
        """Range lines and decimal IDs carry no HEAD and are ignored."""
        text = (
            _line("1-2", "vámonos", "_", "_", "_", "_", "_", "_", "_", "_")
            + _line("1", "vamos", "_", "_", "_", "_", "0", "root", "_", "_")
            + _line("2", "nos", "_", "_", "_", "_", "1", "obj", "_", "_")
            + _line("2.1", "x", "_", "_", "_", "_", "_", "_", "_", "_")
            + "\n"
        )
        (tree,) = parse_conllu(text)
        assert tree.forms == ("vamos", "nos")

    def test_empty_and_comment_only_input(self) -> None:
        """No token lines means no trees."""
        assert parse_conllu("") == []
        assert parse_conllu("# just a comment\n\n") == []

    def test_multiple_sentences_without_trailing_blank(self) -> None:
        """The final block does not need a terminating blank line."""
        text = FIXTURE_CONLLU + _minimal([("1", "ok", "0", "root")]).rstrip("\n")
        assert [t.n for t in parse_conllu(text)] == [6, 1]

    def test_lenient_collects_errors(self) -> None:
        """Lenient parsing keeps going and reports each failure in place."""
        text = FIXTURE_CONLLU + CYCLIC_CONLLU + FIXTURE_CONLLU
        results = parse_conllu_lenient(text)
        assert [index for index, _ in results] == [0, 1, 2]
        assert isinstance(results[0][1], DepTree)
        assert isinstance(results[1][1], CycleDetected)
        assert isinstance(results[2][1], DepTree)


class TestRoundTrip:
    """serialize_conllu is the inverse of parse_conllu."""

    def test_fixture_round_trip(self) -> None:
        """Parsing, serialising and re-parsing yields the same tree."""
        trees = parse_conllu(FIXTURE_CONLLU)
        assert parse_conllu(serialize_conllu(trees)) == trees

    def test_preserves_opaque_columns(self) -> None:
        """LEMMA through MISC survive the round trip byte for byte."""
        text = serialize_conllu(parse_conllu(FIXTURE_CONLLU))
        assert "SpaceAfter=No" in text
        assert "\thold\tVERB\tVBD\t" in text

    def test_random_trees_round_trip(self, rng: np.random.Generator) -> None:
        """Random trees survive a trip through CoNLL-U."""
        trees = [random_tree(int(rng.integers(1, 20)), rng, shuffle=True) for _ in range(50)]
        reparsed = parse_conllu(serialize_conllu(trees))
        assert [t.parent for t in reparsed] == [t.parent for t in trees]
        assert [t.depth for t in reparsed] == [t.depth for t in trees]


class TestBuildAndValidate:
    """Manual construction and invariant checks."""

    def test_fixture_validates(self, fixture_tree: DepTree) -> None:
        """The fixture passes validation."""
        validate(fixture_tree)
        assert list(fixture_tree.depth) == FIXTURE_DEPTHS

    def test_default_labels(self) -> None:
        """Forms and relations get placeholders when omitted."""
        tree = build_tree([ROOT, 0])
        assert tree.forms == ("w0", "w1")
        assert tree.deprel == ("root", "dep")

    def test_no_root(self) -> None:
        """A tree needs a root."""
        with pytest.raises(CycleDetected):
            build_tree([1, 0])
        with pytest.raises(NoRoot):
            build_tree([])

    def test_multiple_roots(self) -> None:
        """Two ROOT parents are rejected."""
        with pytest.raises(MultipleRoots):
            build_tree([ROOT, ROOT])

    def test_inconsistent_depths(self, fixture_tree: DepTree) -> None:
        """Stored depths that disagree with the parents are caught."""
        broken = fixture_tree.model_copy(update={"depth": (0, 0, 0, 0, 0, 0)})
        with pytest.raises(InvariantViolation):
            validate(broken)

    def test_hand_made_second_root(self, fixture_tree: DepTree) -> None:
        """validate re-checks structure on hand-made instances."""
        broken = fixture_tree.model_copy(update={"parent": (ROOT, ROOT, 3, 1, 5, 1)})
        with pytest.raises(MultipleRoots):
            validate(broken)

    def test_errors_are_value_errors(self) -> None:
        """Tree errors can be caught as ValueError."""
        with pytest.raises(ValueError):
            build_tree([5])
        assert issubclass(HeadOutOfRange, TreeError)


class TestPathQueries:
    """Distances, ancestry and the same-path test on the fixture."""

    def test_talk_held_distance(self, fixture_tree: DepTree) -> None:
        """talk is held's dependent: tree distance 1, sequence distance 2."""
        assert tree_distance(fixture_tree, TALK, HELD) == 1
        assert abs(TALK - HELD) == 2

    def test_a_bush_distance(self, fixture_tree: DepTree) -> None:
        """a -> talk -> held -> Bush is three edges."""
        assert tree_distance(fixture_tree, A, BUSH) == 3

    def test_self_distance(self, fixture_tree: DepTree) -> None:
        """Every token is at distance 0 from itself."""
        assert all(tree_distance(fixture_tree, t, t) == 0 for t in range(6))

    def test_ancestors_and_lca(self, fixture_tree: DepTree) -> None:
        """Ancestor chains run up to the root."""
        assert ancestors(fixture_tree, WITH) == (SHARON, HELD)
        assert ancestors(fixture_tree, HELD) == ()
        assert lowest_common_ancestor(fixture_tree, A, WITH) == HELD
        assert lowest_common_ancestor(fixture_tree, A, TALK) == TALK

    def test_same_root_path(self, fixture_tree: DepTree) -> None:
        """Ancestor pairs share a path; cousins do not."""
        assert is_on_same_root_path(fixture_tree, TALK, HELD)
        assert is_on_same_root_path(fixture_tree, HELD, A)
        assert not is_on_same_root_path(fixture_tree, BUSH, A)
        assert all(is_on_same_root_path(fixture_tree, t, t) for t in range(6))

    def test_literal_edge_interpretation(self, fixture_tree: DepTree) -> None:
        """The literal reading accepts only direct head-dependent pairs."""
        edge = Rule1Interpretation.LITERAL_EDGE
        assert is_on_same_path(fixture_tree, TALK, HELD, edge)
        assert not is_on_same_path(fixture_tree, A, HELD, edge)
        assert is_on_same_path(fixture_tree, A, HELD)

    def test_index_out_of_range(self, fixture_tree: DepTree) -> None:
        """Queries reject indices outside the sentence."""
        with pytest.raises(IndexOutOfRange):
            tree_distance(fixture_tree, 0, 6)
        with pytest.raises(IndexError):
            is_on_same_root_path(fixture_tree, -1, 0)


class TestRandomTrees:
    """Properties over random recursive trees."""

    def test_distance_matches_bfs(self, rng: np.random.Generator) -> None:
        """The depth/LCA formula agrees with breadth-first search."""
        for _ in range(200):
            tree = random_tree(int(rng.integers(1, 31)), rng, shuffle=True)
            graph = nx.Graph()
            graph.add_nodes_from(range(tree.n))
            graph.add_edges_from((t, h) for t, h in enumerate(tree.parent) if h != ROOT)
            lengths = dict(nx.all_pairs_shortest_path_length(graph))
            for i, j in itertools.product(range(tree.n), repeat=2):
                assert tree_distance(tree, i, j) == lengths[i][j]

    def test_metric_properties(self, rng: np.random.Generator) -> None:
        """Symmetric, zero only on the diagonal, triangle inequality."""
        for _ in range(30):
            tree = random_tree(int(rng.integers(2, 12)), rng)
            for i, j, k in itertools.product(range(tree.n), repeat=3):
                d_ij = tree_distance(tree, i, j)
                assert d_ij == tree_distance(tree, j, i)
                assert (d_ij == 0) == (i == j)
                assert d_ij <= tree_distance(tree, i, k) + tree_distance(tree, k, j)

    def test_depth_is_distance_to_root(self, rng: np.random.Generator) -> None:
        """depth[t] equals the distance from t to the root."""
        for _ in range(100):
            tree = random_tree(int(rng.integers(1, 31)), rng, shuffle=True)
            assert all(
                tree.depth[t] == tree_distance(tree, t, tree.root_index) for t in range(tree.n)
            )

    def test_unshuffled_root_is_first(self, rng: np.random.Generator) -> None:
        """Without shuffling every parent precedes its dependent."""
        tree = random_tree(12, rng)
        assert tree.root_index == 0
        assert all(h < t for t, h in enumerate(tree.parent) if h != ROOT)

    def test_same_seed_same_tree(self) -> None:
        """Trees are a pure function of the generator state."""
        first = random_tree(20, np.random.default_rng(3), shuffle=True)
        second = random_tree(20, np.random.default_rng(3), shuffle=True)
        assert first == second

    def test_rejects_empty(self, rng: np.random.Generator) -> None:
        """A tree needs at least one token."""
        with pytest.raises(ValueError):
            random_tree(0, rng)
