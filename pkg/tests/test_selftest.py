"""Tests for the built-in property suites."""

from __future__ import annotations

import numpy as np
import pytest

from structpos import posenc
from structpos.config import PositionConfig
from structpos.models import DepTree, SubwordAlignment
from structpos.posenc import identity_alignment, rel_structural_matrix
from structpos.selftest import (
    antisymmetry_suite,
    equivariance_suite,
    gradcheck_suite,
    oracle_rel_structural,
    oracle_suite,
    run_selftest,
)


def test_oracle_agrees_on_fixture(fixture_tree: DepTree) -> None:
    """The graph-search oracle reproduces the library on the example tree."""
    align = identity_alignment(fixture_tree.n, has_eos=True)
    cfg = PositionConfig(r_clip=2)
    np.testing.assert_array_equal(
        oracle_rel_structural(fixture_tree, align, cfg),
        rel_structural_matrix(fixture_tree, align, cfg),
    )


def test_oracle_suite_passes() -> None:
    """Random trees agree with the oracle."""
    result = oracle_suite(trees=60, max_len=15, seed=2)
    assert result.passed, result.detail
    assert result.checked == 60


def test_antisymmetry_suite_passes() -> None:
    """Relative matrices are antisymmetric."""
    assert antisymmetry_suite(trees=60, max_len=15, seed=2).passed


def test_antisymmetry_suite_catches_a_flipped_sign(monkeypatch: pytest.MonkeyPatch) -> None:
    """Dropping the orientation of the off-path rule breaks antisymmetry."""
    monkeypatch.setattr(posenc, "_rule2_sign", lambda offset: np.abs(np.sign(offset)))
    result = antisymmetry_suite(trees=60, max_len=15, seed=2)
    assert not result.passed
    assert "not antisymmetric" in result.detail


def test_antisymmetry_suite_accepts_a_replacement() -> None:
    """A deliberately broken matrix function is reported through rel_fn."""

    def symmetric(
        tree: DepTree, align: SubwordAlignment, cfg: PositionConfig, clip: bool
    ) -> np.ndarray:
        return np.abs(rel_structural_matrix(tree, align, cfg, clip))

    assert not antisymmetry_suite(trees=20, max_len=10, seed=0, rel_fn=symmetric).passed


def test_equivariance_suite_passes() -> None:
    """Permutation symmetry and the zero-table reductions hold."""
    result = equivariance_suite(inputs=5, seed=1)
    assert result.passed, result.detail


def test_gradcheck_suite_passes() -> None:
    """Gradients check out for a few rows."""
    result = gradcheck_suite(rows=(2, 7), seed=7)
    assert result.passed, result.detail
    assert result.checked == 2


@pytest.mark.slow
def test_quick_selftest() -> None:
    """The quick selftest runs every suite and passes."""
    results = run_selftest(quick=True, seed=0)
    assert [r.name for r in results] == ["oracle", "antisymmetry", "equivariance", "gradcheck"]
    assert all(r.passed for r in results), [r.detail for r in results if not r.passed]
    assert all(r.seconds >= 0.0 for r in results)
