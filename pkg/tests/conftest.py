"""Shared fixtures for structpos tests."""

from __future__ import annotations

import numpy as np
import pytest

from structpos.config import EncoderConfig, PositionConfig
from structpos.deptree import build_tree
from structpos.models import ROOT, DepTree

# "Bush held a talk with Sharon": held is the root; talk is its direct
# dependent, two tokens away in the sequence.
FIXTURE_FORMS = ["Bush", "held", "a", "talk", "with", "Sharon"]
FIXTURE_PARENTS = [1, ROOT, 3, 1, 5, 1]
FIXTURE_DEPTHS = [1, 0, 2, 1, 2, 1]

BUSH, HELD, A, TALK, WITH, SHARON = range(6)

FIXTURE_CONLLU = (
    "# sent_id = fixture-1\n"
    "# text = Bush held a talk with Sharon\n"
    "1\tBush\tBush\tPROPN\tNNP\t_\t2\tnsubj\t_\t_\n"
    "2\theld\thold\tVERB\tVBD\t_\t0\troot\t_\t_\n"
    "3\ta\ta\tDET\tDT\t_\t4\tdet\t_\t_\n"
    "4\ttalk\ttalk\tNOUN\tNN\t_\t2\tobj\t_\t_\n"
    "5\twith\twith\tADP\tIN\t_\t6\tcase\t_\t_\n"
    "6\tSharon\tSharon\tPROPN\tNNP\t_\t2\tobl\t_\tSpaceAfter=No\n"
    "\n"
)

CYCLIC_CONLLU = (
    "1\tx\t_\t_\t_\t_\t2\tdep\t_\t_\n"
    "2\ty\t_\t_\t_\t_\t1\tdep\t_\t_\n"
    "\n"
)


@pytest.fixture()
def fixture_tree() -> DepTree:
    """The hand-built six-token example tree."""
    return build_tree(FIXTURE_PARENTS, forms=FIXTURE_FORMS)


@pytest.fixture()
def position_config() -> PositionConfig:
    """Default position settings (r_clip 16, ancestor-path rule 1)."""
    return PositionConfig()


@pytest.fixture()
def small_encoder() -> EncoderConfig:
    """A tiny encoder that runs in milliseconds."""
    return EncoderConfig(vocab_size=16, d_model=8, n_heads=2, n_layers=2, d_ffn=16, r_clip=4)


@pytest.fixture()
def rng() -> np.random.Generator:
    """Seeded generator for property tests."""
    return np.random.default_rng(1234)
