"""Synthetic tasks whose labels depend on tree structure.

Sentences are random token ids over random trees, so word identity
carries no information and only position signals can explain the labels.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict

import numpy as np

from structpos.config import TaskConfig
from structpos.deptree import random_tree, tree_distance
from structpos.errors import DegenerateTree
from structpos.models import DepTree, TaskDataset, TaskKind, TaskSample

logger = logging.getLogger(__name__)

# |corr(|i - j|, label)| must stay below this on distance datasets
MAX_SEQUENCE_CORRELATION = 0.2
_MAX_RESAMPLES = 1000


def gen_depth_task(
    count: int,
    max_len: int,
    vocab_size: int,
    seed: int,
    min_len: int = 2,
    label_ceiling: int = 6,
) -> TaskDataset:
    """Sentences labelled with each token's depth, capped at ``label_ceiling``."""
    if count < 0 or min_len < 1 or max_len < min_len:
        raise ValueError(f"Bad task size: count={count}, min_len={min_len}, max_len={max_len}")
    rng = np.random.default_rng(seed)
    samples: list[TaskSample] = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        tree = random_tree(n, rng, shuffle=True)
        samples.append(
            TaskSample(
                task=TaskKind.DEPTH,
                token_ids=[int(t) for t in rng.integers(0, vocab_size, size=n)],
                tree=tree,
                depth_labels=[min(d, label_ceiling) for d in tree.depth],
            )
        )
    logger.info("Generated %d depth samples (seed=%d)", count, seed)
    return TaskDataset(
        task=TaskKind.DEPTH,
        num_classes=label_ceiling + 1,
        vocab_size=vocab_size,
        seed=seed,
        label_ceiling=label_ceiling,
        samples=samples,
    )


def matched_pairs(
    tree: DepTree,
    threshold: int,
    pairs: int,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Draw positive and negative pairs sharing the same sequence gap.

    Each draw picks a gap ``|i - j|`` that has both a near pair (tree
    distance within ``threshold``) and a far pair, then emits one of each,
    so sequence distance alone cannot separate the labels.

    Raises:
        DegenerateTree: If no gap offers both labels.
    """
    by_gap: dict[int, tuple[list[tuple[int, int]], list[tuple[int, int]]]] = defaultdict(
        lambda: ([], [])
    )
    for i in range(tree.n):
        for j in range(i + 1, tree.n):
            near, far = by_gap[j - i]
            (near if tree_distance(tree, i, j) <= threshold else far).append((i, j))
    gaps = sorted(gap for gap, (near, far) in by_gap.items() if near and far)
    if not gaps:
        raise DegenerateTree(f"No sequence gap has both labels in a {tree.n}-token tree")

    drawn: list[tuple[int, int, int]] = []
    for _ in range(pairs):
        near, far = by_gap[gaps[int(rng.integers(len(gaps)))]]
        for pool, label in ((near, 1), (far, 0)):
            i, j = pool[int(rng.integers(len(pool)))]
            if rng.random() < 0.5:
                i, j = j, i
            drawn.append((i, j, label))
    return drawn


def sequence_label_correlation(dataset: TaskDataset) -> float:
    """Pearson correlation between ``|i - j|`` and the pair label (0 if undefined)."""
    gaps: list[int] = []
    labels: list[int] = []
    for sample in dataset.samples:
        for i, j, label in sample.pairs or ():
            gaps.append(abs(i - j))
            labels.append(label)
    if len(gaps) < 2 or np.std(gaps) == 0 or np.std(labels) == 0:
        return 0.0
    return float(np.corrcoef(gaps, labels)[0, 1])


def gen_distance_task(
    count: int,
    max_len: int,
    vocab_size: int,
    threshold: int,
    seed: int,
    min_len: int = 2,
    pairs_per_sentence: int = 4,
) -> TaskDataset:
    """Token pairs labelled 1 when their tree distance is at most ``threshold``.

    Trees too small to hold a far pair are redrawn.

    Raises:
        ValueError: If ``threshold`` is below 1.
        DegenerateTree: If sampling keeps failing or the labels end up
            correlated with sequence distance.
    """
    if threshold < 1:
        raise ValueError(f"Distance threshold must be at least 1, got {threshold}")
    min_len = max(min_len, threshold + 2)
    if count < 0 or max_len < min_len:
        raise ValueError(
            f"max_len={max_len} cannot hold trees with a pair farther than {threshold}"
        )

    rng = np.random.default_rng(seed)
    samples: list[TaskSample] = []
    failures = 0
    while len(samples) < count:
        n = int(rng.integers(min_len, max_len + 1))
        tree = random_tree(n, rng, shuffle=True)
        try:
            pairs = matched_pairs(tree, threshold, pairs_per_sentence, rng)
        except DegenerateTree:
            failures += 1
            if failures > _MAX_RESAMPLES:
                raise
            continue
        failures = 0
        samples.append(
            TaskSample(
                task=TaskKind.DISTANCE,
                token_ids=[int(t) for t in rng.integers(0, vocab_size, size=n)],
                tree=tree,
                pairs=pairs,
            )
        )

    dataset = TaskDataset(
        task=TaskKind.DISTANCE,
        num_classes=2,
        vocab_size=vocab_size,
        seed=seed,
        threshold=threshold,
        samples=samples,
    )
    correlation = sequence_label_correlation(dataset)
    logger.info(
        "Generated %d distance samples (seed=%d, corr(|i-j|, label)=%.3f)",
        count,
        seed,
        correlation,
    )
    if abs(correlation) >= MAX_SEQUENCE_CORRELATION:
        raise DegenerateTree(f"Pair labels correlate with sequence distance ({correlation:.3f})")
    return dataset


def generate(config: TaskConfig, count: int, vocab_size: int, seed: int) -> TaskDataset:
    """Generate ``count`` samples of ``config.task``."""
    if config.task is TaskKind.DEPTH:
        return gen_depth_task(
            count,
            config.max_len,
            vocab_size,
            seed,
            min_len=config.min_len,
            label_ceiling=config.label_ceiling,
        )
    return gen_distance_task(
        count,
        config.max_len,
        vocab_size,
        config.threshold,
        seed,
        min_len=config.min_len,
        pairs_per_sentence=config.pairs_per_sentence,
    )


def make_datasets(
    config: TaskConfig, vocab_size: int, seed: int | None = None
) -> tuple[TaskDataset, TaskDataset]:
    """Train and held-out sets for ``config.task``, drawn from disjoint seeds."""
    base = config.seed if seed is None else seed
    return (
        generate(config, config.train_size, vocab_size, 2 * base),
        held_out_dataset(config, vocab_size, base),
    )


def held_out_dataset(config: TaskConfig, vocab_size: int, seed: int | None = None) -> TaskDataset:
    """The held-out half of ``make_datasets`` on its own."""
    base = config.seed if seed is None else seed
    return generate(config, config.test_size, vocab_size, 2 * base + 1)


def targets_of(sample: TaskSample) -> list[int]:
    """Labels of one sample in prediction order."""
    if sample.task is TaskKind.DEPTH:
        return list(sample.depth_labels or [])
    return [label for _, _, label in sample.pairs or ()]


def label_marginal_baseline(dataset: TaskDataset) -> tuple[float, float]:
    """Accuracy of always predicting the most frequent label, with its standard error."""
    labels = [label for sample in dataset.samples for label in targets_of(sample)]
    if not labels:
        return 0.0, 0.0
    counts = np.bincount(labels)
    p = float(counts.max()) / len(labels)
    return p, math.sqrt(p * (1.0 - p) / len(labels))
