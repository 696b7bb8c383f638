"""Training and evaluation of an encoder plus a task head."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from structpos.config import EncoderConfig, RuntimeSettings, TaskConfig, TrainConfig
from structpos.errors import CheckpointError, NonFiniteLoss
from structpos.harness.tasks import label_marginal_baseline, targets_of
from structpos.models import (
    EpochStats,
    PositionAnnotation,
    RunReport,
    TaskDataset,
    TaskKind,
    TaskSample,
)
from structpos.nncore.checkpoint import load_checkpoint, save_checkpoint
from structpos.nncore.encoder import EncoderParams, ParamStore, encoder_forward
from structpos.nncore.optim import clip_grad_norm, make_optimizer
from structpos.nncore.tensor import DEFAULT_DTYPE, Tensor, cross_entropy, einsum
from structpos.posenc import annotate

logger = logging.getLogger(__name__)

HEAD_PREFIX = "head."


@dataclass
class TaskModel:
    """Encoder with a zero-initialised classifier on top.

    Depth uses a per-token linear head; distance scores a pair ``(i, j)``
    with a bilinear form per class. ``task_config`` and ``data_seed``, or
    ``held_out_data``, record where the held-out set came from so a loaded
    checkpoint can be re-scored on the same sentences.
    """

    config: EncoderConfig
    task: TaskKind
    num_classes: int
    encoder: EncoderParams
    head: ParamStore
    task_config: TaskConfig | None = None
    data_seed: int | None = None
    held_out_data: str | None = None

    @classmethod
    def create(
        cls,
        config: EncoderConfig,
        task: TaskKind,
        num_classes: int,
        seed: int,
        dtype: Any = DEFAULT_DTYPE,
    ) -> TaskModel:
        d = config.d_model
        head = ParamStore()
        if task is TaskKind.DEPTH:
            head.add(f"{HEAD_PREFIX}weight", np.zeros((d, num_classes), dtype=dtype))
        else:
            head.add(f"{HEAD_PREFIX}bilinear", np.zeros((num_classes, d, d), dtype=dtype))
        head.add(f"{HEAD_PREFIX}bias", np.zeros(num_classes, dtype=dtype))
        return cls(config, task, num_classes, EncoderParams.init(config, seed, dtype), head)

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.head.parameters()

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.encoder.arrays(), **self.head.arrays()}

    def annotate(self, sample: TaskSample) -> PositionAnnotation:
        return annotate(sample.tree, None, self.config.position())

    def logits(self, sample: TaskSample, annotation: PositionAnnotation) -> Tensor:
        """Class scores of shape ``(targets, num_classes)``."""
        hidden = encoder_forward(sample.token_ids, annotation, self.config, self.encoder)
        bias = self.head[f"{HEAD_PREFIX}bias"]
        if self.task is TaskKind.DEPTH:
            return hidden @ self.head[f"{HEAD_PREFIX}weight"] + bias
        pairs = np.asarray(sample.pairs or [], dtype=np.int64).reshape(-1, 3)
        left = hidden.take(pairs[:, 0])
        right = hidden.take(pairs[:, 1])
        scored = einsum("pd,cde->pce", left, self.head[f"{HEAD_PREFIX}bilinear"])
        return einsum("pce,pe->pc", scored, right) + bias

    def loss(self, sample: TaskSample, annotation: PositionAnnotation) -> Tensor:
        return cross_entropy(self.logits(sample, annotation), targets_of(sample))

    def predict(self, sample: TaskSample, annotation: PositionAnnotation) -> np.ndarray:
        return np.argmax(self.logits(sample, annotation).data, axis=1)

    # *** persistence ***

    def save(self, path: str | Path) -> Path:
        meta: dict[str, Any] = {
            "encoder": self.config.model_dump(mode="json"),
            "task": str(self.task),
            "num_classes": self.num_classes,
            "task_config": self.task_config.model_dump(mode="json") if self.task_config else None,
            "data_seed": self.data_seed,
            "held_out_data": self.held_out_data,
        }
        return save_checkpoint(path, self.arrays(), meta)

    @classmethod
    def load(cls, path: str | Path) -> TaskModel:
        """Rebuild a model from ``save`` output.

        Raises:
            CheckpointError: If the file is corrupt or its arrays do not fit.
        """
        checkpoint = load_checkpoint(path)
        try:
            config = EncoderConfig.model_validate(checkpoint.meta["encoder"])
            task = TaskKind(checkpoint.meta["task"])
            num_classes = int(checkpoint.meta["num_classes"])
            raw_task = checkpoint.meta.get("task_config")
            task_config = TaskConfig.model_validate(raw_task) if raw_task else None
            raw_seed = checkpoint.meta.get("data_seed")
            data_seed = int(raw_seed) if raw_seed is not None else None
            held_out_data = checkpoint.meta.get("held_out_data")
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"Checkpoint metadata incomplete: {exc}") from exc
        model = cls.create(config, task, num_classes, seed=0)
        model.task_config = task_config
        model.data_seed = data_seed
        model.held_out_data = str(held_out_data) if held_out_data else None
        try:
            model.encoder.load_arrays(checkpoint.arrays)
            model.head.load_arrays(checkpoint.arrays)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc
        return model


@dataclass
class EvalResult:
    """Held-out accuracy plus throughput."""

    accuracy: float
    correct: int
    total: int
    seconds: float
    sentences: int

    @property
    def sentences_per_second(self) -> float:
        return self.sentences / self.seconds if self.seconds > 0 else 0.0


@dataclass
class TrainOutcome:
    report: RunReport
    model: TaskModel


def _score(model: TaskModel, sample: TaskSample) -> tuple[int, int]:
    predicted = model.predict(sample, model.annotate(sample))
    expected = np.asarray(targets_of(sample), dtype=np.int64)
    return int((predicted == expected).sum()), int(expected.size)


def evaluate(model: TaskModel, dataset: TaskDataset, workers: int | None = None) -> EvalResult:
    """Accuracy over every target in ``dataset``.

    Sentences are scored in a thread pool unless ``workers`` is 1 or
    ``STRUCTPOS_SINGLE_THREADED`` is set; results are identical either way.
    """
    workers = RuntimeSettings().effective_workers if workers is None else workers
    start = time.perf_counter()
    if workers > 1 and len(dataset.samples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda s: _score(model, s), dataset.samples))
    else:
        scores = [_score(model, sample) for sample in dataset.samples]
    seconds = time.perf_counter() - start
    correct = sum(c for c, _ in scores)
    total = sum(t for _, t in scores)
    return EvalResult(
        accuracy=correct / total if total else 0.0,
        correct=correct,
        total=total,
        seconds=seconds,
        sentences=len(dataset.samples),
    )


def train(
    config: EncoderConfig,
    train_config: TrainConfig,
    dataset: TaskDataset,
    held_out: TaskDataset | None = None,
) -> TrainOutcome:
    """Train an encoder and head on ``dataset`` and score it on ``held_out``.

    With a zero learning rate no parameter moves. Two calls with equal
    arguments produce identical parameters and reports.

    Raises:
        NonFiniteLoss: If a batch loss becomes NaN or infinite.
    """
    if config.vocab_size < dataset.vocab_size:
        raise ValueError(
            f"Encoder vocabulary ({config.vocab_size}) is smaller than "
            f"the dataset vocabulary ({dataset.vocab_size})"
        )
    started = time.perf_counter()
    rng = np.random.default_rng(train_config.seed)
    model = TaskModel.create(config, dataset.task, dataset.num_classes, train_config.seed)
    params = model.parameters()
    optimizer = make_optimizer(train_config, params)
    annotations = [model.annotate(sample) for sample in dataset.samples]
    size = len(dataset.samples)

    history: list[EpochStats] = []
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(size)
        loss_sum = 0.0
        correct = total = 0
        for start in range(0, size, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            batch_loss: Tensor | None = None
            for index in batch:
                sample = dataset.samples[int(index)]
                logits = model.logits(sample, annotations[int(index)])
                expected = np.asarray(targets_of(sample), dtype=np.int64)
                correct += int((np.argmax(logits.data, axis=1) == expected).sum())
                total += int(expected.size)
                sample_loss = cross_entropy(logits, expected)
                batch_loss = sample_loss if batch_loss is None else batch_loss + sample_loss
            assert batch_loss is not None
            batch_loss = batch_loss * (1.0 / len(batch))
            value = float(batch_loss.data)
            if not math.isfinite(value):
                logger.error("Non-finite loss at epoch %d, batch starting %d", epoch, start)
                raise NonFiniteLoss(f"Loss became {value} at epoch {epoch}")
            loss_sum += value * len(batch)

            optimizer.zero_grad()
            batch_loss.backward()
            if train_config.grad_clip is not None:
                clip_grad_norm(params, train_config.grad_clip)
            optimizer.step()

        stats = EpochStats(
            epoch=epoch,
            loss=loss_sum / size if size else 0.0,
            accuracy=correct / total if total else 0.0,
        )
        history.append(stats)
        logger.info(
            "row=%s epoch=%d loss=%.4f train_acc=%.4f",
            config.row,
            epoch,
            stats.loss,
            stats.accuracy,
        )

    test_set = held_out if held_out is not None else dataset
    result = evaluate(model, test_set)
    baseline, stderr = label_marginal_baseline(test_set)
    report = RunReport(
        config_row=config.row,
        task=dataset.task,
        flags=config.flags,
        seed=train_config.seed,
        train_size=size,
        test_size=len(test_set.samples),
        epochs=history,
        final_accuracy=result.accuracy,
        baseline_accuracy=baseline,
        baseline_standard_error=stderr,
        wall_clock_seconds=time.perf_counter() - started,
        eval_sentences_per_second=result.sentences_per_second,
    )
    logger.info(
        "row=%s final_acc=%.4f baseline=%.4f (%.1fs)",
        config.row,
        report.final_accuracy,
        baseline,
        report.wall_clock_seconds,
    )
    return TrainOutcome(report=report, model=model)
