"""Persistence for datasets, annotations and run artefacts.

Everything is JSON or JSON Lines written with pydantic's
``model_dump_json``; checkpoints use the binary format in
``nncore.checkpoint``.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path

from pydantic import BaseModel, ValidationError

from structpos.errors import StorageError
from structpos.models import AnnotationRecord, RunReport, TaskDataset, TaskKind, TaskSample

logger = logging.getLogger(__name__)


class DatasetHeader(BaseModel):
    """First line of a dataset file: everything in TaskDataset except the samples."""

    task: TaskKind
    num_classes: int
    vocab_size: int
    seed: int
    label_ceiling: int | None = None
    threshold: int | None = None


def write_jsonl(path: str | Path, records: Iterable[BaseModel]) -> int:
    """Write one JSON object per line and return how many were written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
            count += 1
    return count


def write_annotations(path: str | Path, records: Iterable[AnnotationRecord]) -> int:
    return write_jsonl(path, records)


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Read ``structpos annotate`` output.

    Raises:
        StorageError: If a line is not a valid annotation record.
    """
    records: list[AnnotationRecord] = []
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(AnnotationRecord.model_validate_json(line))
            except ValidationError as exc:
                raise StorageError(f"{path}:{number}: {exc}") from exc
    return records


def save_dataset(path: str | Path, dataset: TaskDataset) -> Path:
    """Write a header line followed by one TaskSample per line."""
    path = Path(path)
    header = DatasetHeader.model_validate(dataset.model_dump(exclude={"samples"}))
    write_jsonl(path, [header, *dataset.samples])
    logger.info("Wrote %d %s samples to %s", len(dataset.samples), dataset.task, path)
    return path


def load_dataset(path: str | Path) -> TaskDataset:
    """Read a file written by ``save_dataset``.

    Raises:
        StorageError: On a missing header or an invalid line.
    """
    with open(path) as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise StorageError(f"{path} is empty")
    try:
        header = DatasetHeader.model_validate_json(lines[0])
        samples = [TaskSample.model_validate_json(line) for line in lines[1:]]
    except ValidationError as exc:
        raise StorageError(f"{path}: {exc}") from exc
    return TaskDataset(**header.model_dump(), samples=samples)


class RunStore:
    """Directory holding the reports, checkpoints and table of an ablation run."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def csv_path(self) -> Path:
        return self.root / "ablation.csv"

    def report_path(self, row: int) -> Path:
        return self.root / f"row{row}.report.json"

    def checkpoint_path(self, row: int) -> Path:
        return self.root / f"row{row}.ckpt"

    def save_report(self, report: RunReport) -> Path | None:
        """Write ``report`` as pretty JSON; failures are logged, not raised."""
        try:
            return write_report(self.report_path(report.config_row or 0), report)
        except OSError as exc:
            logger.warning("Failed to write run report: %s", exc)
            return None

    def load_report(self, row: int) -> RunReport | None:
        path = self.report_path(row)
        if not path.exists():
            return None
        return RunReport.model_validate_json(path.read_text())

    def reports(self) -> list[RunReport]:
        """Every stored report, in row order."""
        found = (self.load_report(row) for row in range(1, 10))
        return [report for report in found if report is not None]


def write_report(path: str | Path, report: RunReport) -> Path:
    """Write a single run report as pretty JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path
