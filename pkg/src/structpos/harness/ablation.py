"""Run the nine-row position-scheme ablation and tabulate it."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

from structpos.config import ABLATION_ROWS, EncoderConfig, TaskConfig, TrainConfig
from structpos.harness.tasks import make_datasets
from structpos.harness.train import train
from structpos.models import RunReport
from structpos.storage import RunStore

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["row", "abs_seq", "rel_seq", "abs_stru", "rel_stru", "final_accuracy", "wall_clock"]


def parse_rows(spec: str) -> list[int]:
    """Parse ``"1-9"``, ``"4,7,9"`` or a mix such as ``"1-3,9"``.

    Raises:
        ValueError: On malformed input or rows outside 1..9.
    """
    rows: set[int] = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            low, _, high = part.partition("-")
            rows.update(range(int(low), int(high) + 1))
        else:
            rows.add(int(part))
    if not rows:
        raise ValueError(f"No ablation rows in {spec!r}")
    unknown = sorted(rows - set(ABLATION_ROWS))
    if unknown:
        raise ValueError(f"Unknown ablation rows {unknown}; valid rows are 1-9")
    return sorted(rows)


def run_ablation(
    rows: Iterable[int],
    seed: int,
    encoder_config: EncoderConfig | None = None,
    train_config: TrainConfig | None = None,
    task_config: TaskConfig | None = None,
    out_dir: str | Path | None = None,
    timings: bool = True,
) -> list[RunReport]:
    """Train one model per requested row on a shared dataset.

    Every row sees the same train/held-out split and the same seed, so rows
    differ only in their position flags. With ``out_dir`` each row's report
    and checkpoint are written there alongside ``ablation.csv``.

    Raises:
        ValueError: If a row is outside 1..9.
    """
    selected = sorted(set(rows))
    unknown = [row for row in selected if row not in ABLATION_ROWS]
    if unknown or not selected:
        raise ValueError(f"Ablation rows must be a non-empty subset of 1-9, got {selected}")
    encoder_config = encoder_config or EncoderConfig()
    train_config = (train_config or TrainConfig()).model_copy(update={"seed": seed})
    task_config = task_config or TaskConfig()

    train_set, test_set = make_datasets(task_config, encoder_config.vocab_size, seed)
    store = RunStore(out_dir) if out_dir is not None else None

    reports: list[RunReport] = []
    for row in selected:
        logger.info("Ablation row %d: %s", row, encoder_config.for_row(row).flags)
        outcome = train(encoder_config.for_row(row), train_config, train_set, test_set)
        report = outcome.report
        if store is not None:
            outcome.model.task_config = task_config
            outcome.model.data_seed = seed
            checkpoint = outcome.model.save(store.checkpoint_path(row))
            report = report.model_copy(update={"checkpoint": str(checkpoint)})
            store.save_report(report)
        reports.append(report)

    if store is not None:
        write_ablation_csv(reports, store.csv_path, timings=timings)
    return reports


def write_ablation_csv(
    reports: Sequence[RunReport], path: str | Path, timings: bool = True
) -> Path:
    """Write one CSV line per row.

    With ``timings=False`` the wall-clock column is left empty, making the
    file byte-identical across re-runs with the same seed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(
                [
                    report.config_row,
                    *(int(report.flags.get(name, False)) for name in CSV_COLUMNS[1:5]),
                    f"{report.final_accuracy:.6f}",
                    f"{report.wall_clock_seconds:.3f}" if timings else "",
                ]
            )
    logger.info("Wrote ablation table %s", path)
    return path
