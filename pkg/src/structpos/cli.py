"""Command-line interface for structpos."""

from __future__ import annotations

import logging
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

import click
import yaml
from rich.console import Console
from rich.table import Table

from structpos import posenc
from structpos.config import (
    EncoderConfig,
    PositionConfig,
    RuntimeSettings,
    StructposConfig,
    load_config,
)
from structpos.deptree import parse_conllu_lenient
from structpos.errors import (
    AlignmentOutOfRange,
    CheckpointError,
    DegenerateTree,
    IndexOutOfRange,
    NonFiniteLoss,
    StorageError,
    TreeError,
)
from structpos.harness.ablation import parse_rows, run_ablation
from structpos.harness.tasks import generate, held_out_dataset, make_datasets
from structpos.harness.train import TaskModel, evaluate, train
from structpos.models import (
    AnnotationRecord,
    DepTree,
    FusionMode,
    Rule1Interpretation,
    RunReport,
    SubwordAlignment,
    TaskKind,
)
from structpos.selftest import run_selftest
from structpos.storage import (
    load_dataset,
    read_annotations,
    save_dataset,
    write_annotations,
    write_report,
)

console = Console()
logger = logging.getLogger("structpos.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_EMPTY = 2
EXIT_USAGE = 64  # EX_USAGE from sysexits.h

RULE1_CHOICES = {
    "ancestor": Rule1Interpretation.ANCESTOR_PATH,
    "edge": Rule1Interpretation.LITERAL_EDGE,
}

F = TypeVar("F", bound=Callable[..., Any])


def _setup_logging(level: str) -> None:
    """Configure logging with the specified level.

    Args:
        level: Logging level string (debug, info, warning, error).
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )


class ExitCodeGroup(click.Group):
    """Click group that reports usage errors with exit code 64."""

    def make_context(
        self,
        info_name: str | None,
        args: list[str],
        parent: click.Context | None = None,
        **extra: Any,
    ) -> click.Context:
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise


def _position_options(func: F) -> F:
    """Shared --r-clip / --rule1 / --fusion overrides."""
    func = click.option(
        "--fusion",
        type=click.Choice([mode.value for mode in FusionMode]),
        default=None,
        help="How absolute sequential and structural encodings combine",
    )(func)
    func = click.option(
        "--rule1",
        type=click.Choice(sorted(RULE1_CHOICES)),
        default=None,
        help="Same-path test: any ancestor pair, or direct head-dependent edges only",
    )(func)
    func = click.option(
        "--r-clip",
        type=click.IntRange(min=1),
        default=None,
        help="Clipping distance for relative positions (default 16)",
    )(func)
    return func


def _position_overrides(
    r_clip: int | None, rule1: str | None, fusion: str | None
) -> dict[str, Any]:
    updates: dict[str, Any] = {}
    if r_clip is not None:
        updates["r_clip"] = r_clip
    if rule1 is not None:
        updates["rule1_interpretation"] = RULE1_CHOICES[rule1]
    if fusion is not None:
        updates["fusion_mode"] = FusionMode(fusion)
    return updates


def _position_config(
    cfg: StructposConfig, r_clip: int | None, rule1: str | None, fusion: str | None
) -> PositionConfig:
    return cfg.position.model_copy(update=_position_overrides(r_clip, rule1, fusion))


def _encoder_config(
    cfg: StructposConfig,
    row: int | None,
    r_clip: int | None,
    rule1: str | None,
    fusion: str | None,
) -> EncoderConfig:
    encoder = cfg.encoder.model_copy(update=_position_overrides(r_clip, rule1, fusion))
    return encoder.for_row(row) if row is not None else encoder


def _print_reports(reports: Sequence[RunReport], title: str) -> None:
    table = Table(title=title)
    table.add_column("Row", style="cyan")
    table.add_column("Flags", style="white")
    table.add_column("Accuracy", style="green")
    table.add_column("Baseline", style="yellow")
    table.add_column("Seconds", style="dim")
    for report in reports:
        on = [name for name, enabled in report.flags.items() if enabled]
        table.add_row(
            str(report.config_row or "-"),
            ", ".join(on) or "none",
            f"{report.final_accuracy:.4f}",
            f"{report.baseline_accuracy:.4f} ± {report.baseline_standard_error:.4f}",
            f"{report.wall_clock_seconds:.1f}",
        )
    console.print(table)


@click.group(cls=ExitCodeGroup)
@click.option(
    "--config",
    "-c",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Path to structpos.yaml config file",
)
@click.option(
    "--log-level",
    type=click.Choice(["debug", "info", "warning", "error"]),
    default=None,
    help="Override the configured log level",
)
@click.pass_context
def main(ctx: click.Context, config: str | None, log_level: str | None) -> None:
    """structpos: structural position encodings for self-attention."""
    ctx.ensure_object(dict)
    try:
        cfg = load_config(config)
    except (ValueError, yaml.YAMLError) as exc:
        raise click.UsageError(f"Invalid config file: {exc}") from exc
    ctx.obj["config"] = cfg
    _setup_logging(log_level or cfg.logging.level)


# ---------------------------------------------------------------------------
# Treebank annotation
# ---------------------------------------------------------------------------


def _alignment(
    tree: DepTree, pieces: list[str] | None, eos: bool
) -> tuple[SubwordAlignment, list[str]]:
    """Alignment and output tokens for one sentence."""
    if pieces is None:
        align = posenc.identity_alignment(tree.n, has_eos=eos)
        tokens = list(tree.forms)
    else:
        align = posenc.align_bpe(pieces, has_eos=eos)
        tokens = list(pieces)
        covered = align.word_of_subword[-1] + 1 if align.word_of_subword else 0
        if covered != tree.n:
            raise AlignmentOutOfRange(f"{covered} words in the sub-word line, tree has {tree.n}")
    if eos:
        tokens.append(posenc.EOS_TOKEN)
    return align, tokens


def _map(func: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
    """Order-preserving map, fanned out unless single-threaded mode is on."""
    workers = RuntimeSettings().effective_workers
    if workers <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@main.command(name="annotate")
@click.option("--input", "-i", "input_path", required=True, help="CoNLL-U treebank to annotate")
@click.option("--output", "-o", "output_path", required=True, help="JSON-lines output path")
@click.option("--bpe", default=None, help="Parallel '@@'-segmented sub-word file, one line each")
@click.option("--eos", is_flag=True, help="Append an end-of-sentence symbol to every sentence")
@_position_options
@click.pass_context
def annotate_cmd(
    ctx: click.Context,
    input_path: str,
    output_path: str,
    bpe: str | None,
    eos: bool,
    r_clip: int | None,
    rule1: str | None,
    fusion: str | None,
) -> None:
    """Annotate every sentence of a treebank with all four position schemes."""
    pos_cfg = _position_config(ctx.obj["config"], r_clip, rule1, fusion)
    try:
        text = Path(input_path).read_text(encoding="utf-8-sig")
        bpe_lines = Path(bpe).read_text(encoding="utf-8-sig").splitlines() if bpe else None
    except (OSError, UnicodeDecodeError) as exc:
        logger.error("Cannot read input: %s", exc)
        ctx.exit(EXIT_FAILURE)

    parsed = parse_conllu_lenient(text)
    trees: list[tuple[int, DepTree]] = []
    for index, result in parsed:
        if isinstance(result, TreeError):
            logger.warning("Skipping sentence %d: %s", index, result)
        else:
            trees.append((index, result))

    def work(job: tuple[int, DepTree]) -> AnnotationRecord | None:
        index, tree = job
        try:
            pieces = bpe_lines[index].split() if bpe_lines is not None else None
            align, tokens = _alignment(tree, pieces, eos)
            return posenc.to_record(posenc.annotate(tree, align, pos_cfg), tokens)
        except IndexError as exc:
            logger.warning("Skipping sentence %d: %s", index, exc)
            return None

    records = [record for record in _map(work, trees) if record is not None]
    try:
        write_annotations(output_path, records)
    except OSError as exc:
        logger.error("Cannot write output: %s", exc)
        ctx.exit(EXIT_FAILURE)

    skipped = len(parsed) - len(records)
    console.print(
        f"[green]Annotated {len(records)} sentences[/green] ({skipped} skipped) -> {output_path}"
    )
    if not records:
        ctx.exit(EXIT_EMPTY)


@main.command()
@click.option("--input", "-i", "input_path", required=True, help="CoNLL-U source treebank")
@click.option("--annotations", "-a", required=True, help="JSON-lines output of 'annotate'")
@click.pass_context
def verify(ctx: click.Context, input_path: str, annotations: str) -> None:
    """Recompute relative matrices from stored absolute values and the trees."""
    try:
        text = Path(input_path).read_text(encoding="utf-8-sig")
        records = read_annotations(annotations)
    except (OSError, UnicodeDecodeError, StorageError) as exc:
        logger.error("Cannot read input: %s", exc)
        ctx.exit(EXIT_FAILURE)

    trees = [tree for _, tree in parse_conllu_lenient(text) if isinstance(tree, DepTree)]
    if len(trees) != len(records):
        logger.error("%d parsable sentences but %d annotation records", len(trees), len(records))
        ctx.exit(EXIT_FAILURE)

    mismatches = 0
    for number, (tree, record) in enumerate(zip(trees, records, strict=True)):
        has_eos = bool(record.tokens) and record.tokens[-1] == posenc.EOS_TOKEN
        pieces = record.tokens[:-1] if has_eos else record.tokens
        cfg = PositionConfig(r_clip=record.r_clip, rule1_interpretation=record.rule1_interpretation)
        try:
            align = posenc.align_bpe(pieces, has_eos=has_eos)
            ok = posenc.verify_annotation(record, tree, align, cfg)
        except IndexOutOfRange:
            ok = False
        if not ok:
            mismatches += 1
            logger.warning("Record %d does not match its tree", number)

    style = "green" if not mismatches else "red"
    console.print(f"[{style}]{len(records) - mismatches}/{len(records)} records verified[/{style}]")
    if mismatches:
        ctx.exit(EXIT_FAILURE)


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------


@main.command(name="gen-data")
@click.option("--task", type=click.Choice([t.value for t in TaskKind]), default=None)
@click.option("--count", "-n", type=click.IntRange(min=1), default=None, help="Number of sentences")
@click.option("--seed", "-s", type=int, default=None, help="Deterministic seed")
@click.option("--output", "-o", "output_path", required=True, help="Dataset JSON-lines path")
@click.pass_context
def gen_data(
    ctx: click.Context, task: str | None, count: int | None, seed: int | None, output_path: str
) -> None:
    """Generate a synthetic task dataset."""
    cfg: StructposConfig = ctx.obj["config"]
    task_cfg = cfg.task.model_copy(update={"task": TaskKind(task)} if task else {})
    try:
        dataset = generate(
            task_cfg,
            count or task_cfg.train_size,
            cfg.encoder.vocab_size,
            task_cfg.seed if seed is None else seed,
        )
    except DegenerateTree as exc:
        logger.error("Dataset generation failed: %s", exc)
        ctx.exit(EXIT_FAILURE)
    try:
        save_dataset(output_path, dataset)
    except OSError as exc:
        logger.error("Cannot write dataset: %s", exc)
        ctx.exit(EXIT_FAILURE)
    console.print(
        f"[green]Wrote {len(dataset.samples)} {dataset.task} samples to {output_path}[/green]"
    )


@main.command(name="train")
@click.option("--task", type=click.Choice([t.value for t in TaskKind]), default=None)
@click.option("--row", type=click.IntRange(1, 9), default=None, help="Ablation row (1-9)")
@click.option("--seed", "-s", type=int, default=None, help="Seed for data and initialisation")
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--train-size", type=click.IntRange(min=1), default=None)
@click.option("--test-size", type=click.IntRange(min=1), default=None)
@click.option("--train-data", default=None, help="Replay a dataset written by gen-data")
@click.option("--test-data", default=None, help="Held-out dataset written by gen-data")
@click.option("--checkpoint", default=None, help="Where to save the trained model")
@click.option("--report", default=None, help="Where to save the RunReport JSON")
@_position_options
@click.pass_context
def train_cmd(
    ctx: click.Context,
    task: str | None,
    row: int | None,
    seed: int | None,
    epochs: int | None,
    train_size: int | None,
    test_size: int | None,
    train_data: str | None,
    test_data: str | None,
    checkpoint: str | None,
    report: str | None,
    r_clip: int | None,
    rule1: str | None,
    fusion: str | None,
) -> None:
    """Train one configuration on a synthetic task."""
    cfg: StructposConfig = ctx.obj["config"]
    encoder_cfg = _encoder_config(cfg, row, r_clip, rule1, fusion)
    task_updates: dict[str, Any] = {}
    if task is not None:
        task_updates["task"] = TaskKind(task)
    if train_size is not None:
        task_updates["train_size"] = train_size
    if test_size is not None:
        task_updates["test_size"] = test_size
    task_cfg = cfg.task.model_copy(update=task_updates)
    seed = task_cfg.seed if seed is None else seed
    train_updates: dict[str, Any] = {"seed": seed}
    if epochs is not None:
        train_updates["epochs"] = epochs
    train_cfg = cfg.training.model_copy(update=train_updates)

    try:
        if train_data and test_data:
            train_set, test_set = load_dataset(train_data), load_dataset(test_data)
        else:
            train_set, test_set = make_datasets(task_cfg, encoder_cfg.vocab_size, seed)
            if train_data:
                train_set = load_dataset(train_data)
            if test_data:
                test_set = load_dataset(test_data)
        outcome = train(encoder_cfg, train_cfg, train_set, test_set)
    except (OSError, StorageError, DegenerateTree) as exc:
        logger.error("Training setup failed: %s", exc)
        ctx.exit(EXIT_FAILURE)
    except NonFiniteLoss as exc:
        logger.error("Training aborted: %s", exc)
        ctx.exit(EXIT_FAILURE)

    model = outcome.model
    if test_data:
        model.held_out_data = str(Path(test_data).resolve())
    else:
        model.task_config, model.data_seed = task_cfg, seed
    run = outcome.report
    try:
        if checkpoint:
            run = run.model_copy(update={"checkpoint": str(model.save(checkpoint))})
        if report:
            write_report(report, run)
    except OSError as exc:
        logger.error("Cannot write outputs: %s", exc)
        ctx.exit(EXIT_FAILURE)
    _print_reports([run], title=f"{run.task} task")


@main.command(name="evaluate")
@click.option("--checkpoint", required=True, help="Checkpoint written by train or ablation")
@click.option("--data", default=None, help="Held-out dataset; defaults to the recorded one")
@click.option("--seed", "-s", type=int, default=None, help="Seed for regenerated held-out data")
@click.pass_context
def evaluate_cmd(ctx: click.Context, checkpoint: str, data: str | None, seed: int | None) -> None:
    """Re-derive held-out accuracy from a saved checkpoint."""
    cfg: StructposConfig = ctx.obj["config"]
    try:
        model = TaskModel.load(checkpoint)
        if data:
            dataset = load_dataset(data)
        elif model.held_out_data and seed is None:
            dataset = load_dataset(model.held_out_data)
        else:
            task_cfg = model.task_config or cfg.task.model_copy(update={"task": model.task})
            if seed is None:
                seed = model.data_seed
            dataset = held_out_dataset(task_cfg, model.config.vocab_size, seed)
    except (OSError, CheckpointError, StorageError, DegenerateTree) as exc:
        logger.error("Cannot evaluate: %s", exc)
        ctx.exit(EXIT_FAILURE)
    result = evaluate(model, dataset)
    console.print(
        f"accuracy={result.accuracy:.6f} ({result.correct}/{result.total}), "
        f"{result.sentences_per_second:.1f} sentences/s"
    )


@main.command()
@click.option("--rows", default="1-9", help="Rows to run, e.g. '1-9' or '4,7,9'")
@click.option("--seed", "-s", type=int, default=None, help="Seed shared by every row")
@click.option("--out-dir", "-o", required=True, help="Directory for reports, checkpoints, CSV")
@click.option("--task", type=click.Choice([t.value for t in TaskKind]), default=None)
@click.option("--no-timings", is_flag=True, help="Leave the CSV wall-clock column empty")
@click.pass_context
def ablation(
    ctx: click.Context,
    rows: str,
    seed: int | None,
    out_dir: str,
    task: str | None,
    no_timings: bool,
) -> None:
    """Train every requested ablation row on shared data and tabulate them."""
    try:
        selected = parse_rows(rows)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--rows") from exc
    cfg: StructposConfig = ctx.obj["config"]
    task_cfg = cfg.task.model_copy(update={"task": TaskKind(task)} if task else {})
    seed = task_cfg.seed if seed is None else seed
    try:
        reports = run_ablation(
            selected,
            seed,
            encoder_config=cfg.encoder,
            train_config=cfg.training,
            task_config=task_cfg,
            out_dir=out_dir,
            timings=not no_timings,
        )
    except (OSError, DegenerateTree, NonFiniteLoss) as exc:
        logger.error("Ablation failed: %s", exc)
        ctx.exit(EXIT_FAILURE)
    _print_reports(reports, title=f"Ablation ({task_cfg.task} task, seed {seed})")


@main.command()
@click.option("--quick", is_flag=True, help="Reduced sample counts")
@click.option("--seed", "-s", type=int, default=0, help="Seed for random trees and inputs")
@click.pass_context
def selftest(ctx: click.Context, quick: bool, seed: int) -> None:
    """Run the oracle, antisymmetry, equivariance and gradient suites."""
    results = run_selftest(quick=quick, seed=seed)
    table = Table(title="structpos selftest")
    table.add_column("Suite", style="cyan")
    table.add_column("Result")
    table.add_column("Checked", style="white")
    table.add_column("Seconds", style="dim")
    table.add_column("Detail", style="white")
    for result in results:
        table.add_row(
            result.name,
            "[green]pass[/green]" if result.passed else "[red]FAIL[/red]",
            str(result.checked),
            f"{result.seconds:.1f}",
            result.detail,
        )
    console.print(table)
    if not all(result.passed for result in results):
        ctx.exit(EXIT_FAILURE)
