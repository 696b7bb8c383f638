"""Configuration loading and validation for structpos."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from structpos.models import FusionMode, Rule1Interpretation, TaskKind

DEFAULT_CONFIG_FILE = "structpos.yaml"

# Settings present in both the position and encoder blocks.
SHARED_POSITION_FIELDS = ("r_clip", "rule1_interpretation", "fusion_mode")

# Ablation grid: (abs_seq, rel_seq, abs_stru, rel_stru) per row id.
ABLATION_ROWS: dict[int, tuple[bool, bool, bool, bool]] = {
    1: (False, False, False, False),
    2: (False, False, True, False),
    3: (False, False, False, True),
    4: (True, False, False, False),
    5: (True, False, True, False),
    6: (True, False, True, True),
    7: (True, True, False, False),
    8: (True, True, True, False),
    9: (True, True, True, True),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PositionConfig(_Strict):
    """Settings for turning trees into position structures and vectors."""

    d_model: int = Field(default=64, gt=0, description="Embedding width (even)")
    r_clip: int = Field(default=16, ge=1, description="Clipping distance for relative positions")
    fusion_mode: FusionMode = FusionMode.NONLINEAR
    rule1_interpretation: Rule1Interpretation = Rule1Interpretation.ANCESTOR_PATH

    @model_validator(mode="after")
    def _check_even(self) -> PositionConfig:
        if self.d_model % 2:
            raise ValueError(f"d_model must be even for sin/cos pairing, got {self.d_model}")
        return self


class EncoderConfig(_Strict):
    """Model dimensions plus the four position flags (the ablation row selector)."""

    vocab_size: int = Field(default=32, ge=1)
    d_model: int = Field(default=64, gt=0)
    n_heads: int = Field(default=2, gt=0)
    n_layers: int = Field(default=2, ge=1)
    d_ffn: int = Field(default=128, gt=0)
    r_clip: int = Field(default=16, ge=1)
    abs_seq_on: bool = True
    rel_seq_on: bool = False
    abs_stru_on: bool = False
    rel_stru_on: bool = False
    fusion_mode: FusionMode = FusionMode.NONLINEAR
    rule1_interpretation: Rule1Interpretation = Rule1Interpretation.ANCESTOR_PATH
    ffn_activation: Literal["relu", "gelu"] = "relu"
    rel_sharing: Literal["per_layer", "shared"] = Field(
        default="per_layer",
        description="Relative tables are always shared across heads; optionally across layers",
    )
    layer_norm_eps: float = Field(default=1e-6, gt=0.0)

    @model_validator(mode="after")
    def _check_dimensions(self) -> EncoderConfig:
        if self.d_model % 2:
            raise ValueError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        return self

    @property
    def d_head(self) -> int:
        """Per-head width."""
        return self.d_model // self.n_heads

    @property
    def flags(self) -> dict[str, bool]:
        """The four position flags keyed by name."""
        return {
            "abs_seq": self.abs_seq_on,
            "rel_seq": self.rel_seq_on,
            "abs_stru": self.abs_stru_on,
            "rel_stru": self.rel_stru_on,
        }

    @property
    def row(self) -> int | None:
        """The ablation row these flags correspond to, if any."""
        key = (self.abs_seq_on, self.rel_seq_on, self.abs_stru_on, self.rel_stru_on)
        for row, flags in ABLATION_ROWS.items():
            if flags == key:
                return row
        return None

    def for_row(self, row: int) -> EncoderConfig:
        """Return a copy with the position flags of an ablation row.

        Raises:
            ValueError: If ``row`` is not in 1..9.
        """
        if row not in ABLATION_ROWS:
            raise ValueError(f"Ablation row must be between 1 and 9, got {row}")
        abs_seq, rel_seq, abs_stru, rel_stru = ABLATION_ROWS[row]
        return self.model_copy(
            update={
                "abs_seq_on": abs_seq,
                "rel_seq_on": rel_seq,
                "abs_stru_on": abs_stru,
                "rel_stru_on": rel_stru,
            }
        )

    def position(self) -> PositionConfig:
        """The position settings implied by this encoder."""
        return PositionConfig(
            d_model=self.d_model,
            r_clip=self.r_clip,
            fusion_mode=self.fusion_mode,
            rule1_interpretation=self.rule1_interpretation,
        )


class TrainConfig(_Strict):
    """Optimizer and loop settings."""

    optimizer: Literal["adam", "sgd"] = "adam"
    learning_rate: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=10, ge=1)
    grad_clip: float | None = Field(default=1.0, gt=0.0)
    seed: int = 0


class TaskConfig(_Strict):
    """Synthetic dataset settings."""

    task: TaskKind = TaskKind.DEPTH
    train_size: int = Field(default=4000, ge=1)
    test_size: int = Field(default=1000, ge=1)
    min_len: int = Field(default=2, ge=2)
    max_len: int = Field(default=24, ge=2)
    label_ceiling: int = Field(default=6, ge=1, description="Depth labels above this are capped")
    threshold: int = Field(default=2, ge=1, description="Distance task: positive if dist <= this")
    pairs_per_sentence: int = Field(default=4, ge=1, description="Matched pos/neg pairs")
    seed: int = 0

    @model_validator(mode="after")
    def _check_lengths(self) -> TaskConfig:
        if self.min_len > self.max_len:
            raise ValueError(f"min_len ({self.min_len}) exceeds max_len ({self.max_len})")
        return self


class LoggingConfig(_Strict):
    """Configuration for logging output."""

    level: str = "info"


class StructposConfig(_Strict):
    """Top-level structpos configuration."""

    position: PositionConfig = Field(default_factory=PositionConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @model_validator(mode="after")
    def _sync_position_settings(self) -> StructposConfig:
        """Copy a shared setting given in only one block into the other.

        Raises:
            ValueError: If both blocks set a shared setting to different values.
        """
        position_updates: dict[str, Any] = {}
        encoder_updates: dict[str, Any] = {}
        for name in SHARED_POSITION_FIELDS:
            in_position = name in self.position.model_fields_set
            in_encoder = name in self.encoder.model_fields_set
            position_value = getattr(self.position, name)
            encoder_value = getattr(self.encoder, name)
            if in_position and in_encoder and position_value != encoder_value:
                raise ValueError(
                    f"position.{name} ({position_value}) and encoder.{name} "
                    f"({encoder_value}) disagree"
                )
            if in_position and not in_encoder:
                encoder_updates[name] = position_value
            elif in_encoder and not in_position:
                position_updates[name] = encoder_value
        if position_updates:
            self.position = self.position.model_copy(update=position_updates)
        if encoder_updates:
            self.encoder = self.encoder.model_copy(update=encoder_updates)
        return self


class RuntimeSettings(BaseSettings):
    """Process-level switches read from ``STRUCTPOS_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="STRUCTPOS_")

    single_threaded: bool = Field(
        default=False, description="Disable every thread pool for reproducible runs"
    )
    workers: int = Field(default=4, ge=1, description="Thread-pool width when fan-out is allowed")

    @property
    def effective_workers(self) -> int:
        """Worker count after applying single-threaded mode."""
        return 1 if self.single_threaded else self.workers


def load_config(path: str | Path | None = None) -> StructposConfig:
    """Load structpos configuration from a YAML file.

    Args:
        path: Path to the YAML config file. If None, uses 'structpos.yaml'
              in the current directory, falling back to defaults.

    Returns:
        A validated StructposConfig instance.
    """
    path = Path(DEFAULT_CONFIG_FILE) if path is None else Path(path)

    if path.exists():
        with open(path) as f:
            raw: dict[str, Any] = yaml.safe_load(f) or {}
        return StructposConfig.model_validate(raw)

    return StructposConfig()
