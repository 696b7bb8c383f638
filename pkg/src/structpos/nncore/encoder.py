"""Self-attention encoder with absolute and relation-aware position inputs.

Each layer is post-norm: attention -> residual + layer norm -> FFN ->
residual + layer norm. Relative embeddings (sequential and/or structural)
are added to the keys inside the logits and to the values inside the
weighted sum; all heads in a layer share the same tables.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from structpos.config import EncoderConfig
from structpos.errors import ConfigMismatch, NonFiniteInput, ShapeMismatch
from structpos.models import PositionAnnotation, RelRole, Scheme
from structpos.nncore.tensor import DEFAULT_DTYPE, Tensor, einsum, layer_norm
from structpos.posenc import (
    FusionParams,
    RelEmbeddingTable,
    fuse_absolute,
    lookup_relative,
    sinusoidal_table,
)

_REL_TABLES = [(scheme, role) for scheme in Scheme for role in RelRole]


class ParamStore:
    """Ordered mapping of parameter name to leaf Tensor."""

    def __init__(self, tensors: dict[str, Tensor] | None = None) -> None:
        self._tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def add(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def parameters(self) -> list[Tensor]:
        return list(self._tensors.values())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters off the active path report zeros."""
        return {
            name: t.grad if t.grad is not None else np.zeros_like(t.data)
            for name, t in self._tensors.items()
        }

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place, keeping dtypes.

        Raises:
            ShapeMismatch: If a name is missing or a shape disagrees.
        """
        for name, tensor in self._tensors.items():
            if name not in arrays:
                raise ShapeMismatch(f"Missing parameter {name!r}")
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise ShapeMismatch(f"{name}: expected {tensor.shape}, got {value.shape}")
            tensor.data = value.astype(tensor.dtype, copy=True)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype: Any) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class LayerParams:
    """View of one encoder layer's parameters."""

    n_heads: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    norm1_gain: Tensor
    norm1_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor


class EncoderParams(ParamStore):
    """All encoder parameters, created in a fixed order from one seed.

    Every relative table and the fusion map exist whatever the flags say,
    so switching flags never shifts the random stream.
    """

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor] | None = None) -> None:
        super().__init__(tensors)
        self.config = config

    @classmethod
    def init(cls, config: EncoderConfig, seed: int, dtype: Any = DEFAULT_DTYPE) -> EncoderParams:
        rng = np.random.default_rng(seed)
        d, dh = config.d_model, config.d_head
        rows = 2 * config.r_clip + 1
        params = cls(config)

        params.add("embedding", rng.normal(0.0, d**-0.5, size=(config.vocab_size, d)).astype(dtype))
        params.add("fusion.weight", _xavier(rng, d, 2 * d, dtype))
        params.add("fusion.bias", np.zeros(d, dtype=dtype))

        def add_tables(prefix: str) -> None:
            for scheme, role in _REL_TABLES:
                params.add(
                    f"{prefix}rel.{scheme}_{role}",
                    rng.normal(0.0, dh**-0.5, size=(rows, dh)).astype(dtype),
                )

        if config.rel_sharing == "shared":
            add_tables("")
        for layer in range(config.n_layers):
            prefix = f"layers.{layer}."
            for name in ("w_q", "w_k", "w_v", "w_o"):
                params.add(f"{prefix}attn.{name}", _xavier(rng, d, d, dtype))
            if config.rel_sharing == "per_layer":
                add_tables(prefix)
            params.add(f"{prefix}norm1.gain", np.ones(d, dtype=dtype))
            params.add(f"{prefix}norm1.bias", np.zeros(d, dtype=dtype))
            params.add(f"{prefix}ffn.w1", _xavier(rng, d, config.d_ffn, dtype))
            params.add(f"{prefix}ffn.b1", np.zeros(config.d_ffn, dtype=dtype))
            params.add(f"{prefix}ffn.w2", _xavier(rng, config.d_ffn, d, dtype))
            params.add(f"{prefix}ffn.b2", np.zeros(d, dtype=dtype))
            params.add(f"{prefix}norm2.gain", np.ones(d, dtype=dtype))
            params.add(f"{prefix}norm2.bias", np.zeros(d, dtype=dtype))
        return params

    @property
    def dtype(self) -> np.dtype[Any]:
        return self["embedding"].dtype

    @property
    def fusion(self) -> FusionParams:
        return FusionParams(weight=self["fusion.weight"], bias=self["fusion.bias"])

    def rel_table(self, layer: int, scheme: Scheme, role: RelRole) -> RelEmbeddingTable:
        prefix = "" if self.config.rel_sharing == "shared" else f"layers.{layer}."
        return RelEmbeddingTable(
            entries=self[f"{prefix}rel.{scheme}_{role}"],
            r_clip=self.config.r_clip,
            role=role,
            scheme=scheme,
        )

    def rel_table_names(self) -> list[str]:
        return [name for name in self if ".rel." in f".{name}"]

    def layer(self, index: int) -> LayerParams:
        p = f"layers.{index}."
        return LayerParams(
            n_heads=self.config.n_heads,
            w_q=self[f"{p}attn.w_q"],
            w_k=self[f"{p}attn.w_k"],
            w_v=self[f"{p}attn.w_v"],
            w_o=self[f"{p}attn.w_o"],
            norm1_gain=self[f"{p}norm1.gain"],
            norm1_bias=self[f"{p}norm1.bias"],
            ffn_w1=self[f"{p}ffn.w1"],
            ffn_b1=self[f"{p}ffn.b1"],
            ffn_w2=self[f"{p}ffn.w2"],
            ffn_b2=self[f"{p}ffn.b2"],
            norm2_gain=self[f"{p}norm2.gain"],
            norm2_bias=self[f"{p}norm2.bias"],
        )

    def astype(self, dtype: Any) -> EncoderParams:
        """Independent copy with every parameter cast to ``dtype``."""
        copy = EncoderParams(self.config)
        for name, tensor in self.items():
            copy.add(name, tensor.data.astype(dtype, copy=True))
        return copy


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    length, width = x.shape
    return x.reshape(length, n_heads, width // n_heads).transpose(1, 0, 2)


def _check_attention_inputs(
    X: Tensor, layer: LayerParams, rel: Sequence[Tensor | None]
) -> None:
    d = layer.w_q.shape[0]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] != d:
        raise ShapeMismatch(f"Attention input must be (I >= 1, {d}), got {X.shape}")
    if not np.isfinite(X.data).all():
        raise NonFiniteInput("Attention input contains NaN or infinity")
    expected = (X.shape[0], X.shape[0], d // layer.n_heads)
    for tensor in rel:
        if tensor is not None and tensor.shape != expected:
            raise ShapeMismatch(f"Relative embeddings must be {expected}, got {tensor.shape}")


def attention_scores(X: Tensor, layer: LayerParams, rel_k: Tensor | None = None) -> Tensor:
    """Row-softmax attention weights per head, shape ``(heads, I, I)``."""
    _check_attention_inputs(X, layer, (rel_k,))
    d_head = X.shape[1] // layer.n_heads
    q = _split_heads(X @ layer.w_q, layer.n_heads)
    k = _split_heads(X @ layer.w_k, layer.n_heads)
    logits = q @ k.transpose(0, 2, 1)
    if rel_k is not None:
        logits = logits + einsum("hid,ijd->hij", q, rel_k)
    return (logits * (1.0 / math.sqrt(d_head))).softmax(axis=-1)


def attention_forward(
    X: Tensor,
    layer: LayerParams,
    rel_k: Tensor | None = None,
    rel_v: Tensor | None = None,
) -> Tensor:
    """Multi-head dot-product self-attention with optional relative keys/values.

    Args:
        X: Input of shape ``(I, d_model)``.
        layer: Projection weights of the layer.
        rel_k: Summed relative key embeddings, ``(I, I, d_head)``.
        rel_v: Summed relative value embeddings, ``(I, I, d_head)``.

    Returns:
        Output of shape ``(I, d_model)``.

    Raises:
        ShapeMismatch: On inconsistent shapes.
        NonFiniteInput: If ``X`` holds NaN or infinity.
    """
    _check_attention_inputs(X, layer, (rel_k, rel_v))
    length, width = X.shape
    weights = attention_scores(X, layer, rel_k)
    v = _split_heads(X @ layer.w_v, layer.n_heads)
    heads = weights @ v
    if rel_v is not None:
        heads = heads + einsum("hij,ijd->hid", weights, rel_v)
    merged = heads.transpose(1, 0, 2).reshape(length, width)
    return merged @ layer.w_o


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def absolute_positions(
    annotation: PositionAnnotation, config: EncoderConfig, params: EncoderParams
) -> Tensor | None:
    """Fused absolute position vectors, or None when both absolute flags are off."""
    dtype = params.dtype
    seq = stru = None
    if config.abs_seq_on:
        seq = sinusoidal_table(annotation.abs_seq, config.d_model).astype(dtype)
    if config.abs_stru_on:
        if len(annotation.abs_stru) != annotation.length:
            raise ConfigMismatch("abs_stru_on is set but the annotation has no structural depths")
        stru = sinusoidal_table(annotation.abs_stru, config.d_model).astype(dtype)
    if seq is not None and stru is not None:
        return fuse_absolute(seq, stru, config.fusion_mode, params.fusion)
    if seq is not None:
        return Tensor(seq)
    if stru is not None:
        return Tensor(stru)
    return None


def relative_embeddings(
    annotation: PositionAnnotation,
    config: EncoderConfig,
    params: EncoderParams,
    layer: int,
) -> tuple[Tensor | None, Tensor | None]:
    """Summed relative key and value embeddings for one layer."""
    active = [
        (Scheme.SEQUENTIAL, config.rel_seq_on, annotation.rel_seq),
        (Scheme.STRUCTURAL, config.rel_stru_on, annotation.rel_stru),
    ]
    rel_k: Tensor | None = None
    rel_v: Tensor | None = None
    for scheme, enabled, matrix in active:
        if not enabled:
            continue
        if len(matrix) != annotation.length:
            raise ConfigMismatch(f"{scheme} relative flag is set but the annotation has no matrix")
        if annotation.r_clip != config.r_clip:
            raise ConfigMismatch(
                f"Annotation clipped at {annotation.r_clip}, encoder expects {config.r_clip}"
            )
        indices = np.asarray(matrix, dtype=np.int64)
        key = lookup_relative(indices, params.rel_table(layer, scheme, RelRole.KEY))
        value = lookup_relative(indices, params.rel_table(layer, scheme, RelRole.VALUE))
        rel_k = key if rel_k is None else rel_k + key
        rel_v = value if rel_v is None else rel_v + value
    return rel_k, rel_v


def encoder_forward(
    token_ids: Sequence[int] | np.ndarray,
    annotation: PositionAnnotation,
    config: EncoderConfig,
    params: EncoderParams,
) -> Tensor:
    """Encode one sequence to shape ``(I, d_model)``.

    Raises:
        ShapeMismatch: If the annotation length differs from the token count.
        ConfigMismatch: If a flag needs position data the annotation lacks.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != annotation.length:
        raise ShapeMismatch(
            f"{ids.shape} token ids for an annotation of length {annotation.length}"
        )

    x = params["embedding"].take(ids) * math.sqrt(config.d_model)
    positions = absolute_positions(annotation, config, params)
    if positions is not None:
        x = x + positions

    for index in range(config.n_layers):
        layer = params.layer(index)
        rel_k, rel_v = relative_embeddings(annotation, config, params, index)
        attended = attention_forward(x, layer, rel_k, rel_v)
        x = layer_norm(x + attended, layer.norm1_gain, layer.norm1_bias, config.layer_norm_eps)
        hidden = x @ layer.ffn_w1 + layer.ffn_b1
        hidden = hidden.gelu() if config.ffn_activation == "gelu" else hidden.relu()
        x = layer_norm(
            x + (hidden @ layer.ffn_w2 + layer.ffn_b2),
            layer.norm2_gain,
            layer.norm2_bias,
            config.layer_norm_eps,
        )
    return x
