"""Finite-difference verification of the encoder's analytic gradients."""

from __future__ import annotations

import logging

import numpy as np

from structpos.config import EncoderConfig
from structpos.deptree import random_tree
from structpos.errors import PrecisionLoss
from structpos.nncore.encoder import EncoderParams, encoder_forward
from structpos.nncore.tensor import Tensor
from structpos.posenc import annotate

logger = logging.getLogger(__name__)

SAMPLES_PER_GROUP = 50
SEQUENCE_LENGTH = 6
# |a - n| / max(|a|, |n|, floor): relative for large gradients, absolute near zero
ERROR_FLOOR = 1.0


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def grad_check_groups(
    config: EncoderConfig,
    seed: int,
    epsilon: float = 1e-3,
    samples_per_group: int = SAMPLES_PER_GROUP,
    length: int = SEQUENCE_LENGTH,
) -> dict[str, float]:
    """Worst relative error per parameter group.

    The encoder is rebuilt in float64 and, when configured with ReLU,
    switched to GELU so central differences never straddle a kink. The
    loss is the encoder output projected onto a fixed random matrix.

    Raises:
        PrecisionLoss: If ``epsilon`` is not a positive finite number.
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise PrecisionLoss(f"Finite-difference step must be positive, got {epsilon}")
    if config.ffn_activation == "relu":
        config = config.model_copy(update={"ffn_activation": "gelu"})

    rng = np.random.default_rng(seed)
    params = EncoderParams.init(config, seed, dtype=np.float64)
    tree = random_tree(length, rng, shuffle=True)
    tokens = rng.integers(0, config.vocab_size, size=length)
    annotation = annotate(tree, None, config.position())
    projection = rng.standard_normal((length, config.d_model)) / np.sqrt(length)

    def loss() -> Tensor:
        return (encoder_forward(tokens, annotation, config, params) * projection).sum()

    params.zero_grad()
    loss().backward()
    analytic = params.gradients()

    errors: dict[str, float] = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_group, flat.size), replace=False)
        worst = 0.0
        for index in picks:
            original = flat[index]
            flat[index] = original + epsilon
            upper = float(loss().data)
            flat[index] = original - epsilon
            lower = float(loss().data)
            flat[index] = original
            numeric = (upper - lower) / (2.0 * epsilon)
            worst = max(worst, _relative_error(float(analytic[name].reshape(-1)[index]), numeric))
        errors[name] = worst
    logger.debug("Gradient check row=%s worst=%.3e", config.row, max(errors.values()))
    return errors


def grad_check(config: EncoderConfig, seed: int, epsilon: float = 1e-3) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    Every parameter group contributes ``min(50, size)`` sampled entries.
    Each entry scores ``|a - n| / max(|a|, |n|, 1)``: a relative error for
    gradients larger than 1 and an absolute error below that, so entries
    near zero cannot dominate the result.
    """
    return max(grad_check_groups(config, seed, epsilon).values())
