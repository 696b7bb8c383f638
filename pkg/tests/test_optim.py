"""Tests for optimizers and gradient clipping."""

from __future__ import annotations

import numpy as np
import pytest

from structpos.config import TrainConfig
from structpos.nncore.optim import SGD, Adam, clip_grad_norm, make_optimizer
from structpos.nncore.tensor import Tensor


def _param(values: list[float], grad: list[float]) -> Tensor:
    tensor = Tensor(np.array(values), requires_grad=True)
    tensor.grad = np.array(grad)
    return tensor


def test_sgd_step() -> None:
    """SGD moves against the gradient by lr * grad."""
    param = _param([1.0, 2.0], [0.5, -1.0])
    SGD([param], lr=0.1).step()
    np.testing.assert_allclose(param.data, [0.95, 2.1])


def test_adam_first_step_is_lr_sized() -> None:
    """After bias correction the first Adam step is about lr per coordinate."""
    param = _param([0.0, 0.0], [3.0, -0.01])
    Adam([param], lr=0.01).step()
    np.testing.assert_allclose(param.data, [-0.01, 0.01], rtol=1e-4)


def test_zero_learning_rate_is_a_no_op() -> None:
    """lr = 0 leaves parameters bit-identical."""
    param = _param([1.5, -2.5], [10.0, 10.0])
    before = param.data.copy()
    for optimizer in (SGD([param], lr=0.0), Adam([param], lr=0.0)):
        optimizer.step()
    np.testing.assert_array_equal(param.data, before)


def test_missing_gradients_are_skipped() -> None:
    """Parameters off the active path keep their values."""
    param = Tensor(np.ones(3), requires_grad=True)
    Adam([param], lr=0.1).step()
    np.testing.assert_array_equal(param.data, np.ones(3))


def test_zero_grad() -> None:
    """zero_grad clears every accumulator."""
    params = [_param([1.0], [1.0]), _param([2.0], [2.0])]
    optimizer = SGD(params, lr=0.1)
    optimizer.zero_grad()
    assert all(p.grad is None for p in params)


def test_negative_learning_rate_rejected() -> None:
    """Learning rates must be non-negative."""
    with pytest.raises(ValueError):
        SGD([], lr=-1.0)


def test_make_optimizer() -> None:
    """The configured optimizer is built with the configured hyper-parameters."""
    param = _param([0.0], [0.0])
    adam = make_optimizer(TrainConfig(learning_rate=0.02, beta1=0.8), [param])
    assert isinstance(adam, Adam)
    assert adam.lr == 0.02 and adam.beta1 == 0.8
    assert isinstance(make_optimizer(TrainConfig(optimizer="sgd"), [param]), SGD)


def test_clip_grad_norm() -> None:
    """Gradients above the limit are rescaled; the pre-clip norm is returned."""
    a = _param([0.0], [3.0])
    b = _param([0.0, 0.0], [0.0, 4.0])
    norm = clip_grad_norm([a, b], max_norm=1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2))
    assert total == pytest.approx(1.0, rel=1e-5)


def test_clip_grad_norm_below_limit() -> None:
    """Small gradients are left alone."""
    a = _param([0.0], [0.3])
    clip_grad_norm([a], max_norm=1.0)
    np.testing.assert_array_equal(a.grad, [0.3])
