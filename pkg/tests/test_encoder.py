"""Tests for attention and the position-aware encoder."""

from __future__ import annotations

import numpy as np
import pytest

from structpos.config import EncoderConfig, PositionConfig
from structpos.deptree import random_tree
from structpos.errors import ConfigMismatch, NonFiniteInput, ShapeMismatch
from structpos.models import DepTree, RelRole, Scheme
from structpos.nncore.encoder import (
    EncoderParams,
    attention_forward,
    attention_scores,
    encoder_forward,
)
from structpos.nncore.tensor import Tensor
from structpos.posenc import annotate

TOKENS = [3, 1, 4, 1, 5, 9]


def _params(config: EncoderConfig, seed: int = 0) -> EncoderParams:
    return EncoderParams.init(config, seed, dtype=np.float64)


class TestAttention:
    def test_rows_sum_to_one(self, small_encoder: EncoderConfig, rng: np.random.Generator) -> None:
        """Every head's attention rows are a distribution."""
        layer = _params(small_encoder).layer(0)
        weights = attention_scores(Tensor(rng.standard_normal((5, 8))), layer)
        assert weights.shape == (2, 5, 5)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, rtol=1e-12)
        assert np.all(weights.data >= 0.0)

    def test_zero_relative_embeddings_change_nothing(
        self, small_encoder: EncoderConfig, rng: np.random.Generator
    ) -> None:
        """All-zero relative keys and values reproduce plain attention bit for bit."""
        layer = _params(small_encoder).layer(1)
        x = Tensor(rng.standard_normal((5, 8)))
        zeros = Tensor(np.zeros((5, 5, 4)))
        plain = attention_forward(x, layer)
        relative = attention_forward(x, layer, zeros, zeros)
        np.testing.assert_array_equal(plain.data, relative.data)

    def test_relative_keys_shift_weights(
        self, small_encoder: EncoderConfig, rng: np.random.Generator
    ) -> None:
        """Non-zero relative keys change the attention distribution."""
        layer = _params(small_encoder).layer(0)
        x = Tensor(rng.standard_normal((4, 8)))
        rel_k = Tensor(rng.standard_normal((4, 4, 4)))
        plain = attention_scores(x, layer).data
        assert not np.allclose(plain, attention_scores(x, layer, rel_k).data)

    def test_single_position(self, small_encoder: EncoderConfig) -> None:
        """One query attends fully to itself."""
        layer = _params(small_encoder).layer(0)
        x = Tensor(np.ones((1, 8)))
        np.testing.assert_array_equal(attention_scores(x, layer).data, 1.0)
        assert attention_forward(x, layer).shape == (1, 8)

    def test_input_checks(self, small_encoder: EncoderConfig) -> None:
        """Bad widths, bad relative shapes and NaN inputs are rejected."""
        layer = _params(small_encoder).layer(0)
        with pytest.raises(ShapeMismatch):
            attention_forward(Tensor(np.zeros((3, 6))), layer)
        with pytest.raises(ShapeMismatch):
            attention_forward(Tensor(np.zeros((0, 8))), layer)
        with pytest.raises(ShapeMismatch):
            attention_forward(Tensor(np.zeros((3, 8))), layer, Tensor(np.zeros((3, 3, 8))))
        nan = np.zeros((3, 8))
        nan[1, 2] = np.nan
        with pytest.raises(NonFiniteInput):
            attention_forward(Tensor(nan), layer)


class TestParams:
    def test_initialisation_ignores_flags(self, small_encoder: EncoderConfig) -> None:
        """Every row starts from identical parameters for the same seed."""
        first = _params(small_encoder.for_row(1), seed=5).arrays()
        ninth = _params(small_encoder.for_row(9), seed=5).arrays()
        assert list(first) == list(ninth)
        for name in first:
            np.testing.assert_array_equal(first[name], ninth[name])

    def test_per_layer_tables(self, small_encoder: EncoderConfig) -> None:
        """Each layer owns four tables of shape (2 * r_clip + 1, d_head)."""
        params = _params(small_encoder)
        assert len(params.rel_table_names()) == 4 * small_encoder.n_layers
        table = params.rel_table(1, Scheme.STRUCTURAL, RelRole.VALUE)
        assert table.entries is params["layers.1.rel.structural_value"]
        assert table.entries.shape == (9, 4)

    def test_shared_tables(self, small_encoder: EncoderConfig) -> None:
        """Shared mode keeps a single set of tables for all layers."""
        params = _params(small_encoder.model_copy(update={"rel_sharing": "shared"}))
        assert sorted(params.rel_table_names()) == [
            "rel.sequential_key",
            "rel.sequential_value",
            "rel.structural_key",
            "rel.structural_value",
        ]
        first = params.rel_table(0, Scheme.SEQUENTIAL, RelRole.KEY).entries
        assert params.rel_table(1, Scheme.SEQUENTIAL, RelRole.KEY).entries is first

    def test_load_arrays(self, small_encoder: EncoderConfig) -> None:
        """Loading restores values and rejects missing or misshapen arrays."""
        source = _params(small_encoder, seed=1)
        target = _params(small_encoder, seed=2)
        target.load_arrays(source.arrays())
        np.testing.assert_array_equal(target["embedding"].data, source["embedding"].data)

        missing = dict(source.arrays())
        missing.pop("fusion.bias")
        with pytest.raises(ShapeMismatch):
            target.load_arrays(missing)
        wrong = dict(source.arrays())
        wrong["embedding"] = np.zeros((3, 3))
        with pytest.raises(ShapeMismatch):
            target.load_arrays(wrong)

    def test_astype_copies(self, small_encoder: EncoderConfig) -> None:
        """astype returns independent storage."""
        params = EncoderParams.init(small_encoder, 0)
        copy = params.astype(np.float64)
        assert params.dtype == np.float32
        assert copy.dtype == np.float64
        copy["embedding"].data[...] = 0.0
        assert np.any(params["embedding"].data != 0.0)


class TestEncoder:
    def test_row_nine_on_fixture(
        self, small_encoder: EncoderConfig, fixture_tree: DepTree
    ) -> None:
        """Every scheme on produces a finite (I, d_model) output."""
        config = small_encoder.for_row(9)
        annotation = annotate(fixture_tree, None, config.position())
        out = encoder_forward(TOKENS, annotation, config, _params(config))
        assert out.shape == (6, 8)
        assert np.isfinite(out.data).all()

    def test_every_row_runs(self, small_encoder: EncoderConfig, fixture_tree: DepTree) -> None:
        """All nine flag combinations produce outputs of the same shape."""
        annotation = annotate(fixture_tree, None, small_encoder.position())
        params = _params(small_encoder)
        outputs = [
            encoder_forward(TOKENS, annotation, small_encoder.for_row(row), params).data
            for row in range(1, 10)
        ]
        assert all(out.shape == (6, 8) for out in outputs)
        assert not np.array_equal(outputs[0], outputs[8])

    def test_length_mismatch(self, small_encoder: EncoderConfig, fixture_tree: DepTree) -> None:
        """Token ids and annotation must agree in length."""
        annotation = annotate(fixture_tree, None, small_encoder.position())
        with pytest.raises(ShapeMismatch):
            encoder_forward(TOKENS[:5], annotation, small_encoder, _params(small_encoder))

    def test_clip_mismatch(self, small_encoder: EncoderConfig, fixture_tree: DepTree) -> None:
        """Relative flags need an annotation clipped like the encoder."""
        config = small_encoder.for_row(9)
        annotation = annotate(fixture_tree, None, PositionConfig(d_model=8, r_clip=2))
        with pytest.raises(ConfigMismatch):
            encoder_forward(TOKENS, annotation, config, _params(config))

    def test_missing_structural_data(
        self, small_encoder: EncoderConfig, fixture_tree: DepTree
    ) -> None:
        """Structural flags fail loudly on an annotation without tree data."""
        config = small_encoder.for_row(3)
        annotation = annotate(fixture_tree, None, config.position()).model_copy(
            update={"rel_stru": []}
        )
        with pytest.raises(ConfigMismatch):
            encoder_forward(TOKENS, annotation, config, _params(config))

    def test_unused_parameters_get_zero_gradient(
        self, small_encoder: EncoderConfig, fixture_tree: DepTree
    ) -> None:
        """Disabled schemes leave their parameters untouched by backprop."""
        config = small_encoder.for_row(4)
        params = _params(config)
        annotation = annotate(fixture_tree, None, config.position())
        projection = np.linspace(-1.0, 1.0, 48).reshape(6, 8)
        (encoder_forward(TOKENS, annotation, config, params) * projection).sum().backward()
        grads = params.gradients()
        for name in [*params.rel_table_names(), "fusion.weight", "fusion.bias"]:
            assert not grads[name].any(), name
        assert grads["embedding"].any()

    def test_used_tables_get_gradient(
        self, small_encoder: EncoderConfig, fixture_tree: DepTree, rng: np.random.Generator
    ) -> None:
        """With row 9 every relative table and the fusion map learn."""
        config = small_encoder.for_row(9)
        params = _params(config)
        annotation = annotate(fixture_tree, None, config.position())
        projection = rng.standard_normal((6, 8))
        (encoder_forward(TOKENS, annotation, config, params) * projection).sum().backward()
        grads = params.gradients()
        for name in [*params.rel_table_names(), "fusion.weight"]:
            assert grads[name].any(), name

    def test_permutation_equivariance_without_positions(
        self, small_encoder: EncoderConfig, rng: np.random.Generator
    ) -> None:
        """With every flag off, permuting tokens permutes the outputs."""
        config = small_encoder.for_row(1)
        params = _params(config)
        tokens = rng.choice(config.vocab_size, size=7, replace=False)
        perm = rng.permutation(7)
        annotation = annotate(random_tree(7, rng), None, config.position())
        plain = encoder_forward(tokens, annotation, config, params).data
        shuffled = encoder_forward(tokens[perm], annotation, config, params).data
        np.testing.assert_allclose(shuffled, plain[perm], atol=1e-10)

    def test_absolute_positions_break_symmetry(
        self, small_encoder: EncoderConfig, rng: np.random.Generator
    ) -> None:
        """Absolute sequential positions make order matter."""
        config = small_encoder.for_row(4)
        params = _params(config)
        tokens = np.arange(6)
        perm = np.array([5, 4, 3, 2, 1, 0])
        annotation = annotate(random_tree(6, rng), None, config.position())
        plain = encoder_forward(tokens, annotation, config, params).data
        shuffled = encoder_forward(tokens[perm], annotation, config, params).data
        assert np.max(np.abs(shuffled - plain[perm])) > 1e-3

    @pytest.mark.parametrize(("with_rel", "without_rel"), [(7, 4), (9, 5)])
    def test_zeroed_tables_reduce_rows(
        self,
        small_encoder: EncoderConfig,
        fixture_tree: DepTree,
        with_rel: int,
        without_rel: int,
    ) -> None:
        """Zeroing every relative table turns row 7 into row 4 and row 9 into row 5."""
        params = _params(small_encoder)
        for name in params.rel_table_names():
            params[name].data[...] = 0.0
        annotation = annotate(fixture_tree, None, small_encoder.position())
        relative = encoder_forward(TOKENS, annotation, small_encoder.for_row(with_rel), params)
        absolute = encoder_forward(TOKENS, annotation, small_encoder.for_row(without_rel), params)
        np.testing.assert_array_equal(relative.data, absolute.data)
