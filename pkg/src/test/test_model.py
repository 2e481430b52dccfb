# std-lib imports
import itertools
import math
import tempfile
import unittest
from pathlib import Path

# 3 party imports
import numpy as np
import pandas as pd
from parameterized import parameterized

# project imports
from simic.core import functional as F
from simic.core.gradcheck import gradcheck
from simic.core.tensor import ShapeError, Tensor, no_grad
from simic.data.image_io import read_image
from simic.model.attention import (
    AdditiveAttention,
    MultiHeadAttention,
    additive_scores,
    scaled_dot_product_attention,
)
from simic.model.attention_maps import AttentionMaps, export_attention_map, rescale_to_uint8, upsample_nearest
from simic.model.backbones import Backbone, ResidualBlock, compound_scaling
from simic.model.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from simic.model.config import ATTENTIONS, BACKBONES, MODES, ModelConfig
from simic.model.normalizer import Normalizer
from simic.model.simic import add_coord_channels, build, images_to_tensor

ALL_CONFIGS = list(itertools.product(BACKBONES, ATTENTIONS, MODES))


def tiny_config(backbone="residual", attention="mha", mode="full", **kwargs) -> ModelConfig:
    values = dict(backbone=backbone, attention=attention, mode=mode, embed_dim=8, heads=2,
                  widths=[4, 6, 8], input_size=16, compound_phi=1.0, seed=3)
    values.update(kwargs)
    return ModelConfig(**values)


class BasisTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def images(self, n=2, size=16):
        return Tensor(self.rng.uniform(size=(n, 1, size, size)))

    def structure(self, n=2):
        return Tensor(self.rng.normal(size=(n, 2)))


class TestModelConfig(BasisTests):
    def test_heads_must_divide_embed_dim(self):
        with self.assertRaises(ValueError):
            ModelConfig(attention="mha", embed_dim=10, heads=4)

    def test_heads_only_constrain_mha(self):
        ModelConfig(attention="additive", embed_dim=10, heads=4)

    @parameterized.expand([
        ("backbone", dict(backbone="vgg")),
        ("attention", dict(attention="self")),
        ("mode", dict(mode="quarter")),
        ("widths", dict(widths=[8, 16])),
        ("input_size", dict(input_size=4)),
    ])
    def test_invalid(self, name, kwargs):
        with self.assertRaises(ValueError):
            ModelConfig(**kwargs)

    def test_aliases(self):
        self.assertEqual(ModelConfig(backbone="mobile").backbone, "depthwise")
        self.assertEqual(ModelConfig(backbone="effnet").backbone, "compound")

    def test_dict_round_trip(self):
        config = tiny_config()
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ValueError):
            ModelConfig.from_dict({**config.to_dict(), "dropout": 0.1})

    def test_differing_fields(self):
        self.assertEqual(tiny_config().differing_fields(tiny_config(seed=4, heads=4)), ["heads", "seed"])

    def test_compound_scaling(self):
        widths, depth = compound_scaling([16, 32, 64], 1.0)
        self.assertEqual(widths, [18, 36, 71])
        self.assertEqual(depth, 2)
        self.assertEqual(compound_scaling([16, 32, 64], 0.0), ([16, 32, 64], 1))


class TestCoordChannels(BasisTests):
    def test_two_by_two(self):
        out = add_coord_channels(Tensor(np.zeros((1, 1, 2, 2)))).data
        self.assertEqual(out.shape, (1, 3, 2, 2))
        np.testing.assert_array_equal(out[0, 1], [[-1, 1], [-1, 1]])
        np.testing.assert_array_equal(out[0, 2], [[-1, -1], [1, 1]])

    def test_degenerate_axis(self):
        out = add_coord_channels(Tensor(np.zeros((1, 1, 1, 3)))).data
        np.testing.assert_array_equal(out[0, 2], [[0, 0, 0]])
        np.testing.assert_array_equal(out[0, 1], [[-1, 0, 1]])

    def test_rejects_multichannel(self):
        with self.assertRaises(ShapeError):
            add_coord_channels(Tensor(np.zeros((1, 2, 4, 4))))


class TestBackbone(BasisTests):
    @parameterized.expand([(b,) for b in BACKBONES])
    def test_downsamples_by_eight(self, backbone):
        config = tiny_config(backbone=backbone, input_size=64)
        net = Backbone(config, 3, np.random.default_rng(0))
        out = net(Tensor(self.rng.uniform(size=(2, 3, 64, 64))))
        self.assertEqual(out.shape, (2, 8, 8, 8))

    def test_too_small_input(self):
        net = Backbone(tiny_config(), 1, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            net(Tensor(np.zeros((2, 1, 4, 4))))

    def test_zeroed_residual_block_is_identity(self):
        block = ResidualBlock(4, 4, 1, np.random.default_rng(0))
        self.assertIsNone(block.skip)
        for conv in (block.conv1, block.conv2):
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0
        x = Tensor(self.rng.normal(size=(2, 4, 5, 5)))
        np.testing.assert_array_equal(block(x).data, x.data)


class TestAdditiveAttention(BasisTests):
    def setUp(self):
        super().setUp()
        self.attention = AdditiveAttention(2, np.random.default_rng(1))

    def test_single_position(self):
        values = Tensor(self.rng.normal(size=(1, 1, 2)))
        z, weights = self.attention(self.structure(1), Tensor(self.rng.normal(size=(1, 1, 2))), values)
        np.testing.assert_allclose(weights.data, [[[1.0]]])
        np.testing.assert_allclose(z.data, values.data[:, 0], rtol=1e-12)

    def test_identical_keys(self):
        keys = Tensor(np.tile(self.rng.normal(size=(1, 1, 2)), (1, 2, 1)))
        _, weights = self.attention(self.structure(1), keys, Tensor(self.rng.normal(size=(1, 2, 2))))
        np.testing.assert_allclose(weights.data, [[[0.5, 0.5]]], atol=1e-12)

    def test_hand_set_parameters(self):
        self.attention.w_query.data[...] = np.eye(2)
        self.attention.w_key.data[...] = np.eye(2)
        self.attention.context.data[...] = [1.0, 0.0]
        keys = Tensor([[[0.0, 0.0], [10.0, 0.0]]])
        _, weights = self.attention(Tensor([[0.0, 0.0]]), keys, Tensor(np.zeros((1, 2, 2))))
        s = math.tanh(10.0)
        expected = [1.0 / (1.0 + math.exp(s)), math.exp(s) / (1.0 + math.exp(s))]
        np.testing.assert_allclose(weights.data[0, 0], expected, rtol=1e-12)
        np.testing.assert_allclose(weights.data[0, 0], [0.2689, 0.7311], atol=1e-4)

    def test_zero_positions(self):
        with self.assertRaises(ShapeError):
            self.attention(self.structure(1), Tensor(np.zeros((1, 0, 2))), Tensor(np.zeros((1, 0, 2))))


class TestMultiHeadAttention(BasisTests):
    def test_identical_keys_single_head(self):
        attention = MultiHeadAttention(4, 1, np.random.default_rng(2))
        keys = Tensor(np.tile(self.rng.normal(size=(1, 1, 4)), (1, 3, 1)))
        values = Tensor(self.rng.normal(size=(1, 3, 4)))
        z, weights = attention(Tensor(self.rng.normal(size=(1, 4))), keys, values)
        np.testing.assert_allclose(weights.data, np.full((1, 1, 3), 1.0 / 3.0), atol=1e-12)
        # uniform weights average the projected values
        expected = attention.out_proj(attention.value_proj(values).mean(axis=1)).data
        np.testing.assert_allclose(z.data, expected, rtol=1e-10)

    def test_scaled_scores(self):
        query = Tensor([[[math.log(9.0), 0.0, 0.0, 0.0]]])
        keys = Tensor([[[0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]])
        _, weights = scaled_dot_product_attention(query, keys, Tensor(np.eye(2)[None]))
        np.testing.assert_allclose(weights.data[0, 0], [0.25, 0.75], atol=1e-12)

    def test_weights_per_head_sum_to_one(self):
        attention = MultiHeadAttention(8, 4, np.random.default_rng(3))
        _, weights = attention(Tensor(self.rng.normal(size=(2, 8))), Tensor(self.rng.normal(size=(2, 5, 8))),
                               Tensor(self.rng.normal(size=(2, 5, 8))))
        self.assertEqual(weights.shape, (2, 4, 5))
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_dimension_mismatch(self):
        attention = MultiHeadAttention(4, 2, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            attention(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 3, 6))), Tensor(np.zeros((1, 3, 6))))


class TestAttentionInvariants(BasisTests):
    trials = 1000

    def random_inputs(self, rng: np.random.Generator, dim: int):
        n, positions = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        return (Tensor(rng.normal(size=(n, dim))), Tensor(rng.normal(size=(n, positions, dim))),
                Tensor(rng.normal(size=(n, positions, dim))))

    @parameterized.expand([
        ("additive", lambda rng: AdditiveAttention(4, rng)),
        ("mha", lambda rng: MultiHeadAttention(4, 2, rng)),
    ])
    def test_randomized_trials(self, name, make):
        rng = np.random.default_rng(21)
        attention = make(rng)
        with no_grad():
            for _ in range(self.trials):
                query, keys, values = self.random_inputs(rng, 4)
                z, weights = attention(query, keys, values)
                self.assertTrue(np.all(weights.data >= 0))
                np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)

                order = rng.permutation(keys.shape[1])
                z_perm, w_perm = attention(query, Tensor(keys.data[:, order]), Tensor(values.data[:, order]))
                np.testing.assert_allclose(w_perm.data, weights.data[..., order], atol=1e-9)
                np.testing.assert_allclose(z_perm.data, z.data, atol=1e-9)

    def test_additive_scores_shift(self):
        rng = np.random.default_rng(22)
        attention = AdditiveAttention(4, rng)
        with no_grad():
            for _ in range(self.trials):
                query, keys, _ = self.random_inputs(rng, 4)
                scores = additive_scores(query, keys, attention.w_query, attention.w_key, attention.context)
                shifted = F.softmax(Tensor(scores.data + rng.uniform(-50.0, 50.0)))
                np.testing.assert_allclose(shifted.data, F.softmax(scores).data, atol=1e-9)


class TestSimicModel(BasisTests):
    @parameterized.expand(ALL_CONFIGS)
    def test_output_shapes(self, backbone, attention, mode):
        config = tiny_config(backbone, attention, mode)
        model = build(config)
        output = model(self.images(), self.structure() if mode == "half" else None)
        self.assertEqual(output.predictions.shape, (2, 3 if mode == "full" else 1))
        if attention == "none":
            self.assertIsNone(output.attention)
        else:
            self.assertEqual(output.attention.shape, (2, config.attention_heads, 2, 2))
            np.testing.assert_allclose(output.attention.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_equal_seeds_give_identical_weights(self):
        first, second = build(tiny_config()).state_dict(), build(tiny_config()).state_dict()
        self.assertEqual(list(first), list(second))
        for name in first:
            self.assertEqual(first[name].tobytes(), second[name].tobytes(), name)
        other = build(tiny_config(seed=4)).state_dict()
        self.assertFalse(all(np.array_equal(first[k], other[k]) for k in first))

    def test_forward_is_deterministic(self):
        images, structure = self.images(), self.structure()
        outputs = [build(tiny_config(mode="half")).eval()(images, structure).predictions.data for _ in range(2)]
        self.assertEqual(outputs[0].tobytes(), outputs[1].tobytes())

    def test_structure_in_full_mode_is_an_error(self):
        with self.assertRaises(ValueError):
            build(tiny_config(mode="full"))(self.images(), self.structure())

    def test_missing_structure_in_half_mode_is_an_error(self):
        with self.assertRaises(ValueError):
            build(tiny_config(mode="half"))(self.images())

    def test_zero_structure_projection(self):
        model = build(tiny_config(mode="half"))
        model.structure.weight.data[...] = 0.0
        model.structure.bias.data[...] = 0.0
        np.testing.assert_array_equal(model.embed_structure(self.structure(3)).data, np.zeros((3, 8)))

    def test_half_mode_without_attention_uses_structure(self):
        model = build(tiny_config(attention="none", mode="half")).eval()
        images = self.images()
        a = model(images, Tensor(np.zeros((2, 2)))).predictions.data
        b = model(images, Tensor(np.ones((2, 2)))).predictions.data
        self.assertFalse(np.allclose(a, b))

    @parameterized.expand([("_".join(combo), *combo) for combo in ALL_CONFIGS])
    def test_end_to_end_gradients(self, name, backbone, attention, mode):
        model = build(tiny_config(backbone, attention, mode, widths=[3, 4, 4], embed_dim=4))
        images = self.images()
        structure = self.structure() if mode == "half" else None
        target = Tensor(self.rng.normal(size=(2, model.config.outputs)))

        def loss():
            return F.huber(model(images, structure).predictions, target, delta=1.0)

        errors = gradcheck(loss, model.parameters(), num_coords=20)
        names = [n for n, _ in model.named_parameters()]
        for index, error in errors.items():
            self.assertLessEqual(error, 1e-3, names[index])

    def test_predict_denormalizes(self):
        model = build(tiny_config(mode="full"))
        normalizer = Normalizer(mean=[0.3, 0.35, 0.05], std=[0.05, 0.06, 0.01])
        images = self.rng.integers(0, 256, size=(3, 16, 16), dtype=np.uint8)
        predictions = model.predict(images, normalizer, batch_size=2)
        with no_grad():
            raw = model.eval()(images_to_tensor(images)).predictions.data
        np.testing.assert_allclose(predictions, normalizer.denormalize(raw, "full"), rtol=1e-9)
        self.assertEqual(predictions.shape, (3, 3))

    def test_predict_restores_training_mode(self):
        model = build(tiny_config(mode="half"))
        images = self.rng.integers(0, 256, size=(2, 16, 16), dtype=np.uint8)
        model.predict(images, Normalizer.identity(), width_height_um=np.full((2, 2), 0.3))
        self.assertTrue(model.training)
        with self.assertRaises(ValueError):
            model.predict(images, Normalizer.identity())


class TestNormalizer(BasisTests):
    def test_fit_and_invert(self):
        labels = self.rng.uniform(0.1, 0.4, size=(20, 3))
        normalizer = Normalizer.fit(labels)
        normalized = normalizer.normalize_targets(labels, "full")
        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalizer.denormalize(normalized, "full"), labels, rtol=1e-12)
        np.testing.assert_allclose(normalizer.normalize_targets(labels, "half"), normalized[:, 2:])

    def test_constant_column(self):
        normalizer = Normalizer.fit(np.tile([0.3, 0.35, 0.05], (4, 1)))
        self.assertEqual(normalizer.std, [1.0, 1.0, 1.0])


class TestCheckpoint(BasisTests):
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        config = tiny_config(attention="additive", mode="half")
        model = build(config)
        # move the batch-norm running statistics away from their initial values
        model(self.images(), self.structure())
        model.eval()
        normalizer = Normalizer(mean=[0.3, 0.35, 0.05], std=[0.05, 0.06, 0.01])
        path = save_checkpoint(self.tmp / "model.ckpt", model, normalizer)

        loaded, loaded_normalizer = load_checkpoint(path, expected_config=config)
        self.assertFalse(loaded.training)
        self.assertEqual(loaded_normalizer, normalizer)
        images, structure = self.images(), self.structure()
        before = model(images, structure).predictions.data
        after = loaded(images, structure).predictions.data
        self.assertEqual(before.tobytes(), after.tobytes())

    def test_header_lists_state(self):
        model = build(tiny_config())
        path = save_checkpoint(self.tmp / "model.ckpt", model, Normalizer.identity())
        config, _, state = read_checkpoint(path)
        self.assertEqual(config, model.config)
        self.assertEqual(list(state), list(model.state_dict()))
        self.assertTrue(path.read_bytes().startswith(b"SIMIC-CKPT v1\n"))

    def test_mismatched_config_names_field(self):
        path = save_checkpoint(self.tmp / "model.ckpt", build(tiny_config()), Normalizer.identity())
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(path, expected_config=tiny_config(attention="additive"))
        self.assertIn("attention", str(ctx.exception))

    def test_truncated_payload(self):
        path = save_checkpoint(self.tmp / "model.ckpt", build(tiny_config()), Normalizer.identity())
        path.write_bytes(path.read_bytes()[:-16])
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)

    @parameterized.expand([
        ("magic", b"NOT-A-CKPT v1\n"),
        ("version", b"SIMIC-CKPT v9\n"),
    ])
    def test_bad_first_line(self, name, first):
        path = save_checkpoint(self.tmp / "model.ckpt", build(tiny_config()), Normalizer.identity())
        data = path.read_bytes()
        path.write_bytes(first + data[data.index(b"\n") + 1:])
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)


class TestAttentionExport(BasisTests):
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_constant_map_is_mid_grey(self):
        np.testing.assert_array_equal(rescale_to_uint8(np.full((8, 8), 1.0 / 64)), 128)

    def test_rescale_range(self):
        out = rescale_to_uint8(np.array([[0.1, 0.2], [0.3, 0.5]]))
        self.assertEqual(out.min(), 0)
        self.assertEqual(out.max(), 255)

    def test_nearest_blocks(self):
        grid = np.arange(64, dtype=np.float64).reshape(8, 8)
        up = upsample_nearest(grid, (64, 64))
        self.assertEqual(up.shape, (64, 64))
        for r, c in [(0, 0), (3, 5), (7, 7)]:
            np.testing.assert_array_equal(up[8 * r:8 * r + 8, 8 * c:8 * c + 8], grid[r, c])

    def test_export_writes_one_map_per_head(self):
        weights = self.rng.dirichlet(np.ones(64), size=4).reshape(4, 8, 8)
        maps = AttentionMaps(weights=weights, heads=4, sample_id="tip_0001")
        written = export_attention_map(maps, 64, self.tmp, stem="tip_0001")
        self.assertEqual([p.name for p in written],
                         [f"tip_0001_head{k}.pgm" for k in range(4)] + ["tip_0001_weights.csv"])
        self.assertEqual(read_image(written[0]).shape, (64, 64))
        frame = pd.read_csv(written[-1])
        self.assertEqual(list(frame.columns), ["sample_id", "head", "row", "col", "weight"])
        self.assertEqual(len(frame), 4 * 64)
        np.testing.assert_allclose(frame.groupby("head")["weight"].sum(), 1.0, atol=1e-9)

    def test_from_batch(self):
        maps = AttentionMaps.from_batch(np.ones((3, 2, 4, 4)) / 16, ["a", "b", "c"])
        self.assertEqual([m.sample_id for m in maps], ["a", "b", "c"])
        self.assertEqual(maps[1].grid, (4, 4))


if __name__ == "__main__":
    unittest.main()
