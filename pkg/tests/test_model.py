"""Model construction: shape chain, parameter accounting, sharing, checkpoints."""

import numpy as np
import pytest

from yieldnet.errors import GraphBuildError, GraphStateError
from yieldnet.model import (
    CropBatch,
    YieldNetConfig,
    build_single_head,
    build_yieldnet,
    count_parameters,
    forward,
    load_checkpoint,
    parameter_breakdown,
    save_checkpoint,
)
from yieldnet.tensor import LayerSpec, ModelGraph, Sequential, conv_spec, make_layer

TINY = YieldNetConfig(
    timesteps=6, bins=7, bands=2,
    backbone=(conv_spec(3, 3, 2, "valid", 3), conv_spec(2, 2, 1, "same", 4)),
    head_convs=(conv_spec(2, 2, 1, "same", 4),),
    fc_units=(5, 3),
)


def small_batch(rng, n, config=TINY):
    cubes = rng.random((n, *config.input_shape))
    return CropBatch(cubes=cubes, labels=rng.uniform(20, 60, n),
                     label_mask=np.ones(n, dtype=bool))


class TestBuild:
    def test_joint_parameter_count(self):
        assert count_parameters(build_yieldnet(seed=0)) == 1_436_050

    def test_single_head_parameter_count(self):
        model = build_single_head(YieldNetConfig(), "corn", seed=0)
        assert count_parameters(model) == 973_529

    def test_single_head_crops_symmetric(self):
        corn = build_single_head(YieldNetConfig(), "corn", seed=0)
        soy = build_single_head(YieldNetConfig(), "soybean", seed=0)
        assert count_parameters(corn) == count_parameters(soy)

    def test_backbone_and_head_subtotals(self):
        model = build_yieldnet(seed=0)
        per_block = dict(parameter_breakdown(model))
        backbone = sum(v for k, v in per_block.items() if k.startswith("backbone"))
        corn_head = sum(v for k, v in per_block.items() if k.startswith("head_corn"))
        assert backbone == 511_008
        assert corn_head == 462_521

    def test_layer_count_toy_conv_bn(self):
        trunk = Sequential([
            make_layer(conv_spec(3, 3, 1, "same", 1), "c"),
            make_layer(LayerSpec(kind="batchnorm"), "b"),
        ])
        graph = ModelGraph(trunk, {"out": Sequential([])}, meta={})
        graph.build((4, 4, 1), seed=0)
        assert graph.trainable_count() == 12  # 9 weights + 1 bias + gamma + beta

    def test_shape_chain_exact(self):
        model = build_yieldnet(seed=0)
        shapes = [model.trunk.in_shape]
        shape = model.trunk.in_shape
        for layer in model.trunk.layers:
            if layer.params is not None and "weights" in layer.params.arrays:
                shape = (layer._geom[2], layer._geom[3],
                         layer.params.arrays["weights"].shape[3])
                shapes.append(shape)
        assert shapes == [(30, 32, 9), (12, 13, 48), (4, 5, 64), (2, 3, 96),
                          (2, 3, 128), (2, 3, 128)]
        head = model.heads["corn"]
        assert head.out_shape == (1,)
        flat = [l for l in head.layers if l.spec.kind == "flatten"][0]
        dense1 = [l for l in head.layers if l.spec.kind == "dense"][0]
        assert dense1.params.arrays["weights"].shape == (888, 100)

    def test_input_too_small_reports_layer(self):
        config = YieldNetConfig(timesteps=4, bins=4, bands=2)
        with pytest.raises(GraphBuildError, match="does not fit"):
            build_yieldnet(config, seed=0)

    def test_backbone_shared_by_reference(self, rng):
        model = build_yieldnet(TINY, seed=0)
        assert model.trunk.param_blocks()[0] is model.param_blocks()[0]
        batches = {"corn": small_batch(rng, 2), "soybean": small_batch(rng, 2)}
        before, _ = forward(model, batches, mode="infer")
        model.trunk.layers[0].params.arrays["weights"][0, 0, 0, 0] += 0.5
        after, _ = forward(model, batches, mode="infer")
        assert not np.allclose(before["corn"], after["corn"])
        assert not np.allclose(before["soybean"], after["soybean"])

    def test_same_seed_identical_weights(self):
        a = build_yieldnet(TINY, seed=11)
        b = build_yieldnet(TINY, seed=11)
        for ba, bb in zip(a.param_blocks(), b.param_blocks()):
            for key in ba.arrays:
                assert np.array_equal(ba.arrays[key], bb.arrays[key])


class TestForward:
    def test_zero_output_weights_constant_bias(self, rng):
        model = build_yieldnet(TINY, seed=0)
        for crop in ("corn", "soybean"):
            out = model.heads[crop].layers[-1]
            out.params.arrays["weights"][:] = 0.0
            out.params.arrays["bias"][:] = 5.0
        batches = {"corn": small_batch(rng, 3), "soybean": small_batch(rng, 2)}
        preds, _ = forward(model, batches, mode="infer")
        assert np.allclose(preds["corn"], 5.0)
        assert np.allclose(preds["soybean"], 5.0)

    def test_batch_lengths_preserved(self, rng):
        model = build_yieldnet(TINY, seed=0)
        preds, _ = forward(model, {"corn": small_batch(rng, 3),
                                   "soybean": small_batch(rng, 2)}, mode="infer")
        assert preds["corn"].shape == (3,)
        assert preds["soybean"].shape == (2,)

    def test_identical_cubes_identical_predictions(self, rng):
        model = build_yieldnet(TINY, seed=0)
        cube = rng.random(TINY.input_shape)
        batch = CropBatch(cubes=np.stack([cube, cube]),
                          labels=np.array([1.0, 1.0]),
                          label_mask=np.ones(2, dtype=bool))
        preds, _ = forward(model, {"corn": batch, "soybean": small_batch(rng, 2)},
                           mode="infer")
        assert preds["corn"][0] == preds["corn"][1]

    def test_predictions_for_unlabeled_samples(self, rng):
        model = build_yieldnet(TINY, seed=0)
        batch = CropBatch(cubes=rng.random((3, *TINY.input_shape)),
                          labels=np.array([30.0, np.nan, 40.0]),
                          label_mask=np.array([True, False, True]))
        preds, _ = forward(model, {"corn": batch, "soybean": small_batch(rng, 2)},
                           mode="infer")
        assert preds["corn"].shape == (3,)
        assert np.isfinite(preds["corn"]).all()

    def test_backward_without_cache_raises(self, rng):
        model = build_yieldnet(TINY, seed=0)
        batches = {"corn": small_batch(rng, 2), "soybean": small_batch(rng, 2)}
        _, ctx = forward(model, batches, mode="infer", want_cache=False)
        with pytest.raises(GraphStateError):
            model.backward(ctx, {"corn": np.ones((2, 1)),
                                 "soybean": np.ones((2, 1))})


class TestCheckpoint:
    def test_roundtrip_bit_exact_predictions(self, rng, tmp_path):
        model = build_yieldnet(TINY, seed=3)
        path = tmp_path / "model.ynm"
        save_checkpoint(path, model, extra={"note": "test"})
        loaded, adam, extra = load_checkpoint(path)
        assert adam is None
        assert extra == {"note": "test"}
        batches = {"corn": small_batch(rng, 2), "soybean": small_batch(rng, 2)}
        a, _ = forward(model, batches, mode="infer")
        b, _ = forward(loaded, batches, mode="infer")
        assert np.array_equal(a["corn"], b["corn"])
        assert np.array_equal(a["soybean"], b["soybean"])

    def test_roundtrip_preserves_adam(self, tmp_path):
        from yieldnet.tensor import AdamState

        model = build_single_head(TINY, "corn", seed=1)
        adam = AdamState(model.param_blocks(), lr=1e-3)
        adam.step = 17
        path = tmp_path / "model.ynm"
        save_checkpoint(path, model, adam=adam)
        _, loaded, _ = load_checkpoint(path)
        assert loaded.step == 17
        assert loaded.lr == 1e-3
        assert len(loaded.slots) == len(adam.slots)
