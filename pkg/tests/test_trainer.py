"""Trainer: optimizer math, schedule, loops, divergence handling."""

import math
import os

import numpy as np
import pytest

from spikeformer import tensor as T
from spikeformer.data import synth_shapes
from spikeformer.errors import TrainingDiverged
from spikeformer.model import ModelConfig, SpikeTransformer
from spikeformer.tensor import Tensor
from spikeformer.trainer import (AdamW, TrainConfig, cosine_lr, eval_loop,
                                 train_loop, write_metrics_csv)


def train_config(**overrides):
    base = dict(epochs=1, batch_size=16, base_lr=5e-4, weight_decay=0.02, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def toy_model(seed=0, **overrides):
    cfg = dict(time_steps=2, in_channels=1, image_size=8, embed_dim=16,
               num_blocks=1, num_heads=2, num_classes=4, sps_blocks=2,
               sps_pooled=(2,))
    cfg.update(overrides)
    return SpikeTransformer(ModelConfig(**cfg), seed=seed)


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2, dtype=p.data.dtype)
        opt = AdamW([p], weight_decay=0.0)
        opt.step(1e-3)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_direction(self):
        # Bias correction makes m-hat = g and v-hat = g^2, so the first update
        # is -lr * g / (|g| + eps) elementwise.
        g = np.array([0.3, -1.7, 0.001])
        p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        p.grad = g.copy()
        opt = AdamW([p], weight_decay=0.0, eps=1e-8)
        opt.step(0.01)
        expect = -0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p.data, expect, rtol=1e-12)

    def test_decoupled_decay_only(self):
        p = Tensor(np.array([2.0, -4.0]), requires_grad=True, dtype=np.float64)
        p.grad = np.zeros(2)
        opt = AdamW([p], weight_decay=0.1)
        opt.step(0.5)
        assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.5 * 0.1))

    def test_moments_accumulate(self):
        p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
        opt = AdamW([p], weight_decay=0.0)
        for _ in range(3):
            p.grad = np.array([1.0])
            opt.step(0.1)
        assert opt.step_count == 3
        assert p.data[0] < 0


class TestCosine:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 3e-4) == 3e-4
        assert cosine_lr(100, 100, 3e-4) == pytest.approx(0.0, abs=1e-20)
        assert cosine_lr(50, 100, 3e-4) == pytest.approx(1.5e-4)

    def test_monotone_decay(self):
        values = [cosine_lr(s, 10, 1.0) for s in range(11)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestLoops:
    def test_smoke_epoch_emits_csv_row(self, tmp_path):
        model = toy_model()
        train = synth_shapes(4, 8, 10, seed=0)
        test = synth_shapes(4, 8, 8, seed=1)
        out = str(tmp_path / "run")
        history = train_loop(model, train, test, train_config(), out_dir=out)
        assert len(history) == 1
        lines = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert lines[0] == "epoch,train_loss,test_loss,test_acc,lr,wall_seconds"
        assert len(lines) == 2
        assert os.path.exists(os.path.join(out, "best.ckpt"))
        assert os.path.exists(os.path.join(out, "last.ckpt"))

    def test_early_loss_near_chance_level(self):
        model = toy_model(seed=3)
        train = synth_shapes(4, 8, 48, seed=0)
        test = synth_shapes(4, 8, 16, seed=1)
        history = train_loop(model, train, test, train_config(epochs=1, batch_size=16))
        assert history[0].train_loss < math.log(4) + 0.1

    def test_eval_deterministic(self):
        model = toy_model(seed=2)
        ds = synth_shapes(4, 8, 24, seed=5)
        a = eval_loop(model, ds)
        b = eval_loop(model, ds)
        assert a == b

    def test_untrained_accuracy_near_chance(self):
        # Binomial bound: |acc - 1/4| <= 3 * sqrt(p(1-p)/n).
        model = toy_model(seed=11)
        ds = synth_shapes(4, 8, 256, seed=5)
        _, acc = eval_loop(model, ds)
        bound = 3 * math.sqrt(0.25 * 0.75 / 256)
        assert abs(acc - 0.25) <= bound

    def test_metrics_bitwise_reproducible(self, tmp_path):
        rows = []
        for run in range(2):
            model = toy_model(seed=4)
            train = synth_shapes(4, 8, 32, seed=9)
            test = synth_shapes(4, 8, 16, seed=10)
            out = str(tmp_path / f"run{run}")
            train_loop(model, train, test, train_config(epochs=2), out_dir=out)
            rows.append(open(os.path.join(out, "metrics.csv"), "rb").read())
        assert rows[0] == rows[1]

    def test_wall_seconds_zero_without_timing(self, tmp_path):
        model = toy_model()
        train = synth_shapes(4, 8, 10, seed=0)
        test = synth_shapes(4, 8, 8, seed=1)
        out = str(tmp_path / "run")
        train_loop(model, train, test, train_config(), out_dir=out)
        last_col = open(os.path.join(out, "metrics.csv")).read().splitlines()[1].split(",")[-1]
        assert last_col == "0.000"

    def test_gradient_sanity_near_threshold(self):
        # With product values straddling the 0.5 threshold (scale pushed up so
        # the attention neuron actually fires), every parameter on the loss
        # path receives nonzero gradient after one step.
        model = toy_model(seed=6, scale=0.5)
        train = synth_shapes(4, 8, 16, seed=2)
        T.clear_tape()
        model.zero_grad()
        logits = model(train.images)
        loss = T.cross_entropy(logits, train.labels)
        loss.backward()
        zero_named = [n for n, p in model.named_parameters()
                      if p.grad is None or not np.abs(p.grad).sum() > 0]
        assert not zero_named, zero_named

    def test_nan_loss_aborts_with_dump(self, tmp_path):
        model = toy_model(seed=1)
        model.head.weight.data[0, 0] = np.nan
        train = synth_shapes(4, 8, 16, seed=0)
        test = synth_shapes(4, 8, 8, seed=1)
        out = str(tmp_path / "boom")
        os.makedirs(out)
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train_loop(model, train, test, train_config(), out_dir=out)
        assert os.path.exists(os.path.join(out, "nan_dump", "value_ranges.csv"))

    def test_early_stop_callback(self):
        model = toy_model(seed=8)
        train = synth_shapes(4, 8, 16, seed=0)
        test = synth_shapes(4, 8, 8, seed=1)
        history = train_loop(model, train, test, train_config(epochs=5),
                             epoch_callback=lambda m: True)
        assert len(history) == 1


class TestMetricsCsv:
    def test_atomic_write_and_format(self, tmp_path):
        from spikeformer.trainer import EpochMetrics
        path = str(tmp_path / "m.csv")
        write_metrics_csv(path, [EpochMetrics(1, 0.5, 0.4, 0.75, 1e-3, 0.0)])
        content = open(path).read()
        assert content.startswith("epoch,train_loss")
        assert "1,0.500000,0.400000,0.750000,0.00100000,0.000" in content
