import numpy as np
import pytest

from rtcaptcha.data import Dataset
from rtcaptcha.models import (
    AdversarialSpec,
    PRESETS,
    TrainConfig,
    accuracy,
    build_model,
    epsilon_sampler_mean,
    predict,
    sample_epsilons,
    train,
    train_adversarial,
)
from rtcaptcha.tensor import Model, forward


def spec_param_count(model: Model) -> int:
    """Arithmetic over the declared layer specs, independent of the arrays."""
    total = 0
    for spec in model.specs():
        kind = spec["kind"]
        if kind == "conv2d":
            total += spec["k"] ** 2 * spec["c_in"] * spec["c_out"] + spec["c_out"]
        elif kind == "dense":
            total += spec["d_in"] * spec["d_out"] + spec["d_out"]
        elif kind == "residual":
            total += 2 * (spec["k"] ** 2 * spec["channels"] ** 2 + spec["channels"])
        elif kind == "densecat":
            total += spec["k"] ** 2 * spec["c_in"] * spec["growth"] + spec["growth"]
    return total


def toy_two_class_dataset(n=10, noise=0.02, seed=0):
    """Linearly separable: class 0 dark images, class 1 bright images."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        label = i % 2
        base = 0.15 if label == 0 else 0.85
        img = np.clip(base + rng.normal(0, noise, (64, 64, 3)), 0, 1).astype(np.float32)
        items.append((img, label))
    return Dataset(items, class_count=2)


class TestBuildModel:
    @pytest.mark.parametrize("arch", PRESETS)
    def test_param_count_matches_spec_arithmetic(self, arch):
        model = build_model(arch, seed=0)
        assert model.param_count() == spec_param_count(model)

    def test_same_seed_bit_identical(self):
        a = build_model("tiny_vgg", seed=5)
        b = build_model("tiny_vgg", seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_different_seed_differs(self):
        a = build_model("tiny_vgg", seed=5)
        b = build_model("tiny_vgg", seed=6)
        assert any(not np.array_equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_unknown_preset_lists_choices(self):
        with pytest.raises(ValueError, match="tiny_lenet"):
            build_model("resnet50")

    @pytest.mark.parametrize("arch", PRESETS)
    def test_io_contract(self, arch, rng):
        model = build_model(arch, seed=1)
        logits, _ = forward(model, rng.random((2, 64, 64, 3)).astype(np.float32))
        assert logits.shape == (2, 55)


class TestTrain:
    def test_separable_toy_set_reaches_full_accuracy(self):
        ds = toy_two_class_dataset()
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        model, history = train(model, ds, TrainConfig(epochs=50, batch_size=10, learning_rate=0.01, seed=0))
        assert history["train_accuracy"] == 1.0

    def test_zero_learning_rate_keeps_parameters(self):
        ds = toy_two_class_dataset()
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        before = [p.copy() for p in model.parameters()]
        model, _ = train(model, ds, TrainConfig(epochs=3, batch_size=4, learning_rate=0.0, seed=0))
        for b, p in zip(before, model.parameters()):
            np.testing.assert_array_equal(b, p)

    def test_deterministic_given_seed(self):
        ds = toy_two_class_dataset()
        outs = []
        for _ in range(2):
            model = build_model("tiny_lenet", seed=0, num_classes=2)
            model, _ = train(model, ds, TrainConfig(epochs=2, batch_size=4, learning_rate=0.01, seed=9))
            outs.append([p.copy() for p in model.parameters()])
        for a, b in zip(*outs):
            np.testing.assert_array_equal(a, b)

    def test_history_lengths(self):
        ds = toy_two_class_dataset()
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        _, history = train(model, ds, TrainConfig(epochs=4, batch_size=4, learning_rate=0.01, seed=0))
        assert len(history["loss"]) == len(history["accuracy"]) == 4

    def test_adversarial_config_must_use_other_entrypoint(self):
        ds = toy_two_class_dataset()
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        with pytest.raises(ValueError):
            train(model, ds, TrainConfig(adversarial=AdversarialSpec()))
        with pytest.raises(ValueError):
            train_adversarial(model, ds, TrainConfig())


class TestTrainAdversarial:
    def test_degenerate_k0_equals_plain_mean_loss(self):
        ds = toy_two_class_dataset(n=8)
        a = build_model("tiny_lenet", seed=0, num_classes=2)
        b = build_model("tiny_lenet", seed=0, num_classes=2)
        cfg_plain = TrainConfig(epochs=2, batch_size=8, learning_rate=0.01, seed=0)
        cfg_degen = TrainConfig(epochs=2, batch_size=8, learning_rate=0.01, seed=0,
                                adversarial=AdversarialSpec(lam=1.0, k=0))
        _, ha = train(a, ds, cfg_plain)
        _, hb = train_adversarial(b, ds, cfg_degen)
        assert ha["loss"] == hb["loss"]
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_k_larger_than_batch_rejected(self):
        ds = toy_two_class_dataset(n=8)
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        cfg = TrainConfig(epochs=1, batch_size=8, seed=0, adversarial=AdversarialSpec(k=16))
        with pytest.raises(ValueError, match="batch size"):
            train_adversarial(model, ds, cfg)

    def test_eq10_batch_loss_matches_term_by_term_oracle(self):
        # audit in 64-bit (oracle) mode: the weighted-sum formula recomputed
        # outside the trainer must match the trainer's loss exactly
        ds = toy_two_class_dataset(n=32)
        model = build_model("tiny_lenet", seed=0, num_classes=2).astype(np.float64)
        lam, k = 0.3, 16
        audits = []

        def hook(clean_losses, adv_losses, lam_used, batch_loss):
            m = len(clean_losses) + len(adv_losses)
            want = (clean_losses.sum() + lam_used * adv_losses.sum()) / ((m - len(adv_losses)) + lam_used * len(adv_losses))
            audits.append((batch_loss, float(want)))

        cfg = TrainConfig(epochs=1, batch_size=32, learning_rate=0.01, seed=0,
                          adversarial=AdversarialSpec(lam=lam, k=k))
        train_adversarial(model, ds, cfg, audit_hook=hook)
        assert audits
        for got, want in audits:
            assert got == want  # exact in float64

    def test_epsilon_sampler_range_and_mean(self):
        rng = np.random.default_rng(0)
        eps = sample_epsilons(10_000, rng)
        assert eps.min() >= 0.0 and eps.max() <= 16.0 / 255.0
        want = epsilon_sampler_mean()
        assert abs(eps.mean() - want) / want < 0.05


class TestPredict:
    def test_cnn_tie_breaks_to_lowest_class(self):
        model = build_model("tiny_lenet", seed=0, input_hw=8)
        model.layers[-1].weight[...] = 0.0
        model.layers[-1].bias[...] = 0.0
        cls, scores = predict(model, np.zeros((8, 8, 3), np.float32))
        assert cls == 0
        assert scores.shape == (55,)
        assert scores.sum() == pytest.approx(1.0)

    def test_accuracy_helper_matches_manual_count(self):
        ds = toy_two_class_dataset(n=12)
        model = build_model("tiny_lenet", seed=0, num_classes=2)
        manual = sum(1 for img, label in ds.items if predict(model, img)[0] == label) / 12
        assert accuracy(model, ds) == pytest.approx(manual)
