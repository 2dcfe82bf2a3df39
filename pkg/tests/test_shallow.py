import numpy as np
import pytest

from rtcaptcha.data import Dataset
from rtcaptcha.models import predict
from rtcaptcha.shallow import (
    KnnModel,
    hog_descriptor,
    load_shallow,
    save_shallow,
    train_shallow,
)


def small_image_dataset(n=12, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        label = i % classes
        img = np.clip(0.2 + 0.3 * label + rng.normal(0, 0.02, (64, 64, 3)), 0, 1).astype(np.float32)
        items.append((img, label))
    return Dataset(items, class_count=classes)


class TestHog:
    def test_constant_image_zero_descriptor(self):
        d = hog_descriptor(np.full((64, 64, 3), 0.6, np.float32))
        np.testing.assert_array_equal(d, np.zeros_like(d))

    def test_descriptor_length_64(self):
        d = hog_descriptor(np.random.default_rng(0).random((64, 64, 3)))
        assert d.shape == (7 * 7 * 2 * 2 * 9,) == (1764,)

    def test_vertical_edge_concentrates_in_horizontal_bin(self):
        img = np.zeros((64, 64, 3), np.float32)
        img[:, 32:] = 1.0  # vertical step: gradient points along +x, angle 0
        d = hog_descriptor(img).reshape(-1, 9)
        mass = d.sum(axis=0)
        assert mass[0] == mass.sum()  # all mass in the first (horizontal) bin

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError, match="cell"):
            hog_descriptor(np.zeros((4, 4, 3)))


class TestShallowModels:
    def test_knn_self_training_accuracy(self):
        ds = small_image_dataset()
        model = train_shallow("knn", "raw_pixels", ds, {"k": 1})
        hits = sum(1 for img, label in ds.items if model.predict(img)[0] == label)
        assert hits == len(ds)

    def test_knn_exact_match_wins(self):
        ds = small_image_dataset()
        model = train_shallow("knn", "hog", ds, {"k": 5})
        img, label = ds.items[4]
        assert model.predict(img)[0] == label

    def test_svm_separable_2d_points_reach_full_accuracy(self):
        # two-pixel images = 2-D feature points on either side of a margin
        rng = np.random.default_rng(3)
        items = []
        for i in range(24):
            label = i % 2
            point = np.array([0.8, 0.15] if label == 0 else [0.15, 0.8]) + rng.normal(0, 0.03, 2)
            items.append((np.clip(point, 0, 1).reshape(1, 2, 1).astype(np.float32), label))
        ds = Dataset(items, class_count=2)
        model = train_shallow("linear_svm", "raw_pixels", ds, {"epochs": 20})
        hits = sum(1 for img, label in ds.items if model.predict(img)[0] == label)
        assert hits == len(ds)

    def test_svm_zero_learning_rate_keeps_weights(self):
        ds = small_image_dataset(n=8, classes=2)
        model = train_shallow("linear_svm", "raw_pixels", ds, {"epochs": 5, "learning_rate": 0.0})
        np.testing.assert_array_equal(model.weight, np.zeros_like(model.weight))
        np.testing.assert_array_equal(model.bias, np.zeros_like(model.bias))

    def test_forest_single_tree_memorises_unique_points(self):
        ds = small_image_dataset(n=9, classes=3)
        model = train_shallow("random_forest", "raw_pixels", ds,
                              {"trees": 1, "max_depth": 64, "bootstrap": False, "max_features": 12288})
        hits = sum(1 for img, label in ds.items if model.predict(img)[0] == label)
        assert hits == len(ds)

    def test_forest_vote_fractions_sum_to_one(self):
        ds = small_image_dataset()
        model = train_shallow("random_forest", "hog", ds, {"trees": 7, "max_depth": 4})
        _, scores = model.predict(ds.items[0][0])
        assert scores.sum() == pytest.approx(1.0)
        assert scores.min() >= 0.0

    def test_single_class_rejected_for_svm_and_forest(self):
        ds = small_image_dataset(n=5, classes=1)
        for kind in ("linear_svm", "random_forest"):
            with pytest.raises(ValueError, match="two classes"):
                train_shallow(kind, "raw_pixels", ds)

    def test_unknown_kind_and_descriptor(self):
        ds = small_image_dataset()
        with pytest.raises(ValueError, match="unknown shallow kind"):
            train_shallow("mlp", "hog", ds)
        with pytest.raises(ValueError, match="unknown descriptor"):
            train_shallow("knn", "sift", ds)

    def test_predict_interface_parity_with_cnn(self):
        ds = small_image_dataset()
        model = train_shallow("knn", "hog", ds)
        cls, scores = predict(model, ds.items[0][0])
        assert isinstance(cls, int)
        assert scores.shape == (3,)

    def test_training_determinism(self):
        ds = small_image_dataset(n=16, classes=2)
        a = train_shallow("random_forest", "raw_pixels", ds, {"trees": 5, "seed": 3})
        b = train_shallow("random_forest", "raw_pixels", ds, {"trees": 5, "seed": 3})
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta, tb)


class TestSerialization:
    @pytest.mark.parametrize("kind,hyper", [
        ("knn", {"k": 3}),
        ("linear_svm", {"epochs": 3}),
        ("random_forest", {"trees": 3, "max_depth": 4}),
    ])
    def test_roundtrip(self, kind, hyper, tmp_path):
        ds = small_image_dataset(n=9, classes=3)
        model = train_shallow(kind, "hog", ds, hyper)
        save_shallow(model, tmp_path / "m")
        again = load_shallow(tmp_path / "m")
        assert (tmp_path / "m.json").exists()
        for img, _ in ds.items[:3]:
            a_cls, a_scores = model.predict(img)
            b_cls, b_scores = again.predict(img)
            assert a_cls == b_cls
            np.testing.assert_array_equal(a_scores, b_scores)

    def test_version_checked(self, tmp_path):
        ds = small_image_dataset(n=6, classes=2)
        model = train_shallow("knn", "hog", ds)
        save_shallow(model, tmp_path / "m")
        import json

        meta = json.loads((tmp_path / "m.json").read_text())
        meta["version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(meta))
        with pytest.raises(ValueError, match="version"):
            load_shallow(tmp_path / "m")
