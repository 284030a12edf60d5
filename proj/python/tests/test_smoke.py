import math

import numpy as np
import pytest

import cmim


def test_power_transform_matches_numpy():
    p = np.array([0.5, 0.25, 0.25])
    out = np.array(cmim.power_transform(p.tolist(), 2.0))
    want = p**2 / np.sum(p**2)
    np.testing.assert_allclose(out, want, rtol=1e-14)
    assert cmim.power_transform([0.9, 0.1], 0.0) == [0.5, 0.5]
    with pytest.raises(ValueError):
        cmim.power_transform([0.5, 0.5], -1.0)


def test_softmax_and_kl():
    z = np.array([1.0, -0.5, 2.0])
    want = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    np.testing.assert_allclose(cmim.softmax(z.tolist()), want, rtol=1e-14)
    assert cmim.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-14)
    assert cmim.cross_entropy(0, [0.7, 0.3]) == pytest.approx(0.356675, abs=1e-6)


def test_nll_moments():
    m1, m2 = cmim.nll_moments([0.5, 0.25, 0.25])
    assert m1 == pytest.approx(1.5 * math.log(2), rel=1e-14)
    assert m2 == pytest.approx(2.5 * math.log(2) ** 2, rel=1e-14)


def test_smooth_max_example():
    assert cmim.smooth_max([0.0, 1.0], 1.0) == pytest.approx(1.0 + math.log((1 + math.exp(-1)) / 2), rel=1e-14)
    assert cmim.smooth_max([1.0, 1.0, 1.0], 50.0) == pytest.approx(1.0, rel=1e-14)


def test_class_cmi_corners():
    assert cmim.class_cmi([[1.0, 0.0], [0.0, 1.0]], 1.0) == pytest.approx(math.log(2), abs=1e-10)
    profile = cmim.cmi_profile([[[0.7, 0.3], [0.2, 0.8]]], beta=2.0, grid_size=5)
    assert profile["alpha_grid"][0] == 0.0
    assert profile["per_class_cmi"][0][0] == 0.0


def test_verdict_fixtures():
    down = cmim.distillability_verdict(72.65, [("KD", 72.53)])
    assert not down["distillable"] and down["marker"] == "↓"
    up = cmim.distillability_verdict(71.94, [("MKD", 72.08)])
    assert up["distillable"] and up["marker"] == "↑" and up["best_attack"] == "MKD"


def test_simplex_point():
    assert cmim.simplex_point(1.0, 0.0, 0.0) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert cmim.simplex_point(0.0, 1.0, 0.0) == pytest.approx((1.0, 0.0), abs=1e-12)
    x, y = cmim.simplex_point(0.0, 0.0, 1.0)
    assert (x, y) == pytest.approx((0.5, math.sqrt(3) / 2), abs=1e-12)


def test_train_and_predict():
    data = cmim.generate_gaussian_mixture(seed=0, classes=4, per_class=40, separation=6.0)
    assert data["train_x"].shape == (128, 2)
    cfg = cmim.TrainConfig()
    cfg.hidden = [8]
    cfg.batch_size = 16
    cfg.epochs = 40
    cfg.lambda_ = 0.5
    cfg.n_alpha = 4
    cfg.profile_grid_size = 5
    out = cmim.train("cmim", cfg, data["train_x"], data["train_y"], 4)
    assert len(out["epochs"]) == 40
    probs = cmim.predict_probs(out["checkpoint"], data["test_x"])
    assert probs.shape == (len(data["test_y"]), 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-12)
    accuracy = np.mean(np.argmax(probs, axis=1) == np.array(data["test_y"]))
    assert accuracy > 0.8
