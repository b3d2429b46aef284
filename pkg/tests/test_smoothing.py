"""Smoothed prediction and soft-surrogate gradients against closed forms."""

import numpy as np
import pytest
from scipy.stats import norm

from backdoorlab import smoothing
from backdoorlab.models import ClassifierNet, DenoiserNet, IdentityDenoiser
from backdoorlab.smoothing import (SmoothedClassifier, SmoothingConfig,
                                   smoothed_ce_and_grad, smoothed_predict,
                                   smoothed_soft_scores)


class ThresholdModel:
    """1-D rule: class 1 iff x > t. Smoothed class-1 probability has the
    closed form Phi((x - t) / sigma)."""

    num_classes = 2

    def __init__(self, t, scale=1000.0):
        self.t = t
        self.scale = scale

    def logits(self, x, train=False):
        m = (x[:, 0] - self.t) * self.scale
        return np.stack([-m, m], axis=1)


def small_classifier(seed=0, dtype=np.float32):
    return ClassifierNet(3, channels=(4, 6), strides=(1, 2), seed=seed,
                         dtype=dtype)


def test_sigma_zero_equals_base_argmax():
    model = small_classifier()
    sc = SmoothedClassifier(model, SmoothingConfig(sigma=0.0, num_pred_samples=7))
    rng = np.random.default_rng(0)
    for i in range(5):
        x = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        pred = smoothed_predict(sc, x, image_id=i)
        assert pred.class_index == int(model.logits(x[None]).argmax())
        assert pred.histogram.sum() == 7
        assert pred.histogram[pred.class_index] == 7


def test_threshold_classifier_matches_gaussian_cdf():
    t, sigma, x0, n = 0.3, 1.0, 0.8, 10_000
    sc = SmoothedClassifier(ThresholdModel(t),
                            SmoothingConfig(sigma=sigma, num_pred_samples=n,
                                            seed=5, chunk=512))
    pred = smoothed_predict(sc, np.array([x0], dtype=np.float32))
    p_analytic = norm.cdf((x0 - t) / sigma)
    p_mc = pred.histogram[1] / n
    se = np.sqrt(p_analytic * (1 - p_analytic) / n)
    assert abs(p_mc - p_analytic) <= 3 * se
    assert pred.histogram.sum() == n


def test_histogram_prefix_consistency():
    model = small_classifier(1)
    x = np.random.default_rng(2).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    cfg10 = SmoothingConfig(sigma=0.5, num_pred_samples=10, seed=3)
    cfg30 = SmoothingConfig(sigma=0.5, num_pred_samples=30, seed=3)
    h10 = smoothed_predict(SmoothedClassifier(model, cfg10), x).histogram
    h30 = smoothed_predict(SmoothedClassifier(model, cfg30), x).histogram
    assert (h10 <= h30).all()
    h10b = smoothed_predict(SmoothedClassifier(model, cfg10), x).histogram
    np.testing.assert_array_equal(h10, h10b)


def test_soft_scores_sum_to_one_and_chunk_invariant():
    model = small_classifier(2)
    x = np.random.default_rng(3).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    a = smoothed_soft_scores(
        SmoothedClassifier(model, SmoothingConfig(0.5, seed=4, chunk=32)), x, 16)
    b = smoothed_soft_scores(
        SmoothedClassifier(model, SmoothingConfig(0.5, seed=4, chunk=5)), x, 16)
    assert abs(a.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_sigma_zero_soft_scores_equal_base_softmax():
    model = small_classifier(3)
    x = np.random.default_rng(4).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    sc = SmoothedClassifier(model, SmoothingConfig(sigma=0.0))
    for m in (1, 4):
        scores = smoothed_soft_scores(sc, x, m)
        logits = model.logits(x[None])[0].astype(np.float64)
        want = np.exp(logits - logits.max())
        want /= want.sum()
        np.testing.assert_allclose(scores, want, rtol=1e-9, atol=1e-12)


def test_plain_and_denoised_smoothing_coincide_with_identity_denoiser():
    model = small_classifier(5)
    x = np.random.default_rng(6).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    plain = SmoothedClassifier(model, SmoothingConfig(0.7, 40, seed=8))
    den = SmoothedClassifier(model, SmoothingConfig(0.7, 40, IdentityDenoiser(),
                                                    seed=8))
    pa = smoothed_predict(plain, x)
    pb = smoothed_predict(den, x)
    assert pa.class_index == pb.class_index
    np.testing.assert_array_equal(pa.histogram, pb.histogram)
    np.testing.assert_allclose(smoothed_soft_scores(plain, x, 12),
                               smoothed_soft_scores(den, x, 12), rtol=1e-12)


def test_frozen_noise_gradient_matches_finite_differences():
    """The acceptance oracle: relative error <= 1e-3 (float64 path lands
    far below that)."""
    model = ClassifierNet(3, channels=(4, 6), strides=(1, 2), seed=7,
                          dtype=np.float64)
    denoiser = DenoiserNet(channels=6, depth=3, seed=8, dtype=np.float64)
    sc = SmoothedClassifier(model, SmoothingConfig(0.4, denoiser=denoiser,
                                                   seed=9))
    rng = np.random.default_rng(10)
    x = rng.uniform(0.2, 0.8, (6, 6, 3))
    label, m = 1, 4

    ce, _, grad = smoothed_ce_and_grad(sc, x, label, m, noise_seed=11)
    h = 1e-6
    fd = np.zeros_like(x)
    flat_x, flat_fd = x.ravel(), fd.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        cep, _, _ = smoothed_ce_and_grad(sc, x, label, m, noise_seed=11)
        flat_x[i] = orig - h
        cem, _, _ = smoothed_ce_and_grad(sc, x, label, m, noise_seed=11)
        flat_x[i] = orig
        flat_fd[i] = (cep - cem) / (2 * h)
    rel = np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-12)
    assert rel <= 1e-3


def test_ce_grad_independent_of_noise_offset_overlap():
    model = small_classifier(11)
    x = np.random.default_rng(12).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    sc = SmoothedClassifier(model, SmoothingConfig(0.3, seed=13))
    ce1, p1, g1 = smoothed_ce_and_grad(sc, x, 0, 4, index_offset=8)
    ce2, p2, g2 = smoothed_ce_and_grad(sc, x, 0, 4, index_offset=8)
    assert ce1 == ce2
    np.testing.assert_array_equal(g1, g2)
    ce3, _, _ = smoothed_ce_and_grad(sc, x, 0, 4, index_offset=12)
    assert ce1 != ce3  # different counter window, different noise


def test_config_validation():
    with pytest.raises(Exception):
        SmoothingConfig(sigma=-1.0)
    with pytest.raises(Exception):
        SmoothingConfig(sigma=1.0, num_pred_samples=0)
