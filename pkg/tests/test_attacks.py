"""Attack machinery: penalty oracles, projection, closed-form PGD checks."""

import numpy as np
import pytest

from backdoorlab import attacks, images
from backdoorlab.attacks import (AttackConfig, DeepDreamSchedule,
                                 RegularizerConfig, deep_dream_attack,
                                 generate_adv_grid, grid_seed, pgd_l2,
                                 project_l2, smoothadv_pgd, tikhonov_grad,
                                 tikhonov_penalty, tv_grad, tv_penalty)
from backdoorlab.errors import ConfigError
from backdoorlab.models import ClassifierNet
from backdoorlab.smoothing import SmoothedClassifier, SmoothingConfig


# penalty oracles shared with the acceptance suite
from tests_support_oracles import tikhonov_bruteforce, tv_bruteforce


def test_tikhonov_kernel_is_fixed_and_zero_sum():
    want = np.array([[2, 2, -1, -1], [2, 2, -1, -1],
                     [-1, -1, 0, 0], [-1, -1, 0, 0]], dtype=np.float64)
    np.testing.assert_array_equal(attacks.TIKHONOV_KERNEL, want)
    assert attacks.TIKHONOV_KERNEL.sum() == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_penalties_match_bruteforce(seed):
    rng = np.random.default_rng(seed)
    delta = rng.standard_normal((rng.integers(4, 9), rng.integers(4, 9), 3))
    np.testing.assert_allclose(tikhonov_penalty(delta),
                               tikhonov_bruteforce(delta), rtol=1e-12)
    np.testing.assert_allclose(tv_penalty(delta), tv_bruteforce(delta),
                               rtol=1e-12)


def test_constant_perturbation_gives_zero():
    delta = np.full((6, 7, 3), 0.37)
    assert tikhonov_penalty(delta) == pytest.approx(0.0, abs=1e-18)
    assert tv_penalty(delta) == 0.0


def test_checkerboard_matches_bruteforce():
    yy, xx = np.mgrid[0:4, 0:4]
    delta = np.where(((yy + xx) % 2)[..., None].astype(bool), 1.0, -1.0)
    np.testing.assert_allclose(tikhonov_penalty(delta),
                               tikhonov_bruteforce(delta), rtol=1e-12)


def numerical_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    fx, gx = x.ravel(), g.ravel()
    for i in range(fx.size):
        orig = fx[i]
        fx[i] = orig + h
        fp = f(x)
        fx[i] = orig - h
        fm = f(x)
        fx[i] = orig
        gx[i] = (fp - fm) / (2 * h)
    return g


def test_penalty_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    delta = rng.standard_normal((6, 6, 2))
    np.testing.assert_allclose(tikhonov_grad(delta),
                               numerical_grad(tikhonov_penalty, delta),
                               rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(tv_grad(delta),
                               numerical_grad(tv_penalty, delta),
                               rtol=1e-6, atol=1e-8)


def test_small_images_give_zero_tikhonov():
    assert tikhonov_penalty(np.ones((3, 3, 3))) == 0.0
    assert tikhonov_grad(np.ones((3, 3, 3))).sum() == 0.0


# ---------------------------------------------------------------------------
# projection

def test_projection_boundary():
    rng = np.random.default_rng(4)
    x0 = rng.uniform(0, 1, (5, 5, 3)).astype(np.float32)
    d = rng.standard_normal((5, 5, 3)).astype(np.float32)
    x = x0 + d
    eps = 0.5
    proj = project_l2(x, x0, eps)
    n = attacks.l2_distance(proj, x0)
    assert n <= eps + 1e-6
    # any further move along the update direction re-violates the budget
    step = (proj - x0) / max(n, 1e-9)
    beyond = proj + 0.01 * step
    assert attacks.l2_distance(beyond, x0) > eps
    # inside the ball: untouched
    x_in = x0 + 0.1 * d / max(attacks.l2_distance(x0 + d, x0), 1e-9)
    np.testing.assert_array_equal(project_l2(x_in, x0, eps), x_in)


# ---------------------------------------------------------------------------
# smoothed PGD

def tiny_sc(seed=0, sigma=0.1, num_classes=3):
    model = ClassifierNet(num_classes, channels=(4, 6), strides=(1, 2),
                          seed=seed)
    return SmoothedClassifier(model, SmoothingConfig(sigma, num_pred_samples=9,
                                                     seed=seed))


def test_epsilon_zero_returns_input_unchanged():
    sc = tiny_sc(1)
    x = np.random.default_rng(2).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    cfg = AttackConfig(epsilon=0.0, steps=5, mc_vectors=2, seed=3)
    adv = smoothadv_pgd(sc, x, 0, cfg)
    np.testing.assert_array_equal(adv.adv, x)
    assert adv.achieved_l2 == 0.0
    assert adv.base_pred == int(sc.base.logits(x[None]).argmax())


def test_budget_respected_fuzz():
    """100 random attacks, every output inside eps + 1e-4."""
    sc = tiny_sc(5, sigma=0.2)
    rng = np.random.default_rng(6)
    for i in range(100):
        x = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        eps = float(rng.uniform(0.0, 3.0))
        cfg = AttackConfig(epsilon=eps, steps=4, mc_vectors=2, seed=i)
        adv = smoothadv_pgd(sc, x, int(rng.integers(0, 3)), cfg, image_id=i)
        assert adv.achieved_l2 <= eps + 1e-4
        assert images.in_unit_range(adv.adv)


def test_best_iterate_objective_not_below_initial():
    sc = tiny_sc(7, sigma=0.3)
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
    cfg = AttackConfig(epsilon=1.0, steps=8, mc_vectors=2, seed=9)
    adv = smoothadv_pgd(sc, x, 1, cfg)
    start = attacks._objective(sc, x, x, 1, cfg,
                               attacks.derive_seed(cfg.seed, "eval-noise", 0))
    assert adv.objective_value >= start


class LinearBinaryModel:
    """logits = [w.x, 0]; worst-case direction for the true-class score is
    -w/||w||."""

    num_classes = 2

    def __init__(self, w):
        self.w = w.astype(np.float32)

    def logits(self, x, train=False):
        s = (x.reshape(len(x), -1) @ self.w.reshape(-1)).astype(np.float32)
        return np.stack([s, np.zeros_like(s)], axis=1)

    def backward_input(self, dlogits, need_param_grads=True):
        return dlogits[:, 0].reshape(-1, 1, 1, 1) * self.w[None]


def test_linear_model_pgd_matches_closed_form_direction():
    rng = np.random.default_rng(10)
    w = rng.standard_normal((6, 6, 3))
    model = LinearBinaryModel(w)
    sc = SmoothedClassifier(model, SmoothingConfig(sigma=0.0, num_pred_samples=1))
    x = np.full((6, 6, 3), 0.5, dtype=np.float32)
    cfg = AttackConfig(epsilon=0.25, steps=25, mc_vectors=1, seed=11)
    adv = smoothadv_pgd(sc, x, 0, cfg)
    direction = (adv.adv - x).astype(np.float64).ravel()
    ref = (-w / np.linalg.norm(w)).ravel()
    cos = direction @ ref / max(np.linalg.norm(direction), 1e-12)
    assert cos >= 0.99


def test_pgd_l2_plain_matches_closed_form_direction():
    rng = np.random.default_rng(12)
    w = rng.standard_normal((6, 6, 3))
    model = LinearBinaryModel(w)
    x = np.full((1, 6, 6, 3), 0.5, dtype=np.float32)
    adv = pgd_l2(model, x, np.array([0]), eps=0.25, steps=25)
    d = (adv[0] - x[0]).astype(np.float64).ravel()
    ref = (-w / np.linalg.norm(w)).ravel()
    assert d @ ref / max(np.linalg.norm(d), 1e-12) >= 0.99
    assert np.linalg.norm(d) <= 0.25 + 1e-4


# ---------------------------------------------------------------------------
# deep dream

def test_deep_dream_degenerate_schedule_equals_pgd():
    sc = tiny_sc(13, sigma=0.2)
    x = np.random.default_rng(14).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    base = AttackConfig(epsilon=0.8, steps=5, mc_vectors=2, seed=15)
    dd = AttackConfig(epsilon=0.8, steps=5, mc_vectors=2, seed=15,
                      deep_dream=DeepDreamSchedule(
                          iterations=1, scale_factor=1.0, steps=5,
                          step_size=base.resolved_step_size()))
    a = smoothadv_pgd(sc, x, 0, base)
    b = deep_dream_attack(sc, x, 0, dd)
    np.testing.assert_array_equal(a.adv, b.adv)
    assert a.base_pred == b.base_pred


@pytest.mark.parametrize("iters,scale", [(2, 1.3), (3, 1.17), (1, 2.0)])
def test_deep_dream_output_shape_contract(iters, scale):
    sc = tiny_sc(16, sigma=0.2)
    x = np.random.default_rng(17).uniform(0, 1, (9, 7, 3)).astype(np.float32)
    cfg = AttackConfig(epsilon=0.6, steps=2, mc_vectors=2, seed=18,
                       deep_dream=DeepDreamSchedule(iterations=iters,
                                                    scale_factor=scale,
                                                    steps=2, step_size=0.3))
    adv = deep_dream_attack(sc, x, 0, cfg)
    assert adv.adv.shape == x.shape
    assert adv.achieved_l2 <= cfg.epsilon + 1e-4
    assert len(adv.intermediates) == iters


def test_deep_dream_max_dim_cap():
    sc = tiny_sc(19)
    x = np.random.default_rng(20).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    cfg = AttackConfig(epsilon=0.5, steps=1, mc_vectors=1, seed=21, max_dim=10,
                       deep_dream=DeepDreamSchedule(iterations=3,
                                                    scale_factor=1.5, steps=1))
    with pytest.raises(ConfigError):
        deep_dream_attack(sc, x, 0, cfg)


def test_wrong_entrypoint_raises():
    sc = tiny_sc(22)
    x = np.zeros((8, 8, 3), dtype=np.float32)
    with pytest.raises(ConfigError):
        deep_dream_attack(sc, x, 0, AttackConfig(epsilon=0.1))
    with pytest.raises(ConfigError):
        smoothadv_pgd(sc, x, 0, AttackConfig(
            epsilon=0.1, deep_dream=DeepDreamSchedule()))


# ---------------------------------------------------------------------------
# grid driver

def test_grid_empty():
    sc = tiny_sc(23)
    assert generate_adv_grid(sc, [], [], AttackConfig(epsilon=0.1)) == []


def test_grid_matches_single_op_with_derived_seed():
    sc = tiny_sc(24, sigma=0.2)
    rng = np.random.default_rng(25)
    xs = rng.uniform(0, 1, (3, 8, 8, 3)).astype(np.float32)
    labels = [0, 1, 2]
    cfg = AttackConfig(epsilon=0.7, steps=3, mc_vectors=2, seed=26)
    grid = generate_adv_grid(sc, xs, labels, cfg, image_ids=["a", "b", "c"])
    for i, item in enumerate(grid):
        from dataclasses import replace
        single = smoothadv_pgd(sc, xs[i], labels[i],
                               replace(cfg, seed=grid_seed(cfg, i)),
                               image_id=["a", "b", "c"][i])
        np.testing.assert_array_equal(item.adv, single.adv)


def test_grid_contains_failures_without_aborting():
    sc = tiny_sc(27)
    xs = [np.zeros((8, 8, 3), dtype=np.float32),
          np.zeros((8, 8, 3), dtype=np.float32),
          np.zeros((8, 8, 3), dtype=np.float32)]
    cfg = AttackConfig(epsilon=0.2, steps=1, mc_vectors=1, seed=28)
    out = generate_adv_grid(sc, xs, [0, 7, 0], cfg)  # label 7 out of range
    assert isinstance(out[0], attacks.AdvExample)
    assert isinstance(out[1], attacks.AttackFailure)
    assert isinstance(out[2], attacks.AdvExample)


def test_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=-1.0)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=1.0, objective="targeted")
    with pytest.raises(ConfigError):
        RegularizerConfig("hessian")
    with pytest.raises(ConfigError):
        DeepDreamSchedule(scale_factor=0.5)
