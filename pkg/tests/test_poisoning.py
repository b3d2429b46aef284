"""Poison generators: label contracts, measured budgets, trigger presence."""

import numpy as np
import pytest

from backdoorlab import datasets, poisoning, triggers
from backdoorlab.errors import CapacityError, DatasetError, DependencyError
from backdoorlab.models import ClassifierNet
from backdoorlab.poisoning import (PoisonSpec, assemble_training_set,
                                   generate_badnet_poisons,
                                   generate_clbd_poisons,
                                   generate_htba_poisons)


@pytest.fixture(scope="module")
def pool():
    return datasets.make_synthetic_dataset(60, 2, 8, seed=1,
                                           split=datasets.POISON_POOL)


@pytest.fixture(scope="module")
def trig():
    return triggers.make_random_block_patch((3, 3), seed=2, cells=2)


@pytest.fixture(scope="module")
def extractor():
    return ClassifierNet(2, channels=(4, 6), strides=(1, 2), seed=3)


# ---------------------------------------------------------------------------
# badnet

def test_badnet_zero_poisons(pool, trig):
    ps = generate_badnet_poisons(pool, PoisonSpec("badnet", trig, 1, 0), 0)
    assert len(ps.dataset) == 0


def test_badnet_paper_scale_counts(trig):
    big = datasets.make_synthetic_dataset(420, 2, 8, seed=4, split="pool")
    ps = generate_badnet_poisons(big, PoisonSpec("badnet", trig, 1, 400), 5)
    assert len(ps.dataset) == 400
    big5 = datasets.make_synthetic_dataset(260, 5, 8, seed=4, split="pool")
    ps5 = generate_badnet_poisons(big5, PoisonSpec("badnet", trig, 2, 1000), 5)
    assert len(ps5.dataset) == 1000


def test_badnet_labels_and_pixel_diff(pool, trig):
    spec = PoisonSpec("badnet", trig, 1, 20)
    ps = generate_badnet_poisons(pool, spec, rng_seed=6)
    assert (ps.dataset.labels == 1).all()
    ph, pw = trig.size
    for img, rec in zip(ps.dataset.images, ps.records):
        src = pool.images[rec.source_index]
        assert pool.labels[rec.source_index] != 1  # drawn from non-target pool
        r, c = rec.placement
        np.testing.assert_array_equal(img[r:r + ph, c:c + pw], trig.patch)
        mask = np.ones(img.shape[:2], dtype=bool)
        mask[r:r + ph, c:c + pw] = False
        np.testing.assert_array_equal(img[mask], src[mask])


def test_badnet_capacity(pool, trig):
    with pytest.raises(CapacityError):
        generate_badnet_poisons(pool, PoisonSpec("badnet", trig, 1, 100), 0)


# ---------------------------------------------------------------------------
# htba

def test_htba_zero_steps_is_noop(pool, trig, extractor):
    spec = PoisonSpec("htba", trig, 1, 5, {"steps": 0})
    ps = generate_htba_poisons(pool, extractor, spec, rng_seed=7)
    for img, rec in zip(ps.dataset.images, ps.records):
        np.testing.assert_array_equal(img, pool.images[rec.source_index])
        assert rec.feature_dist_final == pytest.approx(rec.feature_dist_init)


def test_htba_labels_untouched_and_budget(pool, trig, extractor):
    budget = 16 / 255
    spec = PoisonSpec("htba", trig, 1, 8,
                      {"steps": 40, "linf_budget": budget, "step_size": 0.05})
    ps = generate_htba_poisons(pool, extractor, spec, rng_seed=8)
    assert (ps.dataset.labels == 1).all()  # target-class images keep own label
    for img, rec in zip(ps.dataset.images, ps.records):
        src = pool.images[rec.source_index]
        linf = float(np.abs(img - src).max())
        assert linf <= budget + 1e-6
        assert rec.feature_dist_final <= rec.feature_dist_init + 1e-6
        # measured independently of the optimizer's bookkeeping
        d = float(np.sqrt(((extractor.features(img[None])
                            - extractor.features(src[None])) ** 2).sum()))
        assert np.isfinite(d)
    assert ps.dataset.images.min() >= 0 and ps.dataset.images.max() <= 1


def test_htba_poisons_never_contain_trigger(pool, trig, extractor):
    spec = PoisonSpec("htba", trig, 1, 5, {"steps": 20})
    ps = generate_htba_poisons(pool, extractor, spec, rng_seed=9)
    ph, pw = trig.size
    for img in ps.dataset.images:
        h, w = img.shape[:2]
        for r in range(h - ph + 1):
            for c in range(w - pw + 1):
                assert not np.array_equal(img[r:r + ph, c:c + pw], trig.patch)


def test_htba_requires_extractor(pool, trig):
    with pytest.raises(DependencyError):
        generate_htba_poisons(pool, None, PoisonSpec("htba", trig, 1, 2), 0)


# ---------------------------------------------------------------------------
# clbd

def test_clbd_zero_eps_is_trigger_only(pool, trig, extractor):
    spec = PoisonSpec("clbd", trig, 1, 6, {"l2_budget": 0.0, "pgd_steps": 10})
    ps = generate_clbd_poisons(pool, extractor, spec, rng_seed=10)
    ph, pw = trig.size
    for img, rec in zip(ps.dataset.images, ps.records):
        src = pool.images[rec.source_index]
        r, c = rec.placement
        expected = src.copy()
        expected[r:r + ph, c:c + pw] = trig.patch
        np.testing.assert_array_equal(img, expected)


def test_clbd_budget_outside_trigger_region(pool, trig, extractor):
    eps = 1.5
    spec = PoisonSpec("clbd", trig, 1, 6, {"l2_budget": eps, "pgd_steps": 15})
    ps = generate_clbd_poisons(pool, extractor, spec, rng_seed=11)
    assert (ps.dataset.labels == 1).all()
    ph, pw = trig.size
    for img, rec in zip(ps.dataset.images, ps.records):
        src = pool.images[rec.source_index].copy()
        r, c = rec.placement
        a, b = img.copy(), src
        a[r:r + ph, c:c + pw] = 0
        b = b.copy()
        b[r:r + ph, c:c + pw] = 0
        l2 = float(np.sqrt(((a - b).astype(np.float64) ** 2).sum()))
        assert l2 <= eps + 1e-4


def test_clbd_requires_robust_model(pool, trig):
    with pytest.raises(DependencyError):
        generate_clbd_poisons(pool, None, PoisonSpec("clbd", trig, 1, 2), 0)


# ---------------------------------------------------------------------------
# assembly

def test_assemble_empty_poisons_is_permutation(pool):
    empty = poisoning._empty(pool, "badnet")
    mixed = assemble_training_set(pool, empty, rng_seed=12)
    assert len(mixed) == len(pool)
    a = np.sort(pool.images.reshape(len(pool), -1), axis=0)
    b = np.sort(mixed.images.reshape(len(mixed), -1), axis=0)
    np.testing.assert_array_equal(a, b)


def test_assemble_sizes_and_determinism(pool, trig):
    ps = generate_badnet_poisons(pool, PoisonSpec("badnet", trig, 1, 15), 13)
    m1 = assemble_training_set(pool, ps, rng_seed=14)
    m2 = assemble_training_set(pool, ps, rng_seed=14)
    assert len(m1) == len(pool) + 15
    np.testing.assert_array_equal(m1.images, m2.images)
    np.testing.assert_array_equal(m1.labels, m2.labels)
    assert set(m1.provenance) == {"clean", "badnet"}
    assert (m1.provenance == "badnet").sum() == 15


def test_assemble_dim_mismatch(pool):
    other = datasets.make_synthetic_dataset(4, 2, 16, seed=15)
    with pytest.raises(DatasetError):
        assemble_training_set(pool, other, 0)
