"""Poison-set generation for the three backdoor attack families.

* badnet: trigger stamped on non-target images, labels flipped to the
  target class.
* htba (hidden-trigger): target-class images perturbed within an L-inf
  box so their features collide with trigger-patched source-class
  images; labels stay correct and no poison ever shows the trigger.
* clbd (clean-label): target-class images first pushed off their class
  with an L2 adversarial perturbation computed against a robust
  reference model, then stamped with the trigger; labels stay correct.

Each generator returns the poison dataset plus per-poison records of
achieved budgets, measured after the fact rather than trusted from the
optimizer's bookkeeping.
"""

from dataclasses import dataclass, field

import numpy as np

from . import images
from .datasets import LabeledDataset
from .errors import CapacityError, ConfigError, DatasetError, DependencyError
from .triggers import TriggerSpec, apply_trigger_batch
from .util import rng_for

BADNET = "badnet"
HTBA = "htba"
CLBD = "clbd"


@dataclass
class PoisonSpec:
    method: str
    trigger: TriggerSpec
    target_class: int
    num_poisons: int
    method_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in (BADNET, HTBA, CLBD):
            raise ConfigError(f"unknown poisoning method {self.method!r}")
        if self.num_poisons < 0:
            raise ConfigError("num_poisons must be >= 0")


@dataclass
class PoisonRecord:
    source_index: int
    placement: tuple | None = None
    l2_perturbation: float | None = None
    linf_perturbation: float | None = None
    feature_dist_init: float | None = None
    feature_dist_final: float | None = None


@dataclass
class PoisonSet:
    dataset: LabeledDataset
    records: list
    method: str
    seed: int


def _sample(indices, count, rng, what):
    if count > len(indices):
        raise CapacityError(f"requested {count} poisons, pool has {len(indices)} {what}")
    return indices[rng.permutation(len(indices))[:count]]


def _empty(pool, method):
    ds = LabeledDataset(np.zeros((0,) + pool.image_shape, dtype=np.float32),
                        np.zeros(0, dtype=np.int64), pool.num_classes, "poison")
    ds.provenance = np.zeros(0, dtype="U16")
    return PoisonSet(ds, [], method, 0)


def _finish(pool, imgs, labels, records, method, seed):
    ds = LabeledDataset(np.asarray(imgs, dtype=np.float32),
                        np.asarray(labels, dtype=np.int64),
                        pool.num_classes, "poison")
    ds.provenance = np.full(len(ds), method, dtype="U16")
    return PoisonSet(ds, records, method, seed)


def generate_badnet_poisons(pool, spec, rng_seed=0):
    """Trigger on non-target pool images, labels overwritten to the target."""
    if spec.method != BADNET:
        raise ConfigError("spec.method must be 'badnet'")
    if spec.num_poisons == 0:
        return _empty(pool, BADNET)
    candidates = np.flatnonzero(pool.labels != spec.target_class)
    picked = _sample(candidates, spec.num_poisons,
                     rng_for(rng_seed, "badnet-pick"), "non-target images")
    patched, placements = apply_trigger_batch(pool.images[picked], spec.trigger,
                                              rng_seed=rng_seed)
    records = [PoisonRecord(int(i), placement=pl)
               for i, pl in zip(picked, placements)]
    labels = np.full(len(picked), spec.target_class)
    return _finish(pool, patched, labels, records, BADNET, rng_seed)


def generate_htba_poisons(pool, feature_extractor, spec, rng_seed=0,
                          batch_size=64):
    """Feature-collision poisons: perturb target-class images (correct label
    kept) toward the features of trigger-patched source-class images."""
    if spec.method != HTBA:
        raise ConfigError("spec.method must be 'htba'")
    if feature_extractor is None:
        raise DependencyError("htba needs a feature extractor model")
    if spec.num_poisons == 0:
        return _empty(pool, HTBA)
    params = spec.method_params
    budget = float(params.get("linf_budget", 16 / 255))
    steps = int(params.get("steps", 300))
    step_size = float(params.get("step_size", 0.02))
    layer_tag = params.get("feature_layer", "pooled")
    source_class = params.get("source_class")
    if source_class is None:
        source_class = next(c for c in range(pool.num_classes)
                            if c != spec.target_class)

    rng = rng_for(rng_seed, "htba-pick")
    targets_idx = _sample(pool.class_indices(spec.target_class),
                          spec.num_poisons, rng, "target-class images")
    src_pool = pool.class_indices(source_class)
    if len(src_pool) == 0:
        raise CapacityError(f"no source-class-{source_class} images in pool")
    src_idx = src_pool[rng.integers(0, len(src_pool), spec.num_poisons)]

    patched, _ = apply_trigger_batch(pool.images[src_idx], spec.trigger,
                                     rng_seed=rng_seed)
    base = pool.images[targets_idx].copy()
    poisons = base.copy()
    records = []
    fdim = feature_extractor.feature_dim
    if layer_tag == "pooled":
        fsl = slice(0, fdim)
    elif layer_tag == "pooled-max":
        fsl = slice(fdim // 2, fdim)  # spatial-max half of the pooled vector
    elif layer_tag == "pooled-avg":
        fsl = slice(0, fdim // 2)
    else:
        raise ConfigError(f"unknown feature_layer tag {layer_tag!r}")
    for lo in range(0, len(poisons), batch_size):
        sl = slice(lo, min(lo + batch_size, len(poisons)))
        phi_target = feature_extractor.features(patched[sl])[:, fsl]
        p = poisons[sl]
        b = base[sl]
        d0 = np.sqrt(((feature_extractor.features(p)[:, fsl]
                       - phi_target) ** 2).sum(axis=1))
        for _ in range(steps):
            phi = feature_extractor.features(p)
            dfeat = np.zeros_like(phi)
            dfeat[:, fsl] = 2.0 * (phi[:, fsl] - phi_target)
            g = feature_extractor.backward_from_features(
                dfeat.astype(np.float32))
            gn = np.sqrt((g.reshape(len(p), -1) ** 2).sum(axis=1))
            gn = np.maximum(gn, 1e-12).reshape((-1,) + (1,) * (g.ndim - 1))
            p = p - step_size * g / gn
            p = np.clip(p, b - budget, b + budget)
            p = images.clamp01(p)
        d1 = np.sqrt(((feature_extractor.features(p)[:, fsl]
                       - phi_target) ** 2).sum(axis=1))
        keep_init = d1 > d0  # non-converging is not an error: keep best iterate
        p[keep_init] = b[keep_init]
        d1 = np.minimum(d1, d0)
        poisons[sl] = p
        for row in range(len(p)):
            records.append(PoisonRecord(
                int(targets_idx[lo + row]),
                linf_perturbation=float(np.abs(p[row] - b[row]).max()),
                feature_dist_init=float(d0[row]),
                feature_dist_final=float(d1[row]),
            ))
    labels = pool.labels[targets_idx]  # correct labels, untouched
    return _finish(pool, poisons, labels, records, HTBA, rng_seed)


def generate_clbd_poisons(pool, robust_model, spec, rng_seed=0):
    """Adversarially perturbed target-class images plus the trigger; labels
    stay correct."""
    from .attacks import pgd_l2  # deferred: attacks imports smoothing

    if spec.method != CLBD:
        raise ConfigError("spec.method must be 'clbd'")
    if robust_model is None:
        raise DependencyError("clbd needs an adversarially robust reference model")
    if spec.num_poisons == 0:
        return _empty(pool, CLBD)
    params = spec.method_params
    eps = float(params.get("l2_budget", 4.571))
    steps = int(params.get("pgd_steps", 30))
    step_size = params.get("step_size")

    picked = _sample(pool.class_indices(spec.target_class), spec.num_poisons,
                     rng_for(rng_seed, "clbd-pick"), "target-class images")
    x = pool.images[picked]
    labels = pool.labels[picked]
    adv = pgd_l2(robust_model, x, labels, eps=eps, steps=steps,
                 step_size=step_size)
    patched, placements = apply_trigger_batch(adv, spec.trigger,
                                              rng_seed=rng_seed)
    records = []
    for row, (i, pl) in enumerate(zip(picked, placements)):
        l2 = float(np.sqrt(((adv[row] - x[row]).astype(np.float64) ** 2).sum()))
        records.append(PoisonRecord(int(i), placement=pl, l2_perturbation=l2))
    return _finish(pool, patched, labels, records, CLBD, rng_seed)


def assemble_training_set(clean_train, poisons, rng_seed=0):
    """Shuffled union of clean data and poisons, per-example provenance kept."""
    pds = poisons.dataset if isinstance(poisons, PoisonSet) else poisons
    if len(pds) and pds.image_shape != clean_train.image_shape:
        raise DatasetError(
            f"image dims differ: {clean_train.image_shape} vs {pds.image_shape}")
    if pds.num_classes != clean_train.num_classes:
        raise DatasetError("class universes differ")
    imgs = np.concatenate([clean_train.images, pds.images])
    labels = np.concatenate([clean_train.labels, pds.labels])
    prov_clean = (clean_train.provenance if clean_train.provenance is not None
                  else np.full(len(clean_train), "clean", dtype="U16"))
    prov_poison = (pds.provenance if pds.provenance is not None
                   else np.full(len(pds), "poison", dtype="U16"))
    prov = np.concatenate([prov_clean, prov_poison])
    order = rng_for(rng_seed, "assemble").permutation(len(imgs))
    out = LabeledDataset(imgs[order], labels[order], clean_train.num_classes,
                         "train", prov[order])
    return out
