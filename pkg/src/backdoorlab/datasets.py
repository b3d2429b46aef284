"""Labeled image datasets: synthesis, stratified splitting, persistence.

The desk-scale data is procedurally generated: each class is a texture
family (stripes, disks, checkers, ...) rendered in muted colors with
per-image randomness.  Muted palettes matter: saturated trigger colors
then sit outside the clean color distribution, which is the regime the
extraction pipeline targets.
"""

import colorsys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import images
from .errors import CapacityError, DatasetError
from .util import rng_for

POISON_POOL = "poison-pool"
TRAIN = "train"
TEST = "test"

REST = "rest"  # sentinel count: take whatever remains


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0,1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = TRAIN
    provenance: np.ndarray | None = None  # per-example origin tag, e.g. "clean"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N,H,W,C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError("images/labels length mismatch")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("labels outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def class_indices(self, c):
        return np.flatnonzero(self.labels == c)

    def counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx, split=None):
        prov = self.provenance[idx] if self.provenance is not None else None
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes,
                              split or self.split, prov)


# ---------------------------------------------------------------------------
# synthetic texture classes

def _muted_color(rng, value_lo=0.35, value_hi=0.6, sat_hi=0.45):
    hue = rng.uniform(0, 360)
    sat = rng.uniform(0.1, sat_hi)
    val = rng.uniform(value_lo, value_hi)
    return np.array(colorsys.hsv_to_rgb(hue / 360.0, sat, val), dtype=np.float32)


def _render_texture(kind, size, rng):
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == 0:  # horizontal stripes
        period = rng.integers(max(3, size // 6), max(4, size // 3))
        mask = ((yy + rng.integers(0, period)) // period) % 2 == 0
    elif kind == 1:  # filled disks
        mask = np.zeros((size, size), dtype=bool)
        lo, hi = size // 8, max(size // 8 + 1, size - size // 8)
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.integers(lo, hi, 2)
            r = rng.integers(max(2, size // 6), max(3, size // 3))
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
    elif kind == 2:  # checkerboard
        cell = rng.integers(max(2, size // 8), max(3, size // 4))
        mask = (((yy + rng.integers(0, cell)) // cell) +
                ((xx + rng.integers(0, cell)) // cell)) % 2 == 0
    elif kind == 3:  # diagonal stripes
        period = rng.integers(max(4, size // 5), max(5, 2 * size // 5))
        mask = ((yy + xx + rng.integers(0, period)) // period) % 2 == 0
    elif kind == 4:  # concentric rings
        cy, cx = rng.integers(size // 4, 3 * size // 4, 2)
        period = rng.integers(max(3, size // 6), max(4, size // 3))
        rad = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = ((rad + rng.integers(0, period)) // period) % 2 == 0
    else:
        raise ValueError(f"no texture family {kind}")
    return mask


def _mosaic_image(size, rng, sat_hi):
    """Family 5: grid of random color cells (no fg/bg structure)."""
    cell = int(rng.integers(2, max(3, size // 6)))
    n = size // cell + 2
    hues = rng.uniform(0, 360, (n, n))
    sats = rng.uniform(0.2, sat_hi, (n, n))
    vals = rng.uniform(0.3, 0.95, (n, n))
    colors = np.empty((n, n, 3), dtype=np.float32)
    for i in range(n):
        for j in range(n):
            colors[i, j] = colorsys.hsv_to_rgb(hues[i, j] / 360.0,
                                               sats[i, j], vals[i, j])
    rows = (np.arange(size) // cell)
    return colors[rows][:, rows]


def synth_image(class_id, size, rng, palette="muted"):
    sat_hi = 1.0 if palette == "rich" else 0.45
    if class_id == 5:
        img = _mosaic_image(size, rng, sat_hi)
    else:
        bg = _muted_color(rng, 0.3, 0.55, sat_hi)
        fg = _muted_color(rng, 0.6, 0.85, sat_hi)
        if rng.random() < 0.5:
            bg, fg = fg, bg
        mask = _render_texture(class_id, size, rng)
        img = np.where(mask[..., None], fg, bg)
    img = img + rng.normal(0.0, 0.02, img.shape)
    return images.quantize8(images.clamp01(img).astype(np.float32))


def make_synthetic_dataset(per_class, num_classes=2, image_size=32, seed=0,
                           split=TRAIN, texture_ids=None, palette="muted"):
    """Procedural dataset; deterministic per (seed, split, texture, index).

    ``texture_ids`` maps class labels to texture families. The binary
    default pairs the two stripe families (orientation task), which keeps
    small color patches dissimilar from both classes.  ``palette`` widens
    the saturation range ("rich") for pretraining-style data.
    """
    if texture_ids is None:
        texture_ids = (0, 3) if num_classes == 2 else tuple(range(num_classes))
    if len(texture_ids) != num_classes or max(texture_ids) > 5:
        raise DatasetError("need one of the 6 texture families per class")
    imgs = np.empty((per_class * num_classes, image_size, image_size, 3),
                    dtype=np.float32)
    labels = np.empty(per_class * num_classes, dtype=np.int64)
    i = 0
    for c, tex in enumerate(texture_ids):
        for k in range(per_class):
            rng = rng_for(seed, "synth", split, tex, k, *(
                () if palette == "muted" else (palette,)))
            imgs[i] = synth_image(tex, image_size, rng, palette)
            labels[i] = c
            i += 1
    return LabeledDataset(imgs, labels, num_classes, split)


# ---------------------------------------------------------------------------
# splitting

def split_dataset(source, counts, rng_seed=0):
    """Per-class stratified split into (poison-pool, train, test).

    ``counts`` is a (pool, train, test) tuple of per-class counts; at most
    one entry may be the string ``"rest"`` to absorb the remainder.
    """
    if len(counts) != 3:
        raise ValueError("counts must be (pool, train, test)")
    n_rest = sum(1 for c in counts if c == REST)
    if n_rest > 1:
        raise ValueError("at most one 'rest' count allowed")
    fixed_total = sum(int(c) for c in counts if c != REST)
    split_indices = ([], [], [])
    for c in range(source.num_classes):
        idx = source.class_indices(c)
        if fixed_total > len(idx):
            raise CapacityError(
                f"class {c} has {len(idx)} images, need {fixed_total}"
            )
        perm = idx[rng_for(rng_seed, "split", c).permutation(len(idx))]
        rest = len(idx) - fixed_total
        pos = 0
        for slot, want in enumerate(counts):
            take = rest if want == REST else int(want)
            split_indices[slot].append(perm[pos:pos + take])
            pos += take
    tags = (POISON_POOL, TRAIN, TEST)
    out = []
    for slot, tag in enumerate(tags):
        idx = np.concatenate(split_indices[slot]) if split_indices[slot] else np.array([], dtype=int)
        out.append(source.subset(np.sort(idx), split=tag))
    return tuple(out)


# ---------------------------------------------------------------------------
# persistence: PNG images + YAML manifest

def save_dataset(ds, dirpath):
    dirpath = Path(dirpath)
    (dirpath / "images").mkdir(parents=True, exist_ok=True)
    items = []
    for i in range(len(ds)):
        rel = f"images/{i:05d}.png"
        images.save_png(dirpath / rel, ds.images[i])
        item = {"path": rel, "label": int(ds.labels[i])}
        if ds.provenance is not None:
            item["provenance"] = str(ds.provenance[i])
        items.append(item)
    manifest = {
        "num_classes": ds.num_classes,
        "split": ds.split,
        "items": items,
    }
    (dirpath / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))


def load_dataset(dirpath):
    dirpath = Path(dirpath)
    manifest = yaml.safe_load((dirpath / "manifest.yaml").read_text())
    items = manifest["items"]
    if not items:
        imgs = np.zeros((0, 1, 1, 3), dtype=np.float32)
        labels = np.zeros(0, dtype=np.int64)
        return LabeledDataset(imgs, labels, manifest["num_classes"], manifest["split"])
    imgs = np.stack([images.load_png(dirpath / it["path"]) for it in items])
    labels = np.array([it["label"] for it in items], dtype=np.int64)
    prov = None
    if any("provenance" in it for it in items):
        prov = np.array([it.get("provenance", "clean") for it in items], dtype="U16")
    return LabeledDataset(imgs, labels, manifest["num_classes"], manifest["split"], prov)
