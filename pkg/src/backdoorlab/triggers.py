"""Trigger patches and the patch-application operator.

A trigger is a small (h, w, 3) patch plus a placement policy: either a
fixed top-left coordinate or a fresh uniform-random in-bounds location
per application.  Application overwrites the patch region exactly and
leaves everything else untouched.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images
from .errors import DimensionError, PlacementError
from .util import rng_for

RANDOM = "random"
FIXED = "fixed"


@dataclass(frozen=True)
class TriggerSpec:
    """Patch image + placement policy.

    ``placement`` is ``"random"`` or ``"fixed"``; for fixed placement
    ``location`` is the (row, col) of the patch's top-left corner, or
    None to center the patch in the host image.
    """

    patch: np.ndarray
    placement: str = RANDOM
    location: tuple | None = None
    name: str = "trigger"

    def __post_init__(self):
        images.assert_image(self.patch, "trigger patch")
        if self.placement not in (RANDOM, FIXED):
            raise ValueError(f"unknown placement policy {self.placement!r}")
        patch = np.ascontiguousarray(self.patch, dtype=np.float32)
        patch.setflags(write=False)
        object.__setattr__(self, "patch", patch)

    @property
    def size(self):
        return self.patch.shape[:2]

    def resolve_location(self, image_shape, rng=None):
        """Top-left (row, col) for one application on an (H, W, *) image."""
        ph, pw = self.size
        h, w = image_shape[:2]
        if ph > h or pw > w:
            raise DimensionError(
                f"patch {ph}x{pw} does not fit inside image {h}x{w}"
            )
        if self.placement == FIXED:
            if self.location is None:
                return (h - ph) // 2, (w - pw) // 2
            r, c = self.location
            if r < 0 or c < 0 or r + ph > h or c + pw > w:
                raise PlacementError(
                    f"fixed placement ({r},{c}) puts {ph}x{pw} patch outside {h}x{w} image"
                )
            return int(r), int(c)
        if rng is None:
            raise ValueError("random placement needs an rng")
        return int(rng.integers(0, h - ph + 1)), int(rng.integers(0, w - pw + 1))


def apply_trigger(image, trigger, rng_seed=0):
    """Stamp the trigger onto a copy of the image; returns (patched, (row, col))."""
    images.assert_image(image)
    rng = rng_for(rng_seed, "placement") if trigger.placement == RANDOM else None
    r, c = trigger.resolve_location(image.shape, rng)
    ph, pw = trigger.size
    out = np.array(image, copy=True)
    out[r:r + ph, c:c + pw, :] = trigger.patch
    return out, (r, c)


def apply_trigger_batch(batch, trigger, rng_seed=0):
    """Apply to every image in (N, H, W, C); fresh placement draw per image.

    Returns (patched batch, list of (row, col) placements).
    """
    out = np.array(batch, copy=True)
    ph, pw = trigger.size
    placements = []
    for i in range(out.shape[0]):
        rng = rng_for(rng_seed, "placement", i) if trigger.placement == RANDOM else None
        r, c = trigger.resolve_location(out.shape[1:], rng)
        out[i, r:r + ph, c:c + pw, :] = trigger.patch
        placements.append((r, c))
    return out, placements


def make_color_patch(size, rgb, name=None, placement=RANDOM, location=None):
    """Spatially constant patch of one RGB color."""
    h, w = size
    patch = np.empty((h, w, 3), dtype=np.float32)
    patch[:] = np.asarray(rgb, dtype=np.float32)
    return TriggerSpec(patch, placement=placement, location=location,
                       name=name or f"color-{rgb[0]:.2f}-{rgb[1]:.2f}-{rgb[2]:.2f}")


def make_random_block_patch(size, seed, cells=4, saturated=True, name=None,
                            placement=RANDOM, location=None):
    """Synthetic multi-color trigger: a cells x cells grid of random colors,
    upsampled to the requested size. Saturated colors by default so the
    patch sits far outside natural muted palettes."""
    rng = rng_for(seed, "trigger-patch")
    if saturated:
        colors = rng.uniform(0.0, 1.0, (cells, cells, 3))
        # push each cell toward full saturation: zero one channel, max another
        for i in range(cells):
            for j in range(cells):
                order = rng.permutation(3)
                colors[i, j, order[0]] = rng.uniform(0.8, 1.0)
                colors[i, j, order[1]] = rng.uniform(0.0, 0.2)
    else:
        colors = rng.uniform(0.2, 0.8, (cells, cells, 3))
    h, w = size
    rows = np.linspace(0, cells, h, endpoint=False).astype(int)
    cols = np.linspace(0, cells, w, endpoint=False).astype(int)
    patch = colors[rows][:, cols].astype(np.float32)
    patch = images.quantize8(patch)
    return TriggerSpec(patch, placement=placement, location=location,
                       name=name or f"blocks-{seed}")


def make_checker_patch(size, color_a, color_b, cell=2, name="checker",
                       placement=RANDOM, location=None):
    """Two-color checkerboard patch (used for in-palette, camouflaged triggers)."""
    h, w = size
    rr, cc = np.meshgrid(np.arange(h) // cell, np.arange(w) // cell, indexing="ij")
    mask = ((rr + cc) % 2).astype(bool)
    patch = np.where(mask[..., None], np.asarray(color_b, dtype=np.float32),
                     np.asarray(color_a, dtype=np.float32))
    patch = images.quantize8(patch.astype(np.float32))
    return TriggerSpec(patch, placement=placement, location=location, name=name)


def save_trigger(trigger, path):
    """Persist as lossless PNG + JSON sidecar. Values already on the uint8
    grid round-trip bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images.save_png(path, trigger.patch)
    sidecar = {
        "name": trigger.name,
        "placement": trigger.placement,
        "location": list(trigger.location) if trigger.location else None,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_trigger(path):
    path = Path(path)
    patch = images.load_png(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    location = tuple(meta["location"]) if meta.get("location") else None
    return TriggerSpec(patch, placement=meta["placement"], location=location,
                       name=meta["name"])
