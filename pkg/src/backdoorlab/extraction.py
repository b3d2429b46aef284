"""Constructing alternative triggers from adversarial examples.

Two manual strategies (mirrored by the interactive tool) plus a headless
proposer used by the automated pipeline:

* color: pick a representative pixel, fill a patch with that exact RGB;
* crop: cut a sub-image verbatim (no resampling);
* auto-propose: rank saturated off-palette colors and high-energy
  windows of the perturbation.  It is a convenience feeder for the
  evaluator, never a correctness claim.
"""

from dataclasses import dataclass, field

import numpy as np

from . import images
from .errors import CoordinateError
from .triggers import RANDOM, TriggerSpec, make_color_patch


@dataclass
class TriggerCandidate:
    kind: str  # "color" | "crop"
    trigger: TriggerSpec
    provenance: dict = field(default_factory=dict)
    creator: str = "automated"  # "automated" | "human-via-ui"


def extract_color_patch(adv, pixel, size, placement=RANDOM, location=None,
                        creator="automated"):
    """Uniform patch of the exact RGB found at pixel (x, y) = (col, row)."""
    img = adv.adv
    x, y = pixel
    h, w = img.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise CoordinateError(f"pixel ({x},{y}) outside {w}x{h} image")
    color = img[y, x].copy()
    trig = TriggerSpec(np.broadcast_to(color, (size[0], size[1], 3)).copy(),
                       placement=placement, location=location,
                       name=f"color@{x},{y}")
    return TriggerCandidate("color", trig,
                            {"source_image_id": adv.image_id,
                             "pixel": (int(x), int(y))}, creator)


def extract_crop_patch(adv, bbox, placement=RANDOM, location=None,
                       creator="automated"):
    """Verbatim sub-image at bbox (x, y, h, w); x,y is the top-left corner."""
    img = adv.adv
    x, y, h, w = bbox
    H, W = img.shape[:2]
    if x < 0 or y < 0 or h < 1 or w < 1 or y + h > H or x + w > W:
        raise CoordinateError(f"bbox {bbox} outside {W}x{H} image")
    trig = TriggerSpec(img[y:y + h, x:x + w].copy(), placement=placement,
                       location=location, name=f"crop@{x},{y},{h},{w}")
    return TriggerCandidate("crop", trig,
                            {"source_image_id": adv.image_id,
                             "bbox": (int(x), int(y), int(h), int(w))}, creator)


def _window_sums(energy, ph, pw):
    ii = np.pad(energy.cumsum(axis=0).cumsum(axis=1), ((1, 0), (1, 0)))
    return ii[ph:, pw:] - ii[:-ph, pw:] - ii[ph:, :-pw] + ii[:-ph, :-pw]


def _top_windows(energy, ph, pw, k, floor):
    """Greedy non-overlapping-ish maxima of window energy."""
    win = _window_sums(energy, ph, pw).copy()
    out = []
    while len(out) < k:
        r, c = np.unravel_index(win.argmax(), win.shape)
        if win[r, c] <= floor:
            break
        out.append((int(r), int(c), float(win[r, c])))
        win[max(0, r - ph // 2):r + ph // 2 + 1,
            max(0, c - pw // 2):c + pw // 2 + 1] = -np.inf
    return out


def _palette_bins(img, levels=16):
    q = np.minimum((img.reshape(-1, 3) * levels).astype(int), levels - 1)
    flat = q[:, 0] * levels * levels + q[:, 1] * levels + q[:, 2]
    centers = (np.stack(np.unravel_index(np.unique(flat),
                                         (levels, levels, levels)), axis=1)
               + 0.5) / levels
    return centers


def auto_propose_candidates(adv_set, k, patch_size=None, crop_size=None,
                            placement=RANDOM, location=None,
                            energy_floor=1e-6, per_image_windows=3):
    """Propose up to k color and k crop candidates from a set of
    adversarial examples.

    Colors come from high-energy, saturated pixels whose RGB sits far
    from the source image's palette; crops from maximal perturbation-
    energy windows.  ``crop_size`` defaults to ``patch_size``; cutting
    crops wider than color patches compensates for the background mixed
    into them.  Images whose total perturbation energy is at or below
    the floor contribute nothing.
    """
    colors = []  # (score, adv, pixel(x,y))
    crops = []   # (score, adv, bbox)
    for adv in adv_set:
        h, w = adv.adv.shape[:2]
        ph, pw = patch_size if patch_size is not None else (min(30, h), min(30, w))
        ch_, cw_ = crop_size if crop_size is not None else (ph, pw)
        ch_, cw_ = min(ch_, h), min(cw_, w)
        delta = adv.adv.astype(np.float64) - adv.source.astype(np.float64)
        energy = (delta ** 2).sum(axis=2)
        if energy.sum() <= energy_floor:
            continue
        # crop proposals: saturated pattern regions, not just any disturbance
        _, sat_map, _ = images.rgb_to_hsv(adv.adv)
        weighted = energy * (0.2 + sat_map)
        for r, c, score in _top_windows(weighted, ch_, cw_, per_image_windows,
                                        energy_floor):
            crops.append((score, adv, (c, r, ch_, cw_)))
        # color proposals
        flat_e = energy.reshape(-1)
        hi = flat_e >= np.quantile(flat_e, 0.85)
        pix = adv.adv.reshape(-1, 3)
        _, sat, _ = images.rgb_to_hsv(pix)
        palette = _palette_bins(adv.source)
        dist = np.sqrt(((pix[hi, None, :] - palette[None, :, :]) ** 2)
                       .sum(axis=2)).min(axis=1)
        score = flat_e[hi] * (0.2 + sat[hi]) * (0.15 + dist)
        idx_hi = np.flatnonzero(hi)
        order = np.argsort(score)[::-1]
        seen = []
        for j in order[:64]:
            color = pix[idx_hi[j]]
            if any(np.abs(color - s).max() < 0.12 for s in seen):
                continue  # near-duplicate hue within this image
            seen.append(color)
            py, px = divmod(int(idx_hi[j]), w)
            colors.append((float(score[j]), adv, (px, py)))
            if len(seen) >= per_image_windows:
                break

    out = []
    for score, adv, bbox in sorted(crops, key=lambda t: -t[0])[:k]:
        x, y, bh, bw = bbox
        cand = extract_crop_patch(adv, (x, y, bh, bw), placement=placement,
                                  location=location)
        cand.provenance["score"] = score
        out.append(cand)
    picked_colors = []
    for score, adv, pixel in sorted(colors, key=lambda t: -t[0]):
        if len(picked_colors) >= k:
            break
        color = adv.adv[pixel[1], pixel[0]]
        if any(np.abs(color - c).max() < 0.08 for c in picked_colors):
            continue  # global near-duplicate
        picked_colors.append(color.copy())
        ph, pw = patch_size if patch_size is not None else (
            min(30, adv.adv.shape[0]), min(30, adv.adv.shape[1]))
        cand = extract_color_patch(adv, pixel, (ph, pw), placement=placement,
                                   location=location)
        cand.provenance["score"] = score
        out.append(cand)
    return out
