"""Image tensor helpers: validation, PNG round-trips, resizing, color math.

The universal currency is an (H, W, C) float32 array with values in
[0, 1].  Clamping is always explicit; nothing here silently rescales.
PNG persistence quantizes to the uint8 grid, so arrays whose values are
multiples of 1/255 round-trip bit-exactly.
"""

import io

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError


def assert_image(img, name="image"):
    img = np.asarray(img)
    if img.ndim != 3:
        raise DimensionError(f"{name} must be (H, W, C), got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1 or img.shape[2] < 1:
        raise DimensionError(f"{name} has empty dimensions: {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} values outside [0,1]: min={img.min()}, max={img.max()}")
    return img


def in_unit_range(arr, tol=0.0):
    return float(arr.min()) >= -tol and float(arr.max()) <= 1.0 + tol


def clamp01(arr):
    return np.clip(arr, 0.0, 1.0)


def to_uint8(img):
    return np.round(np.asarray(img) * 255.0).astype(np.uint8)


def from_uint8(arr):
    return arr.astype(np.float32) / 255.0


def quantize8(img):
    """Snap values to the uint8 grid (what PNG persistence will store)."""
    return from_uint8(to_uint8(img))


def save_png(path, img):
    assert_image(img)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data):
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def resize(img, height, width):
    """Bilinear resize of an (H, W, C) image; output clamped to [0,1]."""
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    zoom = (height / h, width / w, 1.0)
    out = ndimage.zoom(img.astype(np.float64), zoom, order=1, mode="nearest",
                       grid_mode=True)
    if out.shape[:2] != (height, width):  # guard against rounding in zoom
        out = out[:height, :width]
    return clamp01(out).astype(img.dtype)


def rgb_to_hsv(rgb):
    """Vectorized RGB->HSV for arrays shaped (..., 3); hue in degrees."""
    rgb = np.asarray(rgb, dtype=np.float64)
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    hue = np.zeros_like(mx)
    nz = diff > 0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    hue[rmax] = (60.0 * (g[rmax] - b[rmax]) / diff[rmax]) % 360.0
    hue[gmax] = 60.0 * (b[gmax] - r[gmax]) / diff[gmax] + 120.0
    hue[bmax] = 60.0 * (r[bmax] - g[bmax]) / diff[bmax] + 240.0
    sat = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat, mx


def hue_distance(a, b):
    """Circular distance between two hues in degrees, in [0, 180]."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def image_diagonal(height, width):
    return float(np.hypot(height, width))


def scale_epsilon(eps_reference, ref_side, height, width):
    """Rescale an L2 budget quoted at ref_side x ref_side resolution by
    the image-diagonal ratio."""
    return eps_reference * image_diagonal(height, width) / image_diagonal(ref_side, ref_side)
