"""Randomized and denoised smoothing: Monte-Carlo prediction and the
differentiable soft surrogate used for attack gradients.

A smoothed classifier draws Gaussian noise around the input, optionally
routes each noisy copy through a denoiser, and takes the base
classifier's plurality vote.  With a denoiser this robustifies a
pretrained model without retraining it; without one it is plain
smoothing.  The two coincide when the denoiser is the identity.

Noise is counter-style: sample ``i`` for stream ``s`` under seed ``r``
is a pure function of (r, s, i), so predictions and attack gradients are
reproducible and independent of how samples are batched.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .util import rng_for


@dataclass
class SmoothingConfig:
    sigma: float
    num_pred_samples: int = 100
    denoiser: object | None = None
    seed: int = 0
    chunk: int = 32  # MC samples evaluated per forward pass

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.num_pred_samples < 1:
            raise ConfigError("num_pred_samples must be >= 1")


@dataclass
class SmoothedPrediction:
    class_index: int
    histogram: np.ndarray
    tie_broken: bool


class SmoothedClassifier:
    def __init__(self, base, config):
        self.base = base
        self.config = config

    def _forward(self, noisy):
        if self.config.denoiser is not None:
            noisy = self.config.denoiser.denoise(noisy)
        return self.base.logits(noisy)

    def _backward_input(self, dlogits):
        dx = self.base.backward_input(dlogits, need_param_grads=False)
        if self.config.denoiser is not None:
            dx = self.config.denoiser.backward_input(dx, need_param_grads=False)
        return dx


def _noise_block(seed, stream, indices, shape, sigma, dtype=np.float32):
    """Stack of noise draws for the given sample indices (one rng each, so
    any chunking yields identical samples)."""
    out = np.empty((len(indices),) + shape, dtype=dtype)
    for row, idx in enumerate(indices):
        draw = rng_for(seed, stream, int(idx)).standard_normal(shape) * sigma
        out[row] = draw.astype(np.float32)  # same samples for every dtype
    return out


def _as_float(x):
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float32)


def smoothed_predict(sc, x, image_id=0, noise_seed=None):
    """Plurality vote over num_pred_samples noisy copies.

    Ties break toward the lowest class index; the tie is flagged in the
    returned record.  sigma == 0 degenerates to the base argmax.
    """
    cfg = sc.config
    seed = cfg.seed if noise_seed is None else noise_seed
    n = cfg.num_pred_samples
    num_classes = sc.base.num_classes
    hist = np.zeros(num_classes, dtype=np.int64)
    x = _as_float(x)
    for lo in range(0, n, cfg.chunk):
        idx = range(lo, min(lo + cfg.chunk, n))
        noise = _noise_block(seed, image_id, idx, x.shape, cfg.sigma, x.dtype)
        logits = sc._forward(x[None] + noise)
        hist += np.bincount(logits.argmax(axis=1), minlength=num_classes)
    top = int(hist.argmax())
    tie = int((hist == hist[top]).sum()) > 1
    return SmoothedPrediction(top, hist, tie)


def smoothed_predict_batch(sc, xs, image_ids=None, noise_seed=None):
    """Vectorized-over-samples prediction for a stack of images."""
    ids = image_ids if image_ids is not None else range(len(xs))
    preds = np.empty(len(xs), dtype=np.int64)
    hists = np.empty((len(xs), sc.base.num_classes), dtype=np.int64)
    for i, (x, iid) in enumerate(zip(xs, ids)):
        p = smoothed_predict(sc, x, image_id=iid, noise_seed=noise_seed)
        preds[i] = p.class_index
        hists[i] = p.histogram
    return preds, hists


def smoothed_soft_scores(sc, x, m, image_id=0, noise_seed=None, index_offset=0):
    """Average softmax over m noise draws; the attack surrogate's value."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    cfg = sc.config
    seed = cfg.seed if noise_seed is None else noise_seed
    x = _as_float(x)
    total = None
    for lo in range(0, m, cfg.chunk):
        idx = range(index_offset + lo, index_offset + min(lo + cfg.chunk, m))
        noise = _noise_block(seed, image_id, idx, x.shape, cfg.sigma, x.dtype)
        logits = sc._forward(x[None] + noise)
        p = _softmax(logits).sum(axis=0)
        total = p if total is None else total + p
    return (total / m).astype(np.float64)


def _softmax(logits):
    # float64: large-budget attacks drive per-sample probs far below the
    # float32 floor and the surrogate must stay informative there
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_ce_and_grad(sc, x, label, m, image_id=0, noise_seed=None,
                         index_offset=0):
    """Cross-entropy of the m-sample soft surrogate at ``label`` and its
    gradient w.r.t. x.  All m samples go through one batched forward and
    one batched backward; the result is identical for any chunking of the
    same sample indices.
    """
    cfg = sc.config
    seed = cfg.seed if noise_seed is None else noise_seed
    x = _as_float(x)
    indices = range(index_offset, index_offset + m)
    noise = _noise_block(seed, image_id, indices, x.shape, cfg.sigma, x.dtype)
    logits = sc._forward(x[None] + noise)
    p = _softmax(logits)                      # (m, num_classes)
    pbar = p.mean(axis=0)
    tiny = np.finfo(np.float64).tiny
    ce = float(-np.log(pbar[label] + tiny))
    # dCE/dlogits_i = (p_i[label] / (m * pbar[label])) * (p_i - e_label)
    coeff = (p[:, label] / (m * (pbar[label] + tiny)))[:, None]
    dlogits = coeff * p
    dlogits[:, label] -= coeff[:, 0]
    dx_per_sample = sc._backward_input(dlogits.astype(logits.dtype))
    return ce, pbar, dx_per_sample.sum(axis=0)
