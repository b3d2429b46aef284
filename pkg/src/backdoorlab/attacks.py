"""Adversarial example generation against smoothed classifiers.

The main attack is L2 projected gradient ascent on the Monte-Carlo soft
surrogate (fresh noise each step, a frozen held-out noise set for
best-iterate selection), with optional smoothness regularizers and a
multi-scale schedule that re-optimizes on progressively upscaled images.
A plain (non-smoothed) L2 PGD on the base classifier is also provided;
robust training and clean-label poison generation use it.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import images, smoothing
from .errors import ConfigError
from .util import content_hash, derive_seed
from .nn import softmax

# fixed 4x4 high-pass filter for the gradient-magnitude penalty; entries sum to 0
TIKHONOV_KERNEL = np.array(
    [[2, 2, -1, -1],
     [2, 2, -1, -1],
     [-1, -1, 0, 0],
     [-1, -1, 0, 0]], dtype=np.float64)


def _filter_response(delta, kernel):
    """Valid-region sliding inner product per channel: (Ho, Wo, C)."""
    kh, kw = kernel.shape
    h, w = delta.shape[:2]
    ho, wo = h - kh + 1, w - kw + 1
    if ho <= 0 or wo <= 0:
        return np.zeros((0, 0, delta.shape[2]), dtype=np.float64)
    r = np.zeros((ho, wo, delta.shape[2]), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            r += kernel[u, v] * delta[u:u + ho, v:v + wo, :]
    return r


def tikhonov_penalty(delta):
    """Squared L2 norm of the filter response, summed over channels."""
    r = _filter_response(np.asarray(delta, dtype=np.float64), TIKHONOV_KERNEL)
    return float((r ** 2).sum())


def tikhonov_grad(delta):
    delta = np.asarray(delta, dtype=np.float64)
    r = _filter_response(delta, TIKHONOV_KERNEL)
    g = np.zeros_like(delta)
    kh, kw = TIKHONOV_KERNEL.shape
    ho, wo = r.shape[:2]
    if ho == 0 or wo == 0:
        return g
    for u in range(kh):
        for v in range(kw):
            g[u:u + ho, v:v + wo, :] += 2.0 * TIKHONOV_KERNEL[u, v] * r
    return g


def tv_penalty(delta):
    """Sum of squared differences between horizontal/vertical neighbors."""
    d = np.asarray(delta, dtype=np.float64)
    dv = d[1:, :, :] - d[:-1, :, :]
    dh = d[:, 1:, :] - d[:, :-1, :]
    return float((dv ** 2).sum() + (dh ** 2).sum())


def tv_grad(delta):
    d = np.asarray(delta, dtype=np.float64)
    g = np.zeros_like(d)
    dv = d[1:, :, :] - d[:-1, :, :]
    dh = d[:, 1:, :] - d[:, :-1, :]
    g[1:, :, :] += 2 * dv
    g[:-1, :, :] -= 2 * dv
    g[:, 1:, :] += 2 * dh
    g[:, :-1, :] -= 2 * dh
    return g


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str  # "tikhonov" | "tv"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("tikhonov", "tv"):
            raise ConfigError(f"unknown regularizer {self.kind!r}")
        if self.weight < 0:
            raise ConfigError("regularizer weight must be >= 0")

    def penalty(self, delta):
        return tikhonov_penalty(delta) if self.kind == "tikhonov" else tv_penalty(delta)

    def grad(self, delta):
        return tikhonov_grad(delta) if self.kind == "tikhonov" else tv_grad(delta)


@dataclass(frozen=True)
class DeepDreamSchedule:
    iterations: int = 4
    scale_factor: float = 1.2
    steps: int = 100
    step_size: float | None = 5.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("deep-dream iterations must be >= 1")
        if self.scale_factor < 1.0:
            raise ConfigError("scale_factor must be >= 1")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = 100
    step_size: float | None = None  # default 2 * epsilon / steps
    mc_vectors: int = 16
    objective: str = "untargeted"  # "untargeted" | "targeted"
    target_class: int | None = None
    regularizer: RegularizerConfig | None = None
    deep_dream: DeepDreamSchedule | None = None
    seed: int = 0
    eval_mc: int | None = None  # frozen-noise draws for best-iterate selection
    max_dim: int = 512

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.objective == "targeted" and self.target_class is None:
            raise ConfigError("targeted objective needs target_class")
        if self.objective not in ("untargeted", "targeted"):
            raise ConfigError(f"unknown objective {self.objective!r}")

    def resolved_step_size(self):
        if self.step_size is not None:
            return self.step_size
        return 2.0 * self.epsilon / max(self.steps, 1)

    def hash(self):
        return content_hash("attack-config", repr(self))


@dataclass
class AdvExample:
    source: np.ndarray
    label: int
    adv: np.ndarray
    achieved_l2: float
    base_pred: int
    smoothed_pred: int
    config_hash: str
    objective_value: float
    image_id: object = 0
    intermediates: list | None = None


def project_l2(x, center, eps):
    """Project x onto the L2 ball of radius eps around center (flattened)."""
    delta = x.astype(np.float64) - center.astype(np.float64)
    norm = float(np.sqrt((delta ** 2).sum()))
    if norm > eps:
        delta *= 0.0 if eps == 0 else eps / norm
    return (center.astype(np.float64) + delta).astype(np.float32)


def l2_distance(a, b):
    return float(np.sqrt(((a.astype(np.float64) - b.astype(np.float64)) ** 2).sum()))


def _objective(sc, x, center, label, cfg, eval_seed):
    """Frozen-noise objective: the quantity PGD ascends."""
    m = cfg.eval_mc or cfg.mc_vectors
    pbar = smoothing.smoothed_soft_scores(sc, x, m, image_id=0,
                                          noise_seed=eval_seed)
    tiny = np.finfo(np.float64).tiny
    if cfg.objective == "untargeted":
        obj = -np.log(pbar[label] + tiny)          # maximize true-class CE
    else:
        obj = np.log(pbar[cfg.target_class] + tiny)  # maximize target prob
    if cfg.regularizer is not None:
        obj -= cfg.regularizer.weight * cfg.regularizer.penalty(x - center)
    return float(obj)


def _pgd_loop(sc, start, center, label, eps, steps, step_size, cfg,
              noise_seed, eval_seed, image_id, progress=None):
    """Core ascent loop; returns (best_x, best_objective)."""
    x = images.clamp01(project_l2(start, center, eps))
    best_x = x.copy()
    best_obj = _objective(sc, x, center, label, cfg, eval_seed)
    grad_label = label if cfg.objective == "untargeted" else cfg.target_class
    sign = 1.0 if cfg.objective == "untargeted" else -1.0
    m = cfg.mc_vectors
    for step in range(steps):
        _, _, dce = smoothing.smoothed_ce_and_grad(
            sc, x, grad_label, m, image_id=image_id, noise_seed=noise_seed,
            index_offset=step * m)
        g = sign * dce.astype(np.float64)
        if cfg.regularizer is not None:
            g -= cfg.regularizer.weight * cfg.regularizer.grad(x - center)
        gnorm = float(np.sqrt((g ** 2).sum()))
        if not np.isfinite(gnorm) or gnorm == 0.0:
            break
        x = x + (step_size / gnorm) * g.astype(np.float32)
        x = images.clamp01(project_l2(x, center, eps))
        obj = _objective(sc, x, center, label, cfg, eval_seed)
        if obj > best_obj:
            best_obj = obj
            best_x = x.copy()
        if progress is not None:
            progress(step + 1, steps)
    return best_x, best_obj


def _finalize(sc, x0, label, adv, cfg, image_id, obj, intermediates=None):
    adv32 = adv.astype(np.float32)
    base_pred = int(sc.base.logits(adv32[None]).argmax())
    sm_pred = smoothing.smoothed_predict(sc, adv32, image_id=image_id).class_index
    return AdvExample(
        source=x0, label=int(label), adv=adv32,
        achieved_l2=l2_distance(adv32, x0),
        base_pred=base_pred, smoothed_pred=int(sm_pred),
        config_hash=cfg.hash(), objective_value=obj, image_id=image_id,
        intermediates=intermediates,
    )


def smoothadv_pgd(sc, x, label, cfg, image_id=0, progress=None):
    """L2 PGD on the smoothed soft surrogate; returns the best iterate under
    the frozen-noise objective (the initial point is iterate zero, so a
    non-fooling run returns the input unchanged)."""
    if cfg.deep_dream is not None:
        raise ConfigError("cfg.deep_dream is set; call deep_dream_attack")
    x0 = np.asarray(x, dtype=np.float32)
    noise_seed = derive_seed(cfg.seed, "pgd-noise", 0)
    eval_seed = derive_seed(cfg.seed, "eval-noise", 0)
    best, obj = _pgd_loop(sc, x0, x0, label, cfg.epsilon, cfg.steps,
                          cfg.resolved_step_size(), cfg, noise_seed, eval_seed,
                          image_id, progress)
    return _finalize(sc, x0, label, best, cfg, image_id, obj)


def deep_dream_attack(sc, x, label, cfg, image_id=0, progress=None):
    """Multi-scale variant: optimize, upscale the result, re-optimize.

    Per-scale budgets are the base epsilon scaled by the diagonal ratio;
    the final image is resized back and projected so the overall L2
    contract still holds.  With one iteration at scale 1.0 this is
    exactly the single-scale attack.
    """
    sch = cfg.deep_dream
    if sch is None:
        raise ConfigError("deep_dream schedule missing from config")
    x0 = np.asarray(x, dtype=np.float32)
    h0, w0 = x0.shape[:2]
    diag0 = images.image_diagonal(h0, w0)
    xc = x0
    intermediates = []
    obj = 0.0
    for it in range(sch.iterations):
        scale = sch.scale_factor ** it
        h, w = round(h0 * scale), round(w0 * scale)
        if h > cfg.max_dim or w > cfg.max_dim:
            raise ConfigError(
                f"scaled size {h}x{w} exceeds max_dim={cfg.max_dim}")
        if (h, w) != xc.shape[:2]:
            xc = images.resize(xc, h, w)
        center = images.resize(x0, h, w) if (h, w) != (h0, w0) else x0
        eps_s = cfg.epsilon * images.image_diagonal(h, w) / diag0
        step_size = sch.step_size if sch.step_size is not None else \
            2.0 * eps_s / max(sch.steps, 1)
        noise_seed = derive_seed(cfg.seed, "pgd-noise", it)
        eval_seed = derive_seed(cfg.seed, "eval-noise", it)
        xc, obj = _pgd_loop(sc, xc, center, label, eps_s, sch.steps, step_size,
                            cfg, noise_seed, eval_seed, image_id, progress)
        intermediates.append(xc.copy())
    if xc.shape[:2] != (h0, w0):
        xc = images.resize(xc, h0, w0)
    adv = images.clamp01(project_l2(xc, x0, cfg.epsilon))
    return _finalize(sc, x0, label, adv, cfg, image_id, obj,
                     intermediates=intermediates)


@dataclass
class AttackFailure:
    image_id: object
    error: str


def grid_seed(cfg, index):
    """Per-image derived seed used by generate_adv_grid."""
    return derive_seed(cfg.seed, "grid", index)


def generate_adv_grid(sc, xs, labels, cfg, image_ids=None, progress=None):
    """Attack each image with its own derived seed; order preserved and one
    failure does not abort the batch."""
    ids = list(image_ids) if image_ids is not None else list(range(len(xs)))
    out = []
    attack = deep_dream_attack if cfg.deep_dream is not None else smoothadv_pgd
    for i, (x, label) in enumerate(zip(xs, labels)):
        item_cfg = replace(cfg, seed=grid_seed(cfg, i))
        try:
            item_progress = (lambda s, t, _i=i: progress(_i, s, t)) if progress else None
            out.append(attack(sc, x, label, item_cfg, image_id=ids[i],
                              progress=item_progress))
        except Exception as exc:  # contained per item
            out.append(AttackFailure(ids[i], f"{type(exc).__name__}: {exc}"))
    return out


def pgd_l2(model, x, labels, eps, steps, step_size=None, targeted=None, seed=0):
    """Plain batched L2 PGD against a base classifier (no smoothing).

    Maximizes true-label CE, or minimizes CE toward ``targeted`` labels
    when given.  Used by adversarial training and clean-label poison
    generation.
    """
    x0 = np.asarray(x, dtype=np.float32)
    if eps == 0 or steps == 0:
        return x0.copy()
    alpha = step_size if step_size is not None else 2.0 * eps / steps
    xt = x0.copy()
    n = x0.shape[0]
    flat = (n, -1)
    y = np.asarray(labels if targeted is None else targeted)
    sign = 1.0 if targeted is None else -1.0
    for _ in range(steps):
        logits = model.logits(xt)
        p = softmax(logits)
        dlogits = p.copy()
        dlogits[np.arange(n), y] -= 1.0
        g = sign * model.backward_input(dlogits.astype(np.float32),
                                        need_param_grads=False)
        gn = np.sqrt((g.reshape(flat) ** 2).sum(axis=1))
        gn = np.where(gn > 0, gn, 1.0).astype(np.float32)
        xt = xt + alpha * g / gn.reshape((n,) + (1,) * (x0.ndim - 1))
        delta = (xt - x0).reshape(flat)
        norms = np.sqrt((delta.astype(np.float64) ** 2).sum(axis=1))
        scale = np.minimum(1.0, eps / np.maximum(norms, 1e-12))
        xt = x0 + (delta * scale[:, None]).reshape(x0.shape).astype(np.float32)
        xt = images.clamp01(xt)
    return xt
