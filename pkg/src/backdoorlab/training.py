"""Training loops: classifiers (scratch / head-only), denoisers, robust models.

The learning-rate schedule is step decay: lr * decay^(epoch // period).
All shuffling and noise comes from seeds derived off the config seed, so
runs are reproducible up to float summation order.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .errors import ConfigError, DatasetError, TrainingError
from .models import ClassifierNet, DenoiserNet
from .util import content_hash, derive_seed, rng_for


@dataclass
class TrainConfig:
    epochs: int = 12
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    optimizer: str = "sgd-momentum"
    seed: int = 0
    finetune_head: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.optimizer != "sgd-momentum":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch):
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


def evaluate_accuracy(model, ds, batch_size=128):
    if len(ds) == 0:
        return float("nan")
    preds = model.predict(ds.images, batch_size=batch_size)
    return float((preds == ds.labels).mean())


def _dataset_fingerprint(ds):
    return content_hash(ds.images, ds.labels)


def _check_finite(loss, where):
    if not np.isfinite(loss):
        raise TrainingError(f"loss became {loss} at {where}; try a lower lr")


def train_classifier(train_set, config, val_set=None, init=None, arch=None):
    """Train (or fine-tune) a classifier; returns a model with accuracy
    figures and provenance recorded in ``meta``."""
    if len(train_set) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if init is not None:
        model = init.clone()
    else:
        model = ClassifierNet(train_set.num_classes,
                              seed=derive_seed(config.seed, "init"),
                              **(arch or {}))
    if config.finetune_head:
        _train_head_only(model, train_set, config)
    else:
        _train_full(model, train_set, config)
    model.meta.update({
        "train_config": asdict(config),
        "dataset_fingerprint": _dataset_fingerprint(train_set),
        "train_acc": evaluate_accuracy(model, train_set),
        "val_acc": evaluate_accuracy(model, val_set) if val_set is not None else None,
        "mode": "finetune-head" if config.finetune_head else "scratch",
    })
    return model


def _train_full(model, train_set, config):
    opt = nn.SGD(model.parameters(), lr=config.lr, momentum=config.momentum,
                 weight_decay=config.weight_decay)
    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            logits = model.logits(train_set.images[idx], train=True)
            loss, dlogits = nn.cross_entropy(logits, train_set.labels[idx])
            _check_finite(loss, f"epoch {epoch}, batch {lo // config.batch_size}")
            model.backward_input(dlogits, need_param_grads=True)
            opt.step()


def _train_head_only(model, train_set, config):
    # features are frozen: precompute once in eval mode, train the head on them
    feats = model.features_batched(train_set.images)
    opt = nn.SGD(model.head.parameters(), lr=config.lr, momentum=config.momentum,
                 weight_decay=config.weight_decay)
    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            logits = model.head.forward(feats[idx])
            loss, dlogits = nn.cross_entropy(logits, train_set.labels[idx])
            _check_finite(loss, f"epoch {epoch} (head)")
            model.head.backward(dlogits)
            opt.step()


def train_denoiser(image_set, sigma, config, holdout_fraction=0.1):
    """MSE denoiser for Gaussian corruption at the given sigma."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if len(image_set) == 0:
        raise DatasetError("cannot train on an empty dataset")
    n_hold = max(1, int(len(image_set) * holdout_fraction))
    hold = image_set.images[-n_hold:]
    imgs = image_set.images[:-n_hold] if len(image_set) > n_hold else image_set.images
    model = DenoiserNet(seed=derive_seed(config.seed, "denoiser-init"),
                        sigma_train=sigma)
    opt = nn.SGD(model.parameters(), lr=config.lr, momentum=config.momentum,
                 weight_decay=0.0, clip_norm=5.0)
    n = len(imgs)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            x = imgs[order[lo:lo + config.batch_size]]
            noise = rng_for(config.seed, "noise", epoch, b).normal(
                0.0, sigma, x.shape).astype(np.float32)
            out = model.denoise(x + noise, train=True)
            diff = out - x
            loss = float((diff ** 2).mean())
            _check_finite(loss, f"denoiser epoch {epoch}, batch {b}")
            model.backward_input(2.0 * diff / diff.size, need_param_grads=True)
            opt.step()
    hn = rng_for(config.seed, "holdout-noise").normal(0.0, sigma, hold.shape).astype(np.float32)
    noisy = hold + hn
    mse_denoised = float(((model.denoise(noisy) - hold) ** 2).mean())
    mse_noisy = float(((noisy - hold) ** 2).mean())
    model.meta.update({
        "train_config": asdict(config),
        "sigma": sigma,
        "dataset_fingerprint": _dataset_fingerprint(image_set),
        "holdout_mse_denoised": mse_denoised,
        "holdout_mse_noisy": mse_noisy,
    })
    return model


def train_robust_classifier(train_set, pgd_params, config, val_set=None,
                            arch=None):
    """Adversarial training with an L2 PGD inner loop.

    ``pgd_params``: dict with eps, steps and optionally step_size /
    warmup_epochs. With steps == 0 this reduces to standard training.
    The first epoch(s) train clean so batchnorm statistics settle before
    the inner attack starts using them.
    """
    from .attacks import pgd_l2  # deferred: attacks pulls in smoothing

    if len(train_set) == 0:
        raise DatasetError("cannot train on an empty dataset")
    eps = float(pgd_params.get("eps", 1.0))
    steps = int(pgd_params.get("steps", 3))
    step_size = pgd_params.get("step_size")
    warmup = int(pgd_params.get("warmup_epochs", 1 if steps > 0 else 0))
    model = ClassifierNet(train_set.num_classes,
                          seed=derive_seed(config.seed, "init"),
                          **(arch or {}))
    opt = nn.SGD(model.parameters(), lr=config.lr, momentum=config.momentum,
                 weight_decay=config.weight_decay)
    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            if steps > 0 and eps > 0 and epoch >= warmup:
                x = pgd_l2(model, x, y, eps=eps, steps=steps, step_size=step_size)
            logits = model.logits(x, train=True)
            loss, dlogits = nn.cross_entropy(logits, y)
            _check_finite(loss, f"robust epoch {epoch}")
            model.backward_input(dlogits, need_param_grads=True)
            opt.step()
    eval_set = val_set if val_set is not None else train_set.subset(
        np.arange(min(200, n)))
    adv = pgd_l2(model, eval_set.images, eval_set.labels, eps=eps,
                 steps=max(steps, 5), step_size=step_size)
    robust_acc = float((model.predict(adv) == eval_set.labels).mean())
    model.meta.update({
        "train_config": asdict(config),
        "pgd_params": {"eps": eps, "steps": steps, "step_size": step_size},
        "dataset_fingerprint": _dataset_fingerprint(train_set),
        "train_acc": evaluate_accuracy(model, train_set),
        "val_acc": evaluate_accuracy(model, val_set) if val_set is not None else None,
        "robust_acc_at_train_eps": robust_acc,
        "mode": "robust",
    })
    return model
