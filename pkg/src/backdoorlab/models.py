"""Classifier and denoiser networks built on the layer toolkit.

The classifier is a small conv-bn-relu stack with a global-average-pool
feature layer and a linear head; the pooled features are the hook the
feature-collision poisoner optimizes against.  The denoiser is a
residual noise predictor: output = input - predicted_noise.

Both models serialize to a directory holding ``weights.npz`` plus a
``meta.json`` with the architecture tag and training provenance; the
round-trip is bit-exact.

The pooled feature vector concatenates per-channel spatial mean and max:
the max half keeps small salient patches visible, which the
feature-collision poisoner and the trigger-leakage analysis both rely
on.
"""

import json
from pathlib import Path

import numpy as np

from . import nn
from .util import rng_for

CLASSIFIER_ARCH = "cnn-avgmax-v1"
DENOISER_ARCH = "residual-denoiser-v1"


def _collect_state(layers):
    state = {}
    for i, layer in enumerate(layers):
        if isinstance(layer, nn.Conv3x3):
            state[f"l{i}.w"] = layer.w.value
            if layer.b is not None:
                state[f"l{i}.b"] = layer.b.value
        elif isinstance(layer, nn.BatchNorm):
            state[f"l{i}.gamma"] = layer.gamma.value
            state[f"l{i}.beta"] = layer.beta.value
            state[f"l{i}.rmean"] = layer.running_mean
            state[f"l{i}.rvar"] = layer.running_var
        elif isinstance(layer, nn.Linear):
            state[f"l{i}.w"] = layer.w.value
            state[f"l{i}.b"] = layer.b.value
    return state


def _load_state(layers, state):
    for i, layer in enumerate(layers):
        if isinstance(layer, nn.Conv3x3):
            layer.w.value = state[f"l{i}.w"]
            if layer.b is not None:
                layer.b.value = state[f"l{i}.b"]
        elif isinstance(layer, nn.BatchNorm):
            layer.gamma.value = state[f"l{i}.gamma"]
            layer.beta.value = state[f"l{i}.beta"]
            layer.running_mean = state[f"l{i}.rmean"]
            layer.running_var = state[f"l{i}.rvar"]
        elif isinstance(layer, nn.Linear):
            layer.w.value = state[f"l{i}.w"]
            layer.b.value = state[f"l{i}.b"]


class ClassifierNet:
    """Conv stack -> global average pool (the feature layer) -> linear head."""

    def __init__(self, num_classes, channels=(16, 32, 32, 64, 64),
                 strides=(1, 2, 1, 2, 1), in_channels=3, seed=0,
                 dtype=np.float32, meta=None):
        rng = rng_for(seed, "classifier-init")
        layers = []
        c_prev = in_channels
        for c, s in zip(channels, strides):
            layers += [
                nn.Conv3x3(c_prev, c, stride=s, rng=rng, dtype=dtype),
                nn.BatchNorm(c, dtype=dtype),
                nn.ReLU(),
            ]
            c_prev = c
        layers.append(nn.GlobalAvgMaxPool())
        self.feature_net = nn.Sequential(layers)
        self.head = nn.Linear(2 * c_prev, num_classes, rng=rng, dtype=dtype)
        self.num_classes = num_classes
        self.feature_dim = 2 * c_prev
        self.arch = {
            "tag": CLASSIFIER_ARCH,
            "channels": list(channels),
            "strides": list(strides),
            "in_channels": in_channels,
            "num_classes": num_classes,
        }
        self.init_seed = seed
        self.meta = dict(meta or {})

    # -- forward/backward -------------------------------------------------
    def logits(self, x, train=False):
        feat = self.feature_net.forward(x, train=train)
        return self.head.forward(feat, train=train)

    def backward_input(self, dlogits, need_param_grads=True):
        """Input gradient for the batch last passed through logits()."""
        dfeat = self.head.backward(dlogits, need_param_grads=need_param_grads)
        return self.feature_net.backward(dfeat, need_param_grads=need_param_grads)

    def features(self, x, train=False):
        return self.feature_net.forward(x, train=train)

    def backward_from_features(self, dfeat):
        """Input gradient of a scalar w.r.t. x given d(scalar)/d(features)."""
        return self.feature_net.backward(dfeat, need_param_grads=False)

    def parameters(self):
        return self.feature_net.parameters() + self.head.parameters()

    # -- convenience -------------------------------------------------------
    def logits_batched(self, xs, batch_size=128):
        out = np.empty((len(xs), self.num_classes), dtype=np.float32)
        for lo in range(0, len(xs), batch_size):
            out[lo:lo + batch_size] = self.logits(xs[lo:lo + batch_size])
        return out

    def predict(self, xs, batch_size=128):
        return self.logits_batched(xs, batch_size).argmax(axis=1)

    def features_batched(self, xs, batch_size=128):
        out = np.empty((len(xs), self.feature_dim), dtype=np.float32)
        for lo in range(0, len(xs), batch_size):
            out[lo:lo + batch_size] = self.features(xs[lo:lo + batch_size])
        return out

    def clone(self):
        """Independent copy (training an init model must not mutate it)."""
        twin = ClassifierNet(self.num_classes, channels=self.arch["channels"],
                             strides=self.arch["strides"],
                             in_channels=self.arch["in_channels"],
                             seed=self.init_seed, meta=self.meta)
        state = {k: v.copy() for k, v in _collect_state(self.feature_net.layers).items()}
        _load_state(twin.feature_net.layers, state)
        twin.head.w.value = self.head.w.value.copy()
        twin.head.b.value = self.head.b.value.copy()
        return twin

    def with_new_head(self, num_classes, seed=0):
        """Same feature extractor, fresh head for a different label set
        (the transfer-learning setup the head-only fine-tune mode expects)."""
        out = ClassifierNet(num_classes, channels=self.arch["channels"],
                            strides=self.arch["strides"],
                            in_channels=self.arch["in_channels"],
                            seed=self.init_seed)
        state = {k: v.copy() for k, v in _collect_state(self.feature_net.layers).items()}
        _load_state(out.feature_net.layers, state)
        out.head = nn.Linear(self.feature_dim, num_classes,
                             rng=rng_for(seed, "new-head"),
                             dtype=self.head.w.value.dtype)
        out.meta["feature_source"] = self.meta.get("dataset_fingerprint")
        return out

    # -- persistence ---------------------------------------------------------
    def save(self, dirpath):
        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        state = _collect_state(self.feature_net.layers)
        state.update({f"head.{k}": v for k, v in
                      {"w": self.head.w.value, "b": self.head.b.value}.items()})
        np.savez(dirpath / "weights.npz", **state)
        meta = {"arch": self.arch, "init_seed": self.init_seed, "meta": self.meta}
        (dirpath / "meta.json").write_text(json.dumps(meta, indent=2, default=str))

    @classmethod
    def load(cls, dirpath):
        dirpath = Path(dirpath)
        meta = json.loads((dirpath / "meta.json").read_text())
        arch = meta["arch"]
        model = cls(arch["num_classes"], channels=arch["channels"],
                    strides=arch["strides"], in_channels=arch["in_channels"],
                    seed=meta.get("init_seed", 0), meta=meta.get("meta"))
        with np.load(dirpath / "weights.npz") as state:
            _load_state(model.feature_net.layers, state)
            model.head.w.value = state["head.w"]
            model.head.b.value = state["head.b"]
        return model


class DenoiserNet:
    """Residual denoiser: predicts the noise and subtracts it from the input."""

    def __init__(self, channels=32, depth=5, in_channels=3, seed=0,
                 dtype=np.float32, sigma_train=None, meta=None):
        rng = rng_for(seed, "denoiser-init")
        layers = [nn.Conv3x3(in_channels, channels, rng=rng, dtype=dtype), nn.ReLU()]
        for _ in range(depth - 2):
            layers += [
                nn.Conv3x3(channels, channels, rng=rng, dtype=dtype),
                nn.BatchNorm(channels, dtype=dtype),
                nn.ReLU(),
            ]
        head = nn.Conv3x3(channels, in_channels, rng=rng, dtype=dtype)
        head.w.value *= 0.01  # near-identity start: predicted noise ~ 0
        layers.append(head)
        self.net = nn.Sequential(layers)
        self.arch = {
            "tag": DENOISER_ARCH,
            "channels": channels,
            "depth": depth,
            "in_channels": in_channels,
        }
        self.init_seed = seed
        self.sigma_train = sigma_train
        self.meta = dict(meta or {})

    def denoise(self, y, train=False):
        return y - self.net.forward(y, train=train)

    def backward_input(self, dout, need_param_grads=True):
        # output = y - r(y), so the residual net sees -dout upstream
        return dout + self.net.backward(-dout, need_param_grads=need_param_grads)

    def parameters(self):
        return self.net.parameters()

    def save(self, dirpath):
        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        np.savez(dirpath / "weights.npz", **_collect_state(self.net.layers))
        meta = {"arch": self.arch, "init_seed": self.init_seed,
                "sigma_train": self.sigma_train, "meta": self.meta}
        (dirpath / "meta.json").write_text(json.dumps(meta, indent=2, default=str))

    @classmethod
    def load(cls, dirpath):
        dirpath = Path(dirpath)
        meta = json.loads((dirpath / "meta.json").read_text())
        arch = meta["arch"]
        model = cls(channels=arch["channels"], depth=arch["depth"],
                    in_channels=arch["in_channels"], seed=meta.get("init_seed", 0),
                    sigma_train=meta.get("sigma_train"), meta=meta.get("meta"))
        with np.load(dirpath / "weights.npz") as state:
            _load_state(model.net.layers, state)
        return model


class IdentityDenoiser:
    """Pass-through stand-in; plain smoothing and denoised smoothing coincide
    when this is the denoiser."""

    sigma_train = None

    def denoise(self, y, train=False):
        return y

    def backward_input(self, dout, need_param_grads=True):
        return dout
