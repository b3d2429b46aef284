"""File-backed artifact registry.

Layout under one root:

    datasets/<id>/    models/<id>/    denoisers/<id>/
    triggers/<id>.png (+ .json sidecar)
    runs/<run-id>/    (adv grids, eval reports, manifest.jsonl)

Artifact ids are content hashes of the producing configuration, so
re-running a stage with identical inputs finds the artifact already in
place and skips the work (unless forced).  All writes go through a
temp-path-then-rename so concurrent commands on disjoint artifacts are
safe.
"""

import json
import os
import shutil
import tempfile
import time
from pathlib import Path

import numpy as np
import yaml

from . import images as image_io
from . import triggers as trigger_io
from .attacks import AdvExample
from .datasets import load_dataset, save_dataset
from .errors import ArtifactNotFoundError
from .evaluation import EvalReport
from .models import ClassifierNet, DenoiserNet

ENV_REGISTRY = "BACKDOORLAB_REGISTRY"
KINDS = ("datasets", "models", "denoisers", "triggers", "runs")


def default_root():
    return Path(os.environ.get(ENV_REGISTRY, "registry"))


class Registry:
    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_root()

    def path(self, kind, artifact_id=None):
        p = self.root / kind
        return p if artifact_id is None else p / artifact_id

    def exists(self, kind, artifact_id):
        p = self.path(kind, artifact_id)
        if kind == "triggers":
            return p.with_suffix(".png").exists()
        return p.exists()

    def _require(self, kind, artifact_id):
        if not self.exists(kind, artifact_id):
            raise ArtifactNotFoundError(f"{kind}/{artifact_id} not in registry "
                                        f"at {self.root}")

    def _atomic_dir(self, kind, artifact_id, writer):
        """writer(tmpdir) fills a temp dir that is renamed into place."""
        final = self.path(kind, artifact_id)
        if final.exists():
            return final
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=final.parent,
                                    prefix=f".{final.name}-"))
        try:
            writer(tmp)
            os.replace(tmp, final)
        except Exception:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return final

    def remove(self, kind, artifact_id):
        p = self.path(kind, artifact_id)
        if kind == "triggers":
            p.with_suffix(".png").unlink(missing_ok=True)
            p.with_suffix(".json").unlink(missing_ok=True)
        elif p.exists():
            shutil.rmtree(p)

    # -- datasets -----------------------------------------------------------
    def save_dataset(self, ds, artifact_id):
        return self._atomic_dir("datasets", artifact_id,
                                lambda tmp: save_dataset(ds, tmp))

    def load_dataset(self, artifact_id):
        self._require("datasets", artifact_id)
        return load_dataset(self.path("datasets", artifact_id))

    # -- models / denoisers --------------------------------------------------
    def save_model(self, model, artifact_id,
                   kind="models"):
        return self._atomic_dir(kind, artifact_id, model.save)

    def load_model(self, artifact_id):
        self._require("models", artifact_id)
        return ClassifierNet.load(self.path("models", artifact_id))

    def load_denoiser(self, artifact_id):
        self._require("denoisers", artifact_id)
        return DenoiserNet.load(self.path("denoisers", artifact_id))

    def list_models(self):
        p = self.path("models")
        return sorted(d.name for d in p.iterdir() if d.is_dir()) if p.exists() else []

    # -- triggers -------------------------------------------------------------
    def save_trigger(self, trigger, artifact_id, provenance=None):
        p = self.path("triggers", artifact_id).with_suffix(".png")
        if p.exists():
            return p
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(f".{artifact_id}.tmp.png")
        trigger_io.save_trigger(trigger, tmp)
        if provenance:
            side = json.loads(tmp.with_suffix(".json").read_text())
            side["provenance"] = provenance
            tmp.with_suffix(".json").write_text(json.dumps(side, indent=2))
        os.replace(tmp.with_suffix(".json"), p.with_suffix(".json"))
        os.replace(tmp, p)
        return p

    def load_trigger(self, artifact_id):
        self._require("triggers", artifact_id)
        return trigger_io.load_trigger(
            self.path("triggers", artifact_id).with_suffix(".png"))

    def trigger_provenance(self, artifact_id):
        self._require("triggers", artifact_id)
        side = self.path("triggers", artifact_id).with_suffix(".json")
        return json.loads(side.read_text()).get("provenance", {})

    def list_triggers(self):
        p = self.path("triggers")
        return sorted(f.stem for f in p.glob("*.png")) if p.exists() else []

    # -- adversarial grids -----------------------------------------------------
    def save_adv_grid(self, run_id, items, config_hash):
        def writer(tmp):
            meta = []
            for i, item in enumerate(items):
                if isinstance(item, AdvExample):
                    image_io.save_png(tmp / f"{i:03d}.png", item.adv)
                    image_io.save_png(tmp / f"{i:03d}_src.png", item.source)
                    meta.append({
                        "index": i, "image_id": str(item.image_id),
                        "label": item.label,
                        "achieved_l2": item.achieved_l2,
                        "base_pred": item.base_pred,
                        "smoothed_pred": item.smoothed_pred,
                        "objective_value": item.objective_value,
                    })
                else:
                    meta.append({"index": i, "image_id": str(item.image_id),
                                 "error": item.error})
            (tmp / "manifest.yaml").write_text(yaml.safe_dump(
                {"config_hash": config_hash, "items": meta}, sort_keys=False))
        return self._atomic_dir("runs", f"{run_id}/adv", writer)

    def load_adv_grid(self, run_id):
        """Reload as AdvExamples with PNG-quantized pixels (the persisted
        artifact is the analysis object)."""
        p = self.path("runs", f"{run_id}/adv")
        if not p.exists():
            raise ArtifactNotFoundError(f"runs/{run_id}/adv not found")
        manifest = yaml.safe_load((p / "manifest.yaml").read_text())
        out = []
        for item in manifest["items"]:
            if "error" in item:
                continue
            i = item["index"]
            out.append(AdvExample(
                source=image_io.load_png(p / f"{i:03d}_src.png"),
                label=item["label"],
                adv=image_io.load_png(p / f"{i:03d}.png"),
                achieved_l2=item["achieved_l2"],
                base_pred=item["base_pred"],
                smoothed_pred=item["smoothed_pred"],
                config_hash=manifest["config_hash"],
                objective_value=item["objective_value"],
                image_id=item["image_id"],
            ))
        return out

    def has_adv_grid(self, run_id):
        return self.path("runs", f"{run_id}/adv").exists()

    # -- eval reports ------------------------------------------------------------
    def save_report(self, run_id, name, report):
        p = self.path("runs", f"{run_id}/eval")
        p.mkdir(parents=True, exist_ok=True)
        tmp = p / f".{name}.tmp"
        tmp.write_text(json.dumps(report.to_dict(), indent=2))
        os.replace(tmp, p / f"{name}.json")

    def load_report(self, run_id, name):
        p = self.path("runs", f"{run_id}/eval/{name}.json")
        if not p.exists():
            raise ArtifactNotFoundError(f"runs/{run_id}/eval/{name} not found")
        return EvalReport.from_dict(json.loads(p.read_text()))

    def list_reports(self, run_id):
        p = self.path("runs", f"{run_id}/eval")
        return sorted(f.stem for f in p.glob("*.json")) if p.exists() else []

    # -- run manifests ---------------------------------------------------------
    def append_manifest(self, run_id, event):
        p = self.path("runs", run_id)
        p.mkdir(parents=True, exist_ok=True)
        event = dict(event)
        event.setdefault("time", time.time())
        with open(p / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(event, default=str) + "\n")

    def read_manifest(self, run_id):
        p = self.path("runs", run_id) / "manifest.jsonl"
        if not p.exists():
            return []
        return [json.loads(line) for line in p.read_text().splitlines() if line]
