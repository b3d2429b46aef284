"""JSON-over-HTTP backend for the interactive analysis tool.

All state lives in the artifact registry plus an in-process job table; a
single worker thread drains the queue so at most one attack runs at a
time.  Images travel as base64 PNG so the browser's pixel picker sees
exactly the stored bytes.  Ground-truth poison labels stay hidden unless
the reveal flag is passed (blinded-study mode).
"""

import base64
import json
import queue
import threading
import time
import uuid
from dataclasses import asdict

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pathlib import Path
from pydantic import BaseModel, Field

import numpy as np

from . import attacks, extraction, images, smoothing, training
from .errors import ArtifactNotFoundError, BackdoorLabError
from .evaluation import evaluate_asr
from .experiments import DESK, DeskConfig, Stages
from .registry import Registry
from .triggers import FIXED, RANDOM, TriggerSpec
from .util import content_hash, derive_seed


def _b64png(img):
    return base64.b64encode(images.png_bytes(img)).decode()


class AttackRequest(BaseModel):
    model_id: str
    sigma: float | None = None
    epsilon: float | None = None
    steps: int | None = Field(default=None, ge=0, le=2000)
    mc: int | None = Field(default=None, ge=1, le=128)
    mode: str = "untargeted"
    target_class: int | None = None
    regularizer: str | None = None
    regularizer_weight: float = 0.05
    num_images: int | None = Field(default=None, ge=1, le=50)
    seed: int = 0


class TriggerSource(BaseModel):
    attack_job: str
    image_index: int


class TriggerRequest(BaseModel):
    source: TriggerSource
    kind: str
    pixel: tuple[int, int] | None = None
    bbox: tuple[int, int, int, int] | None = None
    size: tuple[int, int] | None = None


class EvalRequest(BaseModel):
    model_id: str
    trigger_id: str
    target_class: int
    placement: str = "random"
    location: tuple[int, int] | None = None
    seed: int = 0


class VerdictRequest(BaseModel):
    model_id: str
    verdict: str
    session: str = "default"
    overwrite: bool = False


class JobTable:
    def __init__(self):
        self.lock = threading.Lock()
        self.jobs = {}
        self.queue = queue.Queue()
        self.worker = None

    def submit(self, kind, fn):
        job_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.jobs[job_id] = {"job_id": job_id, "kind": kind,
                                 "status": "queued", "progress": 0.0,
                                 "result": None, "error": None,
                                 "created": time.time()}
        self.queue.put((job_id, fn))
        self._ensure_worker()
        return job_id

    def _ensure_worker(self):
        with self.lock:
            if self.worker is None or not self.worker.is_alive():
                self.worker = threading.Thread(target=self._run, daemon=True)
                self.worker.start()

    def _run(self):
        while True:
            try:
                job_id, fn = self.queue.get(timeout=5.0)
            except queue.Empty:
                return
            self.update(job_id, status="running")
            try:
                result = fn(lambda frac: self.update(job_id,
                                                     progress=float(frac)))
                self.update(job_id, status="done", progress=1.0,
                            result=result)
            except Exception as exc:
                self.update(job_id, status="failed",
                            error=f"{type(exc).__name__}: {exc}")

    def update(self, job_id, **kw):
        with self.lock:
            self.jobs[job_id].update(kw)

    def get(self, job_id):
        with self.lock:
            job = self.jobs.get(job_id)
            return dict(job) if job else None


def _model_stages(reg, model):
    meta = model.meta
    desk = DeskConfig(**meta["desk"]) if meta.get("desk") else DESK
    return Stages(reg, desk, seed=meta.get("pipeline_seed", 0)), desk


def create_app(reg: Registry, frontend_dir=None):
    app = FastAPI(title="backdoorlab service", version="1")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    jobs = JobTable()
    verdict_path = reg.root / "verdicts.jsonl"
    vlock = threading.Lock()

    def load_model_or_404(model_id):
        try:
            return reg.load_model(model_id)
        except ArtifactNotFoundError:
            raise HTTPException(404, f"model {model_id} not found")

    @app.get("/api/v1/meta")
    def meta():
        return {
            "trigger_size": DESK.trigger_size,
            "candidate_size": DESK.candidate_size,
            "sigma_default": DESK.sigma_analysis,
            "sigma_reference": DESK.sigma_reference,
            "attack_defaults": {"steps": DESK.attack_steps,
                                "mc": DESK.attack_mc},
            "epsilon_presets": [
                {"label": f"eps={int(e)} (reference scale)",
                 "value": DESK.desk_eps(e)}
                for e in DESK.eps_grid_reference],
        }

    @app.get("/api/v1/models")
    def list_models(reveal: bool = False):
        out = []
        for mid in reg.list_models():
            model = reg.load_model(mid)
            entry = {"id": mid, "num_classes": model.num_classes,
                     "val_acc": model.meta.get("val_acc"),
                     "image_size": (model.meta.get("desk") or {}).get(
                         "image_size", DESK.image_size)}
            if reveal:
                entry["poisoning"] = model.meta.get("poisoning", "unknown")
                entry["trigger_id"] = model.meta.get("trigger_id")
            out.append(entry)
        return {"models": out}

    @app.post("/api/v1/attacks")
    def post_attack(req: AttackRequest):
        model = load_model_or_404(req.model_id)
        if req.mode not in ("untargeted", "targeted"):
            raise HTTPException(400, "mode must be untargeted|targeted")
        if req.mode == "targeted" and req.target_class is None:
            raise HTTPException(400, "targeted mode needs target_class")
        if req.regularizer not in (None, "tikhonov", "tv"):
            raise HTTPException(400, "regularizer must be tikhonov|tv")
        st, desk = _model_stages(reg, model)
        task = model.meta.get("task", "binary")

        def work(progress):
            _, (_, train_ds, test_ds) = st.dataset(task)
            den_id, den = st.denoiser(
                {"train": model.meta["dataset_ids"]["train"]}, train_ds,
                req.sigma if req.sigma is not None else desk.sigma_analysis,
                "analysis" if req.sigma in (None, desk.sigma_analysis)
                else f"sigma{req.sigma:g}")
            sc = st.smoothed(model, den,
                             req.sigma if req.sigma is not None
                             else desk.sigma_analysis)
            reg_cfg = None
            if req.regularizer:
                reg_cfg = attacks.RegularizerConfig(req.regularizer,
                                                    req.regularizer_weight)
            acfg = attacks.AttackConfig(
                epsilon=req.epsilon if req.epsilon is not None
                else desk.attack_eps,
                steps=req.steps if req.steps is not None else desk.attack_steps,
                mc_vectors=req.mc if req.mc is not None else desk.attack_mc,
                objective=req.mode, target_class=req.target_class,
                regularizer=reg_cfg,
                seed=derive_seed(req.seed, "svc-attack", req.model_id))
            n = req.num_images or desk.num_adv_examples
            run_id = f"svc-{content_hash(req.model_id, acfg.hash(), n)}"
            total_steps = max(1, n * max(acfg.steps, 1))

            def item_progress(i, s, t):
                progress((i * max(acfg.steps, 1) + s) / total_steps)

            if not reg.has_adv_grid(run_id):
                idx = test_ds.class_indices(0)[:n]
                items = attacks.generate_adv_grid(
                    sc, test_ds.images[idx], test_ds.labels[idx], acfg,
                    image_ids=[int(i) for i in idx], progress=item_progress)
                reg.save_adv_grid(run_id, items, acfg.hash())
            advs = reg.load_adv_grid(run_id)
            return {"run_id": run_id, "model_id": req.model_id,
                    "items": [{
                        "index": i, "label": a.label,
                        "base_pred": a.base_pred,
                        "smoothed_pred": a.smoothed_pred,
                        "achieved_l2": a.achieved_l2,
                        "image_png": _b64png(a.adv),
                        "source_png": _b64png(a.source),
                    } for i, a in enumerate(advs)]}

        return {"job_id": jobs.submit("attack", work)}

    @app.get("/api/v1/attacks/{job_id}")
    def get_attack(job_id: str):
        job = jobs.get(job_id)
        if job is None or job["kind"] != "attack":
            raise HTTPException(404, f"attack job {job_id} not found")
        return job

    @app.post("/api/v1/triggers")
    def post_trigger(req: TriggerRequest):
        job = jobs.get(req.source.attack_job)
        if job is None or job["status"] != "done":
            raise HTTPException(404, "attack job not found or not done")
        advs = reg.load_adv_grid(job["result"]["run_id"])
        if not (0 <= req.source.image_index < len(advs)):
            raise HTTPException(400, "image_index out of range")
        adv = advs[req.source.image_index]
        size = tuple(req.size) if req.size else (DESK.candidate_size,
                                                 DESK.candidate_size)
        try:
            if req.kind == "color":
                if req.pixel is None:
                    raise HTTPException(400, "color trigger needs pixel")
                cand = extraction.extract_color_patch(
                    adv, tuple(req.pixel), size, creator="human-via-ui")
            elif req.kind == "crop":
                if req.bbox is None:
                    raise HTTPException(400, "crop trigger needs bbox")
                cand = extraction.extract_crop_patch(
                    adv, tuple(req.bbox), creator="human-via-ui")
            else:
                raise HTTPException(400, "kind must be color|crop")
        except BackdoorLabError as exc:
            raise HTTPException(400, str(exc))
        tid = (f"ui-{cand.kind}-"
               f"{content_hash(cand.trigger.patch, req.source.attack_job)}")
        reg.save_trigger(cand.trigger, tid, provenance={
            "kind": cand.kind, "creator": cand.creator,
            "attack_job": req.source.attack_job,
            **{k: list(v) if isinstance(v, tuple) else v
               for k, v in cand.provenance.items()}})
        return {"trigger_id": tid, "kind": cand.kind,
                "png": _b64png(cand.trigger.patch)}

    @app.get("/api/v1/triggers/{trigger_id}")
    def get_trigger(trigger_id: str):
        try:
            trig = reg.load_trigger(trigger_id)
        except ArtifactNotFoundError:
            raise HTTPException(404, f"trigger {trigger_id} not found")
        return {"trigger_id": trigger_id, "png": _b64png(trig.patch),
                "placement": trig.placement, "name": trig.name,
                "provenance": reg.trigger_provenance(trigger_id)}

    @app.post("/api/v1/evaluations")
    def post_eval(req: EvalRequest):
        model = load_model_or_404(req.model_id)
        try:
            trig = reg.load_trigger(req.trigger_id)
        except ArtifactNotFoundError:
            raise HTTPException(404, f"trigger {req.trigger_id} not found")
        if not (0 <= req.target_class < model.num_classes):
            raise HTTPException(400, "target_class out of range")
        if req.placement not in (RANDOM, FIXED):
            raise HTTPException(400, "placement must be random|fixed")
        st, desk = _model_stages(reg, model)
        task = model.meta.get("task", "binary")

        def work(progress):
            _, (_, _, test_ds) = st.dataset(task)
            trig2 = TriggerSpec(trig.patch, req.placement,
                                tuple(req.location) if req.location else None,
                                name=trig.name)
            report = evaluate_asr(model, test_ds, trig2, req.target_class,
                                  seed=derive_seed(req.seed, "svc-eval"),
                                  model_id=req.model_id,
                                  trigger_id=req.trigger_id)
            run_id = f"svc-eval-{content_hash(req.model_id, req.trigger_id, req.seed)}"
            reg.save_report(run_id, "report", report)
            return report.to_dict()

        return {"job_id": jobs.submit("eval", work)}

    @app.get("/api/v1/evaluations/{job_id}")
    def get_eval(job_id: str):
        job = jobs.get(job_id)
        if job is None or job["kind"] != "eval":
            raise HTTPException(404, f"eval job {job_id} not found")
        return job

    def _read_verdicts():
        if not verdict_path.exists():
            return {}
        table = {}
        for line in verdict_path.read_text().splitlines():
            if line.strip():
                v = json.loads(line)
                table[(v["session"], v["model_id"])] = v
        return table

    @app.post("/api/v1/verdicts")
    def post_verdict(req: VerdictRequest):
        if req.verdict not in ("poisoned", "clean"):
            raise HTTPException(400, "verdict must be poisoned|clean")
        load_model_or_404(req.model_id)
        with vlock:
            table = _read_verdicts()
            if (req.session, req.model_id) in table and not req.overwrite:
                raise HTTPException(409, "verdict exists; pass overwrite")
            entry = {"session": req.session, "model_id": req.model_id,
                     "verdict": req.verdict, "time": time.time()}
            with open(verdict_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
        return entry

    @app.get("/api/v1/verdicts")
    def get_verdicts(session: str = "default", reveal: bool = False):
        with vlock:
            table = _read_verdicts()
        mine = [v for (s, _), v in table.items() if s == session]
        out = {"session": session, "verdicts": mine}
        if reveal:
            correct = 0
            for v in mine:
                try:
                    model = reg.load_model(v["model_id"])
                except ArtifactNotFoundError:
                    continue
                truth = ("clean" if model.meta.get("poisoning") == "clean"
                         else "poisoned")
                v["ground_truth"] = truth
                correct += int(truth == v["verdict"])
            out["session_accuracy"] = (correct / len(mine)) if mine else None
        return out

    if frontend_dir and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="ui")
    return app


def build_demo_registry(reg, num_models=4, seed=0, quiet=True):
    """Small blinded registry: half poisoned, half clean, neutral ids."""
    desk = DeskConfig(image_size=24, pool_per_class=60, train_per_class=100,
                      test_per_class=50, epochs=6, denoiser_epochs=6,
                      num_poisons=50, trigger_size=4, candidate_size=8,
                      attack_steps=30, attack_mc=8, num_adv_examples=4,
                      pred_samples=20)
    log = None if quiet else (lambda m: print(m))
    out = []
    for i in range(num_models):
        st = Stages(reg, desk, seed=derive_seed(seed, "demo", i), log=log)
        ids, (pool, train_ds, test_ds) = st.dataset("binary")
        poisoned = i % 2 == 0
        if poisoned:
            trig_id, trig = st.trigger("blocks")
            _, model, _ = st.poisoned_model("badnet", ids, pool, train_ds,
                                            test_ds, trig_id, trig)
        else:
            _, model = st.clean_model(ids, train_ds, test_ds)
        alias = f"subject-{i:02d}"
        reg.remove("models", alias)
        reg.save_model(model, alias)
        out.append({"id": alias, "poisoned": poisoned})
        # pre-train the analysis denoiser so attack jobs start fast
        st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    for mid in reg.list_models():
        if not mid.startswith("subject-"):
            reg.remove("models", mid)  # method-named ids would unblind the study
    return {"models": out, "registry": str(reg.root)}
