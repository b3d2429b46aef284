"""Named end-to-end experiments over the artifact registry.

Every stage is cached by a content-hash id derived from its inputs, so
re-running an experiment reuses finished artifacts unless forced.  The
desk operating point mirrors the reference 224px setup scaled by the
image-diagonal ratio (32/224): attack budgets quoted at 20/60/100 map to
2.86/8.57/14.29, and the analysis noise level 1.00 maps to 0.143.  The
survival check intentionally stays at sigma 1.00.
"""

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import attacks, datasets, extraction, images, smoothing, training, triggers
from .errors import ConfigError
from .evaluation import evaluate_asr, rank_candidates
from .poisoning import (PoisonSpec, assemble_training_set,
                        generate_badnet_poisons, generate_clbd_poisons,
                        generate_htba_poisons)
from .models import CLASSIFIER_ARCH
from .registry import Registry
from .util import content_hash, derive_seed, rng_for

REFERENCE_SIDE = 224  # resolution the published budgets are quoted at


@dataclass(frozen=True)
class DeskConfig:
    image_size: int = 32
    pool_per_class: int = 300
    train_per_class: int = 300
    test_per_class: int = 200
    trigger_size: int = 4
    candidate_size: int = 8       # analyst convention: 2x the trigger side
    crop_candidate_size: int = 12  # crops carry background, so cut wider
    target_class: int = 1
    num_poisons: int = 150
    sigma_reference: float = 1.00  # noise level at the reference resolution
    eps_grid_reference: tuple = (20.0, 60.0)
    attack_eps_reference: float = 20.0
    attack_steps: int = 100
    attack_mc: int = 16
    num_adv_examples: int = 10
    num_candidates: int = 8
    pred_samples: int = 100
    epochs: int = 12
    lr: float = 0.01
    batch_size: int = 64
    denoiser_epochs: int = 14
    htba_num_poisons: int = 300
    htba_linf_budget: float = 32 / 255
    htba_steps: int = 500
    htba_feature_layer: str = "pooled"
    htba_head_epochs: int = 60
    clbd_eps_reference: float = 35.0
    clbd_pgd_steps: int = 40
    clbd_num_poisons: int = 250
    clbd_replaced: int = 250
    clbd_epochs: int = 16
    robust_eps: float = 4.0
    robust_steps: int = 6
    robust_epochs: int = 16
    tikhonov_weight: float = 0.05

    @property
    def sigma_analysis(self):
        return self.sigma_reference * self.image_size / REFERENCE_SIDE

    def desk_eps(self, eps_reference):
        return images.scale_epsilon(eps_reference, REFERENCE_SIDE,
                                    self.image_size, self.image_size)

    @property
    def attack_eps(self):
        return self.desk_eps(self.attack_eps_reference)

    @property
    def clbd_eps(self):
        return self.desk_eps(self.clbd_eps_reference)


DESK = DeskConfig()
SMOKE = DeskConfig(image_size=24, pool_per_class=60, train_per_class=80,
                   test_per_class=40, epochs=4, denoiser_epochs=4,
                   attack_steps=20, attack_mc=4, num_adv_examples=2,
                   num_candidates=3, pred_samples=20, num_poisons=40,
                   htba_num_poisons=40, htba_steps=40, htba_head_epochs=10,
                   clbd_num_poisons=40, clbd_replaced=50, clbd_pgd_steps=8,
                   robust_steps=2)


def _train_cfg(desk, seed, **over):
    base = dict(epochs=desk.epochs, lr=desk.lr, lr_decay=0.1,
                lr_decay_every=max(2, desk.epochs * 2 // 3),
                batch_size=desk.batch_size, seed=seed)
    base.update(over)
    return training.TrainConfig(**base)


class Stages:
    """Cached pipeline stages over one registry."""

    def __init__(self, reg: Registry, desk: DeskConfig = DESK, seed=0,
                 force=False, log=None):
        self.reg = reg
        self.desk = desk
        self.seed = seed
        self.force = force
        self.log = log or (lambda msg: None)

    def _seed(self, *keys):
        return derive_seed(self.seed, *keys)

    def _cached(self, kind, artifact_id, build, save, load):
        if self.force:
            self.reg.remove(kind, artifact_id)
        if self.reg.exists(kind, artifact_id):
            return load(artifact_id)
        t0 = time.time()
        obj = build()
        save(obj, artifact_id)
        self.log(f"built {kind}/{artifact_id} in {time.time() - t0:.1f}s")
        return obj

    # -- data ---------------------------------------------------------------
    def dataset(self, task="binary"):
        desk = self.desk
        num_classes = {"binary": 2, "multiclass": 5, "pretrain": 6}[task]
        palette = "rich" if task == "pretrain" else "muted"
        per = desk.pool_per_class + desk.train_per_class + desk.test_per_class
        h = content_hash("dataset", task, per, num_classes, desk.image_size,
                         palette, self._seed("data"))
        ids = {split: f"{task}-{split}-{h}" for split in
               ("pool", "train", "test")}
        if not self.force and all(self.reg.exists("datasets", i)
                                  for i in ids.values()):
            return ids, tuple(self.reg.load_dataset(ids[s])
                              for s in ("pool", "train", "test"))
        src = datasets.make_synthetic_dataset(per, num_classes,
                                              desk.image_size,
                                              seed=self._seed("data"),
                                              split="source",
                                              palette=palette)
        parts = datasets.split_dataset(
            src, (desk.pool_per_class, desk.train_per_class,
                  desk.test_per_class), rng_seed=self._seed("split"))
        for split, ds in zip(("pool", "train", "test"), parts):
            if self.force:
                self.reg.remove("datasets", ids[split])
            self.reg.save_dataset(ds, ids[split])
        self.log(f"dataset {task} ready ({[len(p) for p in parts]})")
        return ids, parts

    # -- triggers -------------------------------------------------------------
    def trigger(self, kind="blocks", color=None, name=None):
        desk = self.desk
        size = (desk.trigger_size, desk.trigger_size)
        tseed = self._seed("trigger", kind, str(color))
        if kind == "blocks":
            trig = triggers.make_random_block_patch(size, tseed, cells=2,
                                                    name=name or "blocks")
        elif kind == "color":
            trig = triggers.make_color_patch(size, color, name=name)
        elif kind == "camouflage":
            trig = triggers.make_checker_patch(size, (0.12, 0.12, 0.12),
                                               (0.92, 0.92, 0.92), cell=1,
                                               name=name or "camouflage")
        else:
            raise ConfigError(f"unknown trigger kind {kind!r}")
        tid = f"{trig.name}-{content_hash('trigger', trig.patch)}"
        self.reg.save_trigger(trig, tid, provenance={"kind": kind,
                                                     "seed": tseed})
        return tid, trig

    # -- models ----------------------------------------------------------------
    def _stamp(self, model, ids):
        model.meta.update({
            "desk": asdict(self.desk),
            "task": ids["train"].split("-")[0],
            "dataset_ids": dict(ids),
            "pipeline_seed": self.seed,
        })
        return model

    def _model(self, model_id, build):
        return self._cached(
            "models", model_id, build,
            lambda m, i: self.reg.save_model(m, i),
            lambda i: self.reg.load_model(i))

    def clean_model(self, ids, train_ds, test_ds, tag="clean"):
        cfg = _train_cfg(self.desk, self._seed("train", tag))
        mid = f"{tag}-{content_hash('clean', CLASSIFIER_ARCH, ids['train'], repr(cfg))}"

        def build():
            m = training.train_classifier(train_ds, cfg, val_set=test_ds)
            m.meta["poisoning"] = "clean"
            return self._stamp(m, ids)
        return mid, self._model(mid, build)

    def denoiser(self, ids, train_ds, sigma, tag):
        desk = self.desk
        cfg = _train_cfg(desk, self._seed("denoiser", tag),
                         epochs=desk.denoiser_epochs, lr_decay=0.5,
                         lr_decay_every=max(2, desk.denoiser_epochs // 3))
        did = f"den-{tag}-{content_hash('denoiser', ids['train'], sigma, repr(cfg))}"

        def build():
            return training.train_denoiser(train_ds, sigma, cfg)
        return did, self._cached("denoisers", did, build,
                                 lambda m, i: self.reg.save_model(m, i, "denoisers"),
                                 lambda i: self.reg.load_denoiser(i))

    def robust_model(self, ids, train_ds, test_ds):
        desk = self.desk
        cfg = _train_cfg(desk, self._seed("train", "robust"),
                         epochs=desk.robust_epochs,
                         lr_decay_every=max(2, desk.robust_epochs * 2 // 3))
        pgd = {"eps": desk.robust_eps, "steps": desk.robust_steps}
        mid = f"robust-{content_hash('robust', CLASSIFIER_ARCH, ids['train'], repr(cfg), repr(pgd))}"

        def build():
            m = training.train_robust_classifier(train_ds, pgd, cfg,
                                                 val_set=test_ds)
            m.meta["poisoning"] = "clean-robust"
            return self._stamp(m, ids)
        return mid, self._model(mid, build)

    def poisoned_model(self, method, ids, pool, train_ds, test_ds, trig_id,
                       trig):
        desk = self.desk
        pseed = self._seed("poisons", method)
        if method == "badnet":
            spec = PoisonSpec("badnet", trig, desk.target_class,
                              desk.num_poisons)
            cfg = _train_cfg(desk, self._seed("train", "badnet"))
            mid = f"badnet-{content_hash('badnet', CLASSIFIER_ARCH, ids['train'], trig_id, repr(cfg), pseed, desk.num_poisons)}"

            def build():
                ps = generate_badnet_poisons(pool, spec, rng_seed=pseed)
                mixed = assemble_training_set(train_ds, ps,
                                              rng_seed=self._seed("assemble"))
                m = training.train_classifier(mixed, cfg, val_set=test_ds)
                m.meta["poisoning"] = "badnet"
                m.meta["trigger_id"] = trig_id
                return self._stamp(m, ids)
            return mid, self._model(mid, build), {}

        if method == "htba":
            # generic features: extractor pretrained on the saturation-rich
            # 5-texture task, only the binary head is fine-tuned
            ex_ids, (_, ex_train, ex_test) = self.dataset("pretrain")
            ex_id, extractor = self.clean_model(ex_ids, ex_train, ex_test,
                                                tag="extractor")
            base_id = f"{ex_id}-head{train_ds.num_classes}"
            base = extractor.with_new_head(train_ds.num_classes,
                                           seed=self._seed("htba-head"))
            params = {"linf_budget": desk.htba_linf_budget,
                      "steps": desk.htba_steps, "source_class": 0,
                      "feature_layer": desk.htba_feature_layer}
            spec = PoisonSpec("htba", trig, desk.target_class,
                              desk.htba_num_poisons, params)
            head_cfg = _train_cfg(desk, self._seed("train", "htba"),
                                  epochs=desk.htba_head_epochs, lr=0.02,
                                  lr_decay_every=max(2, desk.htba_head_epochs
                                                     * 2 // 3),
                                  finetune_head=True)
            mid = f"htba-{content_hash('htba', CLASSIFIER_ARCH, base_id, trig_id, repr(head_cfg), repr(params), pseed, desk.htba_num_poisons)}"

            def build():
                ps = generate_htba_poisons(pool, base, spec, rng_seed=pseed)
                mixed = assemble_training_set(train_ds, ps,
                                              rng_seed=self._seed("assemble"))
                m = training.train_classifier(mixed, head_cfg, val_set=test_ds,
                                              init=base)
                m.meta["poisoning"] = "htba"
                m.meta["trigger_id"] = trig_id
                m.meta["feature_dist"] = {
                    "init": float(np.mean([r.feature_dist_init
                                           for r in ps.records])),
                    "final": float(np.mean([r.feature_dist_final
                                            for r in ps.records])),
                }
                return self._stamp(m, ids)
            twin_cfg = replace(head_cfg)
            twin_id = f"htba-twin-{content_hash('htba-twin', CLASSIFIER_ARCH, base_id, ids['train'], repr(twin_cfg))}"

            def build_twin():
                m = training.train_classifier(train_ds, twin_cfg,
                                              val_set=test_ds, init=base)
                m.meta["poisoning"] = "clean"
                return self._stamp(m, ids)
            twin = self._model(twin_id, build_twin)
            return mid, self._model(mid, build), {"clean_twin_id": twin_id,
                                                  "clean_twin": twin,
                                                  "base_id": base_id}

        if method == "clbd":
            robust_id, robust = self.robust_model(ids, train_ds, test_ds)
            params = {"l2_budget": self.desk.clbd_eps,
                      "pgd_steps": desk.clbd_pgd_steps}
            spec = PoisonSpec("clbd", trig, desk.target_class,
                              desk.clbd_num_poisons, params)
            cfg = _train_cfg(desk, self._seed("train", "clbd"),
                             epochs=desk.clbd_epochs,
                             lr_decay_every=max(2, desk.clbd_epochs * 2 // 3))
            mid = f"clbd-{content_hash('clbd', CLASSIFIER_ARCH, robust_id, ids['train'], trig_id, repr(cfg), repr(params), pseed, desk.clbd_num_poisons, desk.clbd_replaced)}"

            def build():
                ps = generate_clbd_poisons(pool, robust, spec, rng_seed=pseed)
                # poisons stand in for most of the clean target class: with
                # untouched exemplars around, the trigger never becomes the
                # label signal (the net just memorizes the poisons instead)
                tgt = train_ds.class_indices(desk.target_class)
                n_drop = min(desk.clbd_replaced, len(tgt))
                drop = rng_for(self._seed("clbd-drop"), "pick").permutation(
                    len(tgt))[:n_drop]
                keep = np.setdiff1d(np.arange(len(train_ds)), tgt[drop])
                reduced = train_ds.subset(keep)
                mixed = assemble_training_set(reduced, ps,
                                              rng_seed=self._seed("assemble"))
                m = training.train_classifier(mixed, cfg, val_set=test_ds)
                m.meta["poisoning"] = "clbd"
                m.meta["trigger_id"] = trig_id
                return self._stamp(m, ids)
            twin_cfg = replace(cfg)
            twin_id = f"clbd-twin-{content_hash('clbd-twin', CLASSIFIER_ARCH, ids['train'], repr(twin_cfg))}"

            def build_twin():
                m = training.train_classifier(train_ds, twin_cfg,
                                              val_set=test_ds)
                m.meta["poisoning"] = "clean"
                return self._stamp(m, ids)
            twin = self._model(twin_id, build_twin)
            return mid, self._model(mid, build), {"clean_twin_id": twin_id,
                                                  "clean_twin": twin,
                                                  "robust_id": robust_id}

        raise ConfigError(f"unknown method {method!r}")

    # -- analysis ------------------------------------------------------------
    def smoothed(self, model, denoiser, sigma, seed_key="smoothing"):
        cfg = smoothing.SmoothingConfig(sigma=sigma,
                                        num_pred_samples=self.desk.pred_samples,
                                        denoiser=denoiser,
                                        seed=self._seed(seed_key))
        return smoothing.SmoothedClassifier(model, cfg)

    def attack_grid(self, run_id, sc, test_ds, attack_cfg, n=None,
                    source_class=0):
        n = n or self.desk.num_adv_examples
        if not self.force and self.reg.has_adv_grid(run_id):
            return self.reg.load_adv_grid(run_id)
        if self.force:
            self.reg.remove("runs", f"{run_id}/adv")
        idx = test_ds.class_indices(source_class)[:n]
        t0 = time.time()
        items = attacks.generate_adv_grid(sc, test_ds.images[idx],
                                          test_ds.labels[idx], attack_cfg,
                                          image_ids=[int(i) for i in idx])
        self.log(f"attacked {len(idx)} images in {time.time() - t0:.1f}s")
        self.reg.save_adv_grid(run_id, items, attack_cfg.hash())
        return self.reg.load_adv_grid(run_id)


# ---------------------------------------------------------------------------
# named experiments

EXPERIMENTS = ("badnet-binary", "htba-binary", "clbd-binary",
               "badnet-multiclass", "htba-multiclass", "clbd-multiclass",
               "clean-control", "color-probe", "camouflaged", "smoke")

PROBE_COLORS = {  # hue degrees -> saturated RGB
    0: (1.0, 0.0, 0.0),
    90: (0.5, 1.0, 0.0),
    180: (0.0, 1.0, 1.0),
    270: (0.5, 0.0, 1.0),
}


def _harvest_and_rank(st, run_id, model, model_id, trig, trig_id, test_ds,
                      advs, eval_seed):
    desk = st.desk
    cands = extraction.auto_propose_candidates(
        advs, desk.num_candidates,
        patch_size=(desk.candidate_size, desk.candidate_size),
        crop_size=(desk.crop_candidate_size, desk.crop_candidate_size))
    ranked, orig_report = rank_candidates(model, test_ds, cands,
                                          desk.target_class, seed=eval_seed,
                                          original=trig, model_id=model_id)
    for i, (cand, report) in enumerate(ranked):
        cid = f"{run_id}-cand{i}-{cand.kind}"
        st.reg.save_trigger(cand.trigger, cid, provenance={
            "kind": cand.kind, "creator": cand.creator, **{
                k: list(v) if isinstance(v, tuple) else v
                for k, v in cand.provenance.items()}})
        report.trigger_id = cid
        st.reg.save_report(run_id, f"cand{i}", report)
    orig_report.trigger_id = trig_id
    st.reg.save_report(run_id, "original", orig_report)
    crop = [r.asr for c, r in ranked if c.kind == "crop"]
    color = [r.asr for c, r in ranked if c.kind == "color"]
    return {
        "ranked": [(c.kind, r.asr) for c, r in ranked],
        "best_asr": ranked[0][1].asr if ranked else 0.0,
        "best_kind": ranked[0][0].kind if ranked else None,
        "mean_crop_asr": float(np.mean(crop)) if crop else 0.0,
        "mean_color_asr": float(np.mean(color)) if color else 0.0,
        "original_asr": orig_report.asr,
        "clean_accuracy": orig_report.clean_accuracy,
        "num_candidates": len(ranked),
    }


def run_method_experiment(reg, method, seed=0, desk=DESK, force=False,
                          log=None, task="binary", run_tag=None):
    """Poison -> train -> robustify -> attack -> extract -> evaluate."""
    st = Stages(reg, desk, seed, force, log)
    run_id = f"{run_tag or method + '-' + task}-{seed}"
    t0 = time.time()
    ids, (pool, train_ds, test_ds) = st.dataset(task)
    trig_id, trig = st.trigger("blocks")
    model_id, model, aux = st.poisoned_model(method, ids, pool, train_ds,
                                             test_ds, trig_id, trig)
    if "clean_twin" in aux:
        twin_id, twin = aux["clean_twin_id"], aux["clean_twin"]
    else:
        twin_id, twin = st.clean_model(ids, train_ds, test_ds)
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    sc = st.smoothed(model, den, desk.sigma_analysis)
    acfg = attacks.AttackConfig(epsilon=desk.attack_eps,
                                steps=desk.attack_steps,
                                mc_vectors=desk.attack_mc,
                                seed=st._seed("attack", method))
    advs = st.attack_grid(run_id, sc, test_ds, acfg)
    eval_seed = st._seed("eval", method)
    summary = _harvest_and_rank(st, run_id, model, model_id, trig, trig_id,
                                test_ds, advs, eval_seed)
    twin_report = evaluate_asr(twin, test_ds, trig, desk.target_class,
                               seed=eval_seed, model_id=twin_id,
                               trigger_id=trig_id)
    st.reg.save_report(run_id, "clean_twin", twin_report)
    summary.update({
        "experiment": run_id, "method": method, "model_id": model_id,
        "twin_id": twin_id, "twin_clean_accuracy": twin_report.clean_accuracy,
        "trigger_id": trig_id, "denoiser_id": den_id,
        "table_row": f"{summary['best_asr'] * 100:.2f}%/"
                     f"{summary['original_asr'] * 100:.2f}%",
        "elapsed_s": time.time() - t0,
    })
    for key in ("base_id", "robust_id"):
        if key in aux:
            summary[key] = aux[key]
    reg.append_manifest(run_id, {"stage": "summary", "seed": seed, **{
        k: v for k, v in summary.items() if k != "ranked"}})
    return summary


def run_survival_check(reg, seed=0, desk=DESK, force=False, log=None,
                       method="badnet", max_images=None):
    """Original-trigger ASR through the sigma-1.00 smoothed classifier vs
    through the base classifier."""
    st = Stages(reg, desk, seed, force, log)
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    trig_id, trig = st.trigger("blocks")
    model_id, model, _ = st.poisoned_model(method, ids, pool, train_ds,
                                           test_ds, trig_id, trig)
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_reference, "survival")
    sc = st.smoothed(model, den, desk.sigma_reference, "survival-smoothing")
    nontarget = test_ds.subset(
        np.flatnonzero(test_ds.labels != desk.target_class))
    if max_images:
        nontarget = nontarget.subset(np.arange(min(max_images, len(nontarget))))
    patched, _ = triggers.apply_trigger_batch(
        nontarget.images, trig, rng_seed=st._seed("survival-place"))
    base_asr = float((model.predict(patched) == desk.target_class).mean())
    preds, _ = smoothing.smoothed_predict_batch(sc, patched)
    smoothed_asr = float((preds == desk.target_class).mean())
    out = {"experiment": f"survival-{method}-{seed}", "model_id": model_id,
           "denoiser_id": den_id, "sigma": desk.sigma_reference,
           "num_images": len(nontarget), "base_asr": base_asr,
           "smoothed_asr": smoothed_asr,
           "gap_points": abs(base_asr - smoothed_asr) * 100}
    reg.append_manifest(out["experiment"], {"stage": "summary", **out})
    return out


def run_clean_control(reg, seed=0, desk=DESK, force=False, log=None):
    """Same extraction pipeline against a clean twin (nothing to leak)."""
    st = Stages(reg, desk, seed, force, log)
    run_id = f"clean-control-{seed}"
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    trig_id, trig = st.trigger("blocks")  # evaluated for reference only
    model_id, model = st.clean_model(ids, train_ds, test_ds)
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    sc = st.smoothed(model, den, desk.sigma_analysis)
    acfg = attacks.AttackConfig(epsilon=desk.attack_eps,
                                steps=desk.attack_steps,
                                mc_vectors=desk.attack_mc,
                                seed=st._seed("attack", "clean"))
    advs = st.attack_grid(run_id, sc, test_ds, acfg)
    summary = _harvest_and_rank(st, run_id, model, model_id, trig, trig_id,
                                test_ds, advs, st._seed("eval", "clean"))
    summary.update({"experiment": run_id, "model_id": model_id,
                    "denoiser_id": den_id})
    reg.append_manifest(run_id, {"stage": "summary", "seed": seed, **{
        k: v for k, v in summary.items() if k != "ranked"}})
    return summary


def run_color_probe(reg, seed=0, desk=DESK, force=False, log=None,
                    num_adv=None):
    """Solid-color triggers: does the top color proposal recover the hue?"""
    st = Stages(reg, desk, seed, force, log)
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    results = []
    for hue, rgb in PROBE_COLORS.items():
        run_id = f"color-probe-{hue}-{seed}"
        trig_id, trig = st.trigger("color", color=rgb, name=f"probe-{hue}")
        model_id, model, _ = st.poisoned_model("badnet", ids, pool, train_ds,
                                               test_ds, trig_id, trig)
        sc = st.smoothed(model, den, desk.sigma_analysis)
        acfg = attacks.AttackConfig(epsilon=desk.attack_eps,
                                    steps=desk.attack_steps,
                                    mc_vectors=desk.attack_mc,
                                    seed=st._seed("attack", "probe", hue))
        advs = st.attack_grid(run_id, sc, test_ds, acfg,
                              n=num_adv or desk.num_adv_examples)
        cands = extraction.auto_propose_candidates(
            advs, desk.num_candidates,
            patch_size=(desk.candidate_size, desk.candidate_size))
        colors = [c for c in cands if c.kind == "color"]
        true_hue, _, _ = images.rgb_to_hsv(np.asarray(rgb))
        entry = {"hue": hue, "trigger_id": trig_id, "model_id": model_id,
                 "found": False, "hue_error": None}
        orig = evaluate_asr(model, test_ds, trig, desk.target_class,
                            seed=st._seed("eval", "probe", hue),
                            model_id=model_id, trigger_id=trig_id)
        entry["original_asr"] = orig.asr
        if colors:
            top = colors[0].trigger.patch[0, 0]
            got_hue, _, _ = images.rgb_to_hsv(top)
            entry.update({
                "found": True,
                "proposed_rgb": [float(v) for v in top],
                "hue_error": images.hue_distance(float(got_hue),
                                                 float(true_hue)),
            })
        results.append(entry)
        reg.append_manifest(run_id, {"stage": "summary", **entry})
    hits = sum(1 for r in results
               if r["found"] and r["hue_error"] <= 30.0)
    return {"experiment": f"color-probe-{seed}", "results": results,
            "hits_within_30deg": hits, "denoiser_id": den_id}


def run_camouflaged(reg, seed=0, desk=DESK, force=False, log=None):
    """In-palette checker trigger, analyzed at the largest budget."""
    st = Stages(reg, desk, seed, force, log)
    run_id = f"camouflaged-{seed}"
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    trig_id, trig = st.trigger("camouflage")
    model_id, model, _ = st.poisoned_model("badnet", ids, pool, train_ds,
                                           test_ds, trig_id, trig)
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    sc = st.smoothed(model, den, desk.sigma_analysis)
    acfg = attacks.AttackConfig(epsilon=desk.desk_eps(100.0),
                                steps=desk.attack_steps,
                                mc_vectors=desk.attack_mc,
                                seed=st._seed("attack", "camouflage"))
    advs = st.attack_grid(run_id, sc, test_ds, acfg)
    summary = _harvest_and_rank(st, run_id, model, model_id, trig, trig_id,
                                test_ds, advs, st._seed("eval", "camouflage"))
    summary.update({"experiment": run_id, "model_id": model_id,
                    "denoiser_id": den_id,
                    "table_row": f"{summary['best_asr'] * 100:.2f}%/"
                                 f"{summary['original_asr'] * 100:.2f}%"})
    reg.append_manifest(run_id, {"stage": "summary", "seed": seed, **{
        k: v for k, v in summary.items() if k != "ranked"}})
    return summary


def run_regularization_check(reg, seed=0, desk=DESK, force=False, log=None,
                             num_images=20, steps=50, mc=8):
    """Tikhonov-weighted attacks vs weight-0 at equal epsilon: mean penalty
    of the perturbations with and without the regularizer."""
    st = Stages(reg, desk, seed, force, log)
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    trig_id, trig = st.trigger("blocks")
    model_id, model, _ = st.poisoned_model("badnet", ids, pool, train_ds,
                                           test_ds, trig_id, trig)
    den_id, den = st.denoiser(ids, train_ds, desk.sigma_analysis, "analysis")
    sc = st.smoothed(model, den, desk.sigma_analysis)
    out = {"experiment": f"regularization-{seed}", "num_images": num_images,
           "epsilon": desk.attack_eps, "weight": desk.tikhonov_weight}
    for tag, reg_cfg in (("plain", None),
                         ("tikhonov", attacks.RegularizerConfig(
                             "tikhonov", desk.tikhonov_weight))):
        acfg = attacks.AttackConfig(epsilon=desk.attack_eps, steps=steps,
                                    mc_vectors=mc, regularizer=reg_cfg,
                                    seed=st._seed("attack", "reg-check"))
        advs = st.attack_grid(f"reg-check-{tag}-{seed}", sc, test_ds, acfg,
                              n=num_images)
        out[f"mean_penalty_{tag}"] = float(np.mean(
            [attacks.tikhonov_penalty(a.adv - a.source) for a in advs]))
    out["reduction_fraction"] = 1.0 - (out["mean_penalty_tikhonov"]
                                       / max(out["mean_penalty_plain"], 1e-12))
    reg.append_manifest(out["experiment"], {"stage": "summary", **out})
    return out


def run_experiment(reg, name, seed=0, force=False, log=None):
    """Dispatch a named experiment; returns its summary dict."""
    if name == "smoke":
        return run_method_experiment(reg, "badnet", seed=seed, desk=SMOKE,
                                     force=force, log=log, run_tag="smoke")
    if name == "clean-control":
        return run_clean_control(reg, seed=seed, force=force, log=log)
    if name == "color-probe":
        return run_color_probe(reg, seed=seed, force=force, log=log)
    if name == "camouflaged":
        return run_camouflaged(reg, seed=seed, force=force, log=log)
    for method in ("badnet", "htba", "clbd"):
        if name == f"{method}-binary":
            return run_method_experiment(reg, method, seed=seed, force=force,
                                         log=log)
        if name == f"{method}-multiclass":
            return run_method_experiment(reg, method, seed=seed, force=force,
                                         log=log, task="multiclass")
    raise ConfigError(f"unknown experiment {name!r}; have {EXPERIMENTS}")
