"""Command-line entry points.

Commands mirror the pipeline stages and are resumable: artifact ids are
content hashes of their inputs, so re-running a command whose outputs
already exist is a no-op without --force.  Each command prints one JSON
summary on stdout.  Exit codes: 0 ok, 2 usage/config, 3 missing
artifact, 4 runtime failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import attacks, extraction, training, triggers
from .errors import ArtifactNotFoundError, BackdoorLabError, ConfigError
from .evaluation import evaluate_asr
from .experiments import (DESK, EXPERIMENTS, DeskConfig, Stages,
                          run_experiment, run_survival_check)
from .poisoning import (PoisonSpec, generate_badnet_poisons,
                        generate_clbd_poisons, generate_htba_poisons)
from .registry import ENV_REGISTRY, Registry
from .util import content_hash, derive_seed

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ArtifactNotFoundError(f"config file {path} not found")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _desk(config):
    over = config.get("desk", {})
    try:
        return DeskConfig(**over) if over else DESK
    except TypeError as exc:
        raise ConfigError(f"bad desk override: {exc}")


def _emit(obj):
    print(json.dumps(obj, indent=2, default=str))


def _stages(args, config, seed):
    reg = Registry(args.registry)
    log = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    return Stages(reg, _desk(config), seed=seed, force=args.force, log=log), reg


def _make_trigger(st, config):
    t = config.get("trigger", {"kind": "blocks"})
    return st.trigger(t.get("kind", "blocks"), color=t.get("color"),
                      name=t.get("name"))


def cmd_poison(args):
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    st, reg = _stages(args, config, seed)
    method = config.get("method", "badnet")
    task = config.get("task", "binary")
    ids, (pool, train_ds, test_ds) = st.dataset(task)
    trig_id, trig = _make_trigger(st, config)
    desk = st.desk
    num = config.get("num_poisons", desk.num_poisons)
    params = dict(config.get("method_params", {}))
    pseed = derive_seed(seed, "poisons", method)
    spec = PoisonSpec(method, trig, config.get("target_class",
                                               desk.target_class),
                      num, params)
    if method == "badnet":
        ps = generate_badnet_poisons(pool, spec, rng_seed=pseed)
    elif method == "htba":
        params.setdefault("linf_budget", desk.htba_linf_budget)
        params.setdefault("steps", desk.htba_steps)
        params.setdefault("source_class", 0)
        _, base = st.clean_model(ids, train_ds, test_ds)
        ps = generate_htba_poisons(pool, base, spec, rng_seed=pseed)
    elif method == "clbd":
        params.setdefault("l2_budget", desk.clbd_eps)
        params.setdefault("pgd_steps", desk.clbd_pgd_steps)
        _, robust = st.robust_model(ids, train_ds, test_ds)
        ps = generate_clbd_poisons(pool, robust, spec, rng_seed=pseed)
    else:
        raise ConfigError(f"unknown method {method!r}")
    pid = f"poisons-{method}-{content_hash(ids['pool'], trig_id, repr(spec), pseed)}"
    if args.force:
        reg.remove("datasets", pid)
    reg.save_dataset(ps.dataset, pid)
    sidecar = {
        "method": method, "trigger_id": trig_id, "seed": pseed,
        "num_poisons": len(ps.dataset), "method_params": params,
        "records": [vars(r) for r in ps.records],
    }
    side_path = reg.path("datasets", pid) / "provenance.json"
    side_path.write_text(json.dumps(sidecar, indent=2, default=str))
    _emit({"dataset_id": pid, "trigger_id": trig_id,
           "num_poisons": len(ps.dataset)})


def cmd_train(args):
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    st, reg = _stages(args, config, seed)
    method = config.get("method", "clean")
    task = config.get("task", "binary")
    ids, (pool, train_ds, test_ds) = st.dataset(task)
    if method == "clean":
        model_id, model = st.clean_model(ids, train_ds, test_ds)
        extra = {}
    elif method == "robust":
        model_id, model = st.robust_model(ids, train_ds, test_ds)
        extra = {}
    else:
        trig_id, trig = _make_trigger(st, config)
        model_id, model, aux = st.poisoned_model(method, ids, pool, train_ds,
                                                 test_ds, trig_id, trig)
        extra = {k: v for k, v in aux.items() if k.endswith("_id")}
        extra["trigger_id"] = trig_id
    _emit({"model_id": model_id,
           "train_acc": model.meta.get("train_acc"),
           "val_acc": model.meta.get("val_acc"),
           "poisoning": model.meta.get("poisoning"), **extra})


def cmd_denoise_train(args):
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    st, reg = _stages(args, config, seed)
    task = config.get("task", "binary")
    ids, (_, train_ds, _) = st.dataset(task)
    sigma = config.get("sigma", st.desk.sigma_analysis)
    tag = config.get("tag", f"sigma{sigma:g}")
    den_id, den = st.denoiser(ids, train_ds, sigma, tag)
    _emit({"denoiser_id": den_id, "sigma": sigma,
           "holdout_mse_denoised": den.meta.get("holdout_mse_denoised"),
           "holdout_mse_noisy": den.meta.get("holdout_mse_noisy")})


def cmd_attack(args):
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    st, reg = _stages(args, config, seed)
    model = reg.load_model(args.model)
    denoiser = reg.load_denoiser(args.denoiser) if args.denoiser else None
    desk = st.desk
    a = config.get("attack", {})
    reg_cfg = None
    if a.get("regularizer"):
        reg_cfg = attacks.RegularizerConfig(a["regularizer"],
                                            a.get("regularizer_weight", 0.05))
    dd = None
    if a.get("deep_dream"):
        dd = attacks.DeepDreamSchedule(**a["deep_dream"])
    acfg = attacks.AttackConfig(
        epsilon=a.get("epsilon", desk.attack_eps),
        steps=a.get("steps", desk.attack_steps),
        mc_vectors=a.get("mc_vectors", desk.attack_mc),
        step_size=a.get("step_size"),
        regularizer=reg_cfg, deep_dream=dd,
        seed=derive_seed(seed, "attack"))
    sigma = a.get("sigma", desk.sigma_analysis)
    sc = st.smoothed(model, denoiser, sigma)
    task = config.get("task", "binary")
    _, (_, _, test_ds) = st.dataset(task)
    run_id = args.out or f"attack-{args.model[:20]}-{acfg.hash()}"
    advs = st.attack_grid(run_id, sc, test_ds, acfg,
                          n=a.get("num_images", desk.num_adv_examples),
                          source_class=a.get("source_class", 0))
    reg.append_manifest(run_id, {"stage": "attack", "model_id": args.model,
                                 "denoiser_id": args.denoiser,
                                 "config_hash": acfg.hash(), "sigma": sigma,
                                 "epsilon": acfg.epsilon, "seed": seed})
    _emit({"run_id": run_id, "num_adv": len(advs),
           "mean_l2": float(np.mean([x.achieved_l2 for x in advs])),
           "config_hash": acfg.hash()})


def cmd_extract(args):
    reg = Registry(args.registry)
    advs = reg.load_adv_grid(args.run)
    size = tuple(int(v) for v in args.size.split(","))
    out = []
    if args.auto:
        cands = extraction.auto_propose_candidates(advs, args.auto,
                                                   patch_size=size)
    else:
        if args.index is None or args.index >= len(advs):
            raise ConfigError("--index required (within the adv grid) for "
                              "manual extraction")
        adv = advs[args.index]
        cands = []
        if args.color:
            x, y = (int(v) for v in args.color.split(","))
            cands.append(extraction.extract_color_patch(adv, (x, y), size,
                                                        creator="human-via-ui"))
        if args.crop:
            x, y, h, w = (int(v) for v in args.crop.split(","))
            cands.append(extraction.extract_crop_patch(adv, (x, y, h, w),
                                                       creator="human-via-ui"))
        if not cands:
            raise ConfigError("nothing to extract: pass --auto, --color or --crop")
    for i, cand in enumerate(cands):
        tid = f"{args.run}-x{i}-{cand.kind}-{content_hash(cand.trigger.patch)}"
        reg.save_trigger(cand.trigger, tid, provenance={
            "kind": cand.kind, "creator": cand.creator,
            **{k: list(v) if isinstance(v, tuple) else v
               for k, v in cand.provenance.items()}})
        out.append({"trigger_id": tid, "kind": cand.kind})
    _emit({"run_id": args.run, "triggers": out})


def cmd_eval(args):
    config = _load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    st, reg = _stages(args, config, seed)
    model = reg.load_model(args.model)
    trig = reg.load_trigger(args.trigger)
    if args.placement:
        if args.placement == "random":
            trig = triggers.TriggerSpec(trig.patch, triggers.RANDOM,
                                        name=trig.name)
        else:
            loc = None
            if ":" in args.placement:
                loc = tuple(int(v) for v in args.placement.split(":")[1].split(","))
            trig = triggers.TriggerSpec(trig.patch, triggers.FIXED, loc,
                                        name=trig.name)
    task = config.get("task", "binary")
    _, (_, _, test_ds) = st.dataset(task)
    target = args.target if args.target is not None else st.desk.target_class
    report = evaluate_asr(model, test_ds, trig, target,
                          seed=derive_seed(seed, "eval"),
                          model_id=args.model, trigger_id=args.trigger)
    run_id = args.out or f"eval-{content_hash(args.model, args.trigger, seed)}"
    reg.save_report(run_id, "report", report)
    reg.append_manifest(run_id, {"stage": "eval", **report.to_dict()})
    _emit(report.to_dict())


def cmd_reproduce(args):
    reg = Registry(args.registry)
    log = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    t0 = time.time()
    summary = run_experiment(reg, args.name, seed=args.seed or 0,
                             force=args.force, log=log)
    summary["wall_clock_s"] = time.time() - t0
    if "table_row" in summary:
        print(f"# {args.name}: best-alternative/original = "
              f"{summary['table_row']}", file=sys.stderr)
    _emit(summary)


def cmd_survival(args):
    reg = Registry(args.registry)
    log = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    out = run_survival_check(reg, seed=args.seed or 0, force=args.force,
                             log=log, max_images=args.num_images)
    _emit(out)


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(Registry(args.registry), frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def cmd_init_demo(args):
    from .service import build_demo_registry

    reg = Registry(args.registry)
    out = build_demo_registry(reg, num_models=args.models,
                              seed=args.seed or 0,
                              quiet=args.quiet)
    _emit(out)


def cmd_bench(args):
    import benchmarks.bench_backends as bench
    bench.main(sizes=args.sizes)


def build_parser():
    p = argparse.ArgumentParser(
        prog="backdoorlab",
        description="Train, robustify and break backdoored classifiers "
                    "at desk scale.")
    p.add_argument("--registry", "-r", default=None,
                   help=f"registry root (default: ${ENV_REGISTRY} or ./registry)")
    p.add_argument("--quiet", "-q", action="store_true",
                   help="suppress progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--force", action="store_true",
                        help="rebuild even if artifacts exist")
        sp.add_argument("--out", default=None, help="run id for outputs")
        return sp

    sp = add("poison", cmd_poison, help="generate a poison dataset")
    sp.add_argument("--config", "-c", default=None)
    sp = add("train", cmd_train, help="train a clean/robust/poisoned model")
    sp.add_argument("--config", "-c", default=None)
    sp = add("denoise-train", cmd_denoise_train, help="train a denoiser")
    sp.add_argument("--config", "-c", default=None)
    sp = add("attack", cmd_attack, help="generate a smoothed adversarial grid")
    sp.add_argument("--model", required=True)
    sp.add_argument("--denoiser", default=None)
    sp.add_argument("--config", "-c", default=None)
    sp = add("extract", cmd_extract, help="extract triggers from an adv grid")
    sp.add_argument("--run", required=True)
    sp.add_argument("--auto", type=int, default=None,
                    help="propose K color + K crop candidates")
    sp.add_argument("--index", type=int, default=None)
    sp.add_argument("--color", default=None, help="pixel 'x,y'")
    sp.add_argument("--crop", default=None, help="bbox 'x,y,h,w'")
    sp.add_argument("--size", default="8,8", help="patch size 'h,w'")
    sp = add("eval", cmd_eval, help="measure a trigger's attack success rate")
    sp.add_argument("--model", required=True)
    sp.add_argument("--trigger", required=True)
    sp.add_argument("--target", type=int, default=None)
    sp.add_argument("--placement", default=None,
                    help="random | fixed[:r,c]")
    sp.add_argument("--config", "-c", default=None)
    sp = add("reproduce", cmd_reproduce,
             help=f"run a named experiment: {', '.join(EXPERIMENTS)}")
    sp.add_argument("name", choices=EXPERIMENTS)
    sp = add("survival", cmd_survival,
             help="original-trigger ASR through the sigma-1 smoothed model")
    sp.add_argument("--num-images", type=int, default=None)
    sp = add("serve", cmd_serve, help="run the analysis service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8008)
    sp.add_argument("--frontend", default=None,
                    help="directory with the built browser tool to serve at /")
    sp = add("init-demo", cmd_init_demo,
             help="build a small blinded registry for the interactive tool")
    sp.add_argument("--models", type=int, default=4)
    sp = add("bench", cmd_bench, help="benchmark numba vs numpy kernels")
    sp.add_argument("--sizes", default=None)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
        return EXIT_OK
    except ArtifactNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackdoorLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
