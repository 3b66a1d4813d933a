"""Command-line entry point for the whole pipeline.

Subcommands: gen-data, train-stage1, train-stage2, eval, ablate,
cost-report, render, gradcheck. Configuration precedence is defaults,
then --config file, then --set key=value flags; every output directory
receives a resolved_config.json snapshot. Wall-clock measurements go to
a separate timings.json so the remaining outputs are byte-reproducible
for a given seed.

Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 numeric. Failures print
one line to stderr: "error: <category>: <detail>".
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import gradcheck as gradcheck_mod
from .backend import active_backend
from .config import ConfigError, TrainConfig, from_dict, project_variant, \
    to_dict
from .costs import baseline_mem, baseline_time, cost_mem, cost_time, \
    crossover, paper_fixtures
from .data import generate_dataset, load_dataset, save_blob, save_dataset
from .metrics import psnr, ssim
from .params import load_checkpoint, save_checkpoint
from .training import TrainAbort, evaluate_dataset, render_view, \
    train_stage1, train_stage2, train_variant
from .triplane import VARIANTS, trainable_count

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5


class CliError(Exception):
    """Carries an exit code and a machine-parsable category."""

    def __init__(self, code: int, category: str, detail: str):
        super().__init__(f"{category}: {detail}")
        self.code = code
        self.category = category
        self.detail = detail


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


# ---------------------------------------------------------------------------
# configuration resolution: defaults < --config file < --set flags
# ---------------------------------------------------------------------------

def _deep_update(base: dict, extra: dict) -> None:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def _assign(tree: dict, path: list, value) -> None:
    node = tree
    for part in path[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[path[-1]] = value


def _parse_set(kv: str):
    key, sep, raw = kv.partition("=")
    if not sep or not key:
        raise CliError(EXIT_USAGE, "usage",
                       f"--set expects key=value, got {kv!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _resolve_config(args) -> TrainConfig:
    base = to_dict(TrainConfig())
    path = getattr(args, "config", None)
    if path:
        if not os.path.exists(path):
            raise CliError(EXIT_CONFIG, "missing-config", path)
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise CliError(EXIT_CONFIG, "bad-config",
                               f"{path}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise CliError(EXIT_CONFIG, "bad-config",
                           f"{path}: top level must be an object")
        _deep_update(base, raw)
    for kv in getattr(args, "set", None) or []:
        keys, value = _parse_set(kv)
        _assign(base, keys, value)
    try:
        return from_dict(base)
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, "bad-config", str(e)) from e
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_CONFIG, "bad-config", str(e)) from e


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _write_json(path: str, obj) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def _snapshot(out: str, command: str, cfg: TrainConfig | None,
              flags: dict) -> None:
    obj = {"command": command, "version": __version__, "flags": flags,
           "backend": active_backend()}
    if cfg is not None:
        obj["config"] = to_dict(cfg)
    _write_json(os.path.join(out, "resolved_config.json"), obj)


def _write_timings(out: str, minutes: dict) -> None:
    _write_json(os.path.join(out, "timings.json"), {"minutes": minutes})


def _load_data(path: str):
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise CliError(EXIT_DATA, "missing-dataset", path)
    try:
        return load_dataset(path)
    except (ValueError, KeyError, OSError) as e:
        raise CliError(EXIT_DATA, "bad-dataset", f"{path}: {e}") from e


def _load_ckpt(path: str):
    if not os.path.exists(path):
        raise CliError(EXIT_DATA, "missing-checkpoint", path)
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError) as e:
        raise CliError(EXIT_DATA, "bad-checkpoint", f"{path}: {e}") from e


def _gen(cfg: TrainConfig, which: str):
    """Dataset for one stage; stage-2 scenes extend the same family."""
    if which == "stage1":
        return generate_dataset(cfg.n1, cfg.v, cfg.image_size,
                                family_seed=cfg.seed, mode=cfg.pose_mode,
                                train_fraction=cfg.train_fraction)
    return generate_dataset(cfg.n2, cfg.v, cfg.image_size,
                            family_seed=cfg.seed, mode=cfg.pose_mode,
                            train_fraction=cfg.train_fraction,
                            scene_offset=cfg.n1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    stages = ("stage1", "stage2") if args.stage == "both" else \
        (f"stage{args.stage}",)
    minutes = {}
    for which in stages:
        t0 = time.perf_counter()
        ds = _gen(cfg, which)
        save_dataset(ds, os.path.join(args.out, which))
        minutes[f"gen_{which}"] = (time.perf_counter() - t0) / 60.0
        print(f"{which}: {ds.n_scenes} scenes x {ds.n_views} views "
              f"at {ds.size}x{ds.size} -> {os.path.join(args.out, which)}")
    _snapshot(args.out, "gen-data", cfg, {"stage": args.stage})
    _write_timings(args.out, minutes)
    return EXIT_OK


def _cmd_train_stage1(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_data(args.data)
    store, report = train_stage1(dataset, cfg)
    ckpt = os.path.join(args.out, "stage1.ckpt")
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(ckpt, store, extra={"stage": "stage1",
                                        "variant": cfg.variant,
                                        "n_scenes": cfg.n1})
    _write_json(os.path.join(args.out, "report_stage1.json"),
                report.public_dict())
    _snapshot(args.out, "train-stage1", cfg, {"data": args.data})
    _write_timings(args.out, report.timing_dict()["phase_minutes"]
                   | {"total": report.wall_minutes})
    last = report.epochs[-1]["objective"] if report.epochs else float("nan")
    print(f"stage1 done: {cfg.n1} scenes, final objective {last:.6f}, "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _cmd_train_stage2(args) -> int:
    cfg = _resolve_config(args)
    store1, _ = _load_ckpt(args.stage1)
    dataset = _load_data(args.data)
    store, report = train_stage2(dataset, store1, cfg)
    ckpt = os.path.join(args.out, "stage2.ckpt")
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(ckpt, store, extra={"stage": "stage2",
                                        "variant": cfg.variant,
                                        "n_scenes": cfg.n2})
    _write_json(os.path.join(args.out, "report_stage2.json"),
                report.public_dict())
    _snapshot(args.out, "train-stage2", cfg,
              {"data": args.data, "stage1": args.stage1})
    _write_timings(args.out, report.timing_dict()["phase_minutes"]
                   | {"total": report.wall_minutes})
    last = report.epochs[-1]["objective"] if report.epochs else float("nan")
    print(f"stage2 done: {cfg.n2} scenes, final objective {last:.6f}, "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_data(args.data)
    store, _ = _load_ckpt(args.ckpt)
    try:
        result = evaluate_dataset(dataset, store, cfg, split=args.split)
    except KeyError as e:
        raise CliError(EXIT_DATA, "bad-checkpoint",
                       f"{args.ckpt}: missing group {e}") from e
    _write_json(os.path.join(args.out, "eval.json"), result)
    _snapshot(args.out, "eval", cfg,
              {"data": args.data, "ckpt": args.ckpt, "split": args.split})
    _write_timings(args.out, {})
    print(f"{args.split} mean over {len(result['rows'])} scenes: "
          f"PSNR {result['mean_psnr']:.2f} dB, "
          f"SSIM {result['mean_ssim']:.4f}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    names = args.variants.split(",") if args.variants else list(VARIANTS)
    for name in names:
        if name not in VARIANTS:
            raise CliError(EXIT_CONFIG, "bad-config",
                           f"unknown variant '{name}'")
    if args.data:
        ds1 = _load_data(os.path.join(args.data, "stage1"))
        ds2 = _load_data(os.path.join(args.data, "stage2"))
    else:
        ds1 = _gen(cfg, "stage1")
        ds2 = _gen(cfg, "stage2")
    rows = []
    minutes = {}
    for name in names:
        vcfg = project_variant(cfg, name)
        t0 = time.perf_counter()
        res = train_variant(ds1, ds2, vcfg)
        minutes[name] = (time.perf_counter() - t0) / 60.0
        rows.append({
            "variant": name,
            "per_scene_values": res["per_scene_values"],
            "mu_mb": res["mu_mb"],
            "mean_psnr_stage1": res["eval_stage1"]["mean_psnr"],
            "mean_psnr_stage2": res["eval_stage2"]["mean_psnr"],
            "mean_ssim_stage2": res["eval_stage2"]["mean_ssim"],
        })
    _write_json(os.path.join(args.out, "ablation.json"),
                {"rows": rows, "config": to_dict(cfg)})
    _snapshot(args.out, "ablate", cfg,
              {"variants": names, "data": args.data})
    _write_timings(args.out, minutes)
    header = (f"{'variant':<14} {'values/scene':>14} {'MB/scene':>12} "
              f"{'psnr1':>7} {'psnr2':>7}")
    print(header)
    for r in rows:
        print(f"{r['variant']:<14} {r['per_scene_values']:>14.1f} "
              f"{r['mu_mb']:>12.6f} {r['mean_psnr_stage1']:>7.2f} "
              f"{r['mean_psnr_stage2']:>7.2f}")
    return EXIT_OK


def _cmd_cost_report(args) -> int:
    if args.fixtures != "paper":
        raise CliError(EXIT_USAGE, "usage",
                       f"unknown fixture set '{args.fixtures}'")
    model, tau_rgb, mu_rgb = paper_fixtures()
    ns = [int(n) for n in args.n.split(",")] if args.n else [500, 1000, 2000]
    for n in ns:
        if n < model.n1:
            raise CliError(EXIT_CONFIG, "bad-config",
                           f"N={n} below the stage-1 scene count {model.n1}")
    rows = [{"n": n,
             "time_min": cost_time(model, n),
             "mem_mb": cost_mem(model, n),
             "baseline_time_min": baseline_time(tau_rgb, n),
             "baseline_mem_mb": baseline_mem(mu_rgb, n)} for n in ns]
    cross = crossover(model, tau_rgb)
    print(f"{'N':>6} {'t(N) min':>10} {'m(N) MB':>9} "
          f"{'rgb t min':>10} {'rgb m MB':>9}")
    for r in rows:
        print(f"{r['n']:>6} {r['time_min']:>10.0f} {r['mem_mb']:>9.0f} "
              f"{r['baseline_time_min']:>10.0f} "
              f"{r['baseline_mem_mb']:>9.0f}")
    print(f"time crossover at N = {cross:.1f}")
    if args.out:
        _write_json(os.path.join(args.out, "cost_report.json"),
                    {"rows": rows, "crossover_n": cross,
                     "model": {"t1": model.t1, "tau": model.tau,
                               "m1": model.m1, "mu": model.mu,
                               "n1": model.n1},
                     "baseline": {"tau_rgb": tau_rgb, "mu_rgb": mu_rgb}})
        _snapshot(args.out, "cost-report", None,
                  {"fixtures": args.fixtures, "n": ns})
        _write_timings(args.out, {})
    return EXIT_OK


def _cmd_render(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_data(args.data)
    store, _ = _load_ckpt(args.ckpt)
    if not 0 <= args.scene < dataset.n_scenes:
        raise CliError(EXIT_DATA, "bad-index",
                       f"scene {args.scene} outside 0..{dataset.n_scenes - 1}")
    views = dataset.scenes[args.scene].views
    if not 0 <= args.view < len(views):
        raise CliError(EXIT_DATA, "bad-index",
                       f"view {args.view} outside 0..{len(views) - 1}")
    view = views[args.view]
    try:
        pred = render_view(store, cfg, args.scene, view.pose)
    except KeyError as e:
        raise CliError(EXIT_DATA, "bad-checkpoint",
                       f"{args.ckpt}: missing group {e}") from e
    os.makedirs(args.out, exist_ok=True)
    blob = os.path.join(args.out,
                        f"render_scene{args.scene}_view{args.view}.sigt")
    save_blob(blob, pred.astype(np.float32))
    metrics = {"scene": args.scene, "view": args.view, "split": view.split,
               "psnr": psnr(view.image, pred),
               "ssim": ssim(view.image, pred), "blob": os.path.basename(blob)}
    _write_json(os.path.join(args.out, "render.json"), metrics)
    _snapshot(args.out, "render", cfg,
              {"data": args.data, "ckpt": args.ckpt,
               "scene": args.scene, "view": args.view})
    _write_timings(args.out, {})
    print(f"scene {args.scene} view {args.view} ({view.split}): "
          f"PSNR {metrics['psnr']:.2f} dB -> {blob}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    ops = args.ops.split(",") if args.ops else None
    if ops:
        for op in ops:
            if op not in gradcheck_mod.CASES:
                raise CliError(EXIT_USAGE, "usage",
                               f"unknown op '{op}' (choose from "
                               f"{', '.join(gradcheck_mod.CASES)})")
    results = gradcheck_mod.run_all(bits=args.bits, n_points=args.points,
                                    seed=args.seed, ops=ops)
    tol = gradcheck_mod.tolerance(args.bits)
    for r in results:
        status = "ok" if r.passed(tol) else "FAIL"
        print(f"{r.op:<18} max_rel_err {r.max_rel_err:.3e}  "
              f"points {r.points}  coords {r.coords_checked}  "
              f"{r.seconds:5.1f}s  {status}")
    if args.out:
        _write_json(os.path.join(args.out, "gradcheck.json"),
                    {"bits": args.bits, "tolerance": tol,
                     "results": [{"op": r.op, "points": r.points,
                                  "coords_checked": r.coords_checked,
                                  "max_rel_err": r.max_rel_err}
                                 for r in results]})
        _snapshot(args.out, "gradcheck", None,
                  {"bits": args.bits, "points": args.points,
                   "ops": ops or list(gradcheck_mod.CASES)})
        _write_timings(args.out, {r.op: r.seconds / 60.0 for r in results})
    bad = [r.op for r in results if not r.passed(tol)]
    if bad:
        raise CliError(EXIT_NUMERIC, "gradcheck-tolerance",
                       f"max relative error >= {tol} for {', '.join(bad)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config_flags(p) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field (dotted paths allowed, "
                        "e.g. stage1.lr.micro=1e-3); repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scaledig",
                     description="Micro-macro tri-plane pipeline: data, "
                                 "two-stage training, evaluation, ablations, "
                                 "cost accounting, gradient verification.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    p = sub.add_parser("gen-data", parents=[], help="generate synthetic "
                       "posed multi-view datasets for both stages")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-stage1", help="warm-up plus joint training "
                       "of latent space, renderer, basis, and first scenes")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="stage-1 dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="latent supervision plus RGB "
                       "alignment for a new scene set")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="stage-2 dataset directory")
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_stage2)

    p = sub.add_parser("eval", help="PSNR/SSIM on held-out views")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train every representation variant "
                       "and tabulate per-scene storage and quality")
    _add_config_flags(p)
    p.add_argument("--data", help="gen-data output directory (datasets are "
                   "generated on the fly when omitted)")
    p.add_argument("--variants", help="comma list, default all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("cost-report", help="affine scaling-law table")
    p.add_argument("--fixtures", default="paper",
                   help="constant set to report (currently: paper)")
    p.add_argument("--n", help="comma list of scene counts")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_cost_report)

    p = sub.add_parser("render", help="render one view from a checkpoint")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("gradcheck", help="verify reverse-mode gradients "
                       "against central finite differences")
    p.add_argument("--bits", type=int, choices=(32, 64), default=64)
    p.add_argument("--points", type=int, default=gradcheck_mod.DEFAULT_POINTS)
    p.add_argument("--ops", help="comma list, default all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except SystemExit as e:
        # argparse --help / --version exit
        return int(e.code or 0)
    except CliError as e:
        print(f"error: {e.category}: {e.detail}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"error: bad-config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainAbort as e:
        print(f"error: non-finite: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: missing-file: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as e:
        print(f"error: invalid-value: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
