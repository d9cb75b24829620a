"""Command-line surface: train, eval, ablate, map, features, bench-scan,
params, selfcheck.

Every training-style run writes its fully resolved configuration next to
its outputs so ablations stay auditable as config deltas.  Reruns with the
same resolved config and seed reproduce outputs byte-for-byte (timing CSVs
exempt).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bench import bench_csv, run_benchmark
from .config import BRANCH_MODES, RunConfig
from .data import extract_window, load_hsic, render_map
from .model import count_params, init_model, model_forward
from .selfcheck import run_selfcheck
from .training import (
    evaluate,
    load_model_params,
    normalize_cube,
    predict_scene,
    split_dataset,
    train,
)

__all__ = ["main"]


def _resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    return cfg


def _require_file(path, what):
    if path is None or not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _metrics_text(record):
    if record.oa is None:
        return "no labeled test pixels; metrics unavailable\n"
    return (f"OA (%)  {100 * record.oa:.2f}\n"
            f"AA (%)  {100 * record.aa:.2f}\n"
            f"K x 100 {100 * record.kappa:.2f}\n")


def cmd_train(args):
    cfg = _resolve_config(args)
    _require_file(args.data, "dataset")
    cube = load_hsic(args.data)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.txt"))
    state, _ = train(cube, cfg, out_dir=args.out)
    last = state.history[-1] if state.history else None
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(_metrics_text(last) if last else "zero-epoch run; no metrics\n")
    if last is None:
        print("zero-epoch run; wrote the initialization")
        return 0
    print(f"trained {cfg.epochs} epochs; final loss {last.loss:.6f}")
    if last.oa is not None:
        print(f"test OA {100 * last.oa:.2f}%  AA {100 * last.aa:.2f}%  "
              f"K {100 * last.kappa:.2f}")
    return 0


def _load_run(run_dir, cube):
    cfg = RunConfig.load(os.path.join(run_dir, "config.txt"))
    params = load_model_params(os.path.join(run_dir, "checkpoint.ssck"),
                               cfg, cube.b, cube.n_classes)
    return cfg, params


def cmd_eval(args):
    _require_file(args.data, "dataset")
    _require_file(os.path.join(args.run, "config.txt"), "run config")
    cube = load_hsic(args.data)
    cfg, params = _load_run(args.run, cube)
    _, test_ids = split_dataset(cube, cfg.class_counts(cube.n_classes), cfg.seed)
    if not test_ids.size:
        print("no test pixels under this configuration", file=sys.stderr)
        return 1
    result = evaluate(params, normalize_cube(cube, cfg.normalize), cfg, test_ids)
    text = (f"OA (%)  {100 * result.oa:.2f}\n"
            f"AA (%)  {100 * result.aa:.2f}\n"
            f"K x 100 {100 * result.kappa:.2f}\n")
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        cfg.save(os.path.join(args.out, "config.txt"))
        with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
            for c, acc in enumerate(result.per_class, start=1):
                fh.write(f"class_{c} {100 * acc:.2f}\n")
    return 0


_METRIC_ROWS = (("OA (%)", "oa"), ("AA (%)", "aa"), ("K x 100", "kappa"))
_BRANCH_TITLES = {
    "spectral_only": "Spectral Only",
    "spatial_only": "Spatial Only",
    "spectral_spatial": "Spectral-Spatial",
}


def ablate_table(results):
    """results: dict (branch_mode, enhancement) -> EpochRecord-like with oa/aa/kappa."""
    lines = [f"{'':<18}{'':<10}{'w/':>10}{'w/o':>10}"]
    for branch in BRANCH_MODES:
        title = _BRANCH_TITLES[branch]
        for i, (label, attr) in enumerate(_METRIC_ROWS):
            on = getattr(results[(branch, True)], attr)
            off = getattr(results[(branch, False)], attr)
            lines.append(f"{title if i == 0 else '':<18}{label:<10}"
                         f"{100 * on:>10.2f}{100 * off:>10.2f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cfg = _resolve_config(args)
    _require_file(args.data, "dataset")
    cube = load_hsic(args.data)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.txt"))
    results = {}
    csv_lines = ["branch_mode,enhancement,oa,aa,kappa"]
    for branch in BRANCH_MODES:
        for enh in (True, False):
            run_cfg = cfg.replaced({"branch_mode": branch, "enhancement": enh})
            state, _ = train(cube, run_cfg)
            record = state.history[-1]
            if record.oa is None:
                raise RuntimeError("ablation needs held-out pixels; lower train counts")
            results[(branch, enh)] = record
            csv_lines.append(f"{branch},{str(enh).lower()},"
                             f"{record.oa!r},{record.aa!r},{record.kappa!r}")
            print(f"{branch:<18} enhancement={'on ' if enh else 'off'} "
                  f"OA {100 * record.oa:.2f}%")
    table = ablate_table(results)
    with open(os.path.join(args.out, "ablate.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    with open(os.path.join(args.out, "ablate.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def cmd_map(args):
    _require_file(args.data, "dataset")
    cube = load_hsic(args.data)
    cfg, params = _load_run(args.run, cube)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.txt"))
    predictions = predict_scene(params, cube, cfg)
    with open(os.path.join(args.out, "map.ppm"), "wb") as fh:
        fh.write(render_map(cube, predictions))
    with open(os.path.join(args.out, "truth.ppm"), "wb") as fh:
        fh.write(render_map(cube, cube.labels))
    print(f"wrote {os.path.join(args.out, 'map.ppm')} ({cube.w}x{cube.h})")
    return 0


def cmd_features(args):
    _require_file(args.data, "dataset")
    cube = load_hsic(args.data)
    cfg, params = _load_run(args.run, cube)
    row, _, col = args.pixel.partition(",")
    row, col = int(row), int(col)
    prepared = normalize_cube(cube, cfg.normalize)
    window = extract_window(prepared, row, col, cfg.window)
    _, trace = model_forward(window, params, trace=True)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.txt"))
    manifest = [f"# per-block token snapshots for pixel ({row}, {col})",
                "# file rows cols dtype order"]
    for kind, snaps in (("spatial", trace.spatial), ("spectral", trace.spectral)):
        for i, snap in enumerate(snaps):
            name = f"block{i}_{kind}.f32"
            snap.astype("<f4").tofile(os.path.join(args.out, name))
            manifest.append(f"{name} {snap.shape[0]} {snap.shape[1]} float32-le row-major")
    with open(os.path.join(args.out, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest) + "\n")
    print(f"wrote {len(manifest) - 2} snapshots to {args.out}")
    return 0


def cmd_bench_scan(args):
    result = run_benchmark()
    text = bench_csv(result)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench_scan.csv"), "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    print(f"scan exponent {result.scan_exponent:.3f} (linear-time target), "
          f"attention exponent {result.attention_exponent:.3f} (quadratic reference)")
    return 0


def cmd_params(args):
    cfg = _resolve_config(args)
    params = init_model(cfg, bands=args.bands, n_classes=args.classes,
                        rng=np.random.default_rng(0))
    counts = count_params(params)
    width = max(len(k) for k in counts)
    for key in sorted(k for k in counts if k != "total"):
        print(f"{key:<{width}} {counts[key]:>10}")
    print(f"{'total':<{width}} {counts['total']:>10}")
    return 0


def cmd_selfcheck(args):
    return 0 if run_selfcheck() else 1


def _add_config_args(p):
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ssmamba",
        description="spectral-spatial Mamba HSI classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on an HSIC scene")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="HSIC dataset path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run on its test split")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="directory holding config.txt + checkpoint.ssck")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="branch-mode x enhancement comparison table")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("map", help="render a full-scene classification map")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("features", help="dump per-block token snapshots for one pixel")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--pixel", required=True, metavar="ROW,COL")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("bench-scan", help="scan-vs-attention scaling benchmark")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench_scan)

    p = sub.add_parser("params", help="trainable parameter counts per module")
    _add_config_args(p)
    p.add_argument("--bands", type=int, default=200)
    p.add_argument("--classes", type=int, default=16)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("selfcheck", help="run the invariant suite")
    p.set_defaults(fn=cmd_selfcheck)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
