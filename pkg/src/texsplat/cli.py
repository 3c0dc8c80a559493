"""``texsplat`` command line: synth, train, render, eval, inspect.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import losses
from .adaptation import AdaptationConfig
from .renderer import render
from .scene_io import (
    Dataset,
    camera_to_json,
    load_checkpoint,
    load_dataset,
    read_image,
    save_checkpoint,
    save_dataset,
    write_image,
)
from .synthetic import SPECS, make_synthetic
from .trainer import TrainConfig, evaluate, initialize, train

log = logging.getLogger("texsplat")


class UsageError(Exception):
    """Bad user input detected after parsing; maps to exit code 2."""


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _non_negative_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _dataset(spec: str) -> Dataset:
    """A dataset directory, or ``synth:<name>`` for an in-memory synthetic scene."""
    if spec.startswith("synth:"):
        return make_synthetic(spec[len("synth:"):])[0]
    return load_dataset(spec)


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    ds, gt = make_synthetic(args.spec, n_views=args.views, size=args.size, seed=args.seed)
    out = Path(args.out)
    save_dataset(ds, out, fmt=args.format)
    save_checkpoint(gt, out / "ground_truth.sptx", config={"synthetic": args.spec, "seed": args.seed})
    print(f"wrote {len(ds)} views of {args.spec} to {out}")
    return 0


def train_config(args) -> TrainConfig:
    adapt = AdaptationConfig(
        tau_ds=args.tau_ds, quantile=args.quantile, tau_tr_start=args.tau_tr_start, tau_tr_end=args.tau_tr_end,
    )
    return TrainConfig(
        iters=args.iters, lambda_ssim=args.lambda_ssim, lambda_texture=args.lambda_texture,
        lambda_opacity=args.lambda_opacity, point_budget=args.point_budget, seed=args.seed,
        texture_start_iter=args.texture_start, adapt_every=args.adapt_every, adapt_until=args.adapt_until,
        realloc_every=args.realloc_every, adapt=not args.no_adapt, init_points=args.init_points,
        adaptation=adapt,
    )


def cmd_train(args) -> int:
    try:
        cfg = train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = _dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_dict()

    def progress(it, scene, row):
        log.info("iter %d  loss %.5f  psnr_test %s  prims %d  texels %d", it, row["loss"] or 0.0,
                 row["psnr_test"], row["n_prims"], row["n_texels"])

    if cfg.iters == 0:
        scene = initialize(ds, cfg, np.random.default_rng(cfg.seed))
        metrics, events, iteration = [], [], 0
    else:
        res = train(ds, cfg, callback=progress)
        scene, metrics, events, iteration = res.scene, res.metrics, res.events, res.state.iteration
    save_checkpoint(scene, out / "checkpoint.sptx", iteration=iteration, config=echo)
    _write_jsonl(out / "metrics.jsonl", metrics)
    _write_jsonl(out / "adaptation.jsonl", events)
    (out / "config.json").write_text(json.dumps(echo, indent=1, sort_keys=True))
    n, nt, npar = scene.parameter_count()
    print(f"iterations {iteration}  primitives {n}  texels {nt}  parameters {npar}")
    if metrics and metrics[-1]["psnr_test"] is not None:
        print(f"test PSNR {metrics[-1]['psnr_test']:.3f} dB")
    return 0


def cmd_render(args) -> int:
    scene, _, _ = load_checkpoint(args.checkpoint)
    if args.camera_json:
        entry = json.loads(Path(args.camera_json).read_text())
        from .scene_io import _camera_from_json
        cam = _camera_from_json(entry, args.camera_json)
        reference = None
    else:
        if args.dataset is None:
            raise UsageError("--camera needs --dataset")
        ds = _dataset(args.dataset)
        if not 0 <= args.camera < len(ds):
            raise UsageError(f"unknown camera id {args.camera} (dataset has {len(ds)} cameras)")
        cam = ds.cameras[args.camera]
        reference = ds.images[args.camera]
    img = render(scene, cam).image
    write_image(args.out, img)
    msg = f"wrote {args.out}"
    if reference is not None:
        written = read_image(args.out)
        msg += f"  PSNR {losses.psnr(written, reference):.4f} dB"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    scene, iteration, _ = load_checkpoint(args.checkpoint)
    ds = _dataset(args.dataset)
    views = {"test": ds.test, "train": ds.train, "all": list(range(len(ds)))}[args.split]
    if not views:
        raise RuntimeError(f"the {args.split} split is empty")
    ev = evaluate(scene, ds, views)
    n, nt, npar = scene.parameter_count()
    result = {
        "iteration": iteration,
        "split": args.split,
        "views": views,
        "psnr": ev["psnr"],
        "ssim": ev["ssim"],
        "psnr_views": ev["psnr_views"],
        "n_prims": n,
        "n_texels": nt,
        "n_params": npar,
    }
    if args.lpips_model:
        result["lpips_note"] = "LPIPS model files are not supported by this build; metric omitted"
    else:
        result["lpips_note"] = "LPIPS omitted (needs --lpips-model)"
    text = json.dumps(result, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def inspect_summary(scene) -> dict:
    n, nt, npar = scene.parameter_count()
    counts = scene.textures.counts
    res = scene.textures.res
    textured = counts > 0
    exps, freq = np.unique(scene.t2p, return_counts=True) if n else (np.zeros(0), np.zeros(0))
    return {
        "n_prims": n,
        "n_textured": int(textured.sum()),
        "n_texels": nt,
        "n_params": npar,
        "t2p_histogram": {str(int(e)): int(c) for e, c in zip(exps, freq)},
        "mean_t2p": float(scene.t2p.mean()) if n else None,
        "texels_per_prim": [int(c) for c in counts],
        "resolutions": [[int(a), int(b)] for a, b in res],
        "max_resolution": [int(res[:, 0].max()), int(res[:, 1].max())] if n else [0, 0],
    }


def cmd_inspect(args) -> int:
    scene, iteration, config = load_checkpoint(args.checkpoint)
    summary = inspect_summary(scene)
    summary["iteration"] = iteration
    if args.json:
        print(json.dumps(summary, indent=1))
        return 0
    print(f"checkpoint   {args.checkpoint} (iteration {iteration})")
    print(f"primitives   {summary['n_prims']} ({summary['n_textured']} textured)")
    print(f"texels       {summary['n_texels']}")
    print(f"parameters   {summary['n_params']}")
    print("t2p exponent histogram:")
    total = max(summary["n_prims"], 1)
    for e, c in summary["t2p_histogram"].items():
        print(f"  {e:>4}  {c:6d}  {'#' * int(round(40 * c / total))}")
    print(f"largest grid {summary['max_resolution'][0]}x{summary['max_resolution'][1]}")
    return 0


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texsplat", description="Content-aware textured surfel splatting on the CPU.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset and its ground-truth checkpoint")
    s.add_argument("spec", choices=SPECS, help="scene name")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--views", type=_positive_int, default=8, help="number of ring views (default 8)")
    s.add_argument("--size", type=_positive_int, default=64, help="image width and height (default 64)")
    s.add_argument("--seed", type=int, default=0, help="texture seed (default 0)")
    s.add_argument("--format", choices=("pfm", "png"), default="pfm", help="image format (default pfm)")
    s.set_defaults(func=cmd_synth)

    d = TrainConfig()
    a = AdaptationConfig()
    t = sub.add_parser("train", help="fit a textured surfel scene to a dataset")
    t.add_argument("dataset", help="dataset directory or synth:<name>")
    t.add_argument("--out", required=True, help="output directory for checkpoint and logs")
    t.add_argument("--iters", type=_non_negative_int, default=d.iters, help=f"iterations (default {d.iters})")
    t.add_argument("--lambda-ssim", type=_non_negative_float, default=d.lambda_ssim,
                   help=f"SSIM weight in the RGB loss (default {d.lambda_ssim})")
    t.add_argument("--lambda-texture", type=_non_negative_float, default=d.lambda_texture,
                   help=f"texel sparsity weight (default {d.lambda_texture})")
    t.add_argument("--lambda-opacity", type=_non_negative_float, default=d.lambda_opacity,
                   help=f"opacity regularization weight (default {d.lambda_opacity})")
    t.add_argument("--tau-ds", type=float, default=a.tau_ds, help=f"downscale error threshold (default {a.tau_ds})")
    t.add_argument("--tau-tr-start", type=_positive_int, default=a.tau_tr_start,
                   help=f"split resolution threshold at iteration 0 (default {a.tau_tr_start})")
    t.add_argument("--tau-tr-end", type=_positive_int, default=a.tau_tr_end,
                   help=f"split resolution threshold after the ramp (default {a.tau_tr_end})")
    t.add_argument("--quantile", type=_unit_interval, default=a.quantile,
                   help=f"error quantile selecting primitives to refine (default {a.quantile})")
    t.add_argument("--point-budget", type=_positive_int, default=None, help="maximum primitive count")
    t.add_argument("--seed", type=int, default=d.seed, help=f"random seed (default {d.seed})")
    t.add_argument("--texture-start", type=_non_negative_int, default=d.texture_start_iter,
                   help=f"iteration that enables textures (default {d.texture_start_iter})")
    t.add_argument("--adapt-every", type=_positive_int, default=d.adapt_every,
                   help=f"adaptation cadence (default {d.adapt_every})")
    t.add_argument("--adapt-until", type=_non_negative_int, default=d.adapt_until,
                   help=f"last adaptation iteration (default {d.adapt_until})")
    t.add_argument("--realloc-every", type=_positive_int, default=d.realloc_every,
                   help=f"texture reallocation cadence (default {d.realloc_every})")
    t.add_argument("--init-points", type=_positive_int, default=None,
                   help="subsample the point cloud to this many initial primitives")
    t.add_argument("--no-adapt", action="store_true", help="disable texel-size adaptation and splitting")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a checkpoint from a camera")
    r.add_argument("checkpoint")
    r.add_argument("--dataset", help="dataset directory or synth:<name> providing the camera")
    r.add_argument("--camera", type=int, default=0, help="camera id within the dataset (default 0)")
    r.add_argument("--camera-json", help="JSON file with one camera entry (cameras.json schema)")
    r.add_argument("--out", required=True, help="output image, .png or .pfm")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM and parameter counts of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("dataset", help="dataset directory or synth:<name>")
    e.add_argument("--split", choices=("test", "train", "all"), default="test", help="views to score (default test)")
    e.add_argument("--lpips-model", help="path to an LPIPS model (optional; metric omitted otherwise)")
    e.add_argument("--out", help="also write the JSON result here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize primitives, exponents and texture sizes")
    i.add_argument("checkpoint")
    i.add_argument("--json", action="store_true", help="print the JSON summary only")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"texsplat: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  (any runtime failure maps to exit 1)
        print(f"texsplat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
