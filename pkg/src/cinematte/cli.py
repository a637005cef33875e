"""Command line entry point: synth, train, infer, eval, stress."""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import datagen
from .evaluation import evaluate, infer, parse_levels, stress_shift
from .metrics import EVAL_RES, evaluate_pairs
from .model import Checkpoint, TrainConfig, load_config, save_config
from .training import train

log = logging.getLogger("cinematte")


def _res(value):
    return None if value in (None, 0) else int(value)


def cmd_synth(args):
    out = Path(args.out)
    if args.kind == "sequence":
        samples = datagen.synth_sequence(args.res, args.seed, args.count,
                                         velocity=tuple(args.velocity))
    else:
        samples = [datagen.synth_sample(args.kind, args.res, datagen.sample_seed(args.seed, i))
                   for i in range(args.count)]
    for i, s in enumerate(samples):
        datagen.save_sample(s, out, i)
    (out / "run.json").write_text(json.dumps(
        {"command": "synth", "kind": args.kind, "count": args.count, "res": args.res,
         "seed": args.seed}, indent=2))
    print(f"wrote {len(samples)} samples to {out}")


def cmd_train(args):
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = TrainConfig.toy(**overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    samples = [s for _, s in datagen.load_samples(args.data)]
    if not samples:
        sys.exit(f"no samples found in {args.data}")
    if samples[0].shape != (cfg.resolution, cfg.resolution):
        sys.exit(f"samples are {samples[0].shape}, config resolution is {cfg.resolution}")
    ckpt = train(cfg, samples, out_dir=out)
    print(f"trained {cfg.steps} steps; final loss "
          f"{ckpt.history[-1] if ckpt.history else float('nan'):.5f}; checkpoint in {out}")


def _write_alpha(alpha, path):
    Image.fromarray(np.round(np.clip(alpha, 0, 1) * 255).astype(np.uint8)).save(path)


def cmd_infer(args):
    ckpt = Checkpoint.load(args.ckpt)
    bg = datagen.read_rgb(args.bg) if args.bg else None
    alpha = infer(datagen.read_rgb(args.image), bg, ckpt)
    _write_alpha(alpha, args.out)
    print(f"wrote {args.out}")


def _gt_pairs(pred_dir, gt_dir):
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pairs = []
    for gt_path in sorted(gt_dir.glob("*.png")):
        name = gt_path.name
        if name.endswith(("_img.png", "_bg.png")):
            continue
        sample_id = name[:-len("_alpha.png")] if name.endswith("_alpha.png") else gt_path.stem
        for cand in (name, f"{sample_id}.png", f"{sample_id}_alpha.png"):
            if (pred_dir / cand).exists():
                pairs.append((sample_id, datagen.read_alpha(pred_dir / cand),
                              datagen.read_alpha(gt_path)))
                break
        else:
            raise SystemExit(f"no prediction for {name} in {pred_dir}")
    return pairs


def _emit(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(path)
    report.write_summary(path.with_suffix(".json"))
    agg = ", ".join(f"{k}={v:.4f}" for k, v in report.aggregates.items())
    print(f"{path}: {agg}")


def cmd_eval(args):
    res = _res(args.res)
    if args.pred_dir:
        if not args.gt_dir:
            sys.exit("--pred-dir needs --gt-dir")
        report = evaluate_pairs(_gt_pairs(args.pred_dir, args.gt_dir), res=res,
                                provenance={"pred_dir": args.pred_dir, "gt_dir": args.gt_dir})
    else:
        if not (args.ckpt and args.data):
            sys.exit("eval needs --ckpt and --data, or --pred-dir and --gt-dir")
        ckpt = Checkpoint.load(args.ckpt)
        report = evaluate(ckpt, datagen.load_samples(args.data), res=res,
                          provenance={"data": args.data, "shift_level": "none"})
    _emit(report, args.report)


def cmd_stress(args):
    ckpt = Checkpoint.load(args.ckpt)
    levels = parse_levels(args.levels)
    reports = stress_shift(ckpt, datagen.load_samples(args.data), levels, seed=args.seed,
                           res=_res(args.res))
    base = Path(args.report)
    for level, report in zip(levels, reports):
        _emit(report, base.with_name(f"{base.stem}_{level.name}{base.suffix or '.csv'}"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cinematte", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write analytic samples to a directory")
    p.add_argument("--kind", default="disk", choices=datagen.SYNTH_KINDS)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--velocity", type=float, nargs=2, default=(1.0, 0.5),
                   help="sequence kind only: pixels/frame (row, col)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a sample directory")
    p.add_argument("--config", help="YAML config; omitted means the toy settings")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict one alpha matte")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--bg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a checkpoint or a directory of predictions")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-dir")
    p.add_argument("--res", type=int, default=EVAL_RES, help="0 keeps native resolution")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stress", help="background-shift robustness levels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--levels", default="table",
                   help='"table" for the standard three levels or a JSON list of ranges')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=EVAL_RES, help="0 keeps native resolution")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_stress)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.func(args)


if __name__ == "__main__":
    main()
