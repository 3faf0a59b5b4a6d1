"""Command-line entry point: ``strwkv <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace

from . import bench, gradcheck
from .fileio import FormatError, load_ppm, load_weights, save_ppm, save_weights
from .losses import LossWeights, make_extractor
from .model import ModelConfig, StyleTransferModel, forward_padded, param_count, stylize
from .scan import VARIANTS as SCAN_VARIANTS
from .shift import SHIFT_VARIANTS
from .train import TOY_LR, step_loss, toy_pair, train_toy

log = logging.getLogger("strwkv")

ABLATION_AXES = {
    "q": [{"q": q} for q in (1, 2, 3)],
    "shift": [{"shift": s} for s in ("quad", "omni", "deform")],
    "scan": [{"scan": "bidirectional"}, {"scan": "zigzag"}]
    + [{"scan": "skip", "p": p} for p in (1, 2, 3)],
}
ABLATION_COLUMNS = ("axis", "variant", "q", "p", "shift", "scan", "steps", "params",
                    "loss_init", "loss_final", "content", "style", "identity1", "identity2", "forward_ms")

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None

def _str_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strwkv", description="RWKV-style style transfer toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stylize", help="stylize a content image with a style image")
    s.add_argument("--content", required=True)
    s.add_argument("--style", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--q", type=int)
    s.add_argument("--p", type=int)
    s.add_argument("--shift", choices=SHIFT_VARIANTS)
    s.add_argument("--scan", choices=[v for v in SCAN_VARIANTS if v != "identity"])
    s.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("bench", help="time kernels over sequence lengths, write CSV")
    b.add_argument("--kernels", type=_str_list, default=["bi_wkv_scan", "bi_wkv_naive"])
    b.add_argument("--lengths", type=_int_list, default=[1024, 2048, 4096])
    b.add_argument("--channels", type=int, default=8)
    b.add_argument("--q", type=int, default=2)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", action="append", choices=list(gradcheck.CHECKS),
                   help="restrict to one check (repeatable); default all")
    g.add_argument("--trials", type=int, default=20)

    a = sub.add_parser("ablate", help="run the variant matrix of one axis, write CSV")
    a.add_argument("--axis", required=True, choices=list(ABLATION_AXES))
    a.add_argument("--out", default="-")
    a.add_argument("--size", type=int, default=64)
    a.add_argument("--steps", type=int, default=2)
    a.add_argument("--features", choices=["tiny", "identity"], default="tiny")
    a.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train-toy", help="fit a tiny model to one image pair")
    t.add_argument("--content")
    t.add_argument("--style")
    t.add_argument("--size", type=int, default=32, help="synthetic pair size when no images given")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--lr", type=float, default=TOY_LR)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--features", choices=["tiny", "identity"], default="tiny")
    t.add_argument("--curve", required=True, help="CSV of step,loss")
    t.add_argument("--weights-out")
    return ap

def cmd_stylize(args) -> int:
    model = load_weights(args.weights)
    overrides = {k: getattr(args, k) for k in ("q", "p", "scan") if getattr(args, k) is not None}
    if args.shift is not None and args.shift != model.config.shift:
        raise ValueError(f"checkpoint holds {model.config.shift!r} shift weights; cannot run {args.shift!r}")
    if overrides:
        model = StyleTransferModel(replace(model.config, **overrides), model.params)
    out = stylize(load_ppm(args.content), load_ppm(args.style), model)
    save_ppm(out, args.out)
    log.info("wrote %s (%dx%d)", args.out, out.shape[2], out.shape[1])
    return 0

def cmd_bench(args) -> int:
    unknown = set(args.kernels) - set(bench.KERNELS)
    if unknown:
        raise ValueError(f"unknown kernels: {sorted(unknown)}")
    records = bench.sweep(args.kernels, args.lengths, args.channels, args.q, args.out, args.repeats)
    for r in records:
        log.info("%s T=%d %.3f ms", r.kernel, r.T, r.wall_ns / 1e6)
    return 0

def cmd_gradcheck(args) -> int:
    reports = gradcheck.run_checks(args.module, trials=args.trials)
    for r in reports:
        print(r.line())
    return 0 if all(r.passed for r in reports) else 1

def ablation_rows(axis: str, size: int = 64, steps: int = 2, features: str = "tiny", seed: int = 0):
    """One row per variant: initial and post-training loss plus forward time on a fixed pair."""
    content, style = toy_pair(size, seed=7)
    fe = make_extractor(features)
    weights = LossWeights()
    rows = []
    for change in ABLATION_AXES[axis]:
        cfg = ModelConfig.tiny(seed=seed, **change)
        res = train_toy(cfg, content, style, steps, seed=seed, extractor=fe)
        _, parts = step_loss(res.model, res.model.params, content, style, fe, weights)
        t0 = time.perf_counter()
        forward_padded(content, style, res.model)
        ms = (time.perf_counter() - t0) * 1e3
        label = ",".join(f"{k}={v}" for k, v in change.items())
        rows.append({
            "axis": axis, "variant": label, "q": cfg.q, "p": cfg.p, "shift": cfg.shift, "scan": cfg.scan,
            "steps": steps, "params": param_count(res.model), "loss_init": f"{res.curve[0]:.6f}",
            "loss_final": f"{res.curve[-1]:.6f}", "content": f"{float(parts[0]):.6f}",
            "style": f"{float(parts[1]):.6f}", "identity1": f"{float(parts[2]):.6f}",
            "identity2": f"{float(parts[3]):.6f}", "forward_ms": f"{ms:.1f}",
        })
        log.info("%s %s loss %.4f -> %.4f", axis, label, res.curve[0], res.curve[-1])
    return rows

def cmd_ablate(args) -> int:
    rows = ablation_rows(args.axis, args.size, args.steps, args.features, args.seed)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0

def cmd_train_toy(args) -> int:
    if (args.content is None) != (args.style is None):
        raise ValueError("--content and --style must be given together")
    if args.content is None:
        content, style = toy_pair(args.size)
    else:
        content, style = load_ppm(args.content), load_ppm(args.style)
    res = train_toy(ModelConfig.tiny(), content, style, args.steps, seed=args.seed, lr=args.lr,
                    extractor=make_extractor(args.features))
    with open(args.curve, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "loss"))
        for i, v in enumerate(res.curve):
            w.writerow((i, repr(float(v))))
    if args.weights_out:
        save_weights(res.model, args.weights_out)
    log.info("loss %.4f -> %.4f", res.curve[0], res.curve[-1])
    return 0

COMMANDS = {"stylize": cmd_stylize, "bench": cmd_bench, "gradcheck": cmd_gradcheck,
            "ablate": cmd_ablate, "train-toy": cmd_train_toy}

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, FormatError, FloatingPointError) as e:
        print(f"strwkv {args.command}: error: {e}", file=sys.stderr)
        return 1

if __name__ == "__main__":
    sys.exit(main())
