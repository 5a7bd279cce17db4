"""Command line interface.

Subcommands: forward, gradcheck, train-toy, eval, gen-pairs, ablate.
Every command accepts --seed (falling back to the SACNET_SEED environment
variable, then 0) and --config FILE with key=value lines whose keys are
the long option names with '-' replaced by '_'.  Precedence is
command line > config file > built-in default.

Exit codes: 0 success, 2 I/O or argument problems, 3 shape mismatches,
4 numeric failures (NaN divergence, failed gradient check), 5 protocol
mismatches (unpaired inputs, checkpoint/model disagreement).
"""

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import io as sio
from .datagen import AffineRanges, SyntheticPair, gen_pairs
from .errors import (NumericError, ParameterError, ParseError, ProtocolError,
                     ShapeError)
from .network import (SACNet, SACNetConfig, ablation_config,
                      end_to_end_grad_check, nudge_offsets)
from .train import dataset_loss, iou, train_toy, write_history_csv

_REQUIRED = object()
_VARIANTS = ("full", "no-acm", "no-awp", "no-sgm", "no-afsm")


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"expected a boolean, got {text!r}")


def _parse_channels(text):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ParameterError(f"channels must be comma-separated ints, got {text!r}")
    return parts


def _parse_variant(text):
    if text not in _VARIANTS:
        raise ParameterError(f"variant must be one of {', '.join(_VARIANTS)}, got {text!r}")
    return text


@dataclass(frozen=True)
class Opt:
    name: str                 # long option without leading dashes
    type: object
    default: object
    help: str

    @property
    def dest(self):
        return self.name.replace("-", "_")


_COMMON = (
    Opt("seed", int, None, "rng seed (default: $SACNET_SEED, then 0)"),
    Opt("config", str, None, "key=value file supplying option defaults"),
)

# toy-scale architecture options shared by the training-style commands
_ARCH = (
    Opt("channels", _parse_channels, (6, 8, 12, 16), "encoder widths per level"),
    Opt("decoder-channels", int, 8, "decoder width"),
    Opt("cascade-depth", int, 2, "deformable stages per level"),
    Opt("small-window", int, 2, "query window side M"),
    Opt("large-window", int, 4, "key/value window side N"),
    Opt("variant", _parse_variant, "full", "ablation wiring"),
)


def _build_config(size, seed, opts):
    base = SACNetConfig(input_size=size, channels=opts["channels"],
                        decoder_channels=opts["decoder_channels"],
                        cascade_depth=opts["cascade_depth"],
                        small_window=opts["small_window"],
                        large_window=opts["large_window"], seed=seed)
    return ablation_config(base, opts["variant"])


def _convert(raw, to_type, what):
    try:
        return to_type(raw)
    except ValueError:
        raise ParameterError(f"{what}: cannot parse {raw!r} as {to_type.__name__}")


def _resolve(spec, args, argv_config):
    merged = {}
    known = {o.name for o in spec}
    for key in argv_config:
        if key not in known:
            raise ParameterError(f"config file sets unknown option {key!r}")
    for o in spec:
        value = getattr(args, o.dest)
        if value is None and o.name in argv_config:
            value = _convert(argv_config[o.name], o.type, o.name)
        if value is None:
            if o.name == "seed":
                value = _convert(os.environ.get("SACNET_SEED", "0"), int,
                                 "SACNET_SEED")
            else:
                value = o.default
        if value is _REQUIRED:
            raise ParameterError(f"missing required option --{o.name}")
        merged[o.name.replace("-", "_")] = value
    return merged


# ---------------------------------------------------------------- commands

def _load_square_pair(rgb_path, thermal_path):
    rgb = sio.read_ppm(rgb_path)
    thermal = sio.read_ppm(thermal_path)
    if rgb.shape != thermal.shape:
        raise ShapeError(f"rgb {rgb.shape} and thermal {thermal.shape} differ")
    _, h, w = rgb.shape
    if h != w or h % 32 != 0:
        raise ShapeError(f"inputs must be square with a side divisible by 32, got {h}x{w}")
    return rgb, thermal, h


def cmd_forward(o):
    rgb, thermal, size = _load_square_pair(o["rgb"], o["thermal"])
    if o["checkpoint"]:
        model = SACNet.load(o["checkpoint"])
        if model.config.input_size != size:
            raise ShapeError(
                f"checkpoint expects {model.config.input_size}px inputs, images are {size}px")
    else:
        model = SACNet(_build_config(size, o["seed"], o))
    s = model.forward(rgb, thermal).data[0]
    sio.write_pgm(o["out"], s)
    print(f"saliency written to {o['out']} "
          f"(min {s.min():.4f}, max {s.max():.4f}, mean {s.mean():.4f})")
    return 0


def cmd_gradcheck(o):
    size = o["size"]
    if size % 32 != 0:
        raise ShapeError(f"size must be divisible by 32, got {size}")
    model = SACNet(_build_config(size, o["seed"], o))
    rng = np.random.default_rng(o["seed"])
    nudge_offsets(model, rng)
    pair = gen_pairs(1, size, o["seed"])[0]
    report = end_to_end_grad_check(model, pair.rgb, pair.thermal, pair.gt,
                                   entries=o["entries"], eps=o["eps"],
                                   tol=o["tol"], seed=o["seed"])
    print(report)
    if not report.passed:
        raise NumericError(f"gradient check failed: {report}")
    return 0


def cmd_train_toy(o):
    os.makedirs(o["out_dir"], exist_ok=True)
    pairs = gen_pairs(o["pairs"], o["size"], o["seed"])
    model = SACNet(_build_config(o["size"], o["seed"], o))
    every = max(1, o["log_every"])

    def on_step(row):
        if row["step"] % every == 0 or row["step"] == o["steps"] - 1:
            print(f"step {row['step']:4d} pair {row['pair']} "
                  f"bce {row['bce']:.4f} smooth {row['smoothness']:.4f} "
                  f"dice {row['dice']:.4f} total {row['total']:.4f}")

    result = train_toy(model, pairs, o["steps"], lr=o["lr"],
                       weight_decay=o["weight_decay"], on_step=on_step)
    write_history_csv(result.history, os.path.join(o["out_dir"], "log.csv"))
    model.save(os.path.join(o["out_dir"], "checkpoint"))
    ious = [iou(model.forward(p.rgb, p.thermal).data[0], p.gt) for p in pairs]
    print(f"initial loss {result.initial_loss:.6f} final loss {result.final_loss:.6f} "
          f"mean iou {np.mean(ious):.4f}")
    return 0


def cmd_eval(o):
    pred_files = sorted(f for f in os.listdir(o["pred_dir"]) if f.endswith(".pgm"))
    gt_files = sorted(f for f in os.listdir(o["gt_dir"]) if f.endswith(".pgm"))
    if not pred_files:
        raise ProtocolError(f"no .pgm predictions in {o['pred_dir']}")
    if pred_files != gt_files:
        missing = sorted(set(gt_files) - set(pred_files))
        extra = sorted(set(pred_files) - set(gt_files))
        raise ProtocolError(
            f"prediction/ground-truth sets differ ({len(pred_files)} vs {len(gt_files)} files; "
            f"missing {missing[:3]}, unexpected {extra[:3]})")
    from .metrics import evaluate_pairs
    items = []
    for name in pred_files:
        pred = sio.read_pgm(os.path.join(o["pred_dir"], name))
        gt = sio.read_pgm(os.path.join(o["gt_dir"], name)) >= 0.5
        items.append((name, pred, gt.astype(np.uint8)))
    report = evaluate_pairs(items)
    os.makedirs(o["out_dir"], exist_ok=True)
    report.write_metrics_csv(os.path.join(o["out_dir"], "metrics.csv"))
    report.write_pr_csv(os.path.join(o["out_dir"], "pr_curve.csv"))
    m = report.mean
    print(f"{len(items)} images: mae {m['mae']:.4f} s {m['s_measure']:.4f} "
          f"e_mean {m['e_mean']:.4f} e_max {m['e_max']:.4f} wf {m['weighted_f']:.4f}")
    return 0


def cmd_gen_pairs(o):
    ranges = AffineRanges(max_translate=o["max_translate"],
                          max_rotation_deg=o["max_rotation"],
                          scale_low=o["scale_low"], scale_high=o["scale_high"])
    pairs = gen_pairs(o["count"], o["size"], o["seed"], ranges)
    os.makedirs(o["out_dir"], exist_ok=True)
    for idx, p in enumerate(pairs):
        stem = os.path.join(o["out_dir"], f"pair_{idx:03d}")
        sio.write_ppm(f"{stem}.rgb.ppm", p.rgb)
        sio.write_ppm(f"{stem}.thermal.ppm", p.thermal)
        sio.write_pgm(f"{stem}.gt.pgm", p.gt.astype(np.float64))
        sio.write_config(f"{stem}.params.txt", p.params.to_dict())
    print(f"wrote {len(pairs)} pairs to {o['out_dir']}")
    return 0


def cmd_ablate(o):
    variants = _VARIANTS if o["variants"] == "all" else tuple(o["variants"].split(","))
    for v in variants:
        _parse_variant(v)
    pairs = gen_pairs(o["pairs"], o["size"], o["seed"])
    results = {}
    for v in variants:
        opts = dict(o, variant=v)
        model = SACNet(_build_config(o["size"], o["seed"], opts))
        res = train_toy(model, pairs, o["steps"], lr=o["lr"],
                        weight_decay=o["weight_decay"])
        results[v] = res.final_loss
        print(f"{v:8s} initial {res.initial_loss:.6f} final {res.final_loss:.6f}")
    if "full" in results:
        base = results["full"]
        for v, loss in results.items():
            if v != "full":
                mark = "" if loss >= base else "  (BELOW full model)"
                print(f"delta {v:8s} {loss - base:+.6f}{mark}")
    return 0


# -------------------------------------------------------------------- main

_TRAIN_OPTS = (
    Opt("size", int, 64, "image side, multiple of 32"),
    Opt("pairs", int, 4, "number of synthetic pairs"),
    Opt("steps", int, 300, "optimizer updates"),
    Opt("lr", float, 1e-3, "learning rate"),
    Opt("weight-decay", float, 1e-4, "decoupled weight decay"),
)

_SPECS = {
    "forward": (
        "run the network on one RGB/thermal pair and write the saliency map",
        cmd_forward,
        _COMMON + _ARCH + (
            Opt("rgb", str, _REQUIRED, "input RGB image (.ppm)"),
            Opt("thermal", str, _REQUIRED, "input thermal image (.ppm)"),
            Opt("out", str, _REQUIRED, "output saliency map (.pgm)"),
            Opt("checkpoint", str, None, "checkpoint directory (omit for a fresh model)"),
        )),
    "gradcheck": (
        "finite-difference check of the end-to-end training gradient",
        cmd_gradcheck,
        _COMMON + _ARCH + (
            Opt("size", int, 64, "image side, multiple of 32"),
            Opt("entries", int, 240, "parameter entries to sample"),
            Opt("eps", float, 1e-5, "finite-difference step"),
            Opt("tol", float, 1e-3, "relative error tolerance"),
        )),
    "train-toy": (
        "overfit a few synthetic pairs and save log + checkpoint",
        cmd_train_toy,
        _COMMON + _ARCH + _TRAIN_OPTS + (
            Opt("out-dir", str, _REQUIRED, "directory for log.csv and checkpoint/"),
            Opt("log-every", int, 10, "print every k-th step"),
        )),
    "eval": (
        "score saliency maps against ground truth masks",
        cmd_eval,
        _COMMON + (
            Opt("pred-dir", str, _REQUIRED, "directory of predicted .pgm maps"),
            Opt("gt-dir", str, _REQUIRED, "directory of ground-truth .pgm masks"),
            Opt("out-dir", str, _REQUIRED, "directory for metrics.csv and pr_curve.csv"),
        )),
    "gen-pairs": (
        "generate synthetic misaligned RGB/thermal pairs",
        cmd_gen_pairs,
        _COMMON + (
            Opt("out-dir", str, _REQUIRED, "output directory"),
            Opt("count", int, 4, "number of pairs"),
            Opt("size", int, 64, "image side, multiple of 8"),
            Opt("max-translate", float, AffineRanges.max_translate,
                "translation range, fraction of the side"),
            Opt("max-rotation", float, AffineRanges.max_rotation_deg,
                "rotation range, degrees"),
            Opt("scale-low", float, AffineRanges.scale_low, "scale range lower bound"),
            Opt("scale-high", float, AffineRanges.scale_high, "scale range upper bound"),
        )),
    "ablate": (
        "train ablation variants on identical data and compare final losses",
        cmd_ablate,
        _COMMON + _ARCH[:-1] + _TRAIN_OPTS + (
            Opt("variants", str, "all", "comma list of variants, or 'all'"),
        )),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sacnet",
        description="alignment-free RGB/thermal salient object detection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, func, spec) in _SPECS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for o in spec:
            required = "(required)" if o.default is _REQUIRED else ""
            p.add_argument(f"--{o.name}", dest=o.dest, type=str, default=None,
                           help=f"{o.help} {required}".strip())
        p.set_defaults(_func=func, _spec=spec)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = sio.read_config(args.config) if args.config else {}
        for o in args._spec:
            raw = getattr(args, o.dest)
            if raw is not None:
                setattr(args, o.dest, _convert(raw, o.type, f"--{o.name}"))
        merged = _resolve(args._spec, args, config)
        return args._func(merged)
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (ParseError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
