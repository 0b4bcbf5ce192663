"""Command-line harness.

Commands: train, eval, perturb-eval, gradcam, synth-gen.  Exit status is 0 on
success, 1 on usage errors (message on stderr), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from .backbone import build_resnet18
from .data import (SynthConfig, center_crop_or_pad, load_dataset, read_pgm,
                   synth_dataset, write_image, write_synth_dir)
from .explain import gradcam_map, overlay_heatmap
from .harness import (PerturbSpec, TrialReport, format_report, load_model,
                      model_config_from, perturb_dataset, run_protocol,
                      save_model, synth_config_from, top1_accuracy, train_model)
from .rng import derive_seed


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="attnatr", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="base seed override")

    p = sub.add_parser("train", help="train one model or run the full protocol")
    common(p)
    p.add_argument("--attention", choices=("none", "se", "eca", "cbam"))
    p.add_argument("--insertion", choices=("in_block", "residual_wrap"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--variants", help="comma list of attention kinds; runs the protocol")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="checkpoint path (single model) or report path (protocol)")
    p.add_argument("--ckpt-dir", help="directory for per-trial protocol checkpoints")

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally under noise")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test")
    p.add_argument("--perturb-std", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", help="also write the report to this file")

    p = sub.add_parser("perturb-eval", help="eval under the default 3/255 noise")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--std", type=float, default=3.0 / 255.0)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out")

    p = sub.add_parser("gradcam", help="emit a saliency overlay for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="input PGM")
    p.add_argument("--class", dest="target_class", type=int, required=True)
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--layer", help="feature layer name (default: deepest)")
    p.add_argument("--alpha", type=float, default=0.5)

    p = sub.add_parser("synth-gen", help="materialize a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--looks", type=int, default=1)
    return parser


def _resolved_config(args) -> dict:
    layers = []
    if getattr(args, "config", None):
        layers.append(cfgmod.load_config(args.config))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    for key, attr in (("model.attention", "attention"), ("model.insertion", "insertion"),
                      ("train.epochs", "epochs")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    layers.append(overrides)
    return cfgmod.resolve(*layers)


def _emit(text: str, out_path=None):
    sys.stdout.write(text)
    if out_path:
        Path(out_path).write_text(text)


def _cmd_train(args) -> int:
    resolved = _resolved_config(args)
    if args.variants:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        trials = args.trials if args.trials is not None \
            else cfgmod.get_int(resolved, "protocol.trials")
        result = run_protocol(resolved, variants, trials, out_dir=args.ckpt_dir)
        _emit(result.render(), args.out)
        return 0
    if not args.out:
        raise UsageError("train: --out CHECKPOINT is required for a single-model run")
    seed = cfgmod.get_int(resolved, "seed")
    model = build_resnet18(model_config_from(resolved), seed=seed)
    synth_cfg = synth_config_from(resolved)
    train_ds = synth_dataset(synth_cfg, "train")
    test_ds = synth_dataset(synth_cfg, "test")
    losses = train_model(model, train_ds,
                         cfgmod.get_int(resolved, "train.epochs"),
                         cfgmod.get_float(resolved, "train.lr"),
                         cfgmod.get_float(resolved, "train.momentum"),
                         cfgmod.get_int(resolved, "train.batch_size"), seed,
                         context=f"attention {resolved['model.attention']!r}")
    save_model(args.out, model)
    train_acc = top1_accuracy(model, train_ds)
    test_acc = top1_accuracy(model, test_ds)
    final = losses[-1] if losses else float("nan")
    sys.stdout.write(
        f"saved {args.out}: final loss {final:.4f}, "
        f"train acc {train_acc:.4f}, test acc {test_acc:.4f}\n")
    return 0


def _eval_common(args, sigma: float) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data, split=args.split, size=model.cfg.input_size)
    seed = args.seed if args.seed is not None else 0
    accs = []
    for trial in range(max(1, args.trials)):
        ds = dataset
        if sigma > 0:
            spec = PerturbSpec(scale=sigma, seed=derive_seed(seed, "eval", trial))
            ds = perturb_dataset(dataset, spec)
        accs.append(top1_accuracy(model, ds, args.batch_size))
    tag = f"{model.cfg.attention} ResNet-18" if model.cfg.attention != "none" \
        else "ResNet-18"
    title = "Top-1 accuracy" if sigma == 0 \
        else f"Top-1 accuracy under N(0, sigma={sigma:.6f}) input perturbation"
    report = format_report([TrialReport(tag, accs)], title=title, trials=len(accs))
    _emit(report, args.out)
    return 0


def _cmd_eval(args) -> int:
    return _eval_common(args, args.perturb_std)


def _cmd_perturb_eval(args) -> int:
    return _eval_common(args, args.std)


def _cmd_gradcam(args) -> int:
    model = load_model(args.model)
    pixels = center_crop_or_pad(read_pgm(args.image), model.cfg.input_size)
    smap = gradcam_map(model, pixels, args.target_class, args.layer)
    write_image("ppm", args.out, overlay_heatmap(pixels, smap, args.alpha))
    sys.stdout.write(f"wrote {args.out} (layer {smap.layer}, class {args.target_class})\n")
    return 0


def _cmd_synth_gen(args) -> int:
    cfg = SynthConfig(num_classes=args.classes,
                      per_class_train=args.per_class,
                      per_class_test=args.per_class,
                      image_size=args.size,
                      speckle_looks=args.looks,
                      seed=args.seed)
    count = write_synth_dir(cfg, args.out, split=args.split)
    sys.stdout.write(f"wrote {count} images and manifest.tsv to {args.out}\n")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "perturb-eval": _cmd_perturb_eval,
    "gradcam": _cmd_gradcam,
    "synth-gen": _cmd_synth_gen,
}


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(
                "missing command; expected one of " + ", ".join(_COMMANDS))
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print("commands: " + ", ".join(_COMMANDS), file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
