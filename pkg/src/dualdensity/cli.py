"""Command-line entry point for data generation, training, and experiments.

Subcommands
    gen-data             write a synthetic train/val dataset to disk
    train                train a density model from an experiment config
    eval                 score a saved checkpoint on a regenerated split
    ablate               kernel-family comparison on shared data
    compare-convergence  dual-domain model vs dilated-only baseline
    gradcheck            finite-difference audit of every block
    viz-kernels          render a kernel bank as a PGM grid

Exit codes: 0 success, 1 usage or runtime error, 2 failed check
(gradcheck failures or convergence verdicts). The D3R_OUT environment
variable overrides the output directory of every subcommand, including
an explicit --out.
"""

import argparse
import json
import os
import sys

from .config import FAMILY_CHOICES, ExperimentConfig
from .experiments import ablate, compare_convergence, gradcheck_suite
from .kernels import FAMILIES, bank_manifest, build_bank, render_bank_grid
from .pgm import write_pgm
from .scenes import SceneGenConfig, write_dataset
from .train import evaluate, train


class _Parser(argparse.ArgumentParser):
    # stock argparse exits 2 on bad flags; 2 is reserved for failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fail(message):
    print(f"error: {message}", file=sys.stderr)
    return 1


_OVERRIDE_FIELDS = ("seed", "width", "family", "epochs", "batch_size",
                    "n_train", "n_val", "lr")


def _add_config_options(parser):
    group = parser.add_argument_group("experiment config")
    group.add_argument("--config", metavar="JSON",
                       help="config file; the flags below override its fields")
    group.add_argument("--out", metavar="DIR",
                       help="output directory (default: the config's out_dir)")
    group.add_argument("--seed", type=int)
    group.add_argument("--width", type=int, help="stem output channels")
    group.add_argument("--family", choices=FAMILY_CHOICES)
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--n-train", type=int)
    group.add_argument("--n-val", type=int)
    group.add_argument("--lr", type=float)


def _resolved_config(args):
    config = (ExperimentConfig.load(args.config) if args.config
              else ExperimentConfig())
    overrides = {name: getattr(args, name) for name in _OVERRIDE_FIELDS
                 if getattr(args, name, None) is not None}
    return config.replace(**overrides) if overrides else config


def _resolve_out_dir(args, config):
    env = os.environ.get("D3R_OUT")
    if env:
        return env
    if getattr(args, "out", None):
        return args.out
    return config.out_dir


def cmd_gen_data(args):
    try:
        config = _resolved_config(args)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    out_dir = _resolve_out_dir(args, config)
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path) and not args.force:
        return _fail(f"{manifest_path} exists; pass --force to overwrite")
    scene_cfg = SceneGenConfig(image_size=config.image_size,
                               master_seed=config.seed)
    manifest = write_dataset(scene_cfg, config.n_train, config.n_val, out_dir)
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_train(args):
    try:
        config = _resolved_config(args)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    out_dir = _resolve_out_dir(args, config)
    try:
        report = train(config, out_dir, log=print)
    except RuntimeError as exc:
        return _fail(exc)
    print(f"report written to {os.path.join(out_dir, 'report.json')}")
    return 0


def cmd_eval(args):
    try:
        config = _resolved_config(args)
        metrics = evaluate(args.checkpoint, args.split, config)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    text = json.dumps(metrics, indent=2)
    print(text)
    dest = os.environ.get("D3R_OUT") or args.out
    if dest:
        os.makedirs(dest, exist_ok=True)
        with open(os.path.join(dest, f"eval_{args.split}.json"), "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_ablate(args):
    try:
        config = _resolved_config(args)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    out_dir = _resolve_out_dir(args, config)
    table = ablate(config, out_dir, log=print)
    failed = [row["family"] for row in table["rows"]
              if row["status"] != "ok"]
    if failed:
        print(f"failed arms: {', '.join(failed)}", file=sys.stderr)
    return 0


def cmd_compare_convergence(args):
    try:
        config = _resolved_config(args)
    except (OSError, ValueError) as exc:
        return _fail(exc)
    out_dir = _resolve_out_dir(args, config)
    try:
        report = compare_convergence(config, out_dir, log=print)
    except RuntimeError as exc:
        return _fail(exc)
    if report["passed"]:
        return 0
    bad = [name for name, ok in report["verdicts"].items() if not ok]
    print(f"convergence comparison failed: {', '.join(bad)}",
          file=sys.stderr)
    return 2


def cmd_gradcheck(args):
    report = gradcheck_suite(log=print)
    return 0 if report["passed"] else 2


def cmd_viz_kernels(args):
    out_path = args.out or f"kernels_{args.family}.pgm"
    env = os.environ.get("D3R_OUT")
    if env:
        out_path = os.path.join(env, os.path.basename(out_path))
    if os.path.exists(out_path) and not args.force:
        return _fail(f"{out_path} exists; pass --force to overwrite")
    bank = build_bank(args.family)
    grid = render_bank_grid(bank, cell_px=args.cell_px)
    parent = os.path.dirname(out_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_pgm(out_path, grid)
    base, _ = os.path.splitext(out_path)
    with open(base + ".json", "w") as fh:
        json.dump(bank_manifest(bank, args.cell_px), fh, indent=2)
        fh.write("\n")
    print(f"{out_path}: {grid.shape[1]}x{grid.shape[0]} px, "
          f"{bank.n_groups} groups x {bank.n_scales} scales")
    return 0


def build_parser():
    parser = _Parser(prog="dualdensity",
                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    _add_config_options(p)
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a density model")
    _add_config_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("checkpoint",
                   help="checkpoint base path (the .bin/.json pair "
                        "without extension)")
    p.add_argument("--split", choices=("train", "val"), default="val")
    _add_config_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate",
                       help="train every kernel family on shared data")
    _add_config_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-convergence",
                       help="dual-domain vs baseline loss curves")
    _add_config_options(p)
    p.set_defaults(func=cmd_compare_convergence)

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of every block")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz-kernels", help="render a kernel bank grid")
    p.add_argument("family", choices=FAMILIES)
    p.add_argument("--out", metavar="PATH",
                   help="output PGM path (default kernels_<family>.pgm)")
    p.add_argument("--cell-px", type=int, default=64,
                   help="rendered cell size in pixels")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing file")
    p.set_defaults(func=cmd_viz_kernels)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits itself for --help and errors
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
