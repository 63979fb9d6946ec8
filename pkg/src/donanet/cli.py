"""Command-line entry point: ``donanet <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ctst
from .data import GenConfig, generate_dataset, save_samples
from .pnm import PNMError, read_image, write_image
from .stats import make_grid, style_report_images, write_style_csv
from .train import AblationConfig, NumericFailure, TrainConfig, ablation_verdict, evaluate, run_ablation, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

MODES = ("ust_a2b", "ust_b2a", "bst", "ibst", "random")


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise IOFailure(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _checkpoint(path):
    from .network import load_checkpoint

    try:
        return load_checkpoint(path)
    except OSError as e:
        raise IOFailure(f"cannot read checkpoint {path}: {e}") from e
    except ValueError as e:
        raise IOFailure(f"bad checkpoint {path}: {e}") from e


def _read(path):
    try:
        return read_image(path)
    except (OSError, PNMError) as e:
        raise IOFailure(f"cannot read image {path}: {e}") from e


def _log(row):
    print(json.dumps(row), file=sys.stderr, flush=True)


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg = TrainConfig.from_dict(_load_json(args.config))
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from e
    try:
        _, state = train(cfg, args.out, log=_log)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"steps": state.step, "best_val_f1": state.best_f1,
                      "checkpoint": os.path.join(args.out, "best.ckpt")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not 0.0 < args.threshold < 1.0:
        raise UsageError("--threshold must lie in (0, 1)")
    net = _checkpoint(args.checkpoint)
    try:
        report = evaluate(net, args.manifest, args.threshold)
    except (OSError, PNMError) as e:
        raise IOFailure(f"cannot evaluate {args.manifest}: {e}") from e
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    net = _checkpoint(args.checkpoint)
    xa, xb = _read(args.xa), _read(args.xb)
    if xa.shape != xb.shape or xa.ndim != 3:
        raise IOFailure(f"images must be colour and equal-sized, got {xa.shape} and {xb.shape}")
    if xa.shape[1] % 32 or xa.shape[2] % 32:
        raise IOFailure(f"image size {xa.shape[1]}x{xa.shape[2]} must be divisible by 32")
    from .tensor import no_grad

    dtype = np.dtype(net.cfg.dtype)
    with no_grad():
        out = net.forward_pair(xa[None].astype(dtype), xb[None].astype(dtype), training=False)
    write_image(args.out, out.p_out.data[0, 0])
    return EXIT_OK


def cmd_stylize(args) -> int:
    xa, xb = _read(args.xa), _read(args.xb)
    rng = np.random.default_rng(args.seed)
    mode = ctst.sample_mode(rng) if args.mode == "random" else ctst.StyleMode(args.mode)
    donor = None
    if mode is ctst.StyleMode.IBST:
        if not (args.xc and args.xd):
            raise UsageError("ibst needs a donor pair: pass --xc and --xd")
        donor = (_read(args.xc), _read(args.xd))
    try:
        grid = make_grid(xa.shape[1], xa.shape[2], args.lambda_prime)
        out = ctst.apply_mode(mode, (xa, xb), donor, grid, donor_id=0 if donor else None)
    except ValueError as e:
        raise UsageError(str(e)) from e
    os.makedirs(args.out_dir, exist_ok=True)
    write_image(os.path.join(args.out_dir, "xa.ppm"), out.xa)
    write_image(os.path.join(args.out_dir, "xb.ppm"), out.xb)
    with open(os.path.join(args.out_dir, "mode.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{out.mode.value}\t{'-' if out.donor_id is None else out.donor_id}\n")
    return EXIT_OK


def cmd_style_stats(args) -> int:
    xa, xb = _read(args.xa), _read(args.xb)
    try:
        rows = style_report_images(xa, xb, args.lambda_prime)
    except ValueError as e:
        raise UsageError(str(e)) from e
    write_style_csv(rows, args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config)
    pairs = cfg.pop("pairs", 100)
    seed = cfg.pop("seed", 0)
    try:
        gen = GenConfig(**cfg)
        samples = generate_dataset(int(pairs), gen, int(seed))
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid data config: {e}") from e
    print(save_samples(samples, args.out))
    return EXIT_OK


def cmd_ablate(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    try:
        acfg = AblationConfig(**raw)
    except TypeError as e:
        raise UsageError(f"invalid ablation config: {e}") from e
    try:
        table = run_ablation(acfg, log=_log, results_path=args.out)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    table["verdict"] = ablation_verdict(table["summary"]) if len(acfg.variants) == 4 else None
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2)
    print(json.dumps({"summary": table["summary"], "verdict": table["verdict"]}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="donanet", description="Style-robust bitemporal change detection.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("train", help="train a network from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory for checkpoints")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", help="also write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="write the change probability map of one pair")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--xa", required=True)
    s.add_argument("--xb", required=True)
    s.add_argument("--out", required=True, help="output PGM")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("stylize", help="apply one style-transformation mode to a pair")
    s.add_argument("--xa", required=True)
    s.add_argument("--xb", required=True)
    s.add_argument("--xc", help="donor image for xa (ibst)")
    s.add_argument("--xd", help="donor image for xb (ibst)")
    s.add_argument("--mode", choices=MODES, default="random")
    s.add_argument("--lambda-prime", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_stylize)

    s = sub.add_parser("style-stats", help="per-region channel mean/std of a pair as CSV")
    s.add_argument("--xa", required=True)
    s.add_argument("--xb", required=True)
    s.add_argument("--lambda-prime", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_style_stats)

    s = sub.add_parser("gen-data", help="write synthetic pairs and a manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("ablate", help="run the base/gln/glw/glw+ctst comparison")
    s.add_argument("--config", help="JSON with ablation overrides")
    s.add_argument("--out", required=True, help="JSON results table")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as e:
        print(e, file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as e:  # --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
