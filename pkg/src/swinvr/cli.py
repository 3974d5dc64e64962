"""Command-line entry points: ``bench-window``, ``train-dit`` and ``precompute``.

Each is available as its own console script and as a ``swinvr <command>``
subcommand (also ``python3 -m swinvr <command>``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .errors import ConfigError


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _add_bench(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", required=True, help="grid JSON (volume, text_len, temporal, spatial, model, ...)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--layouts", help="optional CSV dump of every window of every grid layout")
    p.add_argument("--no-time", action="store_true", help="pair counts only, skip timed forwards")


def _run_bench(args) -> int:
    from .bench import BenchGrid, bench_window, grid_layouts, rows_to_csv
    from .window_layout import layouts_to_csv

    grid = BenchGrid.from_dict(_read_json(args.grid))
    rows = bench_window(grid, timed=not args.no_time)
    Path(args.out).write_text(rows_to_csv(rows))
    if args.layouts:
        Path(args.layouts).write_text(layouts_to_csv(grid_layouts(grid)))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True, help="run directory (checkpoints, loss.csv, caches)")
    p.add_argument("--no-eval", action="store_true", help="skip held-out evaluation")


def _run_train(args) -> int:
    from .experiment import TrainConfig, evaluate, holdout_spec, train_dit

    cfg = TrainConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    res = train_dit(cfg, args.out)
    print(f"trained {len(res.losses)} steps; loss log at {res.run_dir / 'loss.csv'}")
    if not args.no_eval:
        report = evaluate(res.model, res.vae, res.stats, holdout_spec(cfg, res.model.cfg.text_dim), cfg.eval_steps)
        (res.run_dir / "eval.json").write_text(json.dumps(report, indent=2))
        print(f"held-out PSNR restored {report['psnr_restored']:.2f} dB vs degraded {report['psnr_degraded']:.2f} dB")
    return 0


def _add_precompute(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help='dataset JSON; optional "vae" key holds a checkpoint path')
    p.add_argument("--out", required=True, help="cache directory")


def _run_precompute(args) -> int:
    from .data import DatasetSpec, precompute_cache
    from .vae import CausalVideoVAE, load_vae

    d = _read_json(args.config)
    vae_path = d.pop("vae", None)
    init_seed = d.pop("vae_init_seed", 0)
    spec = DatasetSpec(**d)
    if vae_path:
        vae = load_vae(vae_path)
    else:
        torch.manual_seed(init_seed)
        vae = CausalVideoVAE()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create cache directory {out}: {e}") from e
    lines = precompute_cache(spec, vae.eval(), out)
    print(f"cached {len(lines)} samples in {out}")
    return 0


COMMANDS = {
    "bench-window": (_add_bench, _run_bench, "window-size cost/quality grid to CSV"),
    "train-dit": (_add_train, _run_train, "progressive toy training run"),
    "precompute": (_add_precompute, _run_precompute, "encode a synthetic dataset into a latent cache"),
}


def _dispatch(run, args) -> int:
    try:
        return run(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    parser = argparse.ArgumentParser(prog="swinvr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (add, run, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        add(p)
        p.set_defaults(run=run)
    args = parser.parse_args(argv)
    return _dispatch(args.run, args)


def _single(name: str, argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    add, run, help_ = COMMANDS[name]
    parser = argparse.ArgumentParser(prog=name, description=help_)
    add(parser)
    return _dispatch(run, parser.parse_args(argv))


def bench_window_main(argv=None) -> int:
    return _single("bench-window", argv)


def train_dit_main(argv=None) -> int:
    return _single("train-dit", argv)


def precompute_main(argv=None) -> int:
    return _single("precompute", argv)
