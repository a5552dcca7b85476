"""Command-line entry point: ``python -m iwae_lab <command>``.

Commands::

    train    --config <path> [--output-dir <dir>]
    eval     --checkpoint <path> --data <path> --k-eval <int> [--seed N] [--out <stem>]
    continue --checkpoint <path> --objective <vae|iwae|iwae_single> --k <int> [--passes N]
    sample   --checkpoint <path> --n <int> --out <path> [--grid RxC] [--seed N]
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import load_config, load_data
from .data import load_dataset
from .estimators import ESTIMATORS
from .evaluation import evaluate_nll, unit_activity, write_report
from .mathcore import make_rng
from .model import ModelParams, sample_prior_means
from .training import CONTINUE_PASSES, Trainer, continuation, train

log = logging.getLogger("iwae_lab")


def cmd_train(config, output_dir: str | None = None) -> Checkpoint:
    out = output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(config.to_text())
    train_data, _ = load_data(config)
    ckpt = train(config, train_data, out)
    log.info("wrote %s", os.path.join(out, "final.ckpt"))
    return ckpt


def _reports(params: ModelParams, data, k_eval: int, seed: int, stem: str, n: int | None = None):
    if n is not None:
        data = data.subset(n)
    nll = evaluate_nll(params, data, k_eval, seed)
    act = unit_activity(params, data, seed=seed)
    write_report(nll, f"{stem}_nll")
    write_report(act, f"{stem}_activity")
    return nll, act


def cmd_eval(checkpoint: str, data_path: str | None, k_eval: int, seed: int = 0, out: str | None = None,
             n_examples: int | None = None):
    ckpt = load_checkpoint(checkpoint)
    if data_path:
        data = load_dataset(data_path, "test", ckpt.config.binarization)
    else:
        _, data = load_data(ckpt.config)
    stem = out or os.path.splitext(checkpoint)[0] + "_eval"
    nll, act = _reports(ckpt.params, data, k_eval, seed, stem, n_examples)
    print(f"NLL (L_{k_eval}) = {nll.mean_nll:.4f} +- {nll.stderr:.4f}; active units {act.label}")
    return nll, act


def cmd_continue(checkpoint: str, objective: str, k: int, passes: int = CONTINUE_PASSES,
                 output_dir: str | None = None, k_eval: int | None = None, seed: int = 0,
                 n_eval: int | None = None):
    """Resume training under the other objective and report before/after metrics."""
    ckpt = load_checkpoint(checkpoint)
    out = output_dir or os.path.join(os.path.dirname(checkpoint) or ".", f"continue_{objective}_k{k}")
    os.makedirs(out, exist_ok=True)
    train_data, test_data = load_data(ckpt.config)
    k_eval = k_eval or ckpt.config.k_eval
    before = _reports(ckpt.params, test_data, k_eval, seed, os.path.join(out, "before"), n_eval)
    cont = continuation(ckpt, objective, k, passes)
    result = Trainer(cont, train_data, out, [ckpt.config.stage_last + 1]).run()
    save_checkpoint(os.path.join(out, "final.ckpt"), result)
    after = _reports(result.params, test_data, k_eval, seed, os.path.join(out, "after"), n_eval)
    summary = {
        "first_stage": {"objective": ckpt.config.objective, "k": ckpt.config.k,
                        "nll": before[0].mean_nll, "active_units": before[1].label},
        "second_stage": {"objective": objective, "k": k, "passes": passes,
                         "nll": after[0].mean_nll, "active_units": after[1].label},
    }
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
    print(json.dumps(summary))
    return result, before, after


def tile_grid(images: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Tile ``(n, side*side)`` images into a ``(rows*side, cols*side)`` array; unused tiles are black."""
    n, D = images.shape
    side = int(round(math.sqrt(D)))
    if side * side != D:
        raise ValueError(f"observation_dim {D} is not a square image")
    grid = np.zeros((rows * side, cols * side))
    for i in range(min(n, rows * cols)):
        r, c = divmod(i, cols)
        grid[r * side : (r + 1) * side, c * side : (c + 1) * side] = images[i].reshape(side, side)
    return grid


def write_pgm(path: str, image: np.ndarray) -> None:
    """Plain (P2) graymap with maxval 255; ``image`` holds intensities in [0, 1]."""
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(int)
    with open(path, "w") as f:
        f.write(f"P2\n{pixels.shape[1]} {pixels.shape[0]}\n255\n")
        for row in pixels:
            f.write(" ".join(map(str, row)) + "\n")


def read_pgm(path: str) -> np.ndarray:
    with open(path) as f:
        tokens = [t for line in f for t in line.split("#", 1)[0].split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:], dtype=int).reshape(h, w) / maxval


def cmd_sample(checkpoint: str, n: int, out: str, grid: tuple[int, int] | None = None, seed: int = 0) -> np.ndarray:
    """Decode ``n`` prior samples and write their Bernoulli means as a PGM grid."""
    ckpt = load_checkpoint(checkpoint)
    if grid is None:
        cols = math.ceil(math.sqrt(n))
        grid = (math.ceil(n / cols), cols)
    means = sample_prior_means(ckpt.params, n, make_rng(seed))
    image = tile_grid(means, *grid)
    write_pgm(out, image)
    return image


def _grid(text: str) -> tuple[int, int]:
    r, c = text.lower().split("x")
    return int(r), int(c)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iwae_lab", description="Train, evaluate and sample importance-weighted autoencoders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")

    p = sub.add_parser("eval", help="write NLL and activity reports for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="IDX or amat test file (defaults to the config's test data)")
    p.add_argument("--k-eval", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-examples", type=int)
    p.add_argument("--out", help="output path stem")

    p = sub.add_parser("continue", help="continue training under another objective")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--objective", required=True, choices=ESTIMATORS)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--passes", type=int, default=CONTINUE_PASSES)
    p.add_argument("--output-dir")
    p.add_argument("--k-eval", type=int)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sample", help="write a grid of decoded prior samples as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=_grid, help="ROWSxCOLS")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "train":
        cmd_train(load_config(args.config), args.output_dir)
    elif args.command == "eval":
        cmd_eval(args.checkpoint, args.data, args.k_eval, args.seed, args.out, args.n_examples)
    elif args.command == "continue":
        cmd_continue(args.checkpoint, args.objective, args.k, args.passes, args.output_dir,
                     args.k_eval, args.seed, args.n_eval)
    else:
        cmd_sample(args.checkpoint, args.n, args.out, args.grid, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
