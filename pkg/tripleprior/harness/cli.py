"""
``tripleprior`` command line.

Every subcommand accepts ``--config FILE``, ``--seed N`` and any number of
``--section.key=value`` overrides, e.g. ``--model.base_channels=16``.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from ..constants import DEPTH_FILE, DOG_SIGMAS, SEG_FILE, STAGE2_CHECKPOINT
from ..priors.structural import StructuralCues, compute_dog, grayscale
from ..synth.corpus import build_corpus
from ..synth.preview import save_preview
from ..tensor.io import load_tensor, save_tensor
from ..util import make_rng, setup_logger
from .ablation import load_matrix, run_ablation
from .checkpoint import restore_model
from .config import RunConfig, load_config, parse_overrides
from .evaluate import evaluate
from .stages import run_stage1, run_stage2

logger = setup_logger(__name__)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="global seed (falls back to $TPG_SEED)")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="tripleprior", description="Prior-guided diffusion restoration")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="build the synthetic corpus")
    sub.add_parser("train-priors", parents=[common], help="stage 1: semantic student and degradation encoder")
    p = sub.add_parser("train-diffusion", parents=[common], help="stage 2: conditioned denoiser")
    p.add_argument("--stage1", help="stage-1 checkpoint")

    p = sub.add_parser("restore", parents=[common], help="restore one degraded tensor")
    p.add_argument("lq", help="TPGT tensor (C x H x W)")
    p.add_argument("out", help="output .t, .png or .pgm")
    p.add_argument("--checkpoint", help="stage-2 checkpoint")
    p.add_argument("--deterministic", action="store_true", help="drop the reverse-SDE noise term")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="report directory")
    p.add_argument("--limit", type=int, default=0)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation matrix")
    p.add_argument("matrix", help="prior-types, placement, or a TOML file of [[cell]] tables")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")

    p = sub.add_parser("check", help="run the property test suite")
    p.add_argument("pytest_args", nargs=argparse.REMAINDER)
    return parser


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _stage2_checkpoint(config: RunConfig, path: Optional[str]) -> str:
    return path or os.path.join(config.paths.out, STAGE2_CHECKPOINT)


def sibling_cues(lq_path: str, x_lq: np.ndarray) -> Optional[StructuralCues]:
    """Depth and seg stored next to the input plus the DoG of the input itself; None when absent"""
    folder = os.path.dirname(os.path.abspath(lq_path))
    depth, seg = os.path.join(folder, DEPTH_FILE), os.path.join(folder, SEG_FILE)
    if not (os.path.isfile(depth) and os.path.isfile(seg)):
        return None
    dog = compute_dog(grayscale(x_lq), *DOG_SIGMAS)[None]
    return StructuralCues(depth=load_tensor(depth), seg=load_tensor(seg), dog=dog)


def restore_file(config: RunConfig, lq_path: str, out_path: str, checkpoint: Optional[str],
                 deterministic: bool = False) -> np.ndarray:
    model, _ = restore_model(_stage2_checkpoint(config, checkpoint), config)
    x_lq = load_tensor(lq_path)
    cues = sibling_cues(lq_path, x_lq)
    flags = config.priors.flags()
    if cues is None and flags.struct:
        logger.warning("no depth.t/seg.t next to %s; structural prior disabled", lq_path)
        flags.struct = False
    restored = np.clip(model.restore(x_lq, cues, config.sde.schedule(), flags, make_rng(config.run_seed, 3),
                                     stochastic=not deterministic), 0.0, 1.0)
    if out_path.lower().endswith((".png", ".pgm")):
        save_preview(out_path, restored)
    else:
        save_tensor(out_path, restored)
    return restored


def run_check(args: Sequence[str]) -> int:
    import pytest

    tests = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests")
    return int(pytest.main(["-q", tests] + list(args)))


def main(argv: Optional[List[str]] = None) -> int:
    args, extra = _parser().parse_known_args(argv)
    if args.command == "check":
        return run_check(args.pytest_args + extra)
    _configure_logging(args.verbose, args.quiet)
    config = load_config(args.config, parse_overrides(extra), args.seed)

    if args.command == "synth":
        s = config.synth
        build_corpus(s.n_per_class, s.height, s.width, config.run_seed, config.paths.corpus, s.kinds,
                     s.severity or None, s.ranges, config.train.workers)
    elif args.command == "train-priors":
        run_stage1(config)
    elif args.command == "train-diffusion":
        run_stage2(config, args.stage1)
    elif args.command == "restore":
        restore_file(config, args.lq, args.out, args.checkpoint, args.deterministic)
    elif args.command == "eval":
        report = evaluate(config, _stage2_checkpoint(config, args.checkpoint), args.manifest, limit=args.limit)
        report.write(args.out or os.path.join(config.paths.out, "eval"))
        print(report.per_class.to_string())
    elif args.command == "ablate":
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        report = run_ablation(config, load_matrix(args.matrix), seeds)
        print(report.to_string())
    return 0


if __name__ == "__main__":
    sys.exit(main())
