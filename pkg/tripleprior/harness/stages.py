"""
Two-stage training.

Stage 1 trains the semantic student (cosine distillation toward the frozen
teacher) and the degradation encoder with its classifier head. Stage 2
freezes both and trains the structural prior, the semantic context
projection and the UNet with the noise-matching loss.
"""
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import trange

from ..constants import EVAL_LOG, STAGE1_CHECKPOINT, STAGE1_LOG, STAGE1_MODES, STAGE2_CHECKPOINT, STAGE2_LOG
from ..denoiser import InjectionFlags, RestorationModel, training_step
from ..exceptions import ConfigError, NonFiniteError, TrainingDivergedError
from ..messages import MSG_DIVERGED, MSG_STAGE1_MODE
from ..metrics import aggregate
from ..priors.degradation import classification_accuracy, deg_class_loss
from ..priors.semantic import distill_loss, mean_cosine
from ..synth.corpus import DegradationBatch, DegradationSample, collate, holdout_mask, load_corpus
from ..tensor.core import no_grad, reset_tape
from ..tensor.optim import AdamW, clip_grad_norm, cosine_lr
from ..util import make_rng, setup_logger
from .checkpoint import restore_model, save_checkpoint
from .config import RunConfig
from .evaluate import evaluate_samples

logger = setup_logger(__name__)


@dataclass
class Stage1Result:
    checkpoint: str
    log: pd.DataFrame
    accuracy: float
    cosine_before: float
    cosine_after: float


@dataclass
class Stage2Result:
    checkpoint: str
    log: pd.DataFrame
    evals: pd.DataFrame


class CsvLog:
    """Append-only CSV of per-step rows, flushed in chunks"""

    def __init__(self, path: str, flush_every: int = 100):
        self.path = path
        self.flush_every = flush_every
        self.rows: List[Dict[str, Any]] = []
        self._pending: List[Dict[str, Any]] = []
        if os.path.exists(path):
            os.remove(path)

    def append(self, row: Dict[str, Any]) -> None:
        self.rows.append(row)
        self._pending.append(row)
        if len(self._pending) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if not self._pending:
            return
        pd.DataFrame(self._pending).to_csv(self.path, mode="a", header=not os.path.exists(self.path), index=False)
        self._pending = []

    def frame(self) -> pd.DataFrame:
        self.flush()
        return pd.DataFrame(self.rows)


def split_corpus(config: RunConfig, kinds: Optional[Sequence[str]] = None):
    samples = load_corpus(config.paths.corpus, kinds)
    train_mask, test_mask = holdout_mask(len(samples), config.train.holdout, config.run_seed)
    train = [s for s, keep in zip(samples, train_mask) if keep]
    held = [s for s, keep in zip(samples, test_mask) if keep]
    logger.info("corpus split: %s train, %s held out", len(train), len(held))
    return train, held


def draw_batch(samples: Sequence[DegradationSample], batch_size: int, rng: np.random.Generator) -> DegradationBatch:
    index = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
    return collate([samples[i] for i in index])


def _held_metrics(model: RestorationModel, held: Sequence[DegradationSample]) -> Dict[str, float]:
    batch = collate(held)
    with no_grad():
        z_s = model.student(batch.lq).data
        z_t = model.teacher(batch.gt).data
    return {"accuracy": classification_accuracy(model.degradation, batch.lq, batch.labels),
            "cosine": mean_cosine(z_s, z_t)}


def _step_group(optimizer: AdamW, clip: float, lr: float) -> None:
    clip_grad_norm(optimizer.params, clip)
    optimizer.step(lr)


# #####################################

def run_stage1(config: RunConfig, out_dir: Optional[str] = None, progress: bool = True) -> Stage1Result:
    """
    Train the semantic student and the degradation encoder

    :param out_dir: where the checkpoint and loss log go; ``config.paths.out`` by default
    """
    out_dir = out_dir or config.paths.out
    os.makedirs(out_dir, exist_ok=True)
    train, held = split_corpus(config)
    seed = config.run_seed
    model = RestorationModel(config.model, seed=seed)
    rng = make_rng(seed, 1)
    steps, mode = config.train.stage1_steps, config.train.stage1_mode
    if mode not in STAGE1_MODES:
        raise ConfigError(MSG_STAGE1_MODE.format(STAGE1_MODES, mode))
    opt = config.optim
    sem_opt = AdamW(model.student.trunk_parameters(), config.train.stage1_lr, opt.betas, opt.eps, opt.weight_decay)
    deg_opt = AdamW(model.degradation.parameters(), config.train.stage1_lr, opt.betas, opt.eps, opt.weight_decay)

    before = _held_metrics(model, held)
    logger.info("stage 1 start: held-out cosine %.4f, accuracy %.3f", before["cosine"], before["accuracy"])
    log = CsvLog(os.path.join(out_dir, STAGE1_LOG))
    pbar = trange(steps, desc=None, disable=not progress)
    for step in pbar:
        lr = cosine_lr(step, steps, config.train.stage1_lr, opt.lr_min)
        do_sem = mode == "joint" or step < steps // 2
        do_deg = mode == "joint" or step >= steps // 2
        batch = draw_batch(train, opt.batch_size, rng)
        try:
            with no_grad():
                z_t = model.teacher(batch.gt)
            loss_sem = distill_loss(model.student(batch.lq), z_t) if do_sem else None
            loss_deg = deg_class_loss(model.degradation.logits(batch.lq), batch.labels) if do_deg else None
        except NonFiniteError as e:
            reset_tape()
            raise TrainingDivergedError(MSG_DIVERGED.format(step, math.nan),
                                        {"op_index": e.op_index, "op": e.op_name, "stage": "priors"}) from e
        parts = [loss for loss in (loss_sem, loss_deg) if loss is not None]
        total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
        sem_opt.zero_grad()
        deg_opt.zero_grad()
        total.backward()
        if do_sem:
            _step_group(sem_opt, opt.grad_clip, lr)
        if do_deg:
            _step_group(deg_opt, opt.grad_clip, lr)
        row = {"step": step, "lr": lr,
               "loss_sem": loss_sem.item() if loss_sem is not None else math.nan,
               "loss_deg": loss_deg.item() if loss_deg is not None else math.nan}
        log.append(row)
        pbar.set_description(f"step: {step + 1}, sem: {row['loss_sem']:.4f}, deg: {row['loss_deg']:.4f}")

    after = _held_metrics(model, held)
    logger.info("stage 1 done: held-out cosine %.4f, accuracy %.3f", after["cosine"], after["accuracy"])
    path = os.path.join(out_dir, STAGE1_CHECKPOINT)
    save_checkpoint(path, model, config, "priors", steps)
    return Stage1Result(path, log.frame(), after["accuracy"], before["cosine"], after["cosine"])


def run_stage2(config: RunConfig, stage1: Optional[str] = None, flags: Optional[InjectionFlags] = None,
               out_dir: Optional[str] = None, progress: bool = True) -> Stage2Result:
    """
    Train the conditioned denoiser from a stage-1 checkpoint

    :param stage1: stage-1 checkpoint; ``<paths.out>/stage1.ckpt`` by default
    :param flags: injection flags; defaults to the config's prior flags
    :param out_dir: where the checkpoint and logs go; ``config.paths.out`` by default
    """
    out_dir = out_dir or config.paths.out
    os.makedirs(out_dir, exist_ok=True)
    stage1 = stage1 or os.path.join(config.paths.out, STAGE1_CHECKPOINT)
    flags = flags or config.priors.flags()
    model, _ = restore_model(stage1, config)
    train, held = split_corpus(config, config.train.kinds)
    if config.train.eval_samples > 0:
        held = held[:config.train.eval_samples]

    seed = config.run_seed
    rng = make_rng(seed, 2)
    schedule = config.sde.schedule()
    opt = config.optim
    optimizer = AdamW(model.prepare_stage2(), opt.lr, opt.betas, opt.eps, opt.weight_decay)
    steps = config.train.stage2_steps
    logger.info("stage 2: %s steps, flags %s", steps, flags)

    log = CsvLog(os.path.join(out_dir, STAGE2_LOG))
    evals = CsvLog(os.path.join(out_dir, EVAL_LOG), flush_every=1)

    def run_eval(step: int) -> None:
        df = evaluate_samples(model, held, schedule, flags, seed, config.train.eval_stochastic, config.train.workers)
        row = {"step": step, "psnr": aggregate(df["psnr"]), "ssim": aggregate(df["ssim"]),
               "identity_psnr": aggregate(df["identity_psnr"]), "identity_ssim": aggregate(df["identity_ssim"])}
        evals.append(row)
        logger.info("step %s: held-out psnr %.3f (identity %.3f)", step, row["psnr"], row["identity_psnr"])

    pbar = trange(steps, desc=None, disable=not progress)
    for step in pbar:
        lr = cosine_lr(step, steps, opt.lr, opt.lr_min)
        loss = training_step(model, draw_batch(train, opt.batch_size, rng), schedule, optimizer, rng, flags,
                             lr=lr, clip=opt.grad_clip)
        log.append({"step": step, "lr": lr, "loss": loss})
        pbar.set_description(f"step: {step + 1}, loss: {loss:.4f}")
        if held and config.train.eval_every > 0 and (step + 1) % config.train.eval_every == 0 and step + 1 < steps:
            run_eval(step + 1)
    if held:
        run_eval(steps)

    path = os.path.join(out_dir, STAGE2_CHECKPOINT)
    save_checkpoint(path, model, config, "diffusion", steps, schedule)
    return Stage2Result(path, log.frame(), evals.frame())
