import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..constants import SSIM_WINDOW
from ..denoiser import InjectionFlags, RestorationModel
from ..metrics import aggregate, psnr, ssim
from ..sde import SdeSchedule, restore_identity
from ..synth.corpus import DegradationSample, load_corpus, manifest_path
from ..util import make_rng, setup_logger
from .checkpoint import restore_model
from .config import RunConfig

logger = setup_logger(__name__)

METRICS = ["psnr", "ssim", "identity_psnr", "identity_ssim"]


@dataclass
class EvalReport:
    samples: pd.DataFrame
    per_class: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return aggregate(self.samples["psnr"])

    def summary(self) -> Dict[str, float]:
        return {m: aggregate(self.samples[m]) for m in METRICS}

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        self.samples.to_csv(os.path.join(out_dir, "eval_samples.csv"), index=False)
        self.per_class.to_csv(os.path.join(out_dir, "eval_per_class.csv"))
        with open(os.path.join(out_dir, "eval_metadata.json"), "w") as fp:
            json.dump({**self.metadata, **self.summary()}, fp, indent=2, sort_keys=True, default=str)


def _ssim_or_nan(a: np.ndarray, b: np.ndarray) -> float:
    if min(a.shape[-2:]) < SSIM_WINDOW:
        return float("nan")
    return ssim(a, b)


def _score(model: RestorationModel, index: int, sample: DegradationSample, schedule: SdeSchedule,
           flags: InjectionFlags, seed: int, stochastic: bool) -> Dict[str, Any]:
    restored = np.clip(model.restore(sample.lq, sample.cues, schedule, flags, make_rng(seed, index), stochastic),
                       0.0, 1.0)
    identity = restore_identity(sample.lq)
    return {
        "index": index, "label": sample.label, "kind": sample.kind, "seed": sample.seed,
        "psnr": psnr(restored, sample.gt), "ssim": _ssim_or_nan(restored, sample.gt),
        "identity_psnr": psnr(identity, sample.gt), "identity_ssim": _ssim_or_nan(identity, sample.gt),
    }


def evaluate_samples(model: RestorationModel, samples: Sequence[DegradationSample], schedule: SdeSchedule,
                     flags: InjectionFlags, seed: int = 0, stochastic: bool = True, workers: int = 1) -> pd.DataFrame:
    """
    Restore and score each sample. Sample ``i`` draws from an rng derived
    from (seed, i), so rows do not depend on ``workers``; rows are ordered by index.
    """
    rows: List[Dict[str, Any]] = Parallel(n_jobs=workers, backend="threading")(
        delayed(_score)(model, i, s, schedule, flags, seed, stochastic) for i, s in enumerate(samples)
    )
    return pd.DataFrame(sorted(rows, key=lambda r: r["index"]))


def per_class(samples: pd.DataFrame) -> pd.DataFrame:
    return samples.groupby("kind")[METRICS].agg(aggregate)


def evaluate(config: RunConfig, checkpoint: str, manifest: str, flags: Optional[InjectionFlags] = None,
             limit: int = 0) -> EvalReport:
    """
    Score a stage-2 checkpoint against every sample of a corpus manifest

    :param flags: injection flags; defaults to the config's prior flags
    :param limit: evaluate only the first ``limit`` samples when positive
    """
    model, ckpt = restore_model(checkpoint, config)
    flags = flags or config.priors.flags()
    samples = load_corpus(manifest)
    if limit > 0:
        samples = samples[:limit]
    logger.info("evaluating %s samples from %s", len(samples), manifest_path(manifest))
    df = evaluate_samples(model, samples, config.sde.schedule(), flags, config.run_seed,
                          config.train.eval_stochastic, config.train.workers)
    metadata = {"checkpoint": checkpoint, "manifest": manifest_path(manifest), "step": ckpt.step,
                "stage": ckpt.stage, "seed": config.run_seed, "flags": vars(flags), "count": len(df)}
    report = EvalReport(samples=df, per_class=per_class(df), metadata=metadata)
    logger.info("mean psnr %.3f (identity %.3f)", report.mean_psnr, aggregate(df["identity_psnr"]))
    return report
