"""
Ablation matrices. Every cell of a seed starts from the same stage-1
checkpoint and the same initial UNet weights; cells differ only in which
priors are injected and where.
"""
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

import pandas as pd

from ..constants import DEEP, SHALLOW
from ..denoiser import InjectionFlags
from ..exceptions import ConfigError
from ..messages import MSG_MATRIX
from ..util import setup_logger
from .config import RunConfig, read_toml
from .stages import run_stage1, run_stage2

logger = setup_logger(__name__)

RANK_METRICS = ["psnr", "ssim", "identity_psnr"]


@dataclass
class AblationCell:
    name: str
    flags: InjectionFlags


MATRICES: Dict[str, List[AblationCell]] = {
    "prior-types": [
        AblationCell("none", InjectionFlags(deg=False, sem=False, struct=False)),
        AblationCell("deg", InjectionFlags(deg=True, sem=False, struct=False)),
        AblationCell("deg+sem", InjectionFlags(deg=True, sem=True, struct=False)),
        AblationCell("all", InjectionFlags(deg=True, sem=True, struct=True)),
    ],
    "placement": [
        AblationCell("sem-everywhere", InjectionFlags(sem=True, struct=False, sem_placement=(DEEP, SHALLOW))),
        AblationCell("sem-shallow+struct-deep", InjectionFlags(sem_placement=(SHALLOW,), struct_placement=(DEEP,))),
        AblationCell("sem-deep+struct-shallow", InjectionFlags(sem_placement=(DEEP,), struct_placement=(SHALLOW,))),
    ],
}


def load_matrix(name: str) -> List[AblationCell]:
    """
    A built-in matrix name, or a TOML file of ``[[cell]]`` tables with
    ``name`` plus any of ``deg``, ``sem``, ``struct``, ``sem_placement``
    and ``struct_placement``
    """
    if name in MATRICES:
        return list(MATRICES[name])
    if not os.path.isfile(name):
        raise ConfigError(MSG_MATRIX.format(name, sorted(MATRICES)))
    cells = []
    for i, table in enumerate(read_toml(name).get("cell", [])):
        table = dict(table)
        cell_name = str(table.pop("name", f"cell{i}"))
        cells.append(AblationCell(cell_name, InjectionFlags(**table)))
    return cells


def final_metrics(evals: pd.DataFrame) -> Dict[str, float]:
    """Last held-out evaluation of a stage-2 run; NaN when it never evaluated"""
    if evals.empty:
        logger.warning("stage 2 produced no evaluation rows; reporting NaN")
        return {m: math.nan for m in RANK_METRICS}
    final = evals.iloc[-1]
    return {m: float(final[m]) for m in RANK_METRICS}


def rank(results: pd.DataFrame) -> pd.DataFrame:
    """Mean over seeds per cell, best PSNR first"""
    report = (results.groupby("cell", sort=False)[RANK_METRICS].mean()
              .sort_values("psnr", ascending=False))
    report["seeds"] = results.groupby("cell", sort=False)["seed"].nunique()
    report["rank"] = range(1, len(report) + 1)
    return report


def run_ablation(config: RunConfig, matrix: Sequence[AblationCell], seeds: Sequence[int] = (0,),
                 out_dir: str = "", progress: bool = False) -> pd.DataFrame:
    """
    Train every cell under every seed and return the ranked report. The
    per-run rows are written next to it as ``ablation_runs.csv``.
    """
    out_dir = out_dir or os.path.join(config.paths.out, "ablation")
    rows = []
    for seed in seeds:
        seeded = config.replace(seed=seed)
        seed_dir = os.path.join(out_dir, f"seed{seed}")
        stage1 = run_stage1(seeded, out_dir=seed_dir, progress=progress)
        for cell in matrix:
            logger.info("ablation seed %s cell %s", seed, cell.name)
            result = run_stage2(seeded, stage1.checkpoint, cell.flags, os.path.join(seed_dir, cell.name), progress)
            rows.append({"cell": cell.name, "seed": seed, **final_metrics(result.evals)})
    results = pd.DataFrame(rows)
    os.makedirs(out_dir, exist_ok=True)
    results.to_csv(os.path.join(out_dir, "ablation_runs.csv"), index=False)
    report = rank(results)
    report.to_csv(os.path.join(out_dir, "ablation_report.csv"))
    return report
