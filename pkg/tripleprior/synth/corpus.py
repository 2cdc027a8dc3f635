"""
Paired corpus: one rendered scene per sample, one degradation per sample,
class-balanced, written as TPGT tensors under ``sample_XXXXX/`` directories
with a CSV manifest at the root.
"""
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..constants import (
    DEGRADATION_KINDS, DEPTH_FILE, DOG_FILE, GT_FILE, HOLDOUT_FRACTION, LQ_FILE, MANIFEST, MANIFEST_COLUMNS,
    SEG_FILE
)
from ..exceptions import CorpusError, UnknownKindError
from ..messages import MSG_CORPUS_IO, MSG_CORPUS_MISSING, MSG_UNKNOWN_KIND
from ..priors.structural import StructuralCues, compute_dog, grayscale
from ..tensor.io import load_tensor, save_tensor
from ..util import derive_seed, make_rng, setup_logger
from .degrade import Range, degrade
from .scene import render_scene

logger = setup_logger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


@dataclass
class DegradationSample:
    lq: np.ndarray
    gt: np.ndarray
    label: int
    cues: StructuralCues
    seed: int
    kind: str = ""
    severity: float = 0.0


@dataclass
class DegradationBatch:
    lq: np.ndarray  # B x C x H x W
    gt: np.ndarray
    labels: np.ndarray
    cues: StructuralCues  # each B x 1 x H x W
    seeds: np.ndarray

    def __len__(self) -> int:
        return self.lq.shape[0]


def collate(samples: Sequence[DegradationSample]) -> DegradationBatch:
    return DegradationBatch(
        lq=np.stack([s.lq for s in samples]),
        gt=np.stack([s.gt for s in samples]),
        labels=np.array([s.label for s in samples], dtype=int),
        cues=StructuralCues.stack([s.cues for s in samples]),
        seeds=np.array([s.seed for s in samples], dtype=np.int64),
    )


# #####################################

def sample_seed(seed: int, index: int) -> int:
    return int(derive_seed(seed, index).generate_state(1)[0])


def class_order(n_per_class: int, seed: int, kinds: Sequence[str] = DEGRADATION_KINDS) -> List[str]:
    """Round-robin over the classes, each round in a fresh random order"""
    rng = make_rng(seed, len(kinds), n_per_class)
    order: List[str] = []
    for _ in range(n_per_class):
        order.extend(kinds[i] for i in rng.permutation(len(kinds)))
    return order


def make_sample(seed: int, kind: str, height: int, width: int, severity: Optional[float] = None,
                ranges: Optional[Mapping[str, Mapping[str, Range]]] = None) -> DegradationSample:
    """
    Render and degrade one sample. Depth and segments come from the clean
    scene; the DoG cue is taken from the degraded image.

    :param severity: fixed severity, or None to draw one from the sample's rng
    """
    if kind not in DEGRADATION_KINDS:
        raise UnknownKindError(MSG_UNKNOWN_KIND.format(kind, DEGRADATION_KINDS))
    scene = render_scene(seed, height, width)
    rng = make_rng(seed, 1)
    if severity is None:
        severity = float(rng.uniform(0.2, 1.0))
    lq = degrade(scene.image, kind, severity, rng, depth=scene.depth, ranges=ranges)
    dog = compute_dog(grayscale(lq))[None]
    return DegradationSample(lq=lq, gt=scene.image, label=DEGRADATION_KINDS.index(kind),
                             cues=StructuralCues(depth=scene.depth, seg=scene.seg, dog=dog),
                             seed=seed, kind=kind, severity=severity)


def _write_sample(root: str, name: str, sample: DegradationSample) -> Dict[str, Any]:
    folder = os.path.join(root, name)
    try:
        os.makedirs(folder, exist_ok=True)
    except OSError as e:
        raise CorpusError(MSG_CORPUS_IO.format(folder), folder) from e
    for file, value in ((GT_FILE, sample.gt), (LQ_FILE, sample.lq), (DEPTH_FILE, sample.cues.depth),
                        (SEG_FILE, sample.cues.seg), (DOG_FILE, sample.cues.dog)):
        save_tensor(os.path.join(folder, file), value)
    return {"path": name, "label": sample.label, "kind": sample.kind,
            "severity": sample.severity, "seed": sample.seed}


def _generate(root: str, index: int, kind: str, seed: int, height: int, width: int,
              severity: Optional[float], ranges: Optional[Mapping[str, Mapping[str, Range]]]) -> Dict[str, Any]:
    sample = make_sample(sample_seed(seed, index), kind, height, width, severity, ranges)
    return _write_sample(root, f"sample_{index:05d}", sample)


def build_corpus(n_per_class: int, height: int, width: int, seed: int, out_dir: PathLike,
                 kinds: Sequence[str] = DEGRADATION_KINDS, severity: Optional[float] = None,
                 ranges: Optional[Mapping[str, Mapping[str, Range]]] = None, workers: int = 1) -> pd.DataFrame:
    """
    Generate and write a class-balanced corpus

    :param n_per_class: samples per degradation kind
    :param seed: corpus seed; sample ``i`` uses an rng derived from (seed, i)
    :param out_dir: created if missing; receives ``manifest.csv`` and one folder per sample
    :param workers: joblib worker count; output does not depend on it
    :return: the manifest
    """
    for kind in kinds:
        if kind not in DEGRADATION_KINDS:
            raise UnknownKindError(MSG_UNKNOWN_KIND.format(kind, DEGRADATION_KINDS))
    root = os.fspath(out_dir)
    try:
        os.makedirs(root, exist_ok=True)
    except OSError as e:
        raise CorpusError(MSG_CORPUS_IO.format(root), root) from e

    order = class_order(n_per_class, seed, kinds)
    logger.info("building corpus of %s samples (%s per class) at %s", len(order), n_per_class, root)
    rows = Parallel(n_jobs=workers)(
        delayed(_generate)(root, i, kind, seed, height, width, severity, ranges) for i, kind in enumerate(order)
    )
    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    path = os.path.join(root, MANIFEST)
    try:
        manifest.to_csv(path, index=False, encoding="utf-8")
    except OSError as e:
        raise CorpusError(MSG_CORPUS_IO.format(path), path) from e
    return manifest


# #####################################

def manifest_path(path: PathLike) -> str:
    path = os.fspath(path)
    return os.path.join(path, MANIFEST) if os.path.isdir(path) else path


def load_manifest(path: PathLike) -> pd.DataFrame:
    """:param path: corpus directory or manifest file"""
    file = manifest_path(path)
    if not os.path.isfile(file):
        raise CorpusError(MSG_CORPUS_MISSING.format(file), file)
    return pd.read_csv(file, dtype={"path": str, "label": int, "kind": str, "severity": float, "seed": np.int64})


def load_sample(root: PathLike, row: Mapping[str, Any]) -> DegradationSample:
    folder = os.path.join(os.fspath(root), str(row["path"]))
    cues = StructuralCues(depth=load_tensor(os.path.join(folder, DEPTH_FILE)),
                          seg=load_tensor(os.path.join(folder, SEG_FILE)),
                          dog=load_tensor(os.path.join(folder, DOG_FILE)))
    return DegradationSample(lq=load_tensor(os.path.join(folder, LQ_FILE)),
                             gt=load_tensor(os.path.join(folder, GT_FILE)),
                             label=int(row["label"]), cues=cues, seed=int(row["seed"]),
                             kind=str(row["kind"]), severity=float(row["severity"]))


def load_corpus(path: PathLike, kinds: Optional[Sequence[str]] = None) -> List[DegradationSample]:
    file = manifest_path(path)
    manifest = load_manifest(file)
    if kinds:
        manifest = manifest[manifest["kind"].isin(list(kinds))]
    root = os.path.dirname(file)
    return [load_sample(root, row) for row in manifest.to_dict("records")]


def holdout_mask(n: int, fraction: float = HOLDOUT_FRACTION, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Deterministic train/held-out split

    :param n: number of samples
    :param fraction: share of samples held out; at least one when n > 1
    :return: train and held-out boolean masks
    """
    held = int(round(n * fraction))
    if n > 1:
        held = min(max(held, 1), n - 1)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[make_rng(seed, n).permutation(n)[:held]] = True
    return ~test_mask, test_mask
