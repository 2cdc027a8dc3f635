"""
Checkpoint container.

Layout: magic ``TPGC``, u32 version, u32 header length, a UTF-8 JSON header
(architecture fingerprint, stage, step, the full run config, the schedule
and the parameter names), then one record per parameter: u32 name length,
the name, and the value as a TPGT tensor.
"""
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ..denoiser import RestorationModel
from ..exceptions import CheckpointError, CheckpointMismatchError, CorpusError
from ..messages import MSG_CHECKPOINT_FORMAT, MSG_CHECKPOINT_MISMATCH, MSG_CHECKPOINT_MISSING
from ..sde import SdeSchedule
from ..tensor.io import read_tensor, write_tensor
from ..util import setup_logger
from .config import RunConfig, arch_fingerprint, architecture_diff

logger = setup_logger(__name__)


@dataclass
class Checkpoint:
    header: Dict[str, Any]
    state: Dict[str, np.ndarray]

    @property
    def stage(self) -> str:
        return self.header["stage"]

    @property
    def step(self) -> int:
        return int(self.header["step"])

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.header["config"])


def save_checkpoint(path: str, model: RestorationModel, config: RunConfig, stage: str, step: int,
                    schedule: Optional[SdeSchedule] = None) -> None:
    state = model.state_dict()
    header = {
        "config_hash": arch_fingerprint(config),
        "stage": stage,
        "step": int(step),
        "config": config.to_dict(),
        "schedule": (schedule or config.sde.schedule()).to_dict(),
        "names": list(state),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    try:
        with open(path, "wb") as fp:
            fp.write(CHECKPOINT_MAGIC)
            fp.write(np.array([CHECKPOINT_VERSION, len(blob)], dtype="<u4").tobytes())
            fp.write(blob)
            for name, value in state.items():
                encoded = name.encode("utf-8")
                fp.write(np.array([len(encoded)], dtype="<u4").tobytes())
                fp.write(encoded)
                write_tensor(fp, value)
    except OSError as e:
        raise CheckpointError(f"failed writing checkpoint {path}: {e}") from e
    logger.info("saved %s checkpoint at step %s to %s", stage, step, path)


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise CheckpointError(MSG_CHECKPOINT_MISSING.format(path))
    with open(path, "rb") as fp:
        magic = fp.read(4)
        fixed = fp.read(8)
        if magic != CHECKPOINT_MAGIC or len(fixed) != 8:
            raise CheckpointError(MSG_CHECKPOINT_FORMAT.format(path))
        version, length = (int(v) for v in np.frombuffer(fixed, dtype="<u4"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(MSG_CHECKPOINT_FORMAT.format(path))
        try:
            header = json.loads(fp.read(length).decode("utf-8"))
            state: Dict[str, np.ndarray] = {}
            for expected in header["names"]:
                size = int(np.frombuffer(fp.read(4), dtype="<u4")[0])
                name = fp.read(size).decode("utf-8")
                if name != expected:
                    raise CheckpointError(f"{path}: record '{name}' out of order, expected '{expected}'")
                state[name] = read_tensor(fp, f"{path}:{name}")
        except (ValueError, KeyError, IndexError, CorpusError) as e:
            raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    return Checkpoint(header=header, state=state)


def check_compatible(checkpoint: Checkpoint, config: RunConfig) -> None:
    if checkpoint.header["config_hash"] == arch_fingerprint(config):
        return
    stored = checkpoint.header["config"]
    diff = architecture_diff({"model": stored.get("model", {}), "sde": stored.get("sde", {})}, config)
    raise CheckpointMismatchError(MSG_CHECKPOINT_MISMATCH.format(diff), diff)  # type: ignore[arg-type]


def restore_model(path: str, config: Optional[RunConfig] = None) -> Tuple[RestorationModel, Checkpoint]:
    """
    Rebuild the model stored at ``path``

    :param config: when given, the checkpoint must match its architecture; the stored config is used otherwise
    """
    checkpoint = load_checkpoint(path)
    if config is None:
        config = checkpoint.config
    else:
        check_compatible(checkpoint, config)
    model = RestorationModel(config.model, seed=config.run_seed)
    model.load_state_dict(checkpoint.state)
    return model, checkpoint
