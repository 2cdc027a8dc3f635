"""
Run configuration.

Values are layered, later sources winning: built-in defaults, the files in
``config_paths``, an explicit ``--config`` file, environment variables from
``EnvVarNames`` and finally ``--section.key=value`` overrides whose values
are parsed as TOML literals.
"""
import copy
import os
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from ..constants import (
    ADAM_EPS, BATCH_SIZE, BETAS, CONFIG_ENV_VAR, DEEP, DEGRADATION_KINDS, EVAL_EVERY, GRAD_CLIP, HOLDOUT_FRACTION,
    LAMBDA, LEARNING_RATE, SEED_ENV_VAR, SHALLOW, T_STEPS, THETA_BAR_END, WEIGHT_DECAY
)
from ..denoiser import InjectionFlags, UNetConfig
from ..exceptions import ConfigError
from ..messages import MSG_CONFIG_KEY, MSG_OVERRIDE_FORMAT
from ..sde import SdeSchedule
from ..util import hash_memoize, setup_logger

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = setup_logger(__name__)


###############################################################################

EnvVarNames = {
    "seed": SEED_ENV_VAR,
}

config_paths = [
    os.path.join(os.path.expanduser("~"), ".tripleprior.toml"),
    os.environ.get(CONFIG_ENV_VAR, ""),
]


@dataclass
class SdeConfig:
    T: int = T_STEPS
    lam: float = LAMBDA
    theta_rule: str = "constant"
    theta_bar_end: float = THETA_BAR_END

    def schedule(self) -> SdeSchedule:
        return SdeSchedule.build(self.theta_rule, T=self.T, lam=self.lam, theta_bar_end=self.theta_bar_end)


@dataclass
class PriorsConfig:
    deg: bool = True
    sem: bool = True
    struct: bool = True
    sem_placement: List[str] = field(default_factory=lambda: [DEEP])
    struct_placement: List[str] = field(default_factory=lambda: [SHALLOW])

    def flags(self) -> InjectionFlags:
        return InjectionFlags(self.deg, self.sem, self.struct, tuple(self.sem_placement), tuple(self.struct_placement))


@dataclass
class OptimConfig:
    lr: float = LEARNING_RATE
    lr_min: float = 0.0
    weight_decay: float = WEIGHT_DECAY
    betas: Tuple[float, float] = BETAS
    eps: float = ADAM_EPS
    grad_clip: float = GRAD_CLIP
    batch_size: int = BATCH_SIZE


@dataclass
class TrainConfig:
    stage1_steps: int = 2000
    stage1_mode: str = "joint"  # joint | sequential
    stage1_lr: float = 1e-3
    stage2_steps: int = 2000
    eval_every: int = EVAL_EVERY
    eval_samples: int = 0  # 0 evaluates the whole held-out split
    eval_stochastic: bool = True
    holdout: float = HOLDOUT_FRACTION
    kinds: List[str] = field(default_factory=lambda: list(DEGRADATION_KINDS))
    workers: int = 1


@dataclass
class SynthConfig:
    n_per_class: int = 50
    height: int = 24
    width: int = 24
    severity: float = 0.0  # 0 draws a severity per sample
    kinds: List[str] = field(default_factory=lambda: list(DEGRADATION_KINDS))
    ranges: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)


@dataclass
class PathsConfig:
    corpus: str = "corpus"
    out: str = "runs"


@dataclass
class RunConfig:
    stage: str = "diffusion"  # priors | diffusion
    seed: Optional[int] = None
    sde: SdeConfig = field(default_factory=SdeConfig)
    model: UNetConfig = field(default_factory=lambda: UNetConfig(image_size=24))
    priors: PriorsConfig = field(default_factory=PriorsConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def run_seed(self) -> int:
        return 0 if self.seed is None else int(self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "RunConfig":
        config = cls()
        _update(config, values)
        return config

    def replace(self, **overrides: Any) -> "RunConfig":
        """Deep copy with dotted-key overrides, e.g. ``replace(**{"priors.sem": False})``"""
        config = copy.deepcopy(self)
        for key, value in overrides.items():
            apply_override(config, key, value)
        return config


# #####################################
# Merging

def _coerce(current: Any, value: Any) -> Any:
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _update(obj: Any, values: Mapping[str, Any], prefix: str = "") -> None:
    known = {f.name for f in fields(obj)}
    for key, value in values.items():
        if key not in known:
            raise KeyError(MSG_CONFIG_KEY.format(prefix + key))
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, Mapping):
            _update(current, value, f"{prefix}{key}.")
        else:
            setattr(obj, key, _coerce(current, value))


def apply_override(config: RunConfig, key: str, value: Any) -> None:
    *path, leaf = key.split(".")
    nested: Dict[str, Any] = {leaf: value}
    for part in reversed(path):
        nested = {part: nested}
    _update(config, nested)


def parse_value(text: str) -> Any:
    """TOML literal when it parses as one, else the raw string"""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_overrides(args: Sequence[str]) -> Dict[str, Any]:
    """``["--model.base_channels=16", "--priors.sem=false"]`` -> {"model.base_channels": 16, ...}"""
    out: Dict[str, Any] = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(MSG_OVERRIDE_FORMAT.format(arg))
        key, text = arg[2:].split("=", 1)
        out[key.replace("-", "_")] = parse_value(text)
    return out


def read_toml(path: str) -> Dict[str, Any]:
    with open(path, "rb") as fp:
        return tomllib.load(fp)


def _get_initial_config(extra_paths: Sequence[str] = ()) -> RunConfig:
    config = RunConfig()
    for path in list(config_paths) + list(extra_paths):
        if not path or not os.path.isfile(path):
            continue
        try:
            _update(config, read_toml(path))
            logger.debug("loaded config %s", path)
        except tomllib.TOMLDecodeError as e:
            logger.warning("Syntax error in %s, skipping. (%s)", path, e)

    env_config = {k: os.environ.get(v) for k, v in EnvVarNames.items()}
    env_override = {k: v for k, v in env_config.items() if v is not None}
    if "seed" in env_override:
        config.seed = int(env_override["seed"])
    return config


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                seed: Optional[int] = None) -> RunConfig:
    """
    :param path: explicit config file, applied after ``config_paths``
    :param overrides: dotted keys to values, applied last
    :param seed: explicit seed; wins over the file and ``TPG_SEED``
    """
    config = _get_initial_config([path] if path else [])
    if path and not os.path.isfile(path):
        raise FileNotFoundError(path)
    for key, value in (overrides or {}).items():
        apply_override(config, key, value)
    if seed is not None:
        config.seed = seed
    return config


# #####################################

def architecture(config: RunConfig) -> Dict[str, Any]:
    return {"model": asdict(config.model), "sde": asdict(config.sde)}


def arch_fingerprint(config: RunConfig) -> str:
    return hash_memoize(architecture(config))


def architecture_diff(stored: Mapping[str, Any], config: RunConfig) -> Dict[str, Tuple[Any, Any]]:
    """Flattened ``section.key -> (stored, current)`` for every differing architecture key"""
    current = architecture(config)
    diff: Dict[str, Tuple[Any, Any]] = {}
    for section, values in current.items():
        old = stored.get(section, {})
        for key in sorted(set(values) | set(old)):
            a, b = old.get(key), values.get(key)
            if isinstance(a, list) and isinstance(b, tuple):
                b = list(b)
            if a != b:
                diff[f"{section}.{key}"] = (a, b)
    return diff
