"""
Noise-predicting UNet with layer-aware prior injection.

The network sees ``concat(x_t, mu)`` and predicts the forward-noise sample.
Stages are split by resolution: stages at H/4 or finer are shallow, coarser
stages and the bottleneck are deep. Every stage owns both a structural FiLM
adapter and a semantic cross-attention block; ``InjectionFlags`` chooses at
forward time which of them run and where, so all ablation variants share one
set of initial weights. The degradation prior enters only through the
time embedding that every residual block consumes.
"""
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    ATTN_WIDTH, BASE_CHANNELS, CONTEXT_TOKENS, DEEP, DEG_DIM, FILM_HIDDEN, GRAD_CLIP, HEADS, IMAGE_CHANNELS,
    LATENT_TOKENS, MODALITIES, N_CLASSES, NORM_EPS, NORM_GROUPS, PLACEMENTS, PROMPT_SLOTS, SEM_DIM, SHALLOW,
    STRUCT_DIM, TIME_DIM, UNET_DEPTH
)
from .exceptions import ConfigError, NonFiniteError, ShapeError, TrainingDivergedError
from .messages import MSG_DIVERGED, MSG_HEADS, MSG_IMAGE_SIZE, MSG_PLACEMENT, MSG_SHAPE_STAGE
from .priors.degradation import (
    DegradationEncoder, TimeModulator, check_timesteps, extract_degradation, sinusoidal_embedding
)
from .priors.semantic import SemanticCrossAttention, SemanticEncoder, extract_semantic
from .priors.structural import StructuralAdapter, StructuralCues, StructuralPrior, extract_structural
from .sde import SdeSchedule, sample_forward, sample_restore
from .tensor import ops
from .tensor.core import Tensor, as_tensor, no_grad, reset_tape
from .tensor.nn import MLP, Conv2d, GroupNorm, Linear, Module, ModuleList, Parameter
from .tensor.optim import AdamW, clip_grad_norm
from .util import make_rng, setup_logger

logger = setup_logger(__name__)


@dataclass
class UNetConfig:
    image_size: int = 16
    channels: int = IMAGE_CHANNELS
    base_channels: int = BASE_CHANNELS
    depth: int = UNET_DEPTH
    groups: int = NORM_GROUPS
    time_dim: int = TIME_DIM
    attn_width: int = ATTN_WIDTH
    heads: int = HEADS
    sem_dim: int = SEM_DIM
    context_tokens: int = CONTEXT_TOKENS
    context_dim: int = SEM_DIM
    struct_dim: int = STRUCT_DIM
    latent_tokens: int = LATENT_TOKENS
    deg_dim: int = DEG_DIM
    prompt_slots: int = PROMPT_SLOTS
    film_hidden: int = FILM_HIDDEN
    seg_onehot: bool = False

    def stage_channels(self, i: int) -> int:
        return self.base_channels * 2 ** i

    def validate(self) -> None:
        factor = 2 ** (self.depth - 1)
        if self.image_size % factor:
            raise ShapeError(MSG_IMAGE_SIZE.format(self.image_size, factor), stage="input")
        if self.attn_width % self.heads or self.struct_dim % self.heads:
            raise ShapeError(MSG_HEADS.format((self.attn_width, self.struct_dim), self.heads))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class InjectionFlags:
    deg: bool = True
    sem: bool = True
    struct: bool = True
    sem_placement: Tuple[str, ...] = (DEEP,)
    struct_placement: Tuple[str, ...] = (SHALLOW,)

    def __post_init__(self) -> None:
        self.sem_placement = tuple(self.sem_placement)
        self.struct_placement = tuple(self.struct_placement)
        for p in self.sem_placement + self.struct_placement:
            if p not in PLACEMENTS:
                raise ConfigError(MSG_PLACEMENT.format(p, PLACEMENTS))

    @classmethod
    def none(cls) -> "InjectionFlags":
        return cls(deg=False, sem=False, struct=False)

    @property
    def any(self) -> bool:
        return self.deg or self.sem or self.struct


# #####################################
# Partition

@dataclass(frozen=True)
class StageId:
    part: str  # encoder | bottleneck | decoder
    index: int
    factor: int  # downsampling factor relative to the input

    def __str__(self) -> str:
        return f"{self.part}[{self.index}]@1/{self.factor}"


def classify_stage(stage: Union[StageId, int]) -> str:
    """
    Shallow for stages at resolution H/4 or finer, deep otherwise; the bottleneck is always deep

    :param stage: a StageId, or a downsampling factor
    """
    if isinstance(stage, StageId):
        if stage.part == "bottleneck":
            return DEEP
        factor = stage.factor
    else:
        factor = int(stage)
    return SHALLOW if factor <= 4 else DEEP


def stage_ids(depth: int = UNET_DEPTH) -> List[StageId]:
    encoder = [StageId("encoder", i, 2 ** i) for i in range(depth)]
    mid = [StageId("bottleneck", 0, 2 ** (depth - 1))]
    decoder = [StageId("decoder", j, 2 ** (depth - 1 - j)) for j in range(depth)]
    return encoder + mid + decoder


# #####################################
# Blocks

@dataclass
class PriorBundle:
    """Priors extracted from one degraded batch; disabled priors are None"""
    semantic: Optional[Tensor] = None  # B x M x D context tokens
    structural: Optional[Tensor] = None  # B x N x D latent tokens
    degradation: Optional[Tensor] = None  # B x D


class ResBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int, rng: np.random.Generator,
                 groups: int = NORM_GROUPS):
        self.norm1 = GroupNorm(groups, in_channels, NORM_EPS)
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, padding=1)
        self.time = Linear(time_dim, out_channels, rng)
        self.norm2 = GroupNorm(groups, out_channels, NORM_EPS)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.skip = Conv2d(in_channels, out_channels, 1, rng) if in_channels != out_channels else None

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(ops.silu(self.norm1(x)))
        t = self.time(ops.silu(temb))
        h = h + ops.reshape(t, t.shape + (1, 1))
        h = self.conv2(ops.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class InjectionSite(Module):
    def __init__(self, channels: int, config: UNetConfig, rng: np.random.Generator):
        self.film = StructuralAdapter(channels, config.struct_dim, rng, hidden=config.film_hidden)
        self.attn = SemanticCrossAttention(channels, config.context_dim, config.attn_width, rng, heads=config.heads)

    def forward(self, h: Tensor, stage: StageId, priors: PriorBundle, flags: InjectionFlags) -> Tensor:
        kind = classify_stage(stage)
        if flags.struct and kind in flags.struct_placement and priors.structural is not None:
            h = self.film(h, priors.structural)
        if flags.sem and kind in flags.sem_placement and priors.semantic is not None:
            h = self.attn(h, priors.semantic)
        return h


def _at_stage(stage: Union[StageId, str], fn: Callable[..., Tensor], *args: Any) -> Tensor:
    try:
        return fn(*args)
    except ShapeError as e:
        if e.stage is not None:
            raise
        raise ShapeError(f"{stage}: {e}", stage=str(stage)) from e


class UNet(Module):
    """
    ``depth`` encoder stages with ``base_channels * 2**i`` channels, a
    stride-2 conv between consecutive stages, a bottleneck at the coarsest
    resolution and a mirrored decoder with skip concatenation.
    """

    def __init__(self, config: UNetConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        D, C = config.depth, config.channels
        ch = [config.stage_channels(i) for i in range(D)]
        self.time_mlp = MLP(config.time_dim, config.time_dim, config.time_dim, rng)
        self.modulator = TimeModulator(rng, config.time_dim, config.deg_dim, config.prompt_slots)
        self.stem = Conv2d(2 * C, ch[0], 3, rng, padding=1)

        self.encoder = ModuleList([
            ResBlock(ch[max(i - 1, 0)], ch[i], config.time_dim, rng, config.groups) for i in range(D)
        ])
        self.encoder_sites = ModuleList([InjectionSite(ch[i], config, rng) for i in range(D)])
        self.downs = ModuleList([Conv2d(ch[i], ch[i], 3, rng, stride=2, padding=1) for i in range(D - 1)])

        self.mid = ResBlock(ch[-1], ch[-1], config.time_dim, rng, config.groups)
        self.mid_site = InjectionSite(ch[-1], config, rng)

        levels = list(reversed(range(D)))
        self.ups = ModuleList([Conv2d(ch[i + 1], ch[i], 3, rng, padding=1) for i in levels[1:]])
        self.decoder = ModuleList([ResBlock(2 * ch[i], ch[i], config.time_dim, rng, config.groups) for i in levels])
        self.decoder_sites = ModuleList([InjectionSite(ch[i], config, rng) for i in levels])

        self.out_norm = GroupNorm(config.groups, ch[0], NORM_EPS)
        self.out_conv = Conv2d(ch[0], C, 3, rng, padding=1)

    def sites(self) -> Iterator[Tuple[StageId, InjectionSite]]:
        ids = stage_ids(self.config.depth)
        modules = list(self.encoder_sites) + [self.mid_site] + list(self.decoder_sites)
        return zip(ids, modules)  # type: ignore[arg-type]

    def time_embedding(self, tau: Union[int, Sequence[int], np.ndarray], batch: int, priors: PriorBundle,
                       flags: InjectionFlags) -> Tensor:
        tau = np.broadcast_to(check_timesteps(tau), (batch,))
        t = Tensor(sinusoidal_embedding(tau, self.config.time_dim))
        if flags.deg and priors.degradation is not None:
            t = _at_stage("time", self.modulator, t, priors.degradation)
        return self.time_mlp(t)

    def _check_input(self, x_t: Tensor, mu: Tensor) -> None:
        cfg = self.config
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if x_t.ndim != 4 or x_t.shape[1:] != expected or x_t.shape != mu.shape:
            raise ShapeError(MSG_SHAPE_STAGE.format("input", ("B",) + expected, (x_t.shape, mu.shape)), stage="input")

    def forward(self, x_t: Any, mu: Any, tau: Union[int, Sequence[int], np.ndarray],
                priors: Optional[PriorBundle] = None, flags: Optional[InjectionFlags] = None) -> Tensor:
        """
        Predict the noise in ``x_t``

        :param x_t: B x C x H x W state
        :param mu: B x C x H x W degraded image
        :param tau: timestep, scalar or one per sample
        :param priors: extracted priors; None runs the unconditional network
        :param flags: which priors to inject, and where
        """
        x_t, mu = as_tensor(x_t), as_tensor(mu)
        if x_t.ndim == 3:
            x_t, mu = ops.reshape(x_t, (1,) + x_t.shape), ops.reshape(mu, (1,) + mu.shape)
        self._check_input(x_t, mu)
        priors = priors or PriorBundle()
        flags = flags or InjectionFlags.none()
        sites = list(self.sites())
        D = self.config.depth

        temb = self.time_embedding(tau, x_t.shape[0], priors, flags)
        h = self.stem(ops.concat([x_t, mu], axis=1))
        skips = []
        for i in range(D):
            stage, site = sites[i]
            h = _at_stage(stage, self.encoder[i], h, temb)
            h = _at_stage(stage, site, h, stage, priors, flags)
            skips.append(h)
            if i < D - 1:
                h = self.downs[i](h)

        stage, site = sites[D]
        h = _at_stage(stage, self.mid, h, temb)
        h = _at_stage(stage, site, h, stage, priors, flags)

        for j in range(D):
            stage, site = sites[D + 1 + j]
            if j > 0:
                h = self.ups[j - 1](ops.upsample_nearest(h, 2))
            h = ops.concat([h, skips[D - 1 - j]], axis=1)
            h = _at_stage(stage, self.decoder[j], h, temb)
            h = _at_stage(stage, site, h, stage, priors, flags)

        return self.out_conv(ops.silu(self.out_norm(h)))


# #####################################
# Full model

class RestorationModel(Module):
    """
    Frozen semantic teacher, semantic student, structural prior, degradation
    encoder and the UNet. Parameter names are prefixed by these attributes,
    e.g. ``student.head.weight`` or ``unet.mid.conv1.weight``.
    """

    def __init__(self, config: Optional[UNetConfig] = None, seed: int = 0):
        self.config = config or UNetConfig()
        cfg = self.config
        rng = make_rng(seed, 0xD1FF)
        self.teacher = SemanticEncoder.teacher(cfg.channels, cfg.sem_dim)
        self.student = SemanticEncoder(cfg.channels, rng, cfg.sem_dim, cfg.context_tokens, cfg.context_dim)
        self.structural = StructuralPrior(rng, cfg.struct_dim, cfg.latent_tokens, cfg.heads, cfg.seg_onehot)
        self.degradation = DegradationEncoder(cfg.channels, rng, cfg.deg_dim, N_CLASSES)
        self.unet = UNet(cfg, rng)
        structural_tokens = len(MODALITIES) * self.structural.encoder.tokens_per_modality(cfg.image_size, cfg.image_size)
        if cfg.latent_tokens >= structural_tokens:
            logger.warning("latent_tokens=%s does not compress the %s structural tokens of a %sx%s image",
                           cfg.latent_tokens, structural_tokens, cfg.image_size, cfg.image_size)
        logger.debug("built model with %s parameters", self.num_parameters())

    def extract_priors(self, x_lq: Any, cues: Optional[StructuralCues], flags: InjectionFlags) -> PriorBundle:
        bundle = PriorBundle()
        if flags.sem:
            bundle.semantic = extract_semantic(self.student, x_lq).tokens
        if flags.struct:
            if cues is None:
                logger.warning("structural prior enabled but no cues given; skipping it")
            else:
                bundle.structural = extract_structural(self.structural, cues)
        if flags.deg:
            bundle.degradation = extract_degradation(self.degradation, x_lq)
        return bundle

    def forward(self, x_t: Any, mu: Any, tau: Any, cues: Optional[StructuralCues] = None,
                flags: Optional[InjectionFlags] = None) -> Tensor:
        flags = flags or InjectionFlags()
        return self.unet(x_t, mu, tau, self.extract_priors(mu, cues, flags), flags)

    def prepare_stage2(self) -> List[Parameter]:
        """Freeze the stage-1 encoders and return the parameters trained with the diffusion loss"""
        self.teacher.freeze()
        self.student.freeze_trunk()
        self.degradation.freeze()
        trainable = self.student.context.unfreeze().parameters() if self.student.context is not None else []
        return trainable + self.structural.unfreeze().parameters() + self.unet.unfreeze().parameters()

    def noise_predictor(self, flags: InjectionFlags) -> Callable[[np.ndarray, np.ndarray, int, PriorBundle], np.ndarray]:
        def predict(x_t: np.ndarray, mu: np.ndarray, t: int, priors: PriorBundle) -> np.ndarray:
            with no_grad():
                return self.unet(x_t, mu, t, priors, flags).data
        return predict

    def restore(self, x_lq: np.ndarray, cues: Optional[StructuralCues], schedule: SdeSchedule,
                flags: InjectionFlags, rng: np.random.Generator, stochastic: bool = True) -> np.ndarray:
        """Integrate the reverse SDE from the degraded batch (B x C x H x W)"""
        x_lq = np.asarray(x_lq, dtype=np.float64)
        if x_lq.ndim == 3:
            return self.restore(x_lq[None], StructuralCues.stack([cues]) if cues is not None else None,
                                schedule, flags, rng, stochastic)[0]
        with no_grad():
            priors = self.extract_priors(x_lq, cues, flags)
        return sample_restore(schedule, x_lq, self.noise_predictor(flags), priors, rng, stochastic)


def training_step(model: RestorationModel, batch: Any, schedule: SdeSchedule, optimizer: AdamW,
                  rng: np.random.Generator, flags: InjectionFlags, lr: Optional[float] = None,
                  clip: float = GRAD_CLIP) -> float:
    """
    One noise-matching update: t ~ U{1..T}, (x_t, eps) from the forward
    marginal with mu = x_LQ, L1(eps_hat, eps), backward, clip, AdamW step.

    :param batch: a DegradationBatch
    :return: the loss before the update
    """
    t = rng.integers(1, schedule.T + 1, size=len(batch))
    x_t, eps = sample_forward(schedule, batch.gt, batch.lq, t, rng)
    try:
        priors = model.extract_priors(batch.lq, batch.cues, flags)
        eps_hat = model.unet(x_t, batch.lq, t, priors, flags)
        loss = ops.l1_loss(eps_hat, eps)
    except NonFiniteError as e:
        reset_tape()
        diagnostics = {"op_index": e.op_index, "op": e.op_name, "t": t.tolist(), "step": optimizer.step_count}
        raise TrainingDivergedError(MSG_DIVERGED.format(optimizer.step_count, math.nan), diagnostics) from e
    optimizer.zero_grad()
    loss.backward()
    grad_norm = clip_grad_norm(optimizer.params, clip)
    if not math.isfinite(grad_norm):
        raise TrainingDivergedError(MSG_DIVERGED.format(optimizer.step_count, loss.item()),
                                    {"grad_norm": grad_norm, "t": t.tolist(), "step": optimizer.step_count})
    optimizer.step(lr)
    logger.debug("step %s loss %.6f grad norm %.4f", optimizer.step_count, loss.item(), grad_norm)
    return loss.item()


