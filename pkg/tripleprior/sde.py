"""
Mean-reverting SDE used for restoration.

Forward process, with time discretized uniformly on [0, 1] and dt = 1/T::

    dx = theta_t (mu - x) dt + sigma_t dw,    sigma_t^2 = 2 lambda^2 theta_t

Under that constraint the marginal of x(t) given x(0) is Gaussian::

    m_t = mu + (x0 - mu) exp(-theta_bar_t)
    v_t = lambda^2 (1 - exp(-2 theta_bar_t))

with theta_bar_t = sum_{z <= t} theta_z dt. The score of that marginal is
-(x - m_t) / v_t. A network predicting the noise eps of
x(t) = m_t + sqrt(v_t) eps gives the score as -eps / sqrt(v_t).

Restoration integrates the reverse-time SDE::

    dx = [theta_t (mu - x) - sigma_t^2 score] dt + sigma_t dw_hat

from x_T ~ N(mu, v_T) down to t = 0 with Euler-Maruyama.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from typing_extensions import Protocol

from .constants import COSINE_OFFSET, LAMBDA, T_STEPS, THETA_BAR_END, THETA_RULES
from .exceptions import ParameterError, ScheduleError, ShapeError
from .messages import MSG_NEEDS_RNG, MSG_SCHEDULE_THETA, MSG_SHAPE_MISMATCH, MSG_T_RANGE, MSG_THETA_RULE
from .util import setup_logger

logger = setup_logger(__name__)

TimeLike = Union[int, np.ndarray]
ScoreFn = Callable[[np.ndarray, int], np.ndarray]


# #####################################
# Schedule

@dataclass(frozen=True)
class SdeSchedule:
    """
    Discrete coefficients for t = 0..T. Index 0 is the clean state: ``theta[0]``
    and ``sigma[0]`` are unused zeros and ``theta_bar[0] == 0``.
    """
    T: int
    lam: float
    theta: np.ndarray
    sigma_sq: np.ndarray
    sigma: np.ndarray
    theta_bar: np.ndarray
    rule: str = "constant"

    @property
    def dt(self) -> float:
        return 1.0 / self.T

    @classmethod
    def from_thetas(cls, thetas: np.ndarray, lam: float = LAMBDA, rule: str = "explicit") -> "SdeSchedule":
        """
        Build from per-step theta_1..theta_T. Every step needs theta > 0, which
        keeps theta_bar strictly increasing and v_t > 0 for t >= 1.
        """
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.ndim != 1 or len(thetas) < 1 or not (thetas > 0).all() or not lam > 0:
            raise ScheduleError(MSG_SCHEDULE_THETA)
        T = len(thetas)
        theta = np.concatenate([[0.0], thetas])
        sigma_sq = 2.0 * lam * lam * theta
        theta_bar = np.concatenate([[0.0], np.cumsum(thetas * (1.0 / T))])
        if not (np.diff(theta_bar) > 0).all():
            raise ScheduleError(MSG_SCHEDULE_THETA)
        return cls(T=T, lam=float(lam), theta=theta, sigma_sq=sigma_sq, sigma=np.sqrt(sigma_sq),
                   theta_bar=theta_bar, rule=rule)

    @classmethod
    def constant(cls, T: int = T_STEPS, lam: float = LAMBDA, theta_bar_end: float = THETA_BAR_END) -> "SdeSchedule":
        # sum over T steps of theta * (1/T) == theta
        return cls.from_thetas(np.full(T, float(theta_bar_end)), lam, rule="constant")

    @classmethod
    def cosine(cls, T: int = T_STEPS, lam: float = LAMBDA, theta_bar_end: float = THETA_BAR_END) -> "SdeSchedule":
        """theta_t from the increments of a squared-cosine curve, rescaled to reach theta_bar_end"""
        s = COSINE_OFFSET
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        increments = np.maximum(f[:-1] - f[1:], 1e-12)
        thetas = increments / increments.sum() * theta_bar_end * T
        return cls.from_thetas(thetas, lam, rule="cosine")

    @classmethod
    def build(cls, rule: str = "constant", T: int = T_STEPS, lam: float = LAMBDA,
              theta_bar_end: float = THETA_BAR_END) -> "SdeSchedule":
        if rule == "constant":
            return cls.constant(T, lam, theta_bar_end)
        if rule == "cosine":
            return cls.cosine(T, lam, theta_bar_end)
        raise ScheduleError(MSG_THETA_RULE.format(rule, THETA_RULES))

    def variance(self, t: TimeLike) -> np.ndarray:
        return self.lam ** 2 * (1.0 - np.exp(-2.0 * self.theta_bar[t]))

    def check_t(self, t: TimeLike, lo: int = 0) -> None:
        arr = np.asarray(t)
        if arr.size and (arr.min() < lo or arr.max() > self.T):
            raise ScheduleError(MSG_T_RANGE.format(t, lo, self.T))

    def to_dict(self) -> dict:
        return {"T": self.T, "lam": self.lam, "rule": self.rule, "theta_bar_end": float(self.theta_bar[-1])}


@dataclass(frozen=True)
class Marginal:
    mean: np.ndarray
    variance: np.ndarray


def _per_sample(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-sample (B,) coefficient against a batch"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))


def _check_same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(MSG_SHAPE_MISMATCH.format(name, a.shape, b.shape))


# #####################################
# Closed forms

def marginal(schedule: SdeSchedule, x0: np.ndarray, mu: np.ndarray, t: TimeLike) -> Marginal:
    x0, mu = np.asarray(x0, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    _check_same_shape("marginal", x0, mu)
    schedule.check_t(t)
    decay = _per_sample(np.exp(-schedule.theta_bar[t]), x0)
    # t == 0 returns x0 itself, not mu + (x0 - mu)
    mean = np.where(decay == 1.0, x0, mu + (x0 - mu) * decay)
    return Marginal(mean=mean, variance=schedule.variance(t))


def sample_forward(schedule: SdeSchedule, x0: np.ndarray, mu: np.ndarray, t: TimeLike,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw x_t = m_t + sqrt(v_t) eps; returns (x_t, eps).

    At t == 0 the state is x0 itself and the returned eps is zero.
    """
    m = marginal(schedule, x0, mu, t)
    eps = rng.standard_normal(m.mean.shape)
    eps = np.where(_per_sample(np.asarray(t) == 0, m.mean), 0.0, eps)
    return m.mean + _per_sample(np.sqrt(m.variance), m.mean) * eps, eps


def analytic_score(schedule: SdeSchedule, x_t: np.ndarray, x0: np.ndarray, mu: np.ndarray, t: TimeLike) -> np.ndarray:
    schedule.check_t(t, lo=1)
    m = marginal(schedule, x0, mu, t)
    _check_same_shape("analytic_score", np.asarray(x_t), m.mean)
    return -(x_t - m.mean) / _per_sample(m.variance, m.mean)


def noise_to_score(schedule: SdeSchedule, eps: np.ndarray, t: TimeLike) -> np.ndarray:
    schedule.check_t(t, lo=1)
    return -eps / _per_sample(np.sqrt(schedule.variance(t)), eps)


# #####################################
# Reverse process

def reverse_step(schedule: SdeSchedule, x_t: np.ndarray, mu: np.ndarray, t: int, score: np.ndarray,
                 rng: Optional[np.random.Generator] = None, stochastic: bool = True) -> np.ndarray:
    """One Euler-Maruyama step of the reverse SDE from t to t - 1"""
    schedule.check_t(t, lo=1)
    dt = schedule.dt
    drift = schedule.theta[t] * (mu - x_t) - schedule.sigma_sq[t] * score
    x = x_t - drift * dt
    if stochastic:
        if rng is None:
            raise ParameterError(MSG_NEEDS_RNG)
        x = x + schedule.sigma[t] * math.sqrt(dt) * rng.standard_normal(x_t.shape)
    return x


def reverse_trajectory(schedule: SdeSchedule, x_T: np.ndarray, mu: np.ndarray, score_fn: ScoreFn,
                       rng: Optional[np.random.Generator] = None, stochastic: bool = True,
                       callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    x = np.asarray(x_T, dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        x = reverse_step(schedule, x, mu, t, score_fn(x, t), rng, stochastic)
        if callback is not None:
            callback(t - 1, x)
    return x


def initial_state(schedule: SdeSchedule, mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """x_T ~ N(mu, v_T)"""
    return mu + math.sqrt(float(schedule.variance(schedule.T))) * rng.standard_normal(np.shape(mu))


class NoisePredictor(Protocol):
    def __call__(self, x_t: np.ndarray, mu: np.ndarray, t: int, priors) -> np.ndarray:
        ...


def sample_restore(schedule: SdeSchedule, mu: np.ndarray, denoiser: NoisePredictor, priors,
                   rng: np.random.Generator, stochastic: bool = True,
                   callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """
    Restore ``mu`` (the degraded image) by integrating the reverse SDE, with the
    score taken from the denoiser's noise prediction.
    """
    mu = np.asarray(mu, dtype=np.float64)

    def score_fn(x: np.ndarray, t: int) -> np.ndarray:
        return noise_to_score(schedule, denoiser(x, mu, t, priors), t)

    x_T = initial_state(schedule, mu, rng)
    return reverse_trajectory(schedule, x_T, mu, score_fn, rng, stochastic, callback)


def restore_identity(mu: np.ndarray) -> np.ndarray:
    """Baseline restorer returning the degraded input unchanged"""
    return np.array(mu, dtype=np.float64, copy=True)
