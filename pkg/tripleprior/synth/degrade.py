"""
Parametric degradations. Each ``add_*`` takes explicit parameters; ``degrade``
maps a severity in (0, 1] linearly into the configured ranges and draws the
random parts (noise, streak seeds, angles) from the caller's generator.
"""
import math
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..constants import DEGRADATION_KINDS
from ..exceptions import ParameterError, UnknownKindError
from ..messages import MSG_SEVERITY, MSG_UNKNOWN_KIND
from ..tensor import ops
from ..tensor.core import no_grad
from ..util import setup_logger

logger = setup_logger(__name__)

Range = Tuple[float, float]

DEFAULT_RANGES: Dict[str, Dict[str, Range]] = {
    "noise": {"sigma": (0.05, 0.2)},
    "rain": {"density": (0.01, 0.04), "length": (3.0, 7.0), "intensity": (0.3, 0.7)},
    "haze": {"beta": (0.5, 2.5), "airlight": (0.7, 1.0)},
    # gain and photon count fall as severity rises
    "lowlight": {"gamma": (1.5, 3.0), "gain": (0.6, 0.3), "photons": (200.0, 50.0)},
    "blur": {"length": (3.0, 7.0)},
}


def add_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(x + sigma * rng.standard_normal(x.shape), 0.0, 1.0)


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """
    Normalized linear motion kernel of odd size covering ``length`` pixels,
    oriented ``angle`` radians from the horizontal axis.
    """
    size = max(1, int(round(length)))
    size += 1 - size % 2
    kernel = np.zeros((size, size))
    c = size // 2
    samples = np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, 8 * size)
    rows = np.clip(np.rint(c - samples * math.sin(angle)).astype(int), 0, size - 1)
    cols = np.clip(np.rint(c + samples * math.cos(angle)).astype(int), 0, size - 1)
    np.add.at(kernel, (rows, cols), 1.0)
    return kernel / kernel.sum()


def _filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel correlation of (C, H, W) with reflect padding; output keeps the input shape"""
    r = kernel.shape[0] // 2
    padded = np.pad(x, ((0, 0), (r, r), (r, r)), mode="reflect")
    with no_grad():
        out = ops.conv2d(padded[:, None], kernel[None, None]).data
    return out[:, 0]


def add_blur(x: np.ndarray, length: float, angle: float) -> np.ndarray:
    return np.clip(_filter(x, motion_kernel(length, angle)), 0.0, 1.0)


def rain_streaks(height: int, width: int, density: float, length: float, angle: float,
                 rng: np.random.Generator) -> np.ndarray:
    """(H, W) streak layer in [0, 1]: sparse seeds smeared by a motion kernel"""
    seeds = (rng.uniform(size=(1, height, width)) < density).astype(np.float64)
    kernel = motion_kernel(length, angle)
    streaks = _filter(seeds, kernel * np.count_nonzero(kernel))
    return np.clip(streaks[0], 0.0, 1.0)


def add_rain(x: np.ndarray, density: float, length: float, angle: float, intensity: float,
             rng: np.random.Generator) -> np.ndarray:
    _, height, width = x.shape
    layer = rain_streaks(height, width, density, length, angle, rng)
    return np.clip(x + intensity * layer[None], 0.0, 1.0)


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def add_haze(x: np.ndarray, trans: np.ndarray, airlight: float) -> np.ndarray:
    """Atmospheric scattering I = J t + A (1 - t)"""
    return np.clip(x * trans + airlight * (1.0 - trans), 0.0, 1.0)


def dehaze(hazy: np.ndarray, trans: np.ndarray, airlight: float) -> np.ndarray:
    """Inverse scattering J = (I - A (1 - t)) / t"""
    return (hazy - airlight * (1.0 - trans)) / trans


def add_lowlight(x: np.ndarray, gamma: float, gain: float, photons: float, rng: np.random.Generator) -> np.ndarray:
    """Gamma-curve darkening followed by Poisson shot noise at ``photons`` counts per unit intensity"""
    dark = gain * np.power(x, gamma)
    return np.clip(rng.poisson(dark * photons) / photons, 0.0, 1.0)


# #####################################

def severity_params(kind: str, severity: float, ranges: Optional[Mapping[str, Mapping[str, Range]]] = None
                    ) -> Dict[str, float]:
    if kind not in DEGRADATION_KINDS:
        raise UnknownKindError(MSG_UNKNOWN_KIND.format(kind, DEGRADATION_KINDS))
    if not 0.0 < severity <= 1.0:
        raise ParameterError(MSG_SEVERITY.format(severity))
    table = dict(DEFAULT_RANGES[kind])
    if ranges and kind in ranges:
        table.update({k: tuple(v) for k, v in ranges[kind].items()})  # type: ignore[misc]
    return {name: lo + severity * (hi - lo) for name, (lo, hi) in table.items()}


def degrade(x_gt: np.ndarray, kind: str, severity: float, rng: np.random.Generator,
            depth: Optional[np.ndarray] = None,
            ranges: Optional[Mapping[str, Mapping[str, Range]]] = None) -> np.ndarray:
    """
    Apply one degradation to a clean (C, H, W) image

    :param kind: one of ``DEGRADATION_KINDS``
    :param severity: strength in (0, 1], mapped linearly into ``ranges``
    :param depth: (1, H, W) scene depth, used by haze; a flat unit depth otherwise
    :param ranges: per-kind parameter ranges overriding ``DEFAULT_RANGES``
    """
    p = severity_params(kind, severity, ranges)
    x_gt = np.asarray(x_gt, dtype=np.float64)
    if kind == "noise":
        return add_noise(x_gt, p["sigma"], rng)
    if kind == "rain":
        angle = math.pi / 2 + rng.uniform(-0.35, 0.35)
        return add_rain(x_gt, p["density"], p["length"], angle, p["intensity"], rng)
    if kind == "haze":
        if depth is None:
            logger.debug("haze without depth; using unit depth")
            depth = np.ones((1,) + x_gt.shape[1:])
        return add_haze(x_gt, transmission(depth, p["beta"]), p["airlight"])
    if kind == "lowlight":
        return add_lowlight(x_gt, p["gamma"], p["gain"], p["photons"], rng)
    return add_blur(x_gt, p["length"], rng.uniform(0.0, math.pi))
