from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ParameterError, ShapeError
from ..messages import MSG_GRAD_NO_COORDS, MSG_NOT_SCALAR
from ..util import setup_logger
from .core import Tensor, no_grad, reset_tape

logger = setup_logger(__name__)


def _coordinates(params: Sequence[Tensor], shuffle: bool, rng: Optional[np.random.Generator]) -> List[Tuple[int, int]]:
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if not shuffle:
        return coords
    rng = rng if rng is not None else np.random.default_rng(0)
    return [coords[k] for k in rng.permutation(len(coords))]


def _central_difference(f: Callable[[], Tensor], param: Tensor, j: int, eps: float) -> float:
    flat = param.data.reshape(-1)
    orig = flat[j]
    flat[j] = orig + eps
    plus = f().item()
    flat[j] = orig - eps
    minus = f().item()
    flat[j] = orig
    return (plus - minus) / (2.0 * eps)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-8,
    min_magnitude: float = 0.0,
) -> float:
    """
    Compare autodiff gradients of a scalar function against central differences.

    :param f: zero-argument callable rebuilding the scalar output from ``params``
    :param params: leaf tensors to check; their ``data`` is perturbed in place and restored
    :param eps: finite-difference step
    :param samples: number of randomly chosen scalar coordinates to score; all coordinates when None
    :param rng: generator used to order candidate coordinates
    :param floor: added to |fd| in the denominator
    :param min_magnitude: coordinates whose |fd| falls below this are skipped and
        not counted; candidates are drawn until ``samples`` qualify
    :returns: max over scored coordinates of |autodiff - fd| / (|fd| + floor)

    A non-finite intermediate raises ``NonFiniteError`` naming the op index.
    """
    for p in params:
        p.grad = None
    reset_tape()
    out = f()
    if out.size != 1:
        raise ShapeError(MSG_NOT_SCALAR.format(out.shape))
    out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    scored = skipped = 0
    with no_grad():
        for i, j in _coordinates(params, samples is not None, rng):
            if samples is not None and scored >= samples:
                break
            numeric = _central_difference(f, params[i], j, eps)
            if abs(numeric) < min_magnitude:
                skipped += 1
                continue
            scored += 1
            err = abs(analytic[i].reshape(-1)[j] - numeric) / (abs(numeric) + floor)
            if err > worst:
                logger.debug("grad_check param %s[%s]: autodiff=%s fd=%s err=%s",
                             i, j, analytic[i].reshape(-1)[j], numeric, err)
            worst = max(worst, err)
    if scored == 0:
        raise ParameterError(MSG_GRAD_NO_COORDS.format(min_magnitude))
    if samples is not None and scored < samples:
        logger.warning("grad_check scored %s of %s samples; %s coordinates below |fd| %s",
                       scored, samples, skipped, min_magnitude)
    logger.debug("grad_check scored %s coordinates, skipped %s", scored, skipped)
    return worst
