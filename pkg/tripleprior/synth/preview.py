import os
from typing import Union

import numpy as np

from ..exceptions import CorpusError
from ..util import setup_logger

logger = setup_logger(__name__)


def lazy_pil_import_has_dependency():
    try:
        from PIL import Image  # noqa

        return True, "ok", Image
    except ModuleNotFoundError as e:
        return False, e, None


def to_uint8(x: np.ndarray) -> np.ndarray:
    """(C, H, W) or (H, W) floats in [0, 1] -> (H, W[, 3]) bytes"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[0] if x.shape[0] == 1 else np.moveaxis(x, 0, -1)
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_preview(path: Union[str, "os.PathLike[str]"], x: np.ndarray) -> None:
    """
    Write an 8-bit preview; the format follows the extension (``.png`` or ``.pgm``).
    PGM previews are grayscale.
    """
    has_pil, error, Image = lazy_pil_import_has_dependency()
    if not has_pil:
        raise ImportError("previews need Pillow: pip install tripleprior[preview]") from error
    pixels = to_uint8(x)
    path = os.fspath(path)
    if path.lower().endswith(".pgm") and pixels.ndim == 3:
        pixels = np.rint(pixels.mean(axis=-1)).astype(np.uint8)
    try:
        Image.fromarray(pixels).save(path)
    except OSError as e:
        raise CorpusError(f"failed writing preview {path}: {e}", path) from e
    logger.debug("preview %s %s", path, pixels.shape)
