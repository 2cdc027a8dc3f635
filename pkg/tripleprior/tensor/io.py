"""
TPGT tensor container: magic ``TPGT``, u32 version, u32 rank, u64 extents,
then the payload as little-endian float64 in row-major order.
"""
import os
from typing import BinaryIO, Union

import numpy as np

from ..constants import TENSOR_MAGIC, TENSOR_VERSION
from ..exceptions import CorpusError
from ..messages import MSG_TENSOR_FORMAT
from .core import Tensor

PathLike = Union[str, "os.PathLike[str]"]


def write_tensor(fp: BinaryIO, value: Union[Tensor, np.ndarray]) -> None:
    data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    fp.write(TENSOR_MAGIC)
    fp.write(np.array([TENSOR_VERSION, data.ndim], dtype="<u4").tobytes())
    fp.write(np.array(data.shape, dtype="<u8").tobytes())
    fp.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_tensor(fp: BinaryIO, name: str = "<stream>") -> np.ndarray:
    magic = fp.read(4)
    header = fp.read(8)
    if magic != TENSOR_MAGIC or len(header) != 8:
        raise CorpusError(MSG_TENSOR_FORMAT.format(name), name)
    version, rank = np.frombuffer(header, dtype="<u4")
    if version != TENSOR_VERSION:
        raise CorpusError(MSG_TENSOR_FORMAT.format(name), name)
    shape = tuple(int(s) for s in np.frombuffer(fp.read(8 * int(rank)), dtype="<u8"))
    count = int(np.prod(shape)) if shape else 1
    payload = fp.read(8 * count)
    if len(payload) != 8 * count:
        raise CorpusError(MSG_TENSOR_FORMAT.format(name), name)
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save_tensor(path: PathLike, value: Union[Tensor, np.ndarray]) -> None:
    try:
        with open(path, "wb") as fp:
            write_tensor(fp, value)
    except OSError as e:
        raise CorpusError(f"failed writing {path}: {e}", path) from e


def load_tensor(path: PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fp:
            return read_tensor(fp, str(path))
    except OSError as e:
        raise CorpusError(f"failed reading {path}: {e}", path) from e
