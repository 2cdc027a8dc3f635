import hashlib
import logging
from typing import Any, Optional, Sequence, Union

import numpy as np

from .constants import VERBOSE, TRACE


# #####################################

def setup_logger(name, verbose=VERBOSE, fullpath=TRACE):
    logger = logging.getLogger(name)
    if verbose is not None:
        logger.setLevel(logging.INFO if verbose else logging.DEBUG)
    if fullpath and not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("[%(filename)s:%(lineno)s - %(funcName)20s() ]\n   %(message)s\n"))
        logger.addHandler(handler)
    return logger


# #####################################
# Fingerprints

def hash_memoize_helper(v: Any) -> str:

    if isinstance(v, dict):
        rolling = '{'
        for k2, v2 in sorted(v.items()):
            rolling += f'{k2}:{hash_memoize_helper(v2)},'
        rolling += '}'
    elif isinstance(v, list):
        rolling = '['
        for i in v:
            rolling += f'{hash_memoize_helper(i)},'
        rolling += ']'
    elif isinstance(v, tuple):
        rolling = '('
        for i in v:
            rolling += f'{hash_memoize_helper(i)},'
        rolling += ')'
    elif isinstance(v, bool):
        rolling = 'T' if v else 'F'
    elif isinstance(v, (int, np.integer)):
        rolling = str(int(v))
    elif isinstance(v, (float, np.floating)):
        rolling = repr(float(v))
    elif isinstance(v, str):
        rolling = v
    elif v is None:
        rolling = 'N'
    elif isinstance(v, np.ndarray):
        rolling = hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest() + str(v.shape)
    else:
        raise TypeError(f'Unsupported memoization type: {type(v)}')

    return rolling


def hash_memoize(v: Any) -> str:
    return hashlib.sha256(hash_memoize_helper(v).encode('utf-8')).hexdigest()


# #####################################
# Randomness

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]


def derive_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent stream for (seed, *keys); same keys give the same stream in any process."""
    return np.random.SeedSequence([int(seed)] + [int(k) for k in keys])


def make_rng(seed: Optional[SeedLike] = None, *keys: int) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, int):
        return np.random.default_rng(derive_seed(seed, *keys))
    return np.random.default_rng(derive_seed(int(seed[0]), *seed[1:], *keys))


# #####################################

def strtobool(val: Any) -> bool:
    val = str(val).lower()
    if val in ('y', 'yes', 't', 'true', 'on', '1'):
        return True
    elif val in ('n', 'no', 'f', 'false', 'off', '0'):
        return False
    else:
        raise ValueError("invalid truth value %r" % (val,))


