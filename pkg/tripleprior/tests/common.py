import os
import shutil
import tempfile
import unittest

import numpy as np

from tripleprior.denoiser import UNetConfig
from tripleprior.harness.config import RunConfig
from tripleprior.tensor.core import reset_tape
from tripleprior.util import strtobool

ACCEPTANCE = strtobool(os.environ.get("TEST_ACCEPTANCE", "0"))
ACCEPTANCE_REASON = "acceptance runs need TEST_ACCEPTANCE=1"


def tiny_model_config(image_size: int = 8, **overrides) -> UNetConfig:
    values = dict(image_size=image_size, base_channels=8, groups=4, time_dim=16, attn_width=8, sem_dim=8,
                  context_tokens=2, context_dim=8, struct_dim=8, latent_tokens=4, deg_dim=8, prompt_slots=3,
                  film_hidden=8)
    values.update(overrides)
    return UNetConfig(**values)


def tiny_run_config(root: str, image_size: int = 16, seed: int = 0) -> RunConfig:
    config = RunConfig(seed=seed)
    config.model = tiny_model_config(image_size)
    config.sde.T = 10
    config.synth.n_per_class = 2
    config.synth.height = config.synth.width = image_size
    config.train.stage1_steps = 3
    config.train.stage2_steps = 2
    config.train.eval_every = 1
    config.train.eval_samples = 1
    config.optim.batch_size = 2
    config.paths.corpus = os.path.join(root, "corpus")
    config.paths.out = os.path.join(root, "runs")
    return config


def rand(*shape, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


class TripleTestCase(unittest.TestCase):
    def setUp(self):
        reset_tape()


class TempDirTestCase(TripleTestCase):
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp(prefix="tripleprior-")

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
