from .corpus import (
    DegradationBatch, DegradationSample, build_corpus, collate, holdout_mask, load_corpus, load_manifest,
    load_sample, make_sample
)
from .degrade import (
    DEFAULT_RANGES, add_blur, add_haze, add_lowlight, add_noise, add_rain, degrade, dehaze, motion_kernel,
    transmission
)
from .preview import save_preview
from .scene import Scene, render_scene, shape_coverage
