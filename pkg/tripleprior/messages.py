# message (exception, error etc) constant

MSG_SHAPE_MISMATCH = "{}: incompatible shapes {} and {}"
MSG_SHAPE_STAGE = "stage {}: expected {} got {}"
MSG_KERNEL_TOO_LARGE = "conv2d: kernel {} larger than padded input {}"
MSG_NON_FINITE = "non-finite values produced by op #{} ({})"
MSG_NOT_SCALAR = "backward without explicit gradient needs a scalar output, got shape {}"

MSG_T_RANGE = "timestep {} outside [{}, {}]"
MSG_SCHEDULE_THETA = "theta must be positive with strictly increasing cumulative sum"
MSG_THETA_RULE = "unknown theta rule '{}', expected one of {}"

MSG_ZERO_NORM = "zero-norm vector at batch index {}"
MSG_LABEL_RANGE = "label {} at index {} outside [0, {})"
MSG_UNKNOWN_KIND = "unknown degradation kind '{}', expected one of {}"
MSG_UNKNOWN_MODALITY = "unknown modality '{}', expected one of {}"
MSG_SIGMA_ORDER = "DoG needs 0 < sigma1 < sigma2, got ({}, {})"
MSG_EMPTY_TOKENS = "structural token sequence is empty"
MSG_IMAGE_SIZE = "image size {} must be divisible by {}"

MSG_CORPUS_MISSING = "no corpus manifest at {}; run `tripleprior synth` first"
MSG_CORPUS_IO = "failed writing corpus file {}"
MSG_CHECKPOINT_MISSING = "checkpoint not found: {}"
MSG_CHECKPOINT_FORMAT = "{} is not a checkpoint file (bad magic or version)"
MSG_CHECKPOINT_MISMATCH = "checkpoint architecture differs from config: {}"
MSG_TENSOR_FORMAT = "{} is not a TPGT tensor file"

MSG_DIVERGED = "loss became non-finite at step {} (last finite loss {})"
MSG_SSIM_SIZE = "ssim needs images of at least {}x{} pixels, got {}"
MSG_CONFIG_KEY = "unknown config key '{}'"
MSG_MATRIX = "unknown ablation matrix '{}', expected one of {} or a TOML file"
MSG_OVERRIDE_FORMAT = "expected --section.key=value, got '{}'"
MSG_STAGE1_MODE = "stage1_mode must be one of {}, got '{}'"
MSG_PLACEMENT = "unknown placement '{}', expected one of {}"
MSG_HEADS = "attention widths {} must be divisible by heads={}"

MSG_NEEDS_RNG = "stochastic reverse_step needs an rng"
MSG_SEVERITY = "severity must be in (0, 1], got {}"
MSG_SMOOTHING = "label smoothing must be in [0, 1), got {}"
MSG_NO_CONTEXT = "encoder has no context projection"
MSG_SHAPE_KIND = "unknown shape kind '{}'"
MSG_SCENE_SIZE = "scene size must be within {}..{}, got {}x{}"
MSG_GRAD_NO_COORDS = "grad_check found no coordinate with |fd| >= {}"
MSG_DOG_PADDING = "unknown DoG padding '{}', expected one of {}"
