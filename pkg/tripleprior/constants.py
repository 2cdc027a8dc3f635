# ###############################################################
VERBOSE = None  # set to true for info, false for debug, None for none
TRACE = False  # set to true for full trace of functions
# ###############################################################
# seeds
DEFAULT_SEED = 0
TEACHER_SEED = 1234  # pins the frozen semantic teacher across runs
SEED_ENV_VAR = "TPG_SEED"
CONFIG_ENV_VAR = "TPG_CONFIG"


# ###############################################################
# diffusion schedule
T_STEPS = 100
LAMBDA = 50.0 / 255.0
THETA_BAR_END = 9.0
THETA_RULES = ("constant", "cosine")
COSINE_OFFSET = 0.008


# ###############################################################
# model sizes
IMAGE_CHANNELS = 3
UNET_DEPTH = 4
BASE_CHANNELS = 32
NORM_GROUPS = 8
NORM_EPS = 1e-5
ATTN_WIDTH = 64
TIME_DIM = 128
SEM_DIM = 64
CONTEXT_TOKENS = 4
STRUCT_DIM = 64
LATENT_TOKENS = 16
DEG_DIM = 64
PROMPT_SLOTS = 8
FILM_HIDDEN = 64
HEADS = 1

SHALLOW = "shallow"
DEEP = "deep"
PLACEMENTS = (SHALLOW, DEEP)


# ###############################################################
# priors
DOG_SIGMAS = (1.0, 2.0)
DOG_PADDINGS = ("reflect", "wrap")
LABEL_SMOOTHING = 0.01
DEGRADATION_KINDS = ("noise", "rain", "haze", "lowlight", "blur")
N_CLASSES = len(DEGRADATION_KINDS)

DEPTH = "depth"
SEG = "seg"
DOG = "dog"
MODALITIES = (DEPTH, SEG, DOG)

MAX_SHAPES = 8
MIN_SHAPES = 3
MAX_LABEL = MAX_SHAPES  # background is 0
MIN_SCENE_SIZE = 8
MAX_SCENE_SIZE = 64


# ###############################################################
# optimization
LEARNING_RATE = 2e-5
WEIGHT_DECAY = 1e-2
BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRAD_CLIP = 1.0
BATCH_SIZE = 8
EVAL_EVERY = 500
HOLDOUT_FRACTION = 0.1
STAGE1_MODES = ("joint", "sequential")
GRAD_FD_MIN = 1e-4  # network grad checks only score coordinates with |fd| at least this


# ###############################################################
# metrics
PSNR_PEAK = 1.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


# ###############################################################
# files
TENSOR_MAGIC = b"TPGT"
TENSOR_VERSION = 1
CHECKPOINT_MAGIC = b"TPGC"
CHECKPOINT_VERSION = 1

MANIFEST = "manifest.csv"
MANIFEST_COLUMNS = ["path", "label", "kind", "severity", "seed"]
GT_FILE = "gt.t"
LQ_FILE = "lq.t"
DEPTH_FILE = "depth.t"
SEG_FILE = "seg.t"
DOG_FILE = "dog.t"

STAGE1_CHECKPOINT = "stage1.ckpt"
STAGE2_CHECKPOINT = "stage2.ckpt"
STAGE1_LOG = "stage1_loss.csv"
STAGE2_LOG = "stage2_loss.csv"
EVAL_LOG = "stage2_eval.csv"
