from .ablation import MATRICES, AblationCell, load_matrix, run_ablation
from .checkpoint import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, arch_fingerprint, load_config
from .evaluate import EvalReport, evaluate, evaluate_samples
from .stages import Stage1Result, Stage2Result, run_stage1, run_stage2
