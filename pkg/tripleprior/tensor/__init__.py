from .core import Function, Tape, Tensor, as_tensor, current_tape, grad_enabled, no_grad, reset_tape
from .gradcheck import grad_check
from .io import load_tensor, read_tensor, save_tensor, write_tensor
from .nn import MLP, Conv2d, GroupNorm, Linear, Module, ModuleList, Parameter
from .optim import AdamW, clip_grad_norm, cosine_lr
from .ops import (
    concat, conv2d, cosine_similarity, group_norm, l1_loss, linear, log_softmax,
    matmul, silu, softmax, upsample_nearest
)
