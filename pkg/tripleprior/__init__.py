from ._version import __version__
from .denoiser import InjectionFlags, PriorBundle, RestorationModel, UNet, UNetConfig, classify_stage, training_step
from .metrics import psnr, ssim
from .sde import SdeSchedule, analytic_score, marginal, reverse_step, sample_forward, sample_restore
