"""Toy laboratory for Product-of-Gaussians diffusion fine-tuning on imbalanced data."""

from .autodiff import Tensor, backward, grad_check, no_grad
from .data import Dataset, IdentitySpec, generate, identity_of
from .density import DensityVae, PsiWeight, elbo, fit, psi_weight
from .diffusion import (NoiseSchedule, TrainBatch, a_coeff, ddim_sample, ddpm_sample, pogdiff_loss, q_sample,
                        schedule_new, vanilla_loss)
from .gaussian import IsotropicGaussian, kl_isotropic, lemma_residual, pog_product
from .metrics import coverage_match, grecall, toy_fid
from .neighbors import build_index, img_similarity, sample_neighbor
from .nn import Mlp, MlpDenoiser

__version__ = "0.1.0"
