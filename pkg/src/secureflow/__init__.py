"""Key-conditioned reversible image obfuscation.

A protected image looks like a conventionally obfuscated version of the
input (blur, pixelation, median filter, or sticker mask) but is produced
by an invertible coupling flow conditioned on a password-derived secret
map, so the original can be recovered exactly by key holders. Wrong keys
yield either noise-like images or still-obfuscated images depending on
the trained mode.
"""

from .flow import FlowConfig, FlowModel, init_model
from .imageio import Image, center_crop_resize, load_image, save_image
from .keygen import KeygenConfig, derive_bitmap, expand_for_recovery, keygen
from .metrics import MetricReport, evaluate_suite, psnr, ssim
from .objective import (LossWeights, PerceptualDistance, perceptual_distance,
                        protection_loss, recovery_loss, total_loss,
                        triplet_loss, wrong_recovery_loss)
from .obfuscators import (ObfuscatorSampler, ObfuscatorSpec, apply_spec,
                          eval_spec, gaussian_blur, mask_overlay, median_blur,
                          pixelate, sample_spec)
from .pipeline import (ProtectOutput, RecoverOutput, protect, recover,
                       recover_with_latent)
from .tensor import AdamState, ShapeError, Tensor, adam_step, backprop, no_grad
from .trainer import (CheckpointError, TrainConfig, TrainingDiverged,
                      load_checkpoint, save_checkpoint, synthetic_faces, train)
from .wavelet import dwt, dwt2, iwt, iwt2

__version__ = "0.1.0"
