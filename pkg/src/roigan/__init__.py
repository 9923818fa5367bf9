"""Right-ventricle segmentation with encoder/decoder generators and coupled ROI-GAN training.

Built on a small numpy reverse-mode autodiff engine (:mod:`roigan.tensor`).
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Dataset, DatasetManifest, FormatError, MaskStack, RoiBox, SliceStack, crop_resize, extract_roi,
    gen_phantom_dataset, load_dataset, make_phantom_dataset, split_dataset, stack_io_load, stack_io_save,
)
from .evaluation import evaluate
from .losses import LossConfig, gan_loss_discriminator, gan_loss_generator, l1_loss, mse_loss, total_loss
from .metrics import MetricsReport, SliceMetrics, area_regression, dice, hausdorff
from .networks import (
    DiscriminatorSpec, GeneratorSpec, SharingSpec, build_discriminator, build_generator, conv_gru_step,
    discriminator_forward, fcnn_forward, link_shared_parameters, rfcnn_forward,
)
from .optim import Adam, adam_step
from .tensor import Parameter, Tensor, default_dtype, no_grad
from .training import TrainConfig, Trainer, fit, train_step_gan, train_step_roigan

__version__ = "0.1.0"
