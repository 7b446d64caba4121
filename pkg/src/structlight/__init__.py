"""Low-light image enhancement with explicit edge-structure modeling and guidance."""

__version__ = "0.1.0"

from .appearance import AppearanceUNet, UNetConfig, init_appearance
from .canny import canny_edges
from .config import ModelConfig, RunConfig, TrainConfig
from .data import CannyConfig, DegradeConfig, build_dataset, degrade, load_batch
from .losses import (
    LossWeights,
    PerceptualExtractor,
    gan_discriminator_loss,
    gan_generator_loss,
    reconstruction_loss,
    structure_bce,
    total_loss,
)
from .metrics import MetricReport, edge_metrics, psnr, ssim
from .ops import compute_gradient_maps, instance_norm, resize_map
from .sgem import SgemConfig, SgemNet, init_sgem
from .structure import (
    DiscriminatorConfig,
    EdgeDiscriminator,
    SafeConfig,
    StructureConfig,
    StructureNet,
    init_discriminator,
    init_structure,
)
from .training import TrainState, build_state, load_checkpoint, save_checkpoint, train_step
