"""Aggregate run configuration and JSON round-tripping."""

import dataclasses
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

from .appearance import UNetConfig
from .data import CannyConfig, DegradeConfig
from .errors import ConfigError
from .losses import LossWeights
from .sgem import SgemConfig
from .structure import DiscriminatorConfig, SafeConfig, StructureConfig


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr_main: float = 2e-4
    lr_disc: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0  # 0 = only final
    detach_structure: bool = False
    disable_appearance: bool = False
    disable_structure: bool = False
    disable_guidance: bool = False
    disable_gan: bool = False
    baseline_edge_net: bool = False

    def __post_init__(self):
        if self.lr_main <= 0 or self.lr_disc <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.disable_structure:
            # no structure model means nothing to train adversarially or guide with
            self.disable_gan = True
            self.disable_guidance = True


@dataclass
class ModelConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    structure: StructureConfig = field(default_factory=StructureConfig)
    sgem: SgemConfig = field(default_factory=SgemConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    phi_channels: tuple = (8, 16, 32, 64)
    phi_seed: int = 77

    def __post_init__(self):
        self.phi_channels = tuple(self.phi_channels)

    @property
    def size_multiple(self):
        """Spatial divisibility required by the deepest network."""
        return max(
            2**self.structure.safe.num_levels,
            self.unet.size_multiple,
            self.sgem.size_multiple,
            self.structure.safe.window_size,
        )


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    canny: CannyConfig = field(default_factory=CannyConfig)


def config_to_dict(cfg):
    return asdict(cfg)


def config_from_dict(cls, data):
    """Rebuild a (possibly nested) config dataclass from plain dicts."""
    if not is_dataclass(cls):
        return data
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if is_dataclass(f.type) and isinstance(value, dict):
            value = config_from_dict(f.type, value)
        kwargs[f.name] = value
    return cls(**kwargs)


def load_run_config(path):
    raw = json.loads(Path(path).read_text())
    return config_from_dict(RunConfig, raw)


def save_run_config(cfg, path):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
