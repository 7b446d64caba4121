"""Training objectives: pixel+feature reconstruction, edge regression,
non-saturating adversarial losses, and their weighted combination.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError, TrainingDiverged
from .metrics import BCE_EPS

LEAKY_SLOPE = 0.2


@dataclass
class LossWeights:
    """Weights for the four loss terms; the total is their linear combination."""

    appearance: float = 1.0
    structure: float = 0.1
    adversarial: float = 0.01
    enhancement: float = 1.0

    def __post_init__(self):
        for name in ("appearance", "structure", "adversarial", "enhancement"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


class PerceptualExtractor(nn.Module):
    """Fixed random conv stack used as the feature distance for reconstruction.

    Four stride-2 stages with a tap after each; parameters are seeded, then
    frozen for the lifetime of the module. A pretrained feature stack can be
    swapped in through the same interface (a callable returning tap features).
    """

    def __init__(self, in_channels=3, stage_channels=(8, 16, 32, 64), seed=0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages = []
            prev = in_channels
            for ch in stage_channels:
                stages.append(nn.Conv2d(prev, ch, 3, stride=2, padding=1))
                prev = ch
            self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)

    def forward(self, x):
        feats = []
        h = x
        for conv in self.stages:
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
            feats.append(h)
        return feats


def reconstruction_loss(pred, target, extractor=None):
    """Mean absolute pixel error plus mean absolute feature error per tap."""
    if pred.shape != target.shape:
        raise ShapeError(
            f"reconstruction: {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
    loss = (pred - target).abs().mean()
    if extractor is not None:
        for fp, ft in zip(extractor(pred), extractor(target)):
            loss = loss + (fp - ft).abs().mean()
    return loss


def structure_bce(pred, gt):
    """Mean binary cross-entropy of a soft edge map against a binary target."""
    if pred.shape != gt.shape:
        raise ShapeError(f"structure_bce: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()


def gan_generator_loss(fake_logits):
    """Non-saturating generator objective: mean softplus(-logit)."""
    return F.softplus(-fake_logits).mean()


def gan_discriminator_loss(real_logits, fake_logits):
    """Mean softplus(-real) + mean softplus(+fake)."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def total_loss(appearance, structure, adversarial, enhancement, weights):
    """Exact weighted sum of the four terms; rejects non-finite parts."""
    parts = {
        "appearance": appearance,
        "structure": structure,
        "adversarial": adversarial,
        "enhancement": enhancement,
    }
    for name, value in parts.items():
        v = float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise TrainingDiverged(
                f"loss term '{name}' is non-finite",
                diagnostics={k: float(p) for k, p in parts.items()},
            )
    return (
        weights.appearance * appearance
        + weights.structure * structure
        + weights.adversarial * adversarial
        + weights.enhancement * enhancement
    )
