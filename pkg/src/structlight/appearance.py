"""Appearance restoration network: a plain encoder-decoder U-Net.

Maps a low-light image to an initial restored image with the same shape,
bounded to [0, 1] by a final sigmoid.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

LEAKY_SLOPE = 0.2


@dataclass
class UNetConfig:
    depth: int = 3
    base_channels: int = 16
    channel_multipliers: tuple = (1, 2, 4)
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        self.channel_multipliers = tuple(self.channel_multipliers)
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if len(self.channel_multipliers) != self.depth:
            raise ConfigError(
                f"need {self.depth} channel multipliers, got {len(self.channel_multipliers)}"
            )

    @property
    def channels(self):
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def size_multiple(self):
        return 2 ** (self.depth - 1)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by a leaky rectifier."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return F.leaky_relu(self.conv2(x), LEAKY_SLOPE)


class Downsample(nn.Module):
    """Strided 3x3 convolution halving the spatial dims."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x):
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


class Upsample(nn.Module):
    """Nearest-neighbor x2 upsampling followed by a 3x3 convolution."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


class AppearanceUNet(nn.Module):
    """Encoder-decoder with skip connections and a sigmoid-bounded output."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or UNetConfig()
        chans = self.config.channels
        self.stem = ConvBlock(self.config.in_channels, chans[0])
        self.downs = nn.ModuleList(
            Downsample(chans[i], chans[i + 1]) for i in range(self.config.depth - 1)
        )
        self.enc_blocks = nn.ModuleList(
            ConvBlock(chans[i + 1], chans[i + 1]) for i in range(self.config.depth - 1)
        )
        self.ups = nn.ModuleList(
            Upsample(chans[i + 1], chans[i]) for i in reversed(range(self.config.depth - 1))
        )
        self.dec_blocks = nn.ModuleList(
            ConvBlock(2 * chans[i], chans[i]) for i in reversed(range(self.config.depth - 1))
        )
        self.head = nn.Conv2d(chans[0], self.config.out_channels, 3, padding=1)

    def forward(self, x):
        mult = self.config.size_multiple
        if x.shape[-2] % mult or x.shape[-1] % mult:
            raise ShapeError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {mult} "
                f"(depth {self.config.depth})"
            )
        skips = []
        h = self.stem(x)
        for down, block in zip(self.downs, self.enc_blocks):
            skips.append(h)
            h = block(down(h))
        for up, block in zip(self.ups, self.dec_blocks):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1))
        return torch.sigmoid(self.head(h))


def init_appearance(config=None, seed=0):
    """Build an AppearanceUNet with parameters deterministic in `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return AppearanceUNet(config)
