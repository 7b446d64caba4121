"""Structure-guided enhancement: a U-Net over concat(restored, input) whose
decoder features pass through per-location kernels and normalization maps
synthesized from the edge map, producing a residual over the restored image.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .appearance import ConvBlock, Downsample, Upsample
from .errors import ConfigError, ShapeError
from .ops import instance_norm, resize_map

LEAKY_SLOPE = 0.2


@dataclass
class SgemConfig:
    levels: int = 3
    base_channels: int = 16
    channel_multipliers: tuple = (1, 2, 4)
    kernel_h: int = 3
    kernel_w: int = 3
    eps: float = 1e-5
    in_channels: int = 6
    out_channels: int = 3

    def __post_init__(self):
        self.channel_multipliers = tuple(self.channel_multipliers)
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if len(self.channel_multipliers) != self.levels:
            raise ConfigError(
                f"need {self.levels} channel multipliers, got {len(self.channel_multipliers)}"
            )
        if self.kernel_h % 2 == 0 or self.kernel_w % 2 == 0:
            raise ConfigError(
                f"kernel dims must be odd, got ({self.kernel_h}, {self.kernel_w})"
            )

    @property
    def channels(self):
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def size_multiple(self):
        return 2 ** (self.levels - 1)


class KernelSynthesizer(nn.Module):
    """Map a resized edge map to per-location depthwise kernels.

    Output shape (B, channels * kh * kw, p, q); tap weights of each channel
    are softmax-normalized per location.
    """

    def __init__(self, channels, kernel_h=3, kernel_w=3, hidden=16):
        super().__init__()
        self.channels = channels
        self.kernel_h = kernel_h
        self.kernel_w = kernel_w
        self.body = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        self.head = nn.Conv2d(hidden, channels * kernel_h * kernel_w, 1)

    def forward(self, edge_map):
        B, _, p, q = edge_map.shape
        raw = self.head(self.body(edge_map))
        taps = raw.view(B, self.channels, self.kernel_h * self.kernel_w, p, q)
        taps = taps.softmax(dim=2)
        return taps.reshape(B, self.channels * self.kernel_h * self.kernel_w, p, q)


def apply_location_kernels(feat, kernels, kernel_h=3, kernel_w=3):
    """Depthwise convolution with a distinct kernel at every location.

    feat: (B, C, p, q); kernels: (B, C*kh*kw, p, q) with tap-major layout per
    channel (index c*kh*kw + u*kw + v multiplies feat[c, y+u-kh//2, x+v-kw//2],
    zero padding outside).
    """
    B, C, p, q = feat.shape
    kk = kernel_h * kernel_w
    if kernels.shape != (B, C * kk, p, q):
        raise ShapeError(
            f"kernel tensor {tuple(kernels.shape)} does not match feature "
            f"{tuple(feat.shape)} with {kernel_h}x{kernel_w} taps"
        )
    patches = F.unfold(feat, (kernel_h, kernel_w), padding=(kernel_h // 2, kernel_w // 2))
    patches = patches.view(B, C, kk, p, q)
    return (patches * kernels.view(B, C, kk, p, q)).sum(dim=2)


class NormSynthesizer(nn.Module):
    """Map a resized edge map to per-location scale and shift maps.

    The head is zero-initialized: scale starts at exactly 1 and shift at 0,
    so the module begins as plain instance normalization.
    """

    def __init__(self, channels, hidden=16):
        super().__init__()
        self.channels = channels
        self.body = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        self.head = nn.Conv2d(hidden, 2 * channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, edge_map):
        out = self.head(self.body(edge_map))
        d_alpha, gamma = out.chunk(2, dim=1)
        return 1.0 + d_alpha, gamma


def modulate_normalized(feat, alpha, gamma, eps=1e-5):
    """Instance-normalize then scale/shift elementwise."""
    if not (feat.shape == alpha.shape == gamma.shape):
        raise ShapeError("feature, scale and shift maps must share one shape")
    return instance_norm(feat, eps) * alpha + gamma


class GuidedDecoderLevel(nn.Module):
    """One decoder level: shape-preserving conv stack plus the guided branch."""

    def __init__(self, channels, cfg):
        super().__init__()
        self.channels = channels
        self.eps = cfg.eps
        self.kernel_h = cfg.kernel_h
        self.kernel_w = cfg.kernel_w
        self.conv = ConvBlock(channels, channels)
        self.sgc = KernelSynthesizer(channels, cfg.kernel_h, cfg.kernel_w)
        self.sgn = NormSynthesizer(channels)

    def forward(self, feat, edge_map, use_guidance=True):
        main = self.conv(feat)
        if not use_guidance:
            return main
        edge = resize_map(edge_map, feat.shape[-2], feat.shape[-1])
        kernels = self.sgc(edge)
        guided = apply_location_kernels(feat, kernels, self.kernel_h, self.kernel_w)
        alpha, gamma = self.sgn(edge)
        return main + modulate_normalized(guided, alpha, gamma, self.eps)


class SgemNet(nn.Module):
    """Residual enhancement U-Net conditioned on an edge map.

    The residual head is zero-initialized, so at initialization the output is
    exactly clamp(restored, 0, 1).
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config or SgemConfig()
        cfg = self.config
        chans = cfg.channels
        self.stem = ConvBlock(cfg.in_channels, chans[0])
        self.downs = nn.ModuleList(
            Downsample(chans[i], chans[i + 1]) for i in range(cfg.levels - 1)
        )
        self.enc_blocks = nn.ModuleList(
            ConvBlock(chans[i + 1], chans[i + 1]) for i in range(cfg.levels - 1)
        )
        dec_chans = tuple(reversed(chans))
        self.dec_levels = nn.ModuleList(
            GuidedDecoderLevel(c, cfg) for c in dec_chans
        )
        self.ups = nn.ModuleList(
            Upsample(dec_chans[j], dec_chans[j + 1]) for j in range(cfg.levels - 1)
        )
        self.skip_merges = nn.ModuleList(
            nn.Conv2d(2 * dec_chans[j + 1], dec_chans[j + 1], 3, padding=1)
            for j in range(cfg.levels - 1)
        )
        self.head = nn.Conv2d(chans[0], cfg.out_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, restored, original, edge_map, use_guidance=True):
        if restored.shape != original.shape:
            raise ShapeError(
                f"restored {tuple(restored.shape)} vs input {tuple(original.shape)}"
            )
        if edge_map.shape[1] != 1 or edge_map.shape[-2:] != restored.shape[-2:]:
            raise ShapeError(
                f"edge map {tuple(edge_map.shape)} incompatible with image "
                f"{tuple(restored.shape)}"
            )
        mult = self.config.size_multiple
        if restored.shape[-2] % mult or restored.shape[-1] % mult:
            raise ShapeError(
                f"spatial dims {tuple(restored.shape[-2:])} not divisible by {mult}"
            )

        x = torch.cat([restored, original], dim=1)
        skips = []
        h = self.stem(x)
        for down, block in zip(self.downs, self.enc_blocks):
            skips.append(h)
            h = block(down(h))

        for j, level in enumerate(self.dec_levels):
            h = level(h, edge_map, use_guidance=use_guidance)
            if j < len(self.ups):
                h = self.ups[j](h)
                h = F.leaky_relu(
                    self.skip_merges[j](torch.cat([h, skips.pop()], dim=1)), LEAKY_SLOPE
                )
        residual = self.head(h)
        return (restored + residual).clamp(0.0, 1.0)


def init_sgem(config=None, seed=0):
    """Build an SgemNet with parameters deterministic in `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SgemNet(config)
