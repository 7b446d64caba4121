"""Edge-structure generative model: feature extractor, latent mapping,
style-conditioned generator, and the edge-map discriminator.

The extractor runs 9 parallel branches per level (image content plus the 8
directional gradient maps), each with a long-range windowed-attention block,
a short-range convolutional block, and a per-branch fusion MLP; a cross-branch
fusion merges everything and downsamples. The deepest features are pooled into
a latent code that modulates the generator; every pyramid level is injected
into the matching generator resolution.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .ops import DIRECTIONS, compute_gradient_maps

LEAKY_SLOPE = 0.2
NUM_BRANCHES = 1 + len(DIRECTIONS)


@dataclass
class SafeConfig:
    num_levels: int = 3
    channels: tuple = (8, 16, 32)
    window_size: int = 8
    heads: int = 2
    mlp_ratio: float = 2.0
    in_channels: int = 3

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != self.num_levels:
            raise ConfigError(
                f"need {self.num_levels} channel counts, got {len(self.channels)}"
            )
        for c in self.channels:
            if c % self.heads:
                raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")

    @property
    def pyramid_channels(self):
        """Channel counts of f_1 .. f_{N+1}; the last level keeps its width."""
        return self.channels + (self.channels[-1],)


@dataclass
class StructureConfig:
    safe: SafeConfig = field(default_factory=SafeConfig)
    dim_z: int = 128
    dim_w: int = 128
    const_size: int = 8


@dataclass
class DiscriminatorConfig:
    base_channels: int = 16
    num_layers: int = 3
    in_channels: int = 1


def window_partition(x, window_size):
    """(B, C, H, W) -> (B * nWin, window_size**2, C) token windows."""
    B, C, H, W = x.shape
    x = x.view(B, C, H // window_size, window_size, W // window_size, window_size)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(-1, window_size * window_size, C)


def window_reverse(tokens, window_size, B, C, H, W):
    """Inverse of window_partition."""
    x = tokens.view(
        B, H // window_size, W // window_size, window_size, window_size, C
    )
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(B, C, H, W)


class WindowAttention(nn.Module):
    """Multi-head self-attention within one window, with relative position bias."""

    def __init__(self, dim, heads, window_size):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.window_size = window_size
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

        self.rel_bias = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, heads)
        )
        nn.init.normal_(self.rel_bias, std=0.02)
        coords = torch.stack(
            torch.meshgrid(
                torch.arange(window_size), torch.arange(window_size), indexing="ij"
            )
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0) + (window_size - 1)
        index = rel[..., 0] * (2 * window_size - 1) + rel[..., 1]
        self.register_buffer("rel_index", index, persistent=False)

    def forward(self, tokens, return_attn=False):
        Bn, T, C = tokens.shape
        qkv = self.qkv(tokens).reshape(Bn, T, 3, self.heads, C // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        bias = self.rel_bias[self.rel_index.view(-1)].view(T, T, self.heads)
        attn = attn + bias.permute(2, 0, 1).unsqueeze(0)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(Bn, T, C)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


class LocallyEnhancedFeedForward(nn.Module):
    """Pointwise expansion, depthwise 3x3 convolution, pointwise projection."""

    def __init__(self, dim, hidden):
        super().__init__()
        self.expand = nn.Conv2d(dim, hidden, 1)
        self.depthwise = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.project = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        x = F.gelu(self.expand(x))
        x = F.gelu(self.depthwise(x))
        return self.project(x)


class LongRangeEncoder(nn.Module):
    """Transformer block: windowed attention + conv-augmented feed-forward,
    both pre-normalized with residual connections."""

    def __init__(self, dim, heads, window_size, mlp_ratio=2.0):
        super().__init__()
        self.window_size = window_size
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window_size)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = LocallyEnhancedFeedForward(dim, int(dim * mlp_ratio))

    def forward(self, x):
        B, C, H, W = x.shape
        ws = self.window_size
        if H % ws or W % ws:
            raise ShapeError(f"dims {(H, W)} not divisible by window size {ws}")
        tokens = window_partition(x, ws)
        tokens = tokens + self.attn(self.norm1(tokens))
        x = window_reverse(tokens, ws, B, C, H, W)

        normed = self.norm2(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        return x + self.ff(normed)


class ShortRangeEncoder(nn.Module):
    """Residual stack of two 3x3 convolutions; receptive field radius 2."""

    def __init__(self, dim):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return x + self.conv2(h)


class LongShortFusion(nn.Module):
    """Per-position MLP merging long- and short-range features of one branch."""

    def __init__(self, dim):
        super().__init__()
        self.fc1 = nn.Conv2d(2 * dim, 2 * dim, 1)
        self.fc2 = nn.Conv2d(2 * dim, dim, 1)

    def forward(self, long_feat, short_feat):
        if long_feat.shape != short_feat.shape:
            raise ShapeError(
                f"fusion inputs differ: {tuple(long_feat.shape)} vs {tuple(short_feat.shape)}"
            )
        h = torch.cat([long_feat, short_feat], dim=1)
        return self.fc2(F.leaky_relu(self.fc1(h), LEAKY_SLOPE))


class GradientFusion(nn.Module):
    """Merge the content feature with the 8 directional features and
    downsample by 2."""

    def __init__(self, dim, out_dim):
        super().__init__()
        self.merge = nn.Conv2d(NUM_BRANCHES * dim, dim, 1)
        self.down = nn.Conv2d(dim, out_dim, 3, stride=2, padding=1)

    def forward(self, content, directional):
        if len(directional) != len(DIRECTIONS):
            raise ShapeError(f"expected {len(DIRECTIONS)} directional features")
        h = torch.cat([content, *directional], dim=1)
        h = F.leaky_relu(self.merge(h), LEAKY_SLOPE)
        return F.leaky_relu(self.down(h), LEAKY_SLOPE)


def _stacked(modules, getter):
    return torch.stack([getter(m) for m in modules])


def _channel_norm(x, gamma, beta, eps=1e-5):
    """LayerNorm over dim 1 of (B*, C, H, W) with per-row affine tensors."""
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + eps) * gamma + beta


class ExtractorLevel(nn.Module):
    """One pyramid level: 9 branches (content + 8 gradient directions), each
    with its own encoder pair and fusion, merged and downsampled.

    Parameters live in the per-branch submodules; `forward` gathers them and
    runs all branches as grouped operations (one dispatch instead of nine),
    which is substantially faster on CPU. `forward_reference` is the naive
    per-branch loop with identical semantics, kept for verification.
    """

    def __init__(self, dim, out_dim, heads, window_size, mlp_ratio):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.window_size = window_size
        self.long = nn.ModuleList(
            LongRangeEncoder(dim, heads, window_size, mlp_ratio)
            for _ in range(NUM_BRANCHES)
        )
        self.short = nn.ModuleList(ShortRangeEncoder(dim) for _ in range(NUM_BRANCHES))
        self.fuse = nn.ModuleList(LongShortFusion(dim) for _ in range(NUM_BRANCHES))
        self.grad_fuse = GradientFusion(dim, out_dim)

    def _branch_inputs(self, f, level_idx, grad_hook):
        grads = compute_gradient_maps(f)
        if grad_hook is not None:
            grads = grad_hook(level_idx, grads)
        return (f, *grads)

    def forward_reference(self, f, level_idx=0, grad_hook=None):
        branch_in = self._branch_inputs(f, level_idx, grad_hook)
        fused = [
            self.fuse[b](self.long[b](branch_in[b]), self.short[b](branch_in[b]))
            for b in range(NUM_BRANCHES)
        ]
        return self.grad_fuse(fused[0], fused[1:])

    def forward(self, f, level_idx=0, grad_hook=None):
        branch_in = self._branch_inputs(f, level_idx, grad_hook)
        ws = self.window_size
        if f.shape[-2] % ws or f.shape[-1] % ws:
            raise ShapeError(f"dims {tuple(f.shape[-2:])} not divisible by window {ws}")
        # (B, G*C, H, W) with branch-major channel blocks
        x = torch.stack(branch_in, dim=1).flatten(1, 2)
        long_out = self._long_batched(x)
        short_out = self._short_batched(x)
        fused = self._fuse_batched(long_out, short_out)
        h = F.leaky_relu(self.grad_fuse.merge(fused), LEAKY_SLOPE)
        return F.leaky_relu(self.grad_fuse.down(h), LEAKY_SLOPE)

    def _long_batched(self, x):
        B, GC, H, W = x.shape
        G, C = NUM_BRANCHES, self.dim
        ws = self.window_size
        heads = self.heads
        T = ws * ws
        nwin = (H // ws) * (W // ws)

        hd = C // heads
        tokens = window_partition(x.view(B * G, C, H, W), ws).view(B, G, nwin, T, C)

        g1 = _stacked(self.long, lambda m: m.norm1.weight).view(1, G, 1, 1, C)
        b1 = _stacked(self.long, lambda m: m.norm1.bias).view(1, G, 1, 1, C)
        normed = F.layer_norm(tokens, (C,)) * g1 + b1

        qkv_w = _stacked(self.long, lambda m: m.attn.qkv.weight)
        qkv_b = _stacked(self.long, lambda m: m.attn.qkv.bias)
        qkv = torch.einsum("bgntc,gdc->bgntd", normed, qkv_w) + qkv_b.view(1, G, 1, 1, -1)
        # flatten (batch, branch, window, head) into one bmm dim; >4-D matmul
        # and softmax fall off the fast CPU paths
        q, k, v = (
            qkv.view(B, G, nwin, T, 3, heads, hd)
            .permute(4, 0, 1, 2, 5, 3, 6)
            .reshape(3, B * G * nwin * heads, T, hd)
            .unbind(0)
        )
        scale = hd**-0.5
        tables = _stacked(self.long, lambda m: m.attn.rel_bias)
        idx = self.long[0].attn.rel_index.reshape(-1)
        bias = tables[:, idx].view(G, T, T, heads).permute(0, 3, 1, 2)
        attn = torch.bmm(q, k.transpose(-2, -1)) * scale
        attn = attn.view(B, G, nwin, heads, T, T) + bias[None, :, None]
        attn = attn.view(-1, T, T).softmax(dim=-1)
        ctx = (
            torch.bmm(attn, v)
            .view(B, G, nwin, heads, T, hd)
            .permute(0, 1, 2, 4, 3, 5)
            .reshape(B, G, nwin, T, C)
        )

        proj_w = _stacked(self.long, lambda m: m.attn.proj.weight)
        proj_b = _stacked(self.long, lambda m: m.attn.proj.bias)
        ctx = torch.einsum("bgntc,gdc->bgntd", ctx, proj_w) + proj_b.view(1, G, 1, 1, C)
        tokens = tokens + ctx

        x = window_reverse(tokens.reshape(B * G * nwin, T, C), ws, B * G, C, H, W)

        g2 = _stacked(self.long, lambda m: m.norm2.weight)
        b2 = _stacked(self.long, lambda m: m.norm2.bias)
        rep = lambda t: t.unsqueeze(0).expand(B, G, C).reshape(B * G, C, 1, 1)
        normed = _channel_norm(x, rep(g2), rep(b2))

        hidden = self.long[0].ff.depthwise.weight.shape[0]
        w_e = _stacked(self.long, lambda m: m.ff.expand.weight).flatten(0, 1)
        b_e = _stacked(self.long, lambda m: m.ff.expand.bias).flatten()
        w_d = _stacked(self.long, lambda m: m.ff.depthwise.weight).flatten(0, 1)
        b_d = _stacked(self.long, lambda m: m.ff.depthwise.bias).flatten()
        w_p = _stacked(self.long, lambda m: m.ff.project.weight).flatten(0, 1)
        b_p = _stacked(self.long, lambda m: m.ff.project.bias).flatten()
        h = normed.view(B, G * C, H, W)
        h = F.gelu(F.conv2d(h, w_e, b_e, groups=G))
        h = F.gelu(F.conv2d(h, w_d, b_d, padding=1, groups=G * hidden))
        h = F.conv2d(h, w_p, b_p, groups=G)
        return x.view(B, G * C, H, W) + h

    def _short_batched(self, x):
        G = NUM_BRANCHES
        w1 = _stacked(self.short, lambda m: m.conv1.weight).flatten(0, 1)
        b1 = _stacked(self.short, lambda m: m.conv1.bias).flatten()
        w2 = _stacked(self.short, lambda m: m.conv2.weight).flatten(0, 1)
        b2 = _stacked(self.short, lambda m: m.conv2.bias).flatten()
        h = F.leaky_relu(F.conv2d(x, w1, b1, padding=1, groups=G), LEAKY_SLOPE)
        return x + F.conv2d(h, w2, b2, padding=1, groups=G)

    def _fuse_batched(self, long_out, short_out):
        B, GC, H, W = long_out.shape
        G, C = NUM_BRANCHES, self.dim
        pair = torch.cat(
            [long_out.view(B, G, C, H, W), short_out.view(B, G, C, H, W)], dim=2
        ).view(B, G * 2 * C, H, W)
        w1 = _stacked(self.fuse, lambda m: m.fc1.weight).flatten(0, 1)
        b1 = _stacked(self.fuse, lambda m: m.fc1.bias).flatten()
        w2 = _stacked(self.fuse, lambda m: m.fc2.weight).flatten(0, 1)
        b2 = _stacked(self.fuse, lambda m: m.fc2.bias).flatten()
        h = F.leaky_relu(F.conv2d(pair, w1, b1, groups=G), LEAKY_SLOPE)
        return F.conv2d(h, w2, b2, groups=G)


class StructureFeatureExtractor(nn.Module):
    """Stem conv plus N extractor levels; returns the feature pyramid
    f_1 .. f_{N+1} (f_1 at input resolution, each level halving)."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or SafeConfig()
        cfg = self.config
        chans = cfg.pyramid_channels
        self.stem = nn.Conv2d(cfg.in_channels, chans[0], 3, padding=1)
        self.levels = nn.ModuleList(
            ExtractorLevel(chans[i], chans[i + 1], cfg.heads, cfg.window_size, cfg.mlp_ratio)
            for i in range(cfg.num_levels)
        )

    def forward(self, img, grad_hook=None):
        cfg = self.config
        H, W = img.shape[-2:]
        for i in range(cfg.num_levels):
            h, w = H >> i, W >> i
            if h % cfg.window_size or w % cfg.window_size or h % 2 or w % 2:
                raise ShapeError(
                    f"level {i + 1} dims {(h, w)} incompatible with window "
                    f"{cfg.window_size} / downsampling"
                )
        f = F.leaky_relu(self.stem(img), LEAKY_SLOPE)
        pyramid = [f]
        for i, level in enumerate(self.levels):
            f = level(f, level_idx=i, grad_hook=grad_hook)
            pyramid.append(f)
        return pyramid


class LatentCodes(NamedTuple):
    z: torch.Tensor
    w: torch.Tensor


class LatentMapper(nn.Module):
    """Global average pooling followed by the two mapping MLPs."""

    def __init__(self, in_dim, dim_z, dim_w):
        super().__init__()
        self.map_z = nn.Sequential(
            nn.Linear(in_dim, dim_z), nn.LeakyReLU(LEAKY_SLOPE), nn.Linear(dim_z, dim_z)
        )
        self.map_w = nn.Sequential(
            nn.Linear(dim_z, dim_w), nn.LeakyReLU(LEAKY_SLOPE), nn.Linear(dim_w, dim_w)
        )

    @staticmethod
    def pool(f):
        return f.mean(dim=(2, 3))

    def forward(self, f):
        z = self.map_z(self.pool(f))
        w = self.map_w(z)
        return LatentCodes(z=z, w=w)


class ModulatedConv2d(nn.Module):
    """3x3 convolution whose weights are scaled per-sample by an affine
    projection of the latent code, then demodulated to unit norm."""

    def __init__(self, in_ch, out_ch, dim_w, kernel_size=3, demodulate=True, eps=1e-8):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel_size = kernel_size
        self.demodulate = demodulate
        self.eps = eps
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel_size, kernel_size))
        nn.init.kaiming_normal_(self.weight, a=LEAKY_SLOPE)
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.affine = nn.Linear(dim_w, in_ch)
        nn.init.normal_(self.affine.weight, std=0.02)
        nn.init.ones_(self.affine.bias)

    def forward(self, x, w):
        B, C, H, W = x.shape
        style = self.affine(w)
        weight = self.weight.unsqueeze(0) * style.view(B, 1, C, 1, 1)
        if self.demodulate:
            norm = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + self.eps)
            weight = weight * norm.view(B, self.out_ch, 1, 1, 1)
        weight = weight.reshape(B * self.out_ch, C, self.kernel_size, self.kernel_size)
        out = F.conv2d(
            x.reshape(1, B * C, H, W), weight, padding=self.kernel_size // 2, groups=B
        )
        return out.view(B, self.out_ch, H, W) + self.bias.view(1, -1, 1, 1)


class GeneratorBlock(nn.Module):
    """One resolution block: optional x2 upsample, modulated convolution,
    additive injection of the matching extractor feature."""

    def __init__(self, in_ch, out_ch, dim_w, inject_ch, upsample):
        super().__init__()
        self.upsample = upsample
        self.conv = ModulatedConv2d(in_ch, out_ch, dim_w)
        self.inject = nn.Conv2d(inject_ch, out_ch, 1)

    def forward(self, x, w, feat):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.conv(x, w), LEAKY_SLOPE)
        if feat.shape[-2:] != x.shape[-2:]:
            raise ShapeError(
                f"injected feature {tuple(feat.shape[-2:])} does not match "
                f"block resolution {tuple(x.shape[-2:])}"
            )
        return x + self.inject(feat)


class StructureGenerator(nn.Module):
    """Style-based decoder: learned constant start, per-resolution modulated
    blocks with injected pyramid features, sigmoid edge-map head."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or StructureConfig()
        cfg = self.config
        inject_chans = tuple(reversed(cfg.safe.pyramid_channels))
        block_chans = inject_chans
        self.const = nn.Parameter(
            torch.randn(1, block_chans[0], cfg.const_size, cfg.const_size)
        )
        blocks = []
        prev = block_chans[0]
        for i, (out_ch, inj_ch) in enumerate(zip(block_chans, inject_chans)):
            blocks.append(
                GeneratorBlock(prev, out_ch, cfg.dim_w, inj_ch, upsample=i > 0)
            )
            prev = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(block_chans[-1], 1, 1)

    def forward(self, codes, pyramid):
        feats = list(reversed(pyramid))
        if len(feats) != len(self.blocks):
            raise ShapeError(
                f"pyramid has {len(feats)} levels, generator expects {len(self.blocks)}"
            )
        base_h, base_w = feats[0].shape[-2:]
        x = self.const.expand(feats[0].shape[0], -1, -1, -1)
        if (base_h, base_w) != x.shape[-2:]:
            # variable input sizes: rescale the learned start tensor
            x = F.interpolate(x, size=(base_h, base_w), mode="bilinear", align_corners=False)
        for block, feat in zip(self.blocks, feats):
            x = block(x, codes.w, feat)
        return torch.sigmoid(self.head(x))


class StructureNet(nn.Module):
    """Full structure model: extractor -> latent mapping -> generator."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or StructureConfig()
        cfg = self.config
        self.extractor = StructureFeatureExtractor(cfg.safe)
        self.mapper = LatentMapper(cfg.safe.pyramid_channels[-1], cfg.dim_z, cfg.dim_w)
        self.generator = StructureGenerator(cfg)

    def forward(self, img, grad_hook=None):
        pyramid = self.extractor(img, grad_hook=grad_hook)
        codes = self.mapper(pyramid[-1])
        return self.generator(codes, pyramid)


class EdgeDiscriminator(nn.Module):
    """Strided conv stack over an edge map, pooled to one logit per item."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        cfg = self.config
        layers = []
        prev = cfg.in_channels
        for i in range(cfg.num_layers):
            ch = cfg.base_channels * (2**i)
            layers.append(nn.Conv2d(prev, ch, 3, stride=2, padding=1))
            prev = ch
        self.convs = nn.ModuleList(layers)
        self.fc = nn.Linear(prev, 1)

    def forward(self, edge_map):
        h = edge_map
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
        return self.fc(h.mean(dim=(2, 3))).squeeze(-1)


def init_structure(config=None, seed=0):
    """Build a StructureNet with parameters deterministic in `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return StructureNet(config)


def init_discriminator(config=None, seed=0):
    """Build an EdgeDiscriminator with parameters deterministic in `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return EdgeDiscriminator(config)
