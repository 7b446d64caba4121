"""Image and edge-map quality metrics: PSNR, SSIM, edge cross-entropy, edge L2."""

import json
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeError

PSNR_CAP_DB = 100.0  # reported for zero MSE, keeps aggregates finite and sortable
BCE_EPS = 1e-7

_LUMA = (0.299, 0.587, 0.114)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a, b, max_val=1.0):
    """Per-image PSNR in dB: 10*log10(max_val^2 / MSE), capped at PSNR_CAP_DB.

    Returns a (B,) tensor of per-image values.
    """
    _check_same_shape(a, b, "psnr")
    if max_val <= 0:
        raise ValueError(f"max_val must be positive, got {max_val}")
    mse = ((a - b) ** 2).flatten(1).mean(dim=1)
    out = torch.full_like(mse, PSNR_CAP_DB)
    nz = mse > 0
    out[nz] = 10.0 * torch.log10(max_val**2 / mse[nz])
    return torch.minimum(out, torch.full_like(out, PSNR_CAP_DB))


def _gaussian_window(size, sigma, dtype):
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-0.5 * (x / sigma) ** 2)
    g = g / g.sum()
    return torch.outer(g, g)


def to_luminance(img):
    """(B, C, H, W) -> (B, 1, H, W); BT.601 weights for C=3, identity for C=1."""
    if img.shape[1] == 1:
        return img
    if img.shape[1] != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {img.shape[1]}")
    w = torch.tensor(_LUMA, dtype=img.dtype, device=img.device).view(1, 3, 1, 1)
    return (img * w).sum(dim=1, keepdim=True)


def ssim(a, b, max_val=1.0, window_size=11, sigma=1.5):
    """Mean SSIM per image with an 11x11 Gaussian window (sigma 1.5).

    Color images are converted to luminance first. Windows are evaluated at
    every fully-valid position (no padding). Returns a (B,) tensor.
    """
    _check_same_shape(a, b, "ssim")
    if a.shape[-2] < window_size or a.shape[-1] < window_size:
        raise ShapeError(
            f"image {tuple(a.shape[-2:])} smaller than SSIM window {window_size}"
        )
    x = to_luminance(a)
    y = to_luminance(b)
    win = _gaussian_window(window_size, sigma, x.dtype).view(1, 1, window_size, window_size)

    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sig_xx = F.conv2d(x * x, win) - mu_xx
    sig_yy = F.conv2d(y * y, win) - mu_yy
    sig_xy = F.conv2d(x * y, win) - mu_xy

    ssim_map = ((2 * mu_xy + c1) * (2 * sig_xy + c2)) / (
        (mu_xx + mu_yy + c1) * (sig_xx + sig_yy + c2)
    )
    return ssim_map.flatten(1).mean(dim=1)


def edge_metrics(pred, gt):
    """Per-image binary cross-entropy (nats) and mean squared error for edge maps.

    pred is clamped to [BCE_EPS, 1 - BCE_EPS] before the log terms. Returns a
    pair of (B,) tensors (ce, l2).
    """
    _check_same_shape(pred, gt, "edge_metrics")
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    ce = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
    l2 = (pred - gt) ** 2
    return ce.flatten(1).mean(dim=1), l2.flatten(1).mean(dim=1)


@dataclass
class MetricReport:
    """Per-image metric values plus their means, serializable to JSON."""

    ids: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    edge_ce: list = field(default_factory=list)
    edge_l2: list = field(default_factory=list)

    def add(self, image_id, psnr_val=None, ssim_val=None, ce_val=None, l2_val=None):
        self.ids.append(image_id)
        if psnr_val is not None:
            self.psnr.append(float(psnr_val))
        if ssim_val is not None:
            self.ssim.append(float(ssim_val))
        if ce_val is not None:
            self.edge_ce.append(float(ce_val))
        if l2_val is not None:
            self.edge_l2.append(float(l2_val))

    def means(self):
        out = {}
        for name in ("psnr", "ssim", "edge_ce", "edge_l2"):
            vals = getattr(self, name)
            if vals:
                out[name] = math.fsum(vals) / len(vals)
        return out

    def to_dict(self):
        per_image = []
        for i, image_id in enumerate(self.ids):
            entry = {"id": image_id}
            for name in ("psnr", "ssim", "edge_ce", "edge_l2"):
                vals = getattr(self, name)
                if i < len(vals):
                    entry[name] = vals[i]
            per_image.append(entry)
        return {"schema_version": 1, "per_image": per_image, "mean": self.means()}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)
