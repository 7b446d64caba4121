"""Canny edge extraction used to build ground-truth structure maps.

Classical pipeline: Gaussian blur, Sobel gradients, non-maximum suppression,
double threshold with hysteresis. Not differentiable; runs in numpy and is
intended for offline ground-truth generation, with thresholds expressed as
fractions of the maximum gradient magnitude so the result is invariant to a
uniform brightness shift.
"""

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError

# ITU-R BT.601 luma weights
_LUMA = (0.299, 0.587, 0.114)


def _blur(img, sigma):
    return ndimage.gaussian_filter(img, sigma, mode="reflect", truncate=3.0)


def _sobel(img):
    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    return gx, gy


def _nonmax_suppress(mag, gx, gy):
    """Keep pixels that are local maxima along the gradient direction.

    The gradient angle is quantized to 4 bins; ties between equal neighbor
    magnitudes keep exactly one pixel (>= toward the negative side, > toward
    the positive side), so a symmetric step yields a single-pixel edge.
    """
    H, W = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)

    # neighbor offsets per angle bin: 0 -> horizontal, 45 -> diag down-right,
    # 90 -> vertical, 135 -> diag down-left
    bins = np.zeros((H, W), dtype=np.int64)
    bins[(angle >= 22.5) & (angle < 67.5)] = 1
    bins[(angle >= 67.5) & (angle < 112.5)] = 2
    bins[(angle >= 112.5) & (angle < 157.5)] = 3
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}

    keep = np.zeros((H, W), dtype=bool)
    for b, (dy, dx) in offsets.items():
        sel = bins == b
        plus = padded[1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
        minus = padded[1 - dy : 1 - dy + H, 1 - dx : 1 - dx + W]
        keep |= sel & (mag >= minus) & (mag > plus)
    return np.where(keep, mag, 0.0)


def _hysteresis(nms, low_val, high_val):
    strong = nms > high_val
    weak = nms > low_val
    if not strong.any():
        return np.zeros_like(nms, dtype=np.float64)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3)))
    keep_ids = np.unique(labels[strong])
    keep_ids = keep_ids[keep_ids > 0]
    mask = np.isin(labels, keep_ids)
    return mask.astype(np.float64)


def canny_single(img, low_thresh, high_thresh, sigma):
    """Canny on one grayscale numpy image (H, W) -> binary {0,1} array."""
    blurred = _blur(img.astype(np.float64), sigma)
    gx, gy = _sobel(blurred)
    mag = np.hypot(gx, gy)
    max_g = mag.max()
    if max_g <= 0.0:
        return np.zeros_like(img, dtype=np.float64)
    nms = _nonmax_suppress(mag, gx, gy)
    return _hysteresis(nms, low_thresh * max_g, high_thresh * max_g)


def canny_edges(img, low_thresh=0.1, high_thresh=0.2, sigma=1.0):
    """Binary edge maps for a batch of images.

    img: (B, C, H, W) tensor with C in {1, 3}; color inputs are converted to
    luminance first. low_thresh/high_thresh are fractions of the maximum
    gradient magnitude. Returns a (B, 1, H, W) tensor with values in {0, 1}.
    """
    if not (0.0 <= low_thresh < high_thresh):
        raise ConfigError(
            f"need 0 <= low_thresh < high_thresh, got ({low_thresh}, {high_thresh})"
        )
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if img.dim() != 4 or img.shape[1] not in (1, 3):
        raise ConfigError(f"expected (B, C, H, W) with C in {{1, 3}}, got {tuple(img.shape)}")

    arr = img.detach().cpu().numpy()
    if arr.shape[1] == 3:
        arr = _LUMA[0] * arr[:, 0] + _LUMA[1] * arr[:, 1] + _LUMA[2] * arr[:, 2]
    else:
        arr = arr[:, 0]

    out = np.stack([canny_single(a, low_thresh, high_thresh, sigma) for a in arr])
    return torch.from_numpy(out[:, None]).to(img.dtype)
