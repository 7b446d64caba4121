"""Tensor primitives: directional gradients, instance normalization, map resizing.

All functions operate on rank-4 float tensors (B, C, H, W) and are pure;
they never mutate their inputs.
"""

import torch
import torch.nn.functional as F

from .errors import NumericsError, ShapeError

# Compass directions as (dx, dy) steps, x = width axis, y = height axis
# (y grows downward). Order is fixed; the 8 gradient branches are indexed
# by position in this tuple throughout the package.
DIRECTIONS = (
    (1, 0),    # +x
    (-1, 0),   # -x
    (0, 1),    # +y
    (0, -1),   # -y
    (1, 1),    # +x+y
    (1, -1),   # +x-y
    (-1, 1),   # -x+y
    (-1, -1),  # -x-y
)

DIRECTION_NAMES = ("+x", "-x", "+y", "-y", "+x+y", "+x-y", "-x+y", "-x-y")


def directional_diff(f, dx, dy):
    """Forward difference of `f` toward the (dx, dy) neighbor.

    out[h, w] = f[h + dy, w + dx] - f[h, w] where the neighbor exists,
    0 on the boundary rows/columns where it does not.
    """
    out = torch.zeros_like(f)
    H, W = f.shape[-2], f.shape[-1]
    dst_h = slice(0, H - 1) if dy > 0 else slice(1, H) if dy < 0 else slice(None)
    src_h = slice(1, H) if dy > 0 else slice(0, H - 1) if dy < 0 else slice(None)
    dst_w = slice(0, W - 1) if dx > 0 else slice(1, W) if dx < 0 else slice(None)
    src_w = slice(1, W) if dx > 0 else slice(0, W - 1) if dx < 0 else slice(None)
    out[..., dst_h, dst_w] = f[..., src_h, src_w] - f[..., dst_h, dst_w]
    return out


def compute_gradient_maps(f):
    """First-order gradient maps of `f` along the 8 compass directions.

    Returns a tuple of 8 tensors, each the same shape as `f`, ordered as
    DIRECTIONS. Raises NumericsError on non-finite input (corrupt upstream
    state).
    """
    if not torch.isfinite(f).all():
        raise NumericsError("gradient input contains NaN/Inf")
    return tuple(directional_diff(f, dx, dy) for dx, dy in DIRECTIONS)


def instance_norm(x, eps=1e-5):
    """Per-(batch, channel) standardization over the spatial dimensions."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def resize_map(m, target_h, target_w):
    """Bilinear resize of a map to (target_h, target_w).

    Uses the half-pixel-center convention; outputs are convex combinations
    of inputs, so values in [0, 1] stay in [0, 1].
    """
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"target dims must be >= 1, got ({target_h}, {target_w})")
    if m.shape[-2] == target_h and m.shape[-1] == target_w:
        return m.clone()
    return F.interpolate(m, size=(target_h, target_w), mode="bilinear", align_corners=False)
