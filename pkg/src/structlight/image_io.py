"""PNG input/output: 8-bit or 16-bit files <-> float tensors in [0, 1]."""

import numpy as np
import torch
from PIL import Image

from .errors import DataError


def save_png(img, path, bit_depth=8):
    """Write a (C, H, W) float tensor in [0, 1] as a PNG file.

    8-bit supports 1 or 3 channels; 16-bit is single channel only.
    """
    arr = img.detach().cpu().numpy()
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DataError(f"expected (C, H, W) with C in {{1, 3}}, got {arr.shape}")
    arr = np.clip(arr, 0.0, 1.0)
    if bit_depth == 8:
        q = np.round(arr * 255.0).astype(np.uint8)
        if q.shape[0] == 1:
            Image.fromarray(q[0], mode="L").save(path)
        else:
            Image.fromarray(np.moveaxis(q, 0, 2), mode="RGB").save(path)
    elif bit_depth == 16:
        if arr.shape[0] != 1:
            raise DataError("16-bit PNG supports single-channel images only")
        q = np.round(arr[0] * 65535.0).astype(np.uint16)
        Image.fromarray(q, mode="I;16").save(path)
    else:
        raise DataError(f"bit_depth must be 8 or 16, got {bit_depth}")


def load_png(path):
    """Read a PNG file into a (C, H, W) float32 tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I"):
                arr = np.asarray(im, dtype=np.float32) / 65535.0
                arr = arr[None]
            elif mode == "L":
                arr = np.asarray(im, dtype=np.float32)[None] / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
                arr = np.moveaxis(arr, 2, 0)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    return torch.from_numpy(arr.copy())
