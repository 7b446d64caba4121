"""Synthetic paired-data generation and dataset packaging.

Directory convention: <root>/low/<id>.png, <root>/high/<id>.png,
<root>/edge/<id>.png plus manifest.json. Edge maps are computed from the
8-bit-quantized normal-light image, so a reloaded pair always satisfies
edge == canny_edges(high) exactly.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .canny import canny_edges
from .errors import ConfigError, DataError
from .image_io import load_png, save_png

MANIFEST_VERSION = 1


@dataclass
class DegradeConfig:
    exposure_gain: float = 0.25
    gamma: float = 1.2
    read_noise_sigma: float = 0.01
    shot_noise_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.exposure_gain <= 1.0):
            raise ConfigError(f"exposure_gain must be in (0, 1], got {self.exposure_gain}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.read_noise_sigma < 0 or self.shot_noise_scale < 0:
            raise ConfigError("noise levels must be >= 0")


@dataclass
class CannyConfig:
    low_thresh: float = 0.1
    high_thresh: float = 0.2
    sigma: float = 1.0


@dataclass
class PairedBatch:
    """Tensors for one batch: low-light input, normal-light target, its edges."""

    low: torch.Tensor
    high: torch.Tensor
    edge: torch.Tensor
    ids: list
    pad: tuple  # (pad_h, pad_w) added on the bottom/right edges


def degrade(clean, cfg):
    """Synthesize a low-light capture from a normal-light image.

    low = clamp((gain * clean)^gamma + shot + read, 0, 1), with shot noise std
    shot_noise_scale * sqrt(gain * clean) per pixel and read noise std
    read_noise_sigma. Deterministic given cfg.seed; an identity config
    (gain 1, gamma 1, zero noise) returns the input bitwise.
    """
    arr = clean.detach().cpu().numpy().astype(np.float64)
    scaled = arr if cfg.exposure_gain == 1.0 else cfg.exposure_gain * arr
    out = scaled if cfg.gamma == 1.0 else np.power(scaled, cfg.gamma)
    if cfg.shot_noise_scale > 0 or cfg.read_noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        if cfg.shot_noise_scale > 0:
            out = out + cfg.shot_noise_scale * np.sqrt(scaled) * rng.standard_normal(arr.shape)
        if cfg.read_noise_sigma > 0:
            out = out + cfg.read_noise_sigma * rng.standard_normal(arr.shape)
        out = np.clip(out, 0.0, 1.0)
    return torch.from_numpy(out).to(clean.dtype)


def _quantize8(img):
    return torch.round(img.clamp(0, 1) * 255.0) / 255.0


def config_hash(degrade_cfg, canny_cfg):
    payload = json.dumps(
        {"degrade": asdict(degrade_cfg), "canny": asdict(canny_cfg)}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_dataset(src_dir, out_dir, degrade_cfg=None, canny_cfg=None):
    """Write low/high/edge triplets plus manifest.json from source PNGs.

    Unreadable source files are skipped with a warning entry in the manifest.
    Each image gets its own noise seed (cfg.seed + index over the sorted
    sources), so rebuilding with the same config is bitwise reproducible.
    """
    degrade_cfg = degrade_cfg or DegradeConfig()
    canny_cfg = canny_cfg or CannyConfig()
    src = Path(src_dir)
    out = Path(out_dir)
    sources = sorted(src.glob("*.png"))
    if not sources:
        raise DataError(f"no PNG files found in {src}")

    for sub in ("low", "high", "edge"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    ids, skipped = [], []
    for idx, path in enumerate(sources):
        image_id = path.stem
        try:
            clean = load_png(path)
        except DataError as exc:
            skipped.append({"id": image_id, "reason": str(exc)})
            continue
        clean = _quantize8(clean)
        per_image = DegradeConfig(**{**asdict(degrade_cfg), "seed": degrade_cfg.seed + idx})
        low = _quantize8(degrade(clean, per_image))
        edge = canny_edges(
            clean[None], canny_cfg.low_thresh, canny_cfg.high_thresh, canny_cfg.sigma
        )[0]
        save_png(low, out / "low" / f"{image_id}.png")
        save_png(clean, out / "high" / f"{image_id}.png")
        save_png(edge, out / "edge" / f"{image_id}.png")
        ids.append(image_id)

    manifest = {
        "version": MANIFEST_VERSION,
        "ids": ids,
        "count": len(ids),
        "degrade": asdict(degrade_cfg),
        "canny": asdict(canny_cfg),
        "config_hash": config_hash(degrade_cfg, canny_cfg),
        "skipped": skipped,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"manifest not found at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(
            f"manifest version {manifest.get('version')} unsupported "
            f"(expected {MANIFEST_VERSION})"
        )
    return manifest


def pad_to_multiple(t, multiple):
    """Reflection-pad bottom/right so both spatial dims divide `multiple`."""
    H, W = t.shape[-2:]
    pad_h = (-H) % multiple
    pad_w = (-W) % multiple
    if pad_h == 0 and pad_w == 0:
        return t, (0, 0)
    return F.pad(t, (0, pad_w, 0, pad_h), mode="reflect"), (pad_h, pad_w)


def unpad(t, pad):
    pad_h, pad_w = pad
    H, W = t.shape[-2:]
    return t[..., : H - pad_h, : W - pad_w]


def load_batch(root, ids, manifest=None, pad_multiple=8):
    """Load the requested ids into a PairedBatch, padded for the networks."""
    root = Path(root)
    manifest = manifest or load_manifest(root)
    known = set(manifest["ids"])
    lows, highs, edges = [], [], []
    for image_id in ids:
        if image_id not in known:
            raise DataError(f"id '{image_id}' not present in manifest")
        paths = {sub: root / sub / f"{image_id}.png" for sub in ("low", "high", "edge")}
        for sub, p in paths.items():
            if not p.exists():
                raise DataError(f"missing {sub} file for id '{image_id}': {p}")
        lows.append(load_png(paths["low"]))
        highs.append(load_png(paths["high"]))
        edges.append(load_png(paths["edge"]))

    shapes = {tuple(t.shape[-2:]) for t in lows + highs + edges}
    if len(shapes) != 1:
        raise DataError(f"batch members must share spatial dims, got {sorted(shapes)}")
    low = torch.stack(lows)
    high = torch.stack(highs)
    edge = torch.stack(edges)
    low, pad = pad_to_multiple(low, pad_multiple)
    high, _ = pad_to_multiple(high, pad_multiple)
    edge, _ = pad_to_multiple(edge, pad_multiple)
    return PairedBatch(low=low, high=high, edge=edge, ids=list(ids), pad=pad)


def synthesize_images(out_dir, count=8, size=64, seed=0):
    """Write procedural normal-light test images (soft gradients + shapes).

    Returns the list of written paths. Intended for demos and desk-scale
    experiments where no photo corpus is available.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    for i in range(count):
        img = np.zeros((3, size, size))
        base = rng.uniform(0.35, 0.75, size=3)
        tilt = rng.uniform(-0.25, 0.25, size=(3, 2))
        for c in range(3):
            img[c] = base[c] + tilt[c, 0] * xx + tilt[c, 1] * yy
        for _ in range(rng.integers(2, 5)):
            shade = rng.uniform(0.05, 0.95, size=3)
            if rng.random() < 0.5:
                cy, cx = rng.uniform(0.2, 0.8, size=2) * size
                r = rng.uniform(0.08, 0.22) * size
                mask = (yy * (size - 1) - cy) ** 2 + (xx * (size - 1) - cx) ** 2 < r**2
            else:
                y0, x0 = rng.integers(2, size // 2, size=2)
                h, w = rng.integers(size // 6, size // 2, size=2)
                mask = np.zeros((size, size), dtype=bool)
                mask[y0 : min(y0 + h, size - 2), x0 : min(x0 + w, size - 2)] = True
            for c in range(3):
                img[c][mask] = shade[c]
        img = np.clip(img, 0.0, 1.0)
        path = out / f"img_{i:03d}.png"
        save_png(torch.from_numpy(img).float(), path)
        paths.append(path)
    return paths
