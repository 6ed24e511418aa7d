"""Synthetic dermoscopy-like images: one coloured blob on textured skin.

Used by the demos and tests so the whole pipeline runs without any
challenge data.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import ManifestRow, save_image, save_mask, write_manifest

SKIN = (0.85, 0.70, 0.60)

# colour (RGB in [0, 1]) and mean radius in pixels per class
BLOB_STYLES = {
    "MEL": ((0.25, 0.15, 0.10), 46.0),
    "NV": ((0.52, 0.34, 0.22), 30.0),
    "BCC": ((0.45, 0.20, 0.40), 19.0),
    "AKIEC": ((0.60, 0.35, 0.30), 24.0),
    "BKL": ((0.40, 0.32, 0.25), 36.0),
    "DF": ((0.55, 0.40, 0.35), 16.0),
    "VASC": ((0.55, 0.10, 0.15), 14.0),
}


def blob_image(rng: np.random.Generator, label: str, size=(240, 260), noise: float = 0.02):
    """Return ``(image, mask)``: a float32 (3, H, W) image and its uint8 truth mask."""
    color, radius = BLOB_STYLES[label]
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h / 2 + rng.uniform(-0.1, 0.1) * h
    cx = w / 2 + rng.uniform(-0.1, 0.1) * w
    r = radius * rng.uniform(0.85, 1.15)
    ratio = rng.uniform(0.75, 1.0)
    theta = rng.uniform(0, np.pi)
    u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
    v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
    mask = (u / r) ** 2 + (v / (r * ratio)) ** 2 <= 1.0

    skin = np.asarray(SKIN) + rng.uniform(-0.03, 0.03, 3)
    lesion = np.asarray(color) + rng.uniform(-0.03, 0.03, 3)
    img = np.where(mask[None], lesion[:, None, None], skin[:, None, None])
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)


def write_blob_dataset(
    out_dir: str | Path,
    n_per_class: int,
    seed: int = 0,
    classes=("MEL", "NV", "BCC"),
    size=(240, 260),
    manifest_name: str = "manifest.csv",
) -> Path:
    """Write PNG images, truth masks and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_per_class):
        for label in classes:
            name = f"{label.lower()}_{seed}_{k:03d}"
            img, mask = blob_image(rng, label, size)
            ip, mp = out_dir / "images" / f"{name}.png", out_dir / "masks" / f"{name}.png"
            save_image(ip, img)
            save_mask(mp, mask)
            rows.append(ManifestRow(ip, mp, label))
    path = out_dir / manifest_name
    write_manifest(path, rows)
    return path
