"""Manifest CSV and raster image I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import CLASS_LABELS


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    image: Path
    mask: Path | None = None
    label: str | None = None
    name: str = ""  # image path as written in the manifest

    @property
    def key(self) -> str:
        return self.image.stem


def read_manifest(path: str | Path, check_paths: bool = True) -> list[ManifestRow]:
    """Read a CSV with header ``image,mask,label``; mask and label may be blank.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    rows: list[ManifestRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image" not in reader.fieldnames:
            raise ManifestError(f"{path}: header must contain an 'image' column")
        for lineno, rec in enumerate(reader, start=2):
            img = (rec.get("image") or "").strip()
            if not img:
                raise ManifestError(f"{path}:{lineno}: empty image path")
            mask = (rec.get("mask") or "").strip() or None
            label = (rec.get("label") or "").strip() or None
            if label is not None and label not in CLASS_LABELS:
                raise ManifestError(f"{path}:{lineno}: unknown label {label!r} (expected one of {', '.join(CLASS_LABELS)})")
            row = ManifestRow(base / img, base / mask if mask else None, label, img)
            if check_paths:
                for p in (row.image, row.mask):
                    if p is not None and not p.exists():
                        raise ManifestError(f"{path}:{lineno}: file not found: {p}")
            rows.append(row)
    return rows


def write_manifest(path: str | Path, rows) -> None:
    """Write rows, storing paths relative to the manifest where possible."""
    path = Path(path)

    def rel(p):
        if p is None:
            return ""
        try:
            return Path(p).resolve().relative_to(path.parent.resolve()).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "mask", "label"])
        for r in rows:
            w.writerow([rel(r.image), rel(r.mask), r.label or ""])


def load_image(path: str | Path) -> np.ndarray:
    """8-bit RGB raster as a float32 (3, H, W) array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write an 8-bit single-channel PNG with values 0 and 255."""
    arr = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
