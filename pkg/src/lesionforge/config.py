"""Run configuration: defaults, ``key=value`` files and overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .fusion import DEFAULT_AREA_THRESHOLD


@dataclass(frozen=True)
class RunConfig:
    base_width: int = 32
    area_threshold: float = float(DEFAULT_AREA_THRESHOLD)
    gmm_components: int = 3
    gmm_seed: int = 0
    gmm_max_pixels: int = 20000
    svm_kernel: str = "rbf"
    svm_c: float = 1.0
    svm_gamma: float | None = None  # None: 1 / (d * var(X))
    svm_tol: float = 1e-3
    svm_seed: int = 0
    cnn_features: bool = True
    jaccard_thresholded: bool = False
    output_dir: str = "lesionforge-out"
    threads: int = 1

    def with_overrides(self, **values: Any) -> "RunConfig":
        clean = {}
        for key, raw in values.items():
            if raw is None:
                continue
            clean[key] = _coerce(key, raw)
        return dataclasses.replace(self, **clean)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: Any):
    if key not in _FIELDS:
        raise ValueError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key == "svm_gamma":
        return None if text.lower() in ("", "auto", "none") else float(text)
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, **overrides: Any) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_overrides(**parse_config_text(Path(path).read_text()))
    return cfg.with_overrides(**overrides)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f}={getattr(cfg, f)}\n" for f in _FIELDS)
