"""Area-switched fusion of the UNet and GMM masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_AREA_THRESHOLD = 4508
REFERENCE_SIZE = (224, 224)


@dataclass(frozen=True)
class FusionConfig:
    area_threshold: float = DEFAULT_AREA_THRESHOLD
    reference_size: tuple[int, int] = REFERENCE_SIZE

    def __post_init__(self):
        if self.area_threshold < 0:
            raise ValueError("area_threshold must be >= 0")
        if min(self.reference_size) <= 0:
            raise ValueError("reference_size extents must be > 0")

    def threshold_for(self, shape: tuple[int, int]) -> float:
        """Threshold rescaled by pixel count relative to the reference frame."""
        ref = self.reference_size[0] * self.reference_size[1]
        return self.area_threshold * (shape[0] * shape[1]) / ref


def lesion_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def select_mask(unet_mask: np.ndarray, gmm_mask: np.ndarray, cfg: FusionConfig = FusionConfig()):
    """Return ``(mask, tag)``: the GMM mask when the UNet lesion is small, else the UNet mask.

    The comparison is strict, so an area equal to the threshold keeps the UNet
    result. The chosen array is returned as-is, never blended.
    """
    if np.shape(unet_mask) != np.shape(gmm_mask):
        raise ValueError(f"mask dims differ: {np.shape(unet_mask)} vs {np.shape(gmm_mask)}")
    if lesion_area(unet_mask) < cfg.threshold_for(np.shape(unet_mask)):
        return gmm_mask, "gmm"
    return unet_mask, "unet"
