"""200 handcrafted lesion descriptors computed from an RGB image and its mask.

Families and sizes, in registry order:

=========  ====  ==========================================================
shape        16  area, perimeter, compactness, axes, solidity, bbox, ...
hu            7  Hu invariant moments of the binary mask
lesion       42  6 channels (R, G, B, H, S, V) x 7 statistics inside lesion
ring         42  the same 42 statistics on the surrounding skin ring
hist         48  16-bin normalized R, G, B histograms inside the lesion
glcm         20  4 offsets x (contrast, correlation, energy, homogeneity,
                 entropy) on a 16-level luminance co-occurrence matrix
gradient      8  Sobel magnitude statistics (lesion, edge, ring)
asymmetry     8  principal-axis shape/colour asymmetry, border irregularity
lbp           9  rotation-invariant uniform LBP(8, 1) pattern frequencies
=========  ====  ==========================================================

Every value is finite. Degenerate inputs fall back to 0 (zero-variance
moments, empty rings, single-pixel shapes); an empty mask gives an all-zero
vector with ``degenerate`` set.

All computations run on a crop around the lesion, with coordinates relative
to that crop, so translating image and mask together (away from the frame
edge) reproduces the vector bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2hsv
from skimage.measure import euler_number, moments_central, moments_hu, moments_normalized, perimeter
from skimage.morphology import convex_hull_image

logger = logging.getLogger(__name__)

RING_RADIUS = 5
GLCM_LEVELS = 16
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
GLCM_PROPS = ("contrast", "correlation", "energy", "homogeneity", "entropy")
CHANNELS = ("r", "g", "b", "h", "s", "v")
STATS = ("mean", "std", "min", "max", "median", "skewness", "kurtosis")
HIST_BINS = 16
LUMA = np.array([0.299, 0.587, 0.114])

SHAPE_NAMES = (
    "area", "perimeter", "compactness", "equivalent_diameter", "major_axis_length",
    "minor_axis_length", "eccentricity", "orientation", "extent", "solidity",
    "convex_area", "bbox_height", "bbox_width", "bbox_aspect_ratio", "euler_number",
    "area_fraction",
)
GRADIENT_NAMES = (
    "lesion_mean", "lesion_std", "lesion_max", "edge_mean", "edge_std",
    "ring_mean", "ring_std", "edge_to_lesion_ratio",
)
ASYMMETRY_NAMES = (
    "shape_major", "shape_minor", "color_major", "color_minor",
    "radial_cv", "radial_range_ratio", "convexity", "border_contrast",
)


@dataclass(frozen=True)
class Feature:
    index: int
    name: str
    family: str


def _build_registry() -> tuple[Feature, ...]:
    names: list[tuple[str, str]] = []
    names += [(f"shape_{n}", "shape") for n in SHAPE_NAMES]
    names += [(f"hu_{k}", "hu") for k in range(1, 8)]
    for region in ("lesion", "ring"):
        names += [(f"{region}_{c}_{s}", region) for c in CHANNELS for s in STATS]
    names += [(f"hist_{c}_{b:02d}", "hist") for c in "rgb" for b in range(HIST_BINS)]
    names += [(f"glcm_{dy}_{dx}_{p}".replace("-", "m"), "glcm") for dy, dx in GLCM_OFFSETS for p in GLCM_PROPS]
    names += [(f"gradient_{n}", "gradient") for n in GRADIENT_NAMES]
    names += [(f"asymmetry_{n}", "asymmetry") for n in ASYMMETRY_NAMES]
    names += [(f"lbp_u{k}", "lbp") for k in range(9)]
    return tuple(Feature(i, n, f) for i, (n, f) in enumerate(names))


REGISTRY = _build_registry()
N_FEATURES = len(REGISTRY)
assert N_FEATURES == 200 and len({f.name for f in REGISTRY}) == 200


def feature_names() -> list[str]:
    return [f.name for f in REGISTRY]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    degenerate: bool = False

    def __len__(self):
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(v) for f, v in zip(REGISTRY, self.values)}


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy ** 2 + xx ** 2 <= r * r


def border_ring(mask: np.ndarray, radius: int = RING_RADIUS) -> np.ndarray:
    """Dilation of ``mask`` by a disk of ``radius``, minus the mask itself."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    m = np.asarray(mask).astype(bool)
    return (ndimage.binary_dilation(m, structure=disk(radius)) & ~m).astype(np.uint8)


def quantize(gray: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    g = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 1.0)
    return np.minimum((g * levels).astype(np.int64), levels - 1)


def glcm_matrix(gray: np.ndarray, offset: tuple[int, int], levels: int = GLCM_LEVELS, mask=None) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix over pairs inside ``mask``.

    ``gray`` holds intensities in [0, 1] and is quantized to ``levels`` bins.
    With no valid pair the uniform matrix is returned.
    """
    dy, dx = offset
    if dy == 0 and dx == 0:
        raise ValueError("offset must be nonzero")
    q = quantize(gray, levels)
    m = np.ones(q.shape, bool) if mask is None else np.asarray(mask).astype(bool)
    h, w = q.shape
    ys, xs = np.nonzero(m)
    ty, tx = ys + dy, xs + dx
    ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
    ys, xs, ty, tx = ys[ok], xs[ok], ty[ok], tx[ok]
    keep = m[ty, tx]
    a, b = q[ys[keep], xs[keep]], q[ty[keep], tx[keep]]
    if len(a) == 0:
        return np.full((levels, levels), 1.0 / levels ** 2)
    counts = np.zeros((levels, levels))
    np.add.at(counts, (a, b), 1.0)
    counts += counts.T
    return counts / counts.sum()


def glcm_props(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    i, j = np.mgrid[0:n, 0:n]
    contrast = float((p * (i - j) ** 2).sum())
    mu_i, mu_j = float((p * i).sum()), float((p * j).sum())
    sd_i = np.sqrt(float((p * (i - mu_i) ** 2).sum()))
    sd_j = np.sqrt(float((p * (j - mu_j) ** 2).sum()))
    if sd_i < 1e-12 or sd_j < 1e-12:
        correlation = 0.0
    else:
        correlation = float((p * (i - mu_i) * (j - mu_j)).sum()) / (sd_i * sd_j)
    energy = float(np.sqrt((p ** 2).sum()))
    homogeneity = float((p / (1.0 + (i - j) ** 2)).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    return np.array([contrast, correlation, energy, homogeneity, entropy])


def moment_stats(v: np.ndarray, circular: bool = False) -> np.ndarray:
    """mean, std, min, max, median, skewness, excess kurtosis (population)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return np.zeros(len(STATS))
    lo, hi, med = v.min(), v.max(), float(np.median(v))
    if hi == lo:
        return np.array([lo, 0.0, lo, hi, med, 0.0, 0.0])
    if circular:
        ang = 2 * np.pi * v
        c, s = np.cos(ang).mean(), np.sin(ang).mean()
        mean = (np.arctan2(s, c) / (2 * np.pi)) % 1.0
        r = min(max(np.hypot(c, s), 1e-12), 1.0)
        std = np.sqrt(-2.0 * np.log(r)) / (2 * np.pi)
    else:
        mean = v.mean()
        std = v.std()
    d = v - v.mean()
    m2 = (d ** 2).mean()
    if m2 < 1e-20:
        skew = kurt = 0.0
    else:
        skew = (d ** 3).mean() / m2 ** 1.5
        kurt = (d ** 4).mean() / m2 ** 2 - 3.0
    return np.array([mean, std, lo, hi, med, skew, kurt])


def _channels(rgb_hw3: np.ndarray) -> np.ndarray:
    """(H, W, 6) stack of R, G, B, H, S, V."""
    return np.concatenate([rgb_hw3, rgb2hsv(rgb_hw3)], axis=2)


def region_stats(chan: np.ndarray, region: np.ndarray) -> np.ndarray:
    out = [moment_stats(chan[..., k][region], circular=(CHANNELS[k] == "h")) for k in range(len(CHANNELS))]
    return np.concatenate(out)


@dataclass(frozen=True)
class RegionGeometry:
    lesion: np.ndarray
    ring: np.ndarray
    centroid: tuple[float, float]
    major_axis: float
    minor_axis: float
    orientation: float
    # unit vectors (dy, dx) of the principal axes
    major_dir: tuple[float, float]
    minor_dir: tuple[float, float]


def region_geometry(mask: np.ndarray, radius: int = RING_RADIUS) -> RegionGeometry:
    m = np.asarray(mask).astype(bool)
    ys, xs = np.nonzero(m)
    cy, cx = ys.mean(), xs.mean()
    dy, dx = ys - cy, xs - cx
    cov = np.array([[(dy * dy).mean(), (dy * dx).mean()], [(dy * dx).mean(), (dx * dx).mean()]])
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    major = evecs[:, 1]
    if major[0] < 0 or (major[0] == 0 and major[1] < 0):
        major = -major
    minor = np.array([-major[1], major[0]])
    orientation = float(np.arctan2(major[0], major[1]))
    return RegionGeometry(
        lesion=m,
        ring=border_ring(m, radius).astype(bool),
        centroid=(float(cy), float(cx)),
        major_axis=4.0 * np.sqrt(evals[1]),
        minor_axis=4.0 * np.sqrt(evals[0]),
        orientation=orientation,
        major_dir=(float(major[0]), float(major[1])),
        minor_dir=(float(minor[0]), float(minor[1])),
    )


def _safe_div(a: float, b: float) -> float:
    return float(a) / float(b) if b > 1e-12 else 0.0


def _shape_features(geo: RegionGeometry, frame_area: int) -> np.ndarray:
    m = geo.lesion
    ys, xs = np.nonzero(m)
    area = float(len(ys))
    perim = float(perimeter(m, neighborhood=4))
    hull = convex_hull_image(m)
    convex_area = float(hull.sum())
    bh = float(ys.max() - ys.min() + 1)
    bw = float(xs.max() - xs.min() + 1)
    major, minor = geo.major_axis, geo.minor_axis
    ecc = np.sqrt(max(0.0, 1.0 - (minor / major) ** 2)) if major > 1e-12 else 0.0
    return np.array([
        area,
        perim,
        _safe_div(4 * np.pi * area, perim ** 2),
        np.sqrt(4 * area / np.pi),
        major,
        minor,
        ecc,
        geo.orientation,
        area / (bh * bw),
        _safe_div(area, convex_area),
        convex_area,
        bh,
        bw,
        bh / bw,
        float(euler_number(m, connectivity=2)),
        area / frame_area,
    ])


def _hu_features(m: np.ndarray) -> np.ndarray:
    mu = moments_central(m.astype(np.float64), order=3)
    return moments_hu(moments_normalized(mu, order=3))


def _gradient_features(luma: np.ndarray, geo: RegionGeometry) -> np.ndarray:
    mag = np.hypot(ndimage.sobel(luma, axis=0), ndimage.sobel(luma, axis=1))
    m = geo.lesion
    edge = m & ~ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1))
    les, edg, ring = mag[m], mag[edge], mag[geo.ring]

    def ms(v):
        return (float(v.mean()), float(v.std())) if v.size else (0.0, 0.0)

    lm, ls = ms(les)
    em, es = ms(edg)
    rm, rs = ms(ring)
    return np.array([lm, ls, float(les.max()), em, es, rm, rs, _safe_div(em, lm)])


def _asymmetry_features(luma: np.ndarray, geo: RegionGeometry) -> np.ndarray:
    m = geo.lesion
    h, w = m.shape
    ys, xs = np.nonzero(m)
    cy, cx = geo.centroid
    dy, dx = ys - cy, xs - cx
    out = []
    for axis in (geo.major_dir, geo.minor_dir):
        # reflect across the line through the centroid along ``axis``
        along = dy * axis[0] + dx * axis[1]
        ry = np.rint(cy + 2 * along * axis[0] - dy).astype(int)
        rx = np.rint(cx + 2 * along * axis[1] - dx).astype(int)
        inside = (ry >= 0) & (ry < h) & (rx >= 0) & (rx < w)
        hit = np.zeros(len(ys), bool)
        hit[inside] = m[ry[inside], rx[inside]]
        out.append(1.0 - hit.mean())
    vals = luma[ys, xs]
    for axis in (geo.major_dir, geo.minor_dir):
        # halves on either side of the axis
        side = dy * axis[1] - dx * axis[0]
        a, b = vals[side > 0], vals[side < 0]
        out.append(abs(a.mean() - b.mean()) if a.size and b.size else 0.0)

    edge = m & ~ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1))
    ey, ex = np.nonzero(edge)
    radial = np.hypot(ey - cy, ex - cx)
    rmean = radial.mean()
    out.append(_safe_div(radial.std(), rmean))
    out.append(_safe_div(radial.max() - radial.min(), rmean))
    perim = perimeter(m, neighborhood=4)
    out.append(_safe_div(perimeter(convex_hull_image(m), neighborhood=4), perim))
    ring_vals = luma[geo.ring]
    out.append(float(ring_vals.mean() - vals.mean()) if ring_vals.size else 0.0)
    return np.array(out, dtype=np.float64)


_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _lbp_features(luma: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Fractions of lesion pixels whose LBP(8,1) code is uniform with k ones.

    The non-uniform fraction is 1 minus their sum, so it is omitted.
    """
    pad = np.pad(luma, 1, mode="edge")
    h, w = luma.shape
    bits = np.stack([pad[1 + oy:1 + oy + h, 1 + ox:1 + ox + w] >= luma for oy, ox in _LBP_OFFSETS])
    ones = bits.sum(axis=0)
    transitions = (bits != np.roll(bits, 1, axis=0)).sum(axis=0)
    uniform = transitions <= 2
    codes = ones[m & uniform]
    return np.bincount(codes, minlength=9)[:9] / float(m.sum())


def _crop_box(mask: np.ndarray, margin: int):
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    return (
        max(ys.min() - margin, 0), min(ys.max() + margin + 1, h),
        max(xs.min() - margin, 0), min(xs.max() + margin + 1, w),
    )


def extract_all(image: np.ndarray, mask: np.ndarray) -> FeatureVector:
    """Compute the 200 features of a (3, H, W) image in [0, 1] w.r.t. ``mask``."""
    img = np.asarray(image, dtype=np.float64)
    m_full = np.asarray(mask).astype(bool)
    if img.ndim != 3 or img.shape[0] != 3 or img.shape[1:] != m_full.shape:
        raise ValueError(f"image {img.shape} and mask {m_full.shape} dims do not match")
    if not m_full.any():
        logger.warning("empty lesion mask; returning fallback feature vector")
        return FeatureVector(np.zeros(N_FEATURES), degenerate=True)

    y0, y1, x0, x1 = _crop_box(m_full, RING_RADIUS + 2)
    m = m_full[y0:y1, x0:x1]
    rgb = np.moveaxis(img[:, y0:y1, x0:x1], 0, 2)
    chan = _channels(rgb)
    luma = rgb @ LUMA
    geo = region_geometry(m)

    hist = []
    for k in range(3):
        counts, _ = np.histogram(rgb[..., k][m], bins=HIST_BINS, range=(0.0, 1.0))
        hist.append(counts / m.sum())
    glcm = [glcm_props(glcm_matrix(luma, off, GLCM_LEVELS, m)) for off in GLCM_OFFSETS]

    values = np.concatenate([
        _shape_features(geo, m_full.size),
        _hu_features(m),
        region_stats(chan, m),
        region_stats(chan, geo.ring),
        np.concatenate(hist),
        np.concatenate(glcm),
        _gradient_features(luma, geo),
        _asymmetry_features(luma, geo),
        _lbp_features(luma, m),
    ])
    values = np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0)
    return FeatureVector(values)
