"""Colour Gaussian-mixture segmentation of lesion versus surrounding skin."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from skimage.filters import threshold_otsu

logger = logging.getLogger(__name__)

COV_REG = 1e-6
MIN_VARIANCE = 1e-12
MAX_ITER = 200
REL_TOL = 1e-6
LLOYD_ITERS = 10
LUMA = np.array([0.299, 0.587, 0.114])


class TooFewPixelsError(ValueError):
    pass


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    # mean per-pixel log-likelihood after each EM iteration (diagnostic only)
    trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class TissueModel:
    lesion: GmmParams
    skin: GmmParams
    p_lesion: float
    p_skin: float


def _regularize(cov: np.ndarray) -> np.ndarray:
    reg = max(COV_REG * np.trace(cov) / cov.shape[0], MIN_VARIANCE)
    return cov + reg * np.eye(cov.shape[0])


def _component_log_pdf(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """(N, K) matrix of log N(x_n; mu_k, Sigma_k)."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k, (mu, cov) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(cov)
        z = solve_triangular(chol, (x - mu).T, lower=True)
        maha = np.einsum("ij,ij->j", z, z)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, k] = -0.5 * (d * np.log(2 * np.pi) + logdet + maha)
    return out


def _weighted_log_pdf(x: np.ndarray, g: GmmParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    return _component_log_pdf(x, g.means, g.covs) + logw


def log_density(x, g: GmmParams) -> np.ndarray | float:
    """log sum_k w_k N(x; mu_k, Sigma_k) for one point or an (N, d) batch."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    vals = logsumexp(_weighted_log_pdf(np.atleast_2d(arr), g), axis=1)
    return float(vals[0]) if single else vals


def _init_kmeans(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point seeding from a random start, then Lloyd iterations."""
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        centers.append(x[int(np.argmax(d2))])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(axis=1))
    centers = np.array(centers)
    for _ in range(LLOYD_ITERS):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(dist, axis=1)


def fit_em(pixels, n_components: int, seed: int = 0) -> GmmParams:
    """Maximum-likelihood mixture by EM, initialized from seeded k-means.

    Stops when the relative change in total log-likelihood drops below 1e-6
    or after 200 iterations.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("pixels must be an (N, d) array")
    n, d = x.shape
    k = int(n_components)
    if k < 1:
        raise ValueError("n_components must be >= 1")
    if n < 10 * k:
        raise TooFewPixelsError(f"need at least {10 * k} pixels for {k} components, got {n}")
    if np.all(x == x[0]):
        return GmmParams(np.ones(1), x[:1].copy(), _regularize(np.zeros((1, d, d))[0])[None])

    rng = np.random.default_rng(seed)
    labels = _init_kmeans(x, k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0

    trace: list[float] = []
    prev = None
    for _ in range(MAX_ITER):
        weights, means, covs = _m_step(x, resp)
        lp = _component_log_pdf(x, means, covs)
        with np.errstate(divide="ignore"):
            lp += np.log(weights)
        norm = logsumexp(lp, axis=1)
        ll = float(norm.sum())
        trace.append(ll / n)
        resp = np.exp(lp - norm[:, None])
        if prev is not None and abs(ll - prev) <= REL_TOL * abs(prev):
            break
        prev = ll
    return GmmParams(weights, means, covs, tuple(trace))


def _m_step(x: np.ndarray, resp: np.ndarray):
    n, d = x.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = np.zeros((len(nk), d))
    covs = np.zeros((len(nk), d, d))
    global_cov = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    for j in range(len(nk)):
        if nk[j] <= 1e-12:
            # dead component: park it on the global statistics with zero weight
            means[j] = x.mean(axis=0)
            covs[j] = _regularize(global_cov)
            continue
        means[j] = resp[:, j] @ x / nk[j]
        diff = x - means[j]
        covs[j] = _regularize((resp[:, j, None] * diff).T @ diff / nk[j])
    return weights, means, covs


def _pixels(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img.reshape(img.shape[0], -1).T


def fit_tissue_model(
    image: np.ndarray,
    n_components: int = 3,
    seed: int = 0,
    max_pixels: int | None = 20000,
) -> TissueModel | None:
    """Bootstrap lesion/skin colour models from an Otsu split of luminance.

    Darker pixels seed the lesion mixture, lighter ones the skin mixture.
    Returns None when the image has no usable contrast (one side too small).
    """
    px = _pixels(image)
    luma = px @ LUMA
    if np.ptp(luma) == 0:
        return None
    t = threshold_otsu(luma)
    dark = luma <= t
    n_dark, n_light = int(dark.sum()), int((~dark).sum())
    if min(n_dark, n_light) < 10:
        return None
    rng = np.random.default_rng(seed)

    def fit(sel: np.ndarray) -> GmmParams:
        pts = px[sel]
        if max_pixels is not None and len(pts) > max_pixels:
            pts = pts[np.sort(rng.choice(len(pts), max_pixels, replace=False))]
        k = min(n_components, len(pts) // 10)
        return fit_em(pts, k, seed)

    lesion, skin = fit(dark), fit(~dark)
    p_lesion = n_dark / len(luma)
    return TissueModel(lesion, skin, p_lesion, 1.0 - p_lesion)


def segment_pixels(image: np.ndarray, model: TissueModel) -> np.ndarray:
    """Per-pixel MAP decision; exact ties go to skin."""
    img = np.asarray(image)
    px = _pixels(img)
    score_lesion = np.log(model.p_lesion) + log_density(px, model.lesion)
    score_skin = np.log(model.p_skin) + log_density(px, model.skin)
    return (score_lesion > score_skin).reshape(img.shape[1:]).astype(np.uint8)


EIGHT = np.ones((3, 3), dtype=bool)


def morph_cleanup(mask: np.ndarray) -> np.ndarray:
    """Fill 4-connected background holes, then keep the largest 8-connected component."""
    m = np.asarray(mask).astype(bool)
    if not m.any():
        return np.zeros(m.shape, dtype=np.uint8)
    filled = ndimage.binary_fill_holes(m)
    labels, n = ndimage.label(filled, structure=EIGHT)
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        # argmax picks the lowest label on ties, which is deterministic
        filled = labels == (int(np.argmax(sizes)) + 1)
    return filled.astype(np.uint8)


def segment_gmm(image: np.ndarray, n_components: int = 3, seed: int = 0, max_pixels: int | None = 20000) -> np.ndarray:
    model = fit_tissue_model(image, n_components, seed, max_pixels)
    if model is None:
        logger.warning("no luminance contrast; GMM mask is empty")
        return np.zeros(np.shape(image)[1:], dtype=np.uint8)
    return morph_cleanup(segment_pixels(image, model))
