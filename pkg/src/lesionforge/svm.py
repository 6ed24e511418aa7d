"""Soft-margin SVMs trained by SMO and combined one-vs-one.

The binary solver works on the dual

    min_a  1/2 a^T Q a - sum(a)    s.t.  y^T a = 0,  0 <= a_i <= C_i

with Q_ij = y_i y_j K(x_i, x_j), choosing the maximal violating pair at
every step. The decision function is ``f(x) = sum_i a_i y_i K(x_i, x) + b``.
"""
from __future__ import annotations

import itertools
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import CLASS_LABELS

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12
TAU = 1e-12
HANDCRAFTED_SIZE = 200


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        dot = a @ b.T
        if self.kind == "linear":
            return dot
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * dot
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data) -> "Standardizer":
        x = np.asarray(data, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("standardizer needs a matrix with at least 2 rows")
        # population (1/N) convention
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} features, got {x.shape[-1]}")
        return (x - self.mean) / self.scale


def fit_standardizer(data) -> Standardizer:
    return Standardizer.fit(data)


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # a_i * y_i for each support vector
    bias: float
    kernel: Kernel
    c_pos: float
    c_neg: float
    # full training-time state; not persisted
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)
    n_iter: int = field(default=0, compare=False)
    converged: bool = field(default=True, compare=False)

    def decision(self, x) -> np.ndarray:
        if len(self.dual_coef) == 0:
            return np.full(np.atleast_2d(x).shape[0], self.bias)
        return self.kernel(x, self.support_vectors) @ self.dual_coef + self.bias


class _KernelRows:
    """Kernel matrix rows, precomputed when small and LRU-cached otherwise."""

    def __init__(self, x: np.ndarray, kernel: Kernel, max_full: int = 4000, cache_rows: int = 2000):
        self.x, self.kernel = x, kernel
        self.full = kernel(x, x) if len(x) <= max_full else None
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.cache_rows = cache_rows
        self.diag = self.full.diagonal().copy() if self.full is not None else np.array(
            [kernel(x[i], x[i])[0, 0] for i in range(len(x))])

    def __getitem__(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        row = self.cache.get(i)
        if row is None:
            row = self.kernel(self.x[i], self.x)[0]
            self.cache[i] = row
            if len(self.cache) > self.cache_rows:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return row


def _check_binary(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    return x, y


def _violating_bounds(alpha, grad, y, c):
    """Return (m, M): max over I_up and min over I_low of -y*G."""
    score = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    m = score[up].max() if up.any() else -np.inf
    big_m = score[low].min() if low.any() else np.inf
    return m, big_m, score, up, low


def smo_train(
    x,
    y,
    kernel: Kernel = Kernel("linear"),
    c_pos: float = 1.0,
    c_neg: float = 1.0,
    tol: float = 1e-3,
    seed: int = 0,
    max_iter: int | None = None,
) -> BinarySvm:
    """Train a binary soft-margin SVM.

    Iterates until the maximal KKT violation ``m - M`` falls below ``tol``.
    Ties in the pair selection are broken by a seeded permutation of the
    training indices, so the result is reproducible for a given seed.
    """
    x, y = _check_binary(x, y)
    if tol <= 0:
        raise ValueError("tol must be > 0")
    n = len(y)
    c = np.where(y > 0, float(c_pos), float(c_neg))
    rows = _KernelRows(x, kernel)
    order = np.random.default_rng(seed).permutation(n)
    max_iter = max_iter if max_iter is not None else max(100_000, 100 * n)

    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        m, big_m, score, up, low = _violating_bounds(alpha, grad, y, c)
        if m - big_m < tol:
            converged = True
            break
        s = score[order]
        i = order[np.argmax(np.where(up[order], s, -np.inf))]
        j = order[np.argmin(np.where(low[order], s, np.inf))]
        it += 1

        ki, kj = rows[i], rows[j]
        qii, qjj, kij = rows.diag[i], rows.diag[j], ki[j]
        ai_old, aj_old = alpha[i], alpha[j]
        ci, cj = c[i], c[j]
        if y[i] != y[j]:
            quad = qii + qjj + 2.0 * y[i] * y[j] * kij
            quad = quad if quad > 0 else TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > ci - cj:
                if ai > ci:
                    ai, aj = ci, ci - diff
            elif aj > cj:
                aj, ai = cj, cj + diff
        else:
            quad = qii + qjj - 2.0 * y[i] * y[j] * kij
            quad = quad if quad > 0 else TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > ci:
                if ai > ci:
                    ai, aj = ci, total - ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > cj:
                if aj > cj:
                    aj, ai = cj, total - cj
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * (ai - ai_old) * ki + y[j] * (aj - aj_old) * kj)

    if not converged:
        logger.warning("SMO stopped after %d iterations without reaching tol=%g", it, tol)

    bias = -_rho(alpha, grad, y, c)
    sv = alpha > 0
    return BinarySvm(
        support_vectors=x[sv].copy(),
        dual_coef=(alpha * y)[sv],
        bias=float(bias),
        kernel=kernel,
        c_pos=float(c_pos),
        c_neg=float(c_neg),
        alpha=alpha,
        n_iter=it,
        converged=converged,
    )


def _rho(alpha, grad, y, c) -> float:
    yg = y * grad
    at_upper = alpha >= c
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yg[free].mean())
    ub_set = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_set = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_set].min() if ub_set.any() else np.inf
    lb = yg[lb_set].max() if lb_set.any() else -np.inf
    return float((ub + lb) / 2)


def dual_gradient(alpha, x, y, kernel: Kernel) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    q = (y[:, None] * y[None, :]) * kernel(x, x)
    return q @ alpha - 1.0


def kkt_violation(alpha, x, y, kernel: Kernel, c_pos: float, c_neg: float) -> float:
    """Maximal pair violation ``max(0, m - M)`` recomputed from scratch."""
    y = np.asarray(y, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    c = np.where(y > 0, c_pos, c_neg)
    m, big_m, *_ = _violating_bounds(alpha, dual_gradient(alpha, x, y, kernel), y, c)
    return float(max(0.0, m - big_m))


def dual_objective(alpha, x, y, kernel: Kernel) -> float:
    """Maximization form: sum(a) - 1/2 a^T Q a."""
    y = np.asarray(y, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    q = (y[:, None] * y[None, :]) * kernel(x, x)
    return float(alpha.sum() - 0.5 * alpha @ q @ alpha)


def concat_hybrid(cnn_blocks: Sequence[np.ndarray], handcrafted) -> tuple[np.ndarray, tuple[int, ...]]:
    """CNN embedding blocks in order, then the 200 handcrafted values.

    Returns the vector and its layout (block lengths, handcrafted last).
    """
    hand = np.asarray(getattr(handcrafted, "values", handcrafted), dtype=np.float64).ravel()
    if len(hand) != HANDCRAFTED_SIZE:
        raise ValueError(f"handcrafted vector must have {HANDCRAFTED_SIZE} values, got {len(hand)}")
    blocks = [np.asarray(b, dtype=np.float64).ravel() for b in cnn_blocks]
    for k, b in enumerate(blocks):
        if b.size == 0:
            raise ValueError(f"CNN block {k} is empty")
    layout = tuple(len(b) for b in blocks) + (HANDCRAFTED_SIZE,)
    return np.concatenate(blocks + [hand]), layout


def ovo_vote(classes: Sequence[str], pairs: Sequence[tuple[int, int]], decisions: Sequence[float]):
    """Combine pairwise decisions into ``(label, votes, decision_sums)``.

    A positive decision for pair ``(a, b)`` is a vote for ``classes[a]``.
    Vote ties go to the larger sum of signed decision values over all
    machines involving the class, then to the lexicographically first label.
    """
    votes = {c: 0 for c in classes}
    sums = {c: 0.0 for c in classes}
    for (a, b), f in zip(pairs, decisions, strict=True):
        f = float(f)
        ca, cb = classes[a], classes[b]
        votes[ca if f > 0 else cb] += 1
        sums[ca] += f
        sums[cb] -= f
    top = max(votes.values())
    tied = [c for c in classes if votes[c] == top]
    best = max(sums[c] for c in tied)
    label = min(c for c in tied if sums[c] == best)
    return label, votes, sums


def balanced_penalties(labels: Sequence[str], c: float) -> dict[str, float]:
    """C_k = C * N / (K * N_k) over the K classes present."""
    names, counts = np.unique(np.asarray(labels), return_counts=True)
    n, k = len(labels), len(names)
    return {str(name): c * n / (k * cnt) for name, cnt in zip(names, counts)}


def _f32(v):
    return np.asarray(v, dtype=np.float32).astype(np.float64)


@dataclass
class MulticlassSvm:
    classes: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...]
    machines: list[BinarySvm]
    standardizer: Standardizer
    layout: tuple[int, ...]

    @property
    def n_features(self) -> int:
        return int(sum(self.layout))

    def decisions(self, x) -> np.ndarray:
        z = self.standardizer.apply(np.atleast_2d(x))
        return np.column_stack([m.decision(z) for m in self.machines])

    def predict(self, x):
        """Return ``(label, votes, decision_sums)`` for one feature vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or len(x) != self.n_features:
            raise ValueError(f"layout mismatch: model expects {self.n_features} features {self.layout}, got {x.shape}")
        return ovo_vote(self.classes, self.pairs, self.decisions(x)[0])

    def predict_many(self, xs) -> list[str]:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.n_features:
            raise ValueError(f"layout mismatch: model expects {self.n_features} features {self.layout}, got {xs.shape[1]}")
        dec = self.decisions(xs)
        return [ovo_vote(self.classes, self.pairs, row)[0] for row in dec]


def fit_multiclass(
    x,
    labels: Sequence[str],
    layout: Sequence[int] | None = None,
    kernel: str = "rbf",
    c: float = 1.0,
    gamma: float | None = None,
    tol: float = 1e-3,
    seed: int = 0,
) -> MulticlassSvm:
    """Standardize, then train one class-balanced SMO machine per class pair.

    Class order follows the challenge label order. All stored parameters are
    rounded to float32 so the model survives a UDLS roundtrip unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = [str(v) for v in labels]
    if len(x) != len(labels):
        raise ValueError("one label per row required")
    layout = tuple(layout) if layout is not None else (x.shape[1],)
    if sum(layout) != x.shape[1]:
        raise ValueError(f"layout {layout} does not sum to {x.shape[1]} features")
    order = {c_: i for i, c_ in enumerate(CLASS_LABELS)}
    unknown = sorted(set(labels) - set(order))
    if unknown:
        raise ValueError(f"unknown class labels: {unknown}")
    classes = tuple(sorted(set(labels), key=order.get))
    if len(classes) < 2:
        raise ValueError("need at least two classes to train")

    std = Standardizer.fit(x)
    std = Standardizer(_f32(std.mean), _f32(std.scale))
    z = std.apply(x)
    if kernel == "rbf" and gamma is None:
        var = float(z.var())
        gamma = 1.0 / (z.shape[1] * var) if var > 0 else 1.0 / z.shape[1]
    kern = Kernel(kernel, float(np.float32(gamma if gamma is not None else 1.0)))
    penalties = {k: float(np.float32(v)) for k, v in balanced_penalties(labels, c).items()}

    y_all = np.asarray(labels)
    pairs, machines = [], []
    for a, b in itertools.combinations(range(len(classes)), 2):
        sel = (y_all == classes[a]) | (y_all == classes[b])
        yb = np.where(y_all[sel] == classes[a], 1.0, -1.0)
        svm = smo_train(z[sel], yb, kern, penalties[classes[a]], penalties[classes[b]], tol, seed)
        pairs.append((a, b))
        machines.append(svm)
        svm.support_vectors = _f32(svm.support_vectors)
        svm.dual_coef = _f32(svm.dual_coef)
        svm.bias = float(np.float32(svm.bias))
    return MulticlassSvm(classes, tuple(pairs), machines, std, layout)


KERNEL_CODES = {"linear": 0, "rbf": 1}


def model_to_tensors(model: MulticlassSvm) -> dict[str, np.ndarray]:
    t: dict[str, np.ndarray] = {
        "svm.classes": np.array([CLASS_LABELS.index(c) for c in model.classes], dtype=np.float32),
        "svm.layout": np.array(model.layout, dtype=np.float32),
        "svm.kernel": np.array([KERNEL_CODES[model.machines[0].kernel.kind], model.machines[0].kernel.gamma], dtype=np.float32),
        "svm.std.mean": model.standardizer.mean.astype(np.float32),
        "svm.std.scale": model.standardizer.scale.astype(np.float32),
    }
    for k, ((a, b), m) in enumerate(zip(model.pairs, model.machines)):
        t[f"svm.m{k}.params"] = np.array([a, b, m.bias, m.c_pos, m.c_neg], dtype=np.float32)
        t[f"svm.m{k}.sv"] = m.support_vectors.astype(np.float32).reshape(len(m.dual_coef), model.n_features)
        t[f"svm.m{k}.coef"] = m.dual_coef.astype(np.float32)
    return t


def model_from_tensors(t: dict[str, np.ndarray]) -> MulticlassSvm:
    try:
        classes = tuple(CLASS_LABELS[int(i)] for i in t["svm.classes"])
        layout = tuple(int(v) for v in t["svm.layout"])
        code, gamma = t["svm.kernel"]
        kind = {v: k for k, v in KERNEL_CODES.items()}[int(code)]
        kern = Kernel(kind, float(gamma))
        std = Standardizer(t["svm.std.mean"].astype(np.float64), t["svm.std.scale"].astype(np.float64))
        pairs, machines = [], []
        n_pairs = len(classes) * (len(classes) - 1) // 2
        for k in range(n_pairs):
            a, b, bias, cp, cn = (float(v) for v in t[f"svm.m{k}.params"])
            pairs.append((int(a), int(b)))
            machines.append(BinarySvm(
                t[f"svm.m{k}.sv"].astype(np.float64),
                t[f"svm.m{k}.coef"].astype(np.float64),
                bias, kern, cp, cn,
            ))
    except KeyError as exc:
        raise ValueError(f"SVM model container is missing tensor {exc}") from None
    return MulticlassSvm(classes, tuple(pairs), machines, std, layout)
