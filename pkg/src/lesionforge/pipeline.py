"""End-to-end wiring: hybrid segmentation and hybrid-feature classification."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import udls
from .config import RunConfig
from .data import ManifestRow, load_image, load_mask, save_mask
from .features import extract_all
from .fusion import FusionConfig, lesion_area, select_mask
from .gmm import segment_gmm
from .metrics import CLASS_LABELS, balanced_accuracy, confusion_matrix, jaccard, per_class_recall
from .svm import MulticlassSvm, concat_hybrid, fit_multiclass, model_from_tensors, model_to_tensors
from .tensor import resize_bilinear, resize_nearest
from .unet import INPUT_SIZE, NetworkWeights, build_unet_schedule, extract_cnn_features, forward_segment, load_weights

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Fatal configuration or input problem."""


class AllInputsFailed(PipelineError):
    pass


def load_network(path: str | Path, base_width: int) -> NetworkWeights:
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"weights file not found: {path}")
    try:
        return load_weights(build_unet_schedule(base_width), path.read_bytes())
    except ValueError as exc:
        raise PipelineError(f"{path}: {exc}") from exc


@dataclass
class Segmented:
    row: ManifestRow
    image: np.ndarray  # 3 x 224 x 224
    mask: np.ndarray  # 224 x 224, chosen by fusion
    provenance: str
    unet_area: int
    original_size: tuple[int, int]

    def full_resolution_mask(self) -> np.ndarray:
        return resize_nearest(self.mask, *self.original_size)


def segment_image(image: np.ndarray, unet: NetworkWeights, cfg: RunConfig):
    """Return ``(image224, mask224, provenance, unet_area)`` for one RGB image."""
    img = resize_bilinear(image, INPUT_SIZE, INPUT_SIZE)
    unet_mask = forward_segment(img, unet).mask
    gmm_mask = segment_gmm(img, cfg.gmm_components, cfg.gmm_seed, cfg.gmm_max_pixels)
    mask, tag = select_mask(unet_mask, gmm_mask, FusionConfig(cfg.area_threshold))
    return img, mask, tag, lesion_area(unet_mask)


def segment_row(row: ManifestRow, unet: NetworkWeights, cfg: RunConfig) -> Segmented:
    image = load_image(row.image)
    img, mask, tag, area = segment_image(image, unet, cfg)
    return Segmented(row, img, mask, tag, area, image.shape[1:])


def parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map; per-item exceptions are returned in place of results."""

    def guarded(item):
        try:
            return fn(item)
        except Exception as exc:  # noqa: BLE001 - reported per image
            return exc

    if threads <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, items))


def _collect(rows: Sequence[ManifestRow], results: list) -> list:
    ok = []
    for row, res in zip(rows, results):
        if isinstance(res, PipelineError):
            raise res
        if isinstance(res, Exception):
            logger.warning("skipping %s: %s", row.name or row.image, res)
            continue
        ok.append(res)
    if rows and not ok:
        raise AllInputsFailed(f"all {len(rows)} inputs failed")
    return ok


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def write_report(out_dir: Path, stem: str, items: list[tuple[str, object]], text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.txt").write_text(text)
    (out_dir / f"{stem}.kv").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in items))


def mask_filename(row: ManifestRow) -> str:
    return f"{row.key}_mask.png"


def run_segment(rows: Sequence[ManifestRow], unet: NetworkWeights, cfg: RunConfig, out_dir: str | Path) -> dict:
    """Segment every row, write masks and a report; returns the report items."""
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    def work(row):
        seg = segment_row(row, unet, cfg)
        full = seg.full_resolution_mask()
        save_mask(out_dir / "masks" / mask_filename(row), full)
        score = score_t = None
        if row.mask is not None:
            truth = load_mask(row.mask)
            if truth.shape != full.shape:
                truth = resize_nearest(truth, *full.shape)
            score, score_t = jaccard(full, truth), jaccard(full, truth, thresholded=True)
        return seg.row, seg.provenance, seg.unet_area, score, score_t

    done = _collect(rows, parallel_map(work, rows, cfg.threads))
    items: list[tuple[str, object]] = [
        ("n_images", len(rows)),
        ("n_segmented", len(done)),
        ("n_failed", len(rows) - len(done)),
        ("n_gmm", sum(d[1] == "gmm" for d in done)),
        ("n_unet", sum(d[1] == "unet" for d in done)),
    ]
    lines = ["image                                    provenance  unet_area  jaccard   jaccard@0.65"]
    scores, scores_t = [], []
    for row, tag, area, s, st in done:
        items += [(f"image.{row.key}.provenance", tag), (f"image.{row.key}.unet_area", area)]
        if s is not None:
            items += [(f"image.{row.key}.jaccard", s), (f"image.{row.key}.jaccard_thresholded", st)]
            scores.append(s)
            scores_t.append(st)
        js = "-" if s is None else f"{s:.4f}"
        jts = "-" if st is None else f"{st:.4f}"
        lines.append(f"{row.name or row.key:<40} {tag:<11} {area:>9}  {js:<8}  {jts}")
    lines.append("")
    lines.append(f"images: {len(done)} segmented, {len(rows) - len(done)} failed")
    lines.append(f"fusion: {items[3][1]} gmm, {items[4][1]} unet")
    if scores:
        mean, mean_t = float(np.mean(scores)), float(np.mean(scores_t))
        primary = mean_t if cfg.jaccard_thresholded else mean
        items += [("mean_jaccard", mean), ("mean_jaccard_thresholded", mean_t), ("score", primary)]
        lines.append(f"mean jaccard: {mean:.4f}  (thresholded at 0.65: {mean_t:.4f})")
    write_report(out_dir, "segment_report", items, "\n".join(lines) + "\n")
    return dict(items)


@dataclass
class FeatureSources:
    """Where the CNN blocks of the hybrid vector come from."""

    unet: NetworkWeights
    cnns: list[NetworkWeights] = field(default_factory=list)
    embeddings: dict[str, np.ndarray] | None = None

    def layout(self, use_cnn: bool = True) -> tuple[int, ...]:
        sizes = [w.schedule.embedding_size for w in self.cnns] if use_cnn else []
        if self.embeddings:
            lengths = {v.size for v in self.embeddings.values()}
            if len(lengths) != 1:
                raise PipelineError(f"precomputed embeddings have inconsistent lengths {sorted(lengths)}")
            sizes.append(lengths.pop())
        return tuple(sizes) + (200,)


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Precomputed embeddings: a UDLS container with one rank-1 tensor per image."""
    try:
        return {k: v.ravel() for k, v in udls.load(path).items()}
    except (OSError, ValueError) as exc:
        raise PipelineError(f"{path}: {exc}") from exc


def hybrid_vector(row: ManifestRow, sources: FeatureSources, cfg: RunConfig):
    seg = segment_row(row, sources.unet, cfg)
    hand = extract_all(seg.image, seg.mask)
    blocks = []
    if cfg.cnn_features and sources.cnns:
        blocks.extend(np.split(extract_cnn_features(seg.image, sources.cnns), np.cumsum(
            [w.schedule.embedding_size for w in sources.cnns])[:-1]))
    if sources.embeddings:
        key = row.name or str(row.image)
        if key not in sources.embeddings:
            raise PipelineError(f"no precomputed embedding for {key!r}")
        blocks.append(sources.embeddings[key])
    vec, layout = concat_hybrid(blocks, hand)
    return vec, layout, seg.provenance


def _features(rows, sources, cfg):
    done = _collect(rows, parallel_map(lambda r: (r,) + hybrid_vector(r, sources, cfg), rows, cfg.threads))
    layouts = {d[2] for d in done}
    if len(layouts) > 1:
        raise PipelineError(f"inconsistent feature layouts across rows: {sorted(layouts)}")
    return done


def _confusion_text(cm: np.ndarray, labels: Sequence[str]) -> str:
    head = "true\\pred " + " ".join(f"{c:>6}" for c in labels)
    body = [f"{t:<9} " + " ".join(f"{v:>6}" for v in row) for t, row in zip(labels, cm)]
    return "\n".join([head] + body)


def classification_report(truth: Sequence[str], pred: Sequence[str]) -> tuple[list, str]:
    cm = confusion_matrix(truth, pred, CLASS_LABELS)
    recall = per_class_recall(cm)
    bacc = balanced_accuracy(cm)
    items: list[tuple[str, object]] = [("n_samples", len(truth))]
    for i, t in enumerate(CLASS_LABELS):
        items.append((f"confusion.{t}", " ".join(str(v) for v in cm[i])))
    for c, r in zip(CLASS_LABELS, recall):
        if not np.isnan(r):
            items.append((f"recall.{c}", float(r)))
    items.append(("balanced_accuracy", bacc))
    text = [_confusion_text(cm, CLASS_LABELS), ""]
    text += [f"recall {c:<6} {r:.4f}" for c, r in zip(CLASS_LABELS, recall) if not np.isnan(r)]
    text.append(f"balanced accuracy: {bacc:.4f}")
    return items, "\n".join(text) + "\n"


def run_train(rows: Sequence[ManifestRow], sources: FeatureSources, cfg: RunConfig, out_dir: str | Path | None = None):
    """Extract hybrid features, fit the one-vs-one SVM; returns ``(model, report_items)``."""
    unlabeled = [r.name or str(r.image) for r in rows if r.label is None]
    if unlabeled:
        raise PipelineError(f"training rows without a label: {unlabeled[:5]}")
    if len({r.label for r in rows}) < 2:
        raise PipelineError("training needs at least two classes")
    done = _features(rows, sources, cfg)
    if len({d[0].label for d in done}) < 2:
        raise PipelineError("fewer than two classes left after skipping failed images")
    x = np.stack([d[1] for d in done])
    labels = [d[0].label for d in done]
    layout = done[0][2]
    try:
        model = fit_multiclass(x, labels, layout, cfg.svm_kernel, cfg.svm_c, cfg.svm_gamma, cfg.svm_tol, cfg.svm_seed)
    except ValueError as exc:
        raise PipelineError(str(exc)) from exc
    pred = model.predict_many(x)
    items, text = classification_report(labels, pred)
    items = [
        ("classes", " ".join(model.classes)),
        ("layout", " ".join(map(str, layout))),
        ("n_machines", len(model.machines)),
        ("kernel", model.machines[0].kernel.kind),
        ("gamma", model.machines[0].kernel.gamma),
    ] + [(f"resubstitution.{k}", v) for k, v in items]
    for k, ((a, b), m) in enumerate(zip(model.pairs, model.machines)):
        items.append((f"machine.{k}", f"{model.classes[a]}/{model.classes[b]} n_sv={len(m.dual_coef)} "
                                      f"c_pos={m.c_pos!r} c_neg={m.c_neg!r}"))
    if out_dir is not None:
        header = (f"classes: {' '.join(model.classes)}\nlayout: {'+'.join(map(str, layout))} = {sum(layout)}\n"
                  f"machines: {len(model.machines)}\n\nresubstitution\n")
        write_report(Path(out_dir), "train_report", items, header + text)
    return model, dict(items)


def save_model(path: str | Path, model: MulticlassSvm) -> None:
    udls.save(path, model_to_tensors(model))


def load_model(path: str | Path) -> MulticlassSvm:
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"model file not found: {path}")
    try:
        return model_from_tensors(udls.load(path))
    except ValueError as exc:
        raise PipelineError(f"{path}: {exc}") from exc


def run_classify(rows: Sequence[ManifestRow], model: MulticlassSvm, sources: FeatureSources, cfg: RunConfig,
                 out_dir: str | Path) -> list[tuple[ManifestRow, str]]:
    """Predict a label per row and write ``predictions.csv``."""
    expected = tuple(model.layout)
    found = sources.layout(cfg.cnn_features)
    if found != expected:
        raise PipelineError(f"feature layout mismatch: model expects {expected} (= {sum(expected)}), "
                            f"configured sources give {found} (= {sum(found)})")
    if not rows:
        raise PipelineError("empty prediction set")
    done = _features(rows, sources, cfg)
    pred = model.predict_many(np.stack([d[1] for d in done]))
    out = [(d[0], p) for d, p in zip(done, pred)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["image,label"] + [f"{r.name or r.image},{p}" for r, p in out]
    (out_dir / "predictions.csv").write_text("\n".join(lines) + "\n")
    return out


def run_evaluate(rows: Sequence[ManifestRow], model: MulticlassSvm, sources: FeatureSources, cfg: RunConfig,
                 out_dir: str | Path) -> dict:
    """Classify, then score against the manifest labels."""
    unlabeled = [r.name for r in rows if r.label is None]
    if unlabeled:
        raise PipelineError(f"evaluation rows without a label: {unlabeled[:5]}")
    outside = [c for c in CLASS_LABELS if c in {r.label for r in rows} - set(model.classes)]
    if outside:
        logger.warning("ground truth has classes the model never saw: %s; predictions stay within %s",
                       ", ".join(outside), ", ".join(model.classes))
    out = run_classify(rows, model, sources, cfg, out_dir)
    items, text = classification_report([r.label for r, _ in out], [p for _, p in out])
    if outside:
        items.append(("untrained_classes", " ".join(outside)))
    write_report(Path(out_dir), "evaluate_report", items, text)
    return dict(items)
