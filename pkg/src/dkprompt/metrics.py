"""Overlap and center-error metrics, threshold curves and benchmark runs.

Conventions used throughout:

* success curve: 21 thresholds 0.00, 0.05, ..., 1.00, counting frames with
  IoU strictly greater than the threshold; AUC is the mean of the curve, so
  a perfect tracker scores 20/21;
* precision curve: pixel thresholds 0..50, counting CLE <= threshold;
  headline precision is read at 20 px;
* normalized precision: center offsets divided by the ground-truth width and
  height before taking the norm, thresholds 0.00..0.50, headline at 0.20.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BBox

log = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = np.arange(21) / 20.0
PIXEL_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_THRESHOLDS = np.arange(51) / 100.0
PREC_AT = 20
NPREC_AT = 20  # index into NORM_THRESHOLDS, i.e. 0.20


def _intersection(a, b):
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    return max(iw, 0.0) * max(ih, 0.0)


def _area(b):
    # From corners, like the intersection, so iou(b, b) is exactly 1.
    return (b.x2 - b.x) * (b.y2 - b.y)


def iou(a, b):
    inter = _intersection(a, b)
    return inter / (_area(a) + _area(b) - inter)


def giou(a, b):
    inter = _intersection(a, b)
    union = _area(a) + _area(b) - inter
    enclose = (max(a.x2, b.x2) - min(a.x, b.x)) * (max(a.y2, b.y2) - min(a.y, b.y))
    return inter / union - (enclose - union) / enclose


def center_errors(pred, gt):
    """Pixel CLE and box-normalized CLE per frame."""
    if len(pred) != len(gt):
        raise ValueError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    pc = np.array([b.center for b in pred], dtype=np.float64).reshape(-1, 2)
    gc = np.array([b.center for b in gt], dtype=np.float64).reshape(-1, 2)
    size = np.array([(b.w, b.h) for b in gt], dtype=np.float64).reshape(-1, 2)
    off = pc - gc
    return np.hypot(off[:, 0], off[:, 1]), np.linalg.norm(off / size, axis=1)


@dataclass(frozen=True)
class EvalCurve:
    thresholds: np.ndarray
    scores: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("success", "precision", "norm-precision"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        d = np.diff(self.scores)
        if self.kind == "success" and np.any(d > 0):
            raise ValueError("success curve must be nonincreasing")
        if self.kind != "success" and np.any(d < 0):
            raise ValueError("precision curve must be nondecreasing")

    def at(self, threshold):
        idx = int(np.argmin(np.abs(self.thresholds - threshold)))
        return float(self.scores[idx])


def success_curve(ious):
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("success_auc needs at least one frame")
    scores = (ious[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return EvalCurve(SUCCESS_THRESHOLDS.copy(), scores, "success")


def success_auc(ious):
    curve = success_curve(ious)
    return curve, float(curve.scores.mean())


def _threshold_curve(errors, thresholds, kind):
    errors = np.asarray(errors, dtype=np.float64)
    scores = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    return EvalCurve(thresholds.copy(), scores, kind)


def precision_curves_from_errors(cle, norm_cle):
    pix = _threshold_curve(cle, PIXEL_THRESHOLDS, "precision")
    nrm = _threshold_curve(norm_cle, NORM_THRESHOLDS, "norm-precision")
    return pix, nrm, float(pix.scores[PREC_AT]), float(nrm.scores[NPREC_AT])


def precision_curves(pred, gt):
    """Returns ``(pixel_curve, normalized_curve, prec20, nprec02)``."""
    if len(pred) == 0:
        raise ValueError("precision_curves needs at least one frame")
    cle, norm_cle = center_errors(pred, gt)
    return precision_curves_from_errors(cle, norm_cle)


@dataclass
class SequenceResult:
    name: str
    ious: np.ndarray
    cle: np.ndarray
    norm_cle: np.ndarray

    def __post_init__(self):
        n = len(self.ious)
        if len(self.cle) != n or len(self.norm_cle) != n:
            raise ValueError(f"{self.name}: metric vectors disagree in length")

    @property
    def frames(self):
        return len(self.ious)

    @classmethod
    def evaluate(cls, name, pred, gt):
        if len(pred) != len(gt):
            raise ValueError(f"{name}: {len(pred)} predicted boxes vs {len(gt)} ground-truth boxes")
        cle, norm_cle = center_errors(pred, gt)
        return cls(name, np.array([iou(p, g) for p, g in zip(pred, gt)]), cle, norm_cle)


@dataclass
class Summary:
    name: str
    frames: int
    auc: float
    prec20: float
    nprec02: float
    success: EvalCurve = field(repr=False)
    precision: EvalCurve = field(repr=False)
    norm_precision: EvalCurve = field(repr=False)


def summarize(name, ious, cle, norm_cle):
    succ, auc = success_auc(ious)
    pix, nrm, p20, np02 = precision_curves_from_errors(cle, norm_cle)
    return Summary(name, len(ious), auc, p20, np02, succ, pix, nrm)


@dataclass
class BenchmarkReport:
    sequences: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    aggregate: Summary | None = None
    missing: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def complete(self):
        return bool(self.sequences) and not self.missing and not self.errors


def aggregate_results(results, name="OVERALL"):
    """Frame-weighted pooling: identical to evaluating one concatenated run."""
    if not results:
        return None
    ordered = sorted(results, key=lambda r: r.name)
    return summarize(name,
                     np.concatenate([r.ious for r in ordered]),
                     np.concatenate([r.cle for r in ordered]),
                     np.concatenate([r.norm_cle for r in ordered]))


def build_report(results, missing=(), errors=()):
    results = sorted(results, key=lambda r: r.name)
    summaries = [summarize(r.name, r.ious, r.cle, r.norm_cle) for r in results]
    return BenchmarkReport(results, summaries, aggregate_results(results), list(missing), list(errors))


def run_benchmark(gt_dir, pred_dir, pattern="*.txt"):
    """Evaluate every sequence whose annotation file exists in both dirs."""
    from .io import AnnotationError, parse_annotation_file

    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gt_files = {p.name: p for p in sorted(gt_dir.glob(pattern))}
    pred_files = {p.name: p for p in sorted(pred_dir.glob(pattern))} if pred_dir.is_dir() else {}
    missing = sorted(set(gt_files) ^ set(pred_files))
    for name in missing:
        side = "prediction" if name in gt_files else "ground truth"
        log.warning("sequence %s has no %s file; skipped", name, side)
    results, errors = [], []
    for name in sorted(set(gt_files) & set(pred_files)):
        try:
            gt = parse_annotation_file(gt_files[name])
            pred = parse_annotation_file(pred_files[name])
            results.append(SequenceResult.evaluate(Path(name).stem, pred, gt))
        except (AnnotationError, ValueError) as exc:
            log.warning("sequence %s skipped: %s", name, exc)
            errors.append(f"{name}: {exc}")
    return build_report(results, missing, errors)


__all__ = [
    "BenchmarkReport",
    "EvalCurve",
    "SequenceResult",
    "aggregate_results",
    "center_errors",
    "giou",
    "iou",
    "precision_curves",
    "run_benchmark",
    "success_auc",
]
