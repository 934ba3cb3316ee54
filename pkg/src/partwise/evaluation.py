"""Labeling IoU reports, hypothesis recall curves, and budget sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import Assembly
from .errors import ValidationError
from .hypothesis import TRUTH_RESOLUTION, GroundTruthPart, voxelize_components
from .pipeline import RunConfig, ShapePipeline

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelIoU:
    intersection: int
    union: int

    @property
    def iou(self) -> float:
        return self.intersection / self.union if self.union else 0.0


@dataclass(frozen=True)
class ShapeReport:
    shape_id: str
    per_label: dict[int, LabelIoU]
    avg_iou: float

    def to_dict(self) -> dict:
        return {
            "shape": self.shape_id,
            "avg_iou": self.avg_iou,
            "per_label": {str(k): {"iou": v.iou,
                                   "intersection": v.intersection,
                                   "union": v.union}
                          for k, v in sorted(self.per_label.items())},
        }


@dataclass(frozen=True)
class DatasetReport:
    shapes: tuple[ShapeReport, ...]
    mean_avg_iou: float
    pooled_avg_iou: float

    def to_dict(self) -> dict:
        return {
            "mean_avg_iou": self.mean_avg_iou,
            "pooled_avg_iou": self.pooled_avg_iou,
            "shapes": [s.to_dict() for s in self.shapes],
        }


def labeling_iou(assembly: Assembly, predicted: dict[int, int], truth: dict[int, int],
                 resolution: int = TRUTH_RESOLUTION, comp_vox=None) -> ShapeReport:
    """Per-label voxel IoU between a predicted and a reference labeling.

    Each label that occurs in the reference contributes one IoU term; the
    shape score is the unweighted mean of those terms. Predicted-only labels
    never add terms of their own, but their voxels still count against the
    union of whatever reference label owns those components.
    """
    n = assembly.num_components
    for name, labels in (("predicted", predicted), ("reference", truth)):
        missing = sorted(set(range(n)) - set(labels))
        if missing:
            raise ValidationError(f"{name} labeling misses components {missing}")
        for cid, lab in labels.items():
            if not (0 <= cid < n):
                raise ValidationError(f"{name} labeling names unknown component {cid}")
            if lab < 0:
                raise ValidationError(f"{name} labeling has negative label for {cid}")
    if comp_vox is None:
        comp_vox = voxelize_components(assembly, resolution)

    def union_indices(label: int, labels: dict[int, int]) -> np.ndarray:
        parts = [comp_vox[c] for c in range(n) if labels[c] == label]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    per_label: dict[int, LabelIoU] = {}
    for label in sorted(set(truth.values())):
        t = union_indices(label, truth)
        p = union_indices(label, predicted)
        inter = np.intersect1d(t, p, assume_unique=True).size
        union = t.size + p.size - inter
        per_label[label] = LabelIoU(int(inter), int(union))
    avg = float(np.mean([v.iou for v in per_label.values()])) if per_label else 0.0
    return ShapeReport(assembly.id, per_label, avg)


def aggregate_reports(reports) -> DatasetReport:
    reports = tuple(reports)
    if not reports:
        raise ValidationError("no shape reports to aggregate")
    mean_avg = float(np.mean([r.avg_iou for r in reports]))
    inter = sum(v.intersection for r in reports for v in r.per_label.values())
    union = sum(v.union for r in reports for v in r.per_label.values())
    pooled = inter / union if union else 0.0
    return DatasetReport(reports, mean_avg, pooled)


@dataclass(frozen=True)
class RecallCurve:
    thresholds: tuple[float, ...]
    recalls: tuple[float, ...]
    part_ious: tuple[float, ...]

    def recall_at(self, threshold: float) -> float:
        if not self.part_ious:
            return 0.0
        hits = sum(1 for v in self.part_ious if v >= threshold)
        return hits / len(self.part_ious)


DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))


def best_part_ious(parts: list[GroundTruthPart], hypotheses, truth_context) -> list[float]:
    """Best hypothesis IoU for each reference part, via the truth-grid cache."""
    member_sets = {tuple(sorted(h.members)) for h in hypotheses}
    best = []
    for part in parts:
        target = truth_context.hypothesis_voxels(part.members)
        top = 0.0
        for members in member_sets:
            hyp = truth_context.hypothesis_voxels(members)
            inter = np.intersect1d(hyp, target, assume_unique=True).size
            union = hyp.size + target.size - inter
            if union:
                top = max(top, inter / union)
        best.append(top)
    return best


def hypothesis_recall(parts, hypotheses, truth_context,
                      thresholds=DEFAULT_THRESHOLDS) -> RecallCurve:
    """Fraction of reference parts matched above each IoU threshold."""
    thresholds = tuple(float(t) for t in thresholds)
    for t in thresholds:
        if not (0.0 <= t <= 1.0):
            raise ValidationError(f"threshold {t} outside [0, 1]")
    if not parts:
        raise ValidationError("no reference parts")
    best = best_part_ious(parts, hypotheses, truth_context)
    recalls = tuple(sum(1 for v in best if v >= t) / len(best) for t in thresholds)
    return RecallCurve(thresholds, recalls, tuple(best))


def recall_csv(curve: RecallCurve) -> str:
    lines = ["threshold,recall"]
    for t, r in zip(curve.thresholds, curve.recalls):
        lines.append(f"{t:.6f},{r:.6f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepRow:
    budget: int
    recall_at_half: float
    avg_iou: float


def sweep_budgets(assemblies, budgets, config: RunConfig = RunConfig()) -> list[SweepRow]:
    """Rerun the oracle pipeline at several budgets over a set of shapes.

    Recall pools reference parts across shapes; avg IoU is the mean of the
    per-shape labeling scores.
    """
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets:
        raise ValidationError("no budgets given")
    if budgets[0] < 3:
        raise ValidationError("budgets must be at least 3")
    assemblies = list(assemblies)
    if not assemblies:
        raise ValidationError("no shapes given")
    pipelines = []
    for assembly in assemblies:
        assembly.require_labels()
        pipelines.append(ShapePipeline(assembly, config))

    rows = []
    for budget in budgets:
        ious = []
        hits = 0
        total = 0
        for pipe in pipelines:
            result, hyps = pipe.label_with_oracle(budget)
            truth = {c: pipe.assembly.labels[c]
                     for c in range(pipe.assembly.num_components)}
            report = labeling_iou(pipe.assembly, result.labels, truth,
                                  config.eval_resolution, pipe.truth.comp_vox)
            ious.append(report.avg_iou)
            best = best_part_ious(pipe.truth.parts, hyps, pipe.truth)
            hits += sum(1 for v in best if v >= 0.5)
            total += len(best)
        row = SweepRow(budget, hits / total if total else 0.0, float(np.mean(ious)))
        logger.info("budget %d: recall@0.5=%.3f avg_iou=%.3f",
                    row.budget, row.recall_at_half, row.avg_iou)
        rows.append(row)
    return rows


def sweep_csv(rows) -> str:
    lines = ["budget,recall_at_0.5,avg_iou"]
    for row in rows:
        lines.append(f"{row.budget},{row.recall_at_half:.6f},{row.avg_iou:.6f}")
    return "\n".join(lines) + "\n"
