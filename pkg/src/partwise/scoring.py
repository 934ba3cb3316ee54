"""Hypothesis scoring: probability vectors over labels plus a confidence.

A score record carries probs of length K + 1 (index 0 is the null class)
and a confidence in [0, 1]. Three backends produce them:

  oracle    reads the ground truth (label by the 70% majority rule,
            confidence as best IoU against a true part); for testing and
            upper-bound experiments
  builtin   a small deterministic learner on geometric features: softmax
            regression for the class posterior and a ridge regressor for
            confidence, serialized as canonical JSON
  external  any program speaking the file protocol: it receives an MCV1
            volume file and a JSON header, and must write score JSON lines

The builtin learner is intentionally simple; the external protocol is how a
real volumetric CNN plugs in.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembly
from .errors import ConfigError, TransportError, ValidationError
from .hypothesis import GroundTruthContext, GroupGeometry
from .voxel import HYPOTHESIS_RESOLUTION, bounding_box, hypothesis_volumes, voxelize, write_mcv1

COARSE_CELLS = 6


@dataclass(frozen=True)
class ScoreRecord:
    hypothesis_id: int
    probs: tuple[float, ...]  # length K + 1, index 0 = null
    confidence: float


def validate_score_record(hyp_id: int, probs, confidence: float, num_labels: int) -> ScoreRecord:
    """Check and canonicalize one record.

    probs must have K + 1 non-negative entries summing to 1 within 1e-3
    (then renormalized exactly); confidence is clamped to [0, 1].
    """
    vec = np.asarray(probs, dtype=np.float64)
    if vec.shape != (num_labels + 1,):
        raise ValidationError(
            f"score for hypothesis {hyp_id}: expected {num_labels + 1} probs, got {vec.shape}")
    if np.any(vec < 0.0) or not np.all(np.isfinite(vec)):
        raise ValidationError(f"score for hypothesis {hyp_id}: probs must be finite and >= 0")
    total = float(vec.sum())
    if abs(total - 1.0) > 1e-3:
        raise ValidationError(
            f"score for hypothesis {hyp_id}: probs sum to {total:.6f}, outside 1 +- 1e-3")
    vec = vec / total
    conf = min(1.0, max(0.0, float(confidence)))
    return ScoreRecord(int(hyp_id), tuple(float(v) for v in vec), conf)


# ============================================================
# Features
# ============================================================

@dataclass(frozen=True)
class FeatureVector:
    volume_ratio: float
    bbox_diameter: float
    centroid: tuple[float, float, float]
    pca_extents: tuple[float, float, float]
    coarse_occupancy: tuple[float, ...]  # COARSE_CELLS**3 fractions

    def vector(self) -> np.ndarray:
        return np.concatenate([
            [self.volume_ratio, self.bbox_diameter],
            self.centroid,
            self.pca_extents,
            self.coarse_occupancy,
        ])


FEATURE_DIM = 2 + 3 + 3 + COARSE_CELLS ** 3


def extract_features(geometry: GroupGeometry, members) -> FeatureVector:
    members = sorted(set(int(m) for m in members))
    if not members:
        raise ValidationError("hypothesis has no members")
    vox = geometry.voxels(members)
    if vox.size == 0:
        raise ValidationError("zero-volume hypothesis")
    r = geometry.resolution
    centers = np.stack([
        (vox % r) + 0.5,
        ((vox // r) % r) + 0.5,
        (vox // (r * r)) + 0.5,
    ], axis=1) / r

    centroid = centers.mean(axis=0)
    if len(centers) > 1:
        cov = np.cov(centers.T)
        eig = np.linalg.eigvalsh(cov)
        extents = np.sqrt(np.clip(eig, 0.0, None))[::-1]
    else:
        extents = np.zeros(3)

    meshes = [geometry.meshes[m] for m in members]
    verts = np.concatenate([v for v, _ in meshes])
    frame = bounding_box(verts)
    diameter = float(np.linalg.norm(frame.extents()))

    local = voxelize(meshes, frame.cube(), HYPOTHESIS_RESOLUTION)
    block = HYPOTHESIS_RESOLUTION // COARSE_CELLS
    dense = local.to_dense().reshape(
        COARSE_CELLS, block, COARSE_CELLS, block, COARSE_CELLS, block)
    coarse = dense.mean(axis=(1, 3, 5)).reshape(-1)

    return FeatureVector(
        volume_ratio=vox.size / geometry.shape_count,
        bbox_diameter=diameter,
        centroid=tuple(float(v) for v in centroid),
        pca_extents=tuple(float(v) for v in extents),
        coarse_occupancy=tuple(float(v) for v in coarse),
    )


# ============================================================
# Builtin learner
# ============================================================

@dataclass(frozen=True)
class BuiltinTrainConfig:
    iterations: int = 600
    learning_rate: float = 0.5
    l2: float = 1e-4
    ridge: float = 1e-3


@dataclass
class BuiltinModel:
    num_labels: int
    feature_mean: np.ndarray
    feature_std: np.ndarray
    weights: np.ndarray  # (K + 1, D)
    bias: np.ndarray     # (K + 1,)
    ridge_weights: np.ndarray  # (D,)
    ridge_bias: float
    seed: int

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_mean) / self.feature_std

    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(probs (n, K + 1), confidence (n,)) for a feature matrix."""
        xs = self._standardize(np.atleast_2d(features))
        logits = xs @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        ex = np.exp(logits)
        probs = ex / ex.sum(axis=1, keepdims=True)
        conf = np.clip(xs @ self.ridge_weights + self.ridge_bias, 0.0, 1.0)
        return probs, conf

    def to_json(self) -> str:
        doc = {
            "kind": "partwise-builtin-scorer",
            "num_labels": self.num_labels,
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "ridge_weights": self.ridge_weights.tolist(),
            "ridge_bias": self.ridge_bias,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "BuiltinModel":
        doc = json.loads(text)
        if doc.get("kind") != "partwise-builtin-scorer":
            raise ValidationError("not a builtin scorer model file")
        return BuiltinModel(
            num_labels=int(doc["num_labels"]),
            feature_mean=np.asarray(doc["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(doc["feature_std"], dtype=np.float64),
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            ridge_weights=np.asarray(doc["ridge_weights"], dtype=np.float64),
            ridge_bias=float(doc["ridge_bias"]),
            seed=int(doc["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @staticmethod
    def load(path) -> "BuiltinModel":
        with open(path, "r", encoding="utf-8") as fh:
            return BuiltinModel.from_json(fh.read())


def train_builtin(features: np.ndarray, labels: np.ndarray, confidences: np.ndarray,
                  num_labels: int, seed: int,
                  config: BuiltinTrainConfig = BuiltinTrainConfig()) -> BuiltinModel:
    """Fit the builtin scorer. Deterministic: full-batch gradient descent from
    zeros for the classifier, a closed-form ridge solve for confidence. The
    seed is recorded in the model for provenance; the fit is convex and does
    not consume it.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    conf = np.asarray(confidences, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("training needs a non-empty feature matrix")
    if len(y) != len(x) or len(conf) != len(x):
        raise ValidationError("features, labels and confidences must align")
    if y.min() < 0 or y.max() > num_labels:
        raise ValidationError(f"labels must lie in 0..{num_labels}")
    if len(np.unique(y)) < 2:
        raise ValidationError("training needs at least two distinct classes")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-9] = 1.0
    xs = (x - mean) / std
    n, dim = xs.shape
    classes = num_labels + 1

    onehot = np.zeros((n, classes))
    onehot[np.arange(n), y] = 1.0
    weights = np.zeros((classes, dim))
    bias = np.zeros(classes)
    for _ in range(config.iterations):
        logits = xs @ weights.T + bias
        logits -= logits.max(axis=1, keepdims=True)
        ex = np.exp(logits)
        probs = ex / ex.sum(axis=1, keepdims=True)
        delta = probs - onehot
        weights -= config.learning_rate * (delta.T @ xs / n + config.l2 * weights)
        bias -= config.learning_rate * delta.mean(axis=0)

    design = np.concatenate([xs, np.ones((n, 1))], axis=1)
    gram = design.T @ design + config.ridge * np.eye(dim + 1)
    sol = np.linalg.solve(gram, design.T @ conf)

    return BuiltinModel(num_labels, mean, std, weights, bias,
                        sol[:-1], float(sol[-1]), seed)


# ============================================================
# Scoring entry point
# ============================================================

@dataclass(frozen=True)
class ScorerConfig:
    backend: str = "builtin"  # builtin | external | oracle
    model_path: str | None = None
    command: str | None = None
    resolution: int = HYPOTHESIS_RESOLUTION
    workdir: str | None = None
    truth_resolution: int = 200

    def validate(self) -> None:
        if self.backend not in ("builtin", "external", "oracle"):
            raise ConfigError(f"unknown scorer backend {self.backend!r}")
        if self.backend == "builtin" and not self.model_path:
            raise ConfigError("builtin scorer needs a model path")
        if self.backend == "external" and not self.command:
            raise ConfigError("external scorer needs a command template")


def _num_labels(assembly: Assembly) -> int:
    if assembly.label_set is None:
        raise ValidationError("assembly has no label set; pass a manifest")
    return assembly.label_set.size


def score_oracle(assembly: Assembly, hypotheses,
                 truth: GroundTruthContext | None = None,
                 geometry: GroupGeometry | None = None,
                 truth_resolution: int = 200) -> list[ScoreRecord]:
    """Ground-truth scores: one-hot class vector plus best-part IoU confidence."""
    k = _num_labels(assembly)
    truth = truth or GroundTruthContext(assembly, truth_resolution, geometry)
    out = []
    for hyp in hypotheses:
        label, conf = truth.assign(hyp.members)
        probs = [0.0] * (k + 1)
        probs[label] = 1.0
        out.append(validate_score_record(hyp.id, probs, conf, k))
    return out


def score_builtin(assembly: Assembly, hypotheses, model: BuiltinModel,
                  geometry: GroupGeometry | None = None) -> list[ScoreRecord]:
    geometry = geometry or GroupGeometry(assembly)
    if not hypotheses:
        return []
    feats = np.stack([extract_features(geometry, h.members).vector() for h in hypotheses])
    probs, conf = model.predict(feats)
    return [validate_score_record(h.id, probs[i], conf[i], model.num_labels)
            for i, h in enumerate(hypotheses)]


def write_score_header(path, num_labels: int, hyp_ids) -> None:
    """The JSON header handed to external scorers next to the volume file."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"K": int(num_labels), "hyp_ids": [int(i) for i in hyp_ids]},
                  fh, sort_keys=True)
        fh.write("\n")


def score_external(assembly: Assembly, hypotheses, command: str,
                   resolution: int = HYPOTHESIS_RESOLUTION,
                   workdir: str | None = None) -> list[ScoreRecord]:
    """Run an external scorer over the MCV1 volume file protocol.

    The command template must reference {volumes}, {header} and {out}. The
    process must exit 0 and write one score line per hypothesis id.
    """
    for placeholder in ("{volumes}", "{header}", "{out}"):
        if placeholder not in command:
            raise ConfigError(f"external command template is missing {placeholder}")
    k = _num_labels(assembly)
    hyp_ids = [h.id for h in hypotheses]

    with tempfile.TemporaryDirectory(dir=workdir, prefix="partwise-ext-") as tmp:
        vol_path = os.path.join(tmp, "volumes.mcv")
        header_path = os.path.join(tmp, "header.json")
        out_path = os.path.join(tmp, "scores.jsonl")
        write_mcv1(vol_path,
                   [hypothesis_volumes(assembly, h.members, resolution) for h in hypotheses],
                   resolution)
        write_score_header(header_path, k, hyp_ids)
        filled = command.format(volumes=vol_path, header=header_path, out=out_path)
        try:
            proc = subprocess.run(shlex.split(filled), capture_output=True, text=True)
        except OSError as exc:
            raise TransportError(f"external scorer failed to start: {exc}")
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-5:]
            raise TransportError(
                f"external scorer exited {proc.returncode}: " + " | ".join(tail))
        if not os.path.exists(out_path):
            raise TransportError("external scorer wrote no output file")
        raw = read_scores(out_path)

    by_id = {}
    for rec in raw:
        if rec.hypothesis_id in by_id:
            raise ValidationError(f"external scores repeat hypothesis {rec.hypothesis_id}")
        by_id[rec.hypothesis_id] = rec
    if set(by_id) != set(hyp_ids):
        raise ValidationError("external scores do not cover exactly the requested hypotheses")
    return [validate_score_record(h.id, by_id[h.id].probs, by_id[h.id].confidence, k)
            for h in hypotheses]


def score(assembly: Assembly, hypotheses, config: ScorerConfig,
          geometry: GroupGeometry | None = None,
          truth: GroundTruthContext | None = None) -> list[ScoreRecord]:
    """Score hypotheses with the configured backend; order follows the input."""
    config.validate()
    if config.backend == "oracle":
        return score_oracle(assembly, hypotheses, truth, geometry,
                            config.truth_resolution)
    if config.backend == "builtin":
        model = BuiltinModel.load(config.model_path)
        return score_builtin(assembly, hypotheses, model, geometry)
    return score_external(assembly, hypotheses, config.command,
                          config.resolution, config.workdir)


# ============================================================
# Score JSONL
# ============================================================

def write_scores(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "hyp_id": rec.hypothesis_id,
                "probs": list(rec.probs),
                "confidence": rec.confidence,
            }, separators=(",", ":")))
            fh.write("\n")


def read_scores(path) -> list[ScoreRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"score line {line_no}: bad JSON ({exc})")
            try:
                rec = ScoreRecord(
                    hypothesis_id=int(doc["hyp_id"]),
                    probs=tuple(float(v) for v in doc["probs"]),
                    confidence=float(doc["confidence"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"score line {line_no}: {exc}")
            out.append(rec)
    return out
