"""Dataset assembly, orientation augmentation, and batch sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .formats import TruthRecord


@dataclass(frozen=True)
class Dataset:
    """Aligned training arrays; volumes are (N, 3, R, R, R) float32."""
    volumes: np.ndarray
    labels: np.ndarray       # (N,) int64 in [0, K]
    confidences: np.ndarray  # (N,) float32 in [0, 1]
    num_labels: int

    def __len__(self) -> int:
        return self.volumes.shape[0]


def build_dataset(volumes: np.ndarray, hyp_ids, truth: list[TruthRecord],
                  num_labels: int) -> Dataset:
    """Pair exported volumes with their ground-truth records by hypothesis id."""
    if volumes.shape[0] == 0:
        raise TrainingError("empty dataset")
    if volumes.shape[0] != len(hyp_ids):
        raise TrainingError("volume count disagrees with the header ids")
    by_id = {rec.hyp_id: rec for rec in truth}
    if len(by_id) != len(truth):
        raise TrainingError("ground truth repeats a hypothesis id")
    missing = [hid for hid in hyp_ids if hid not in by_id]
    if missing:
        raise TrainingError(f"ground truth missing for hypotheses {missing[:5]}")
    labels = np.array([by_id[hid].label for hid in hyp_ids], dtype=np.int64)
    confs = np.array([by_id[hid].confidence for hid in hyp_ids], dtype=np.float32)
    if labels.max() > num_labels:
        raise TrainingError(
            f"label {int(labels.max())} outside [0, {num_labels}]; "
            "dataset and label count disagree")
    return Dataset(volumes.astype(np.float32, copy=False), labels, confs,
                   num_labels)


def orientation_augment(dataset: Dataset) -> Dataset:
    """Expand each example into its four up-axis quarter turns.

    Volumes are indexed (channel, z, y, x), so a yaw is a rotation in the
    last two axes. Labels and confidences are carried over unchanged; the
    result has exactly 4x the input examples, originals first.
    """
    turns = [dataset.volumes]
    for k in range(1, 4):
        turns.append(np.ascontiguousarray(
            np.rot90(dataset.volumes, k=k, axes=(3, 4))))
    return Dataset(
        np.concatenate(turns),
        np.concatenate([dataset.labels] * 4),
        np.concatenate([dataset.confidences] * 4),
        dataset.num_labels,
    )


class LabelBalancedSampler:
    """Batches drawn label-uniform: pick a present label, then an example."""

    def __init__(self, labels: np.ndarray, seed: int):
        self._rng = np.random.default_rng(seed)
        self._present = np.unique(labels)
        self._pools = {int(lab): np.flatnonzero(labels == lab)
                       for lab in self._present}

    def batch(self, size: int) -> np.ndarray:
        picks = self._rng.choice(self._present, size=size)
        return np.array([self._rng.choice(self._pools[int(lab)])
                         for lab in picks], dtype=np.int64)
