"""Three-tower volumetric network with label and confidence heads."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import FormatError
from .formats import CHANNELS, RESOLUTION

FEATURE_DIM = 2048


class _Tower(nn.Module):
    """Small strided conv stack over one binary 30^3 channel.

    Three stride-2 blocks take 30 -> 15 -> 8 -> 4, ending in a 16 x 4^3
    = 1024-wide flat feature. The stack is deliberately modest; the fixed
    parts of the architecture are the three towers, the concatenated
    fusion, the 2048-dim shared feature, and the two heads.
    """

    def __init__(self):
        super().__init__()
        self.blocks = nn.Sequential(
            nn.Conv3d(1, 4, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(4, 8, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(8, 16, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x).flatten(start_dim=1)


class HypothesisNet(nn.Module):
    """One tower per volume channel, fused into a joint prediction.

    forward_tensors returns (logits over K+1, confidence in [0, 1]).
    """

    def __init__(self, num_labels: int):
        super().__init__()
        if num_labels < 1:
            raise ValueError("need at least one real label")
        self.num_labels = num_labels
        self.towers = nn.ModuleList([_Tower() for _ in range(CHANNELS)])
        tower_dim = 16 * 4 ** 3
        self.fuse = nn.Sequential(
            nn.Linear(CHANNELS * tower_dim, FEATURE_DIM),
            nn.ReLU(inplace=True),
        )
        self.label_head = nn.Linear(FEATURE_DIM, num_labels + 1)
        self.confidence_head = nn.Linear(FEATURE_DIM, 1)

    def features(self, volumes: torch.Tensor) -> torch.Tensor:
        """Shared 2048-dim feature both heads read from."""
        feats = [tower(volumes[:, i:i + 1]) for i, tower in enumerate(self.towers)]
        return self.fuse(torch.cat(feats, dim=1))

    def forward_tensors(self, volumes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        shared = self.features(volumes)
        logits = self.label_head(shared)
        confidence = torch.sigmoid(self.confidence_head(shared)).squeeze(1)
        return logits, confidence

    forward = forward_tensors


def check_volume_batch(volumes: np.ndarray) -> np.ndarray:
    """Validate an (N, 3, 30, 30, 30) batch and hand back float32."""
    volumes = np.asarray(volumes)
    if volumes.ndim != 5:
        raise FormatError(f"expected a 5-d volume batch, got shape {volumes.shape}")
    n, channels, *dims = volumes.shape
    if channels != CHANNELS:
        raise FormatError(f"expected {CHANNELS} channels, got {channels}")
    if dims != [RESOLUTION] * 3:
        raise FormatError(f"expected {RESOLUTION}^3 volumes, got {dims}")
    return volumes.astype(np.float32, copy=False)


@torch.no_grad()
def predict(model: HypothesisNet, volumes: np.ndarray,
            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities over K+1 and confidences for a volume batch."""
    volumes = check_volume_batch(volumes)
    model.eval()
    probs = []
    confs = []
    for start in range(0, volumes.shape[0], batch_size):
        chunk = torch.from_numpy(volumes[start:start + batch_size])
        logits, conf = model.forward_tensors(chunk)
        probs.append(torch.softmax(logits, dim=1).numpy())
        confs.append(conf.numpy())
    if not probs:
        k = model.num_labels
        return np.empty((0, k + 1)), np.empty((0,))
    return np.concatenate(probs), np.concatenate(confs)


def loss(probs, confidence, gt_label, gt_score):
    """Joint cost: cross-entropy at the true label plus smooth L1 on the score.

    Accepts single examples or batches (averaged). Zero exactly when the
    probability at the true label is 1 and the confidence equals the
    target score.
    """
    probs_t = torch.as_tensor(probs, dtype=torch.float64)
    conf_t = torch.as_tensor(confidence, dtype=torch.float64)
    labels_t = torch.as_tensor(gt_label, dtype=torch.int64)
    score_t = torch.as_tensor(gt_score, dtype=torch.float64)
    squeeze = probs_t.ndim == 1
    if squeeze:
        probs_t = probs_t.unsqueeze(0)
        conf_t = conf_t.reshape(1)
        labels_t = labels_t.reshape(1)
        score_t = score_t.reshape(1)
    if labels_t.min() < 0 or labels_t.max() >= probs_t.shape[1]:
        raise ValueError("ground-truth label outside [0, K]")
    if score_t.min() < 0 or score_t.max() > 1:
        raise ValueError("ground-truth score outside [0, 1]")
    picked = probs_t.gather(1, labels_t.unsqueeze(1)).squeeze(1)
    cls = -torch.log(picked)
    err = torch.abs(conf_t - score_t)
    reg = torch.where(err < 1.0, 0.5 * err ** 2, err - 0.5)
    return float((cls + reg).mean())
