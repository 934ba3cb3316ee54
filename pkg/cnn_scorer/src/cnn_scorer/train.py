"""Training loop, checkpointing, and evaluation helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import Dataset, LabelBalancedSampler, orientation_augment
from .errors import TrainingError
from .model import HypothesisNet, predict


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    orientation: bool = True
    eval_every: int = 10
    stop_error: float | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.iterations < 1:
            raise TrainingError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.eval_every < 1:
            raise TrainingError("eval_every must be >= 1")


@dataclass
class TrainResult:
    model: HypothesisNet
    losses: list[float] = field(default_factory=list)
    errors: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.errors[-1][1] if self.errors else 1.0


def classification_error(model: HypothesisNet, dataset: Dataset) -> float:
    probs, _ = predict(model, dataset.volumes)
    predicted = probs.argmax(axis=1)
    return float((predicted != dataset.labels).mean())


def train(dataset: Dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit a fresh network; returns it with the loss and error history.

    The error history holds (iteration, training classification error)
    pairs measured every eval_every iterations on the (possibly
    orientation-augmented) training set; stop_error ends training early
    once the measured error falls at or below it.
    """
    config.validate()
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if config.orientation:
        dataset = orientation_augment(dataset)

    torch.manual_seed(config.seed)
    model = HypothesisNet(dataset.num_labels)
    sampler = LabelBalancedSampler(dataset.labels, config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    ce = nn.CrossEntropyLoss()

    volumes = torch.from_numpy(dataset.volumes)
    labels = torch.from_numpy(dataset.labels)
    confs = torch.from_numpy(dataset.confidences)

    result = TrainResult(model)
    for step in range(1, config.iterations + 1):
        model.train()
        idx = torch.from_numpy(sampler.batch(config.batch_size))
        logits, confidence = model.forward_tensors(volumes[idx])
        cost = ce(logits, labels[idx]) + nn.functional.smooth_l1_loss(
            confidence, confs[idx])
        optimizer.zero_grad()
        cost.backward()
        optimizer.step()
        result.losses.append(float(cost.detach()))

        if step % config.eval_every == 0 or step == config.iterations:
            error = classification_error(model, dataset)
            result.errors.append((step, error))
            if config.stop_error is not None and error <= config.stop_error:
                break
    model.eval()
    return result


def save_checkpoint(path, model: HypothesisNet) -> None:
    torch.save({"num_labels": model.num_labels,
                "state": model.state_dict()}, path)


def load_checkpoint(path) -> HypothesisNet:
    # torch.load on a corrupt file can fail with almost anything (pickle,
    # zip, struct, key errors...), so the whole load is one boundary.
    try:
        doc = torch.load(path, map_location="cpu", weights_only=True)
        model = HypothesisNet(int(doc["num_labels"]))
        model.load_state_dict(doc["state"])
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise TrainingError(f"bad checkpoint: {exc}")
    model.eval()
    return model
