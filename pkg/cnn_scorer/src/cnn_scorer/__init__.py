"""Volumetric CNN scorer for part hypotheses, fed by MCV1 volume files."""

from .data import Dataset, LabelBalancedSampler, build_dataset, orientation_augment
from .errors import FormatError, ScorerError, TrainingError
from .formats import (TruthRecord, read_header, read_truth, read_volumes,
                      write_scores, write_volumes)
from .model import FEATURE_DIM, HypothesisNet, check_volume_batch, loss, predict
from .train import (TrainConfig, TrainResult, classification_error,
                    load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"
