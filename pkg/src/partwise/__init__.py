"""Part hypothesis generation, scoring, and CRF labeling for shape assemblies."""

from .assembly import (Assembly, Component, LabelSet, Normalization,
                       export_labeled_obj, load_assembly, load_manifest,
                       load_obj, write_manifest, write_obj)
from .correspond import Alignment, CorrespondenceMap, align, match_components
from .crf import (CrfConfig, CrfProblem, Labeling, build_problem,
                  consistency_potential, gamma_max, label_entropy, solve,
                  solve_exhaustive, total_energy, unary_potential)
from .errors import (ConfigError, ParseError, PartwiseError, TransportError,
                     ValidationError)
from .evaluation import (DatasetReport, RecallCurve, ShapeReport,
                         aggregate_reports, hypothesis_recall, labeling_iou,
                         recall_csv, sweep_budgets, sweep_csv)
from .hypothesis import (GroundTruthContext, GroundTruthPart, GroupGeometry,
                         GroupingHierarchy, PartHypothesis, assign_ground_truth,
                         augment, build_hierarchies, build_hierarchy,
                         center_distance, contact_ratio, ground_truth_parts,
                         group_size, read_hypotheses, select_hypotheses,
                         write_hypotheses)
from .pipeline import LabelResult, RunConfig, ShapePipeline, label_components
from .rng import Xoshiro256
from .scoring import (BuiltinModel, FeatureVector, ScoreRecord, ScorerConfig,
                      extract_features, read_scores, score, train_builtin,
                      validate_score_record, write_scores)
from .synth import SynthConfig, synthesize_assembly, synthesize_dataset
from .voxel import (Box, HypothesisVolumes, VoxelGrid, contact_volume, dilate,
                    hypothesis_volumes, iou, read_mcv1, voxelize, write_mcv1)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
