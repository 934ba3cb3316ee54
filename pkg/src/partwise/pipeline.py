"""End-to-end glue: hypotheses -> scores -> CRF labeling for one shape."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .assembly import Assembly
from .crf import CrfConfig, CrfProblem, Labeling, build_problem, solve, SolverOptions
from .errors import ValidationError
from .hypothesis import (GROUPING_RESOLUTION, TRUTH_RESOLUTION, GroundTruthContext,
                         GroupGeometry, PartHypothesis, build_hierarchies,
                         select_hypotheses)
from .scoring import ScoreRecord, score_oracle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    budget: int = 1000
    lam: float = 0.1
    eta_fraction: float = 0.2
    top_k: int | str = "all"
    grouping_resolution: int = GROUPING_RESOLUTION
    eval_resolution: int = TRUTH_RESOLUTION
    max_sweeps: int = 20

    def crf(self) -> CrfConfig:
        return CrfConfig(lam=self.lam, eta_fraction=self.eta_fraction, top_k=self.top_k)


@dataclass(frozen=True)
class LabelResult:
    labels: dict[int, int]
    energy: float
    uncovered: tuple[int, ...]
    accepted_energies: tuple[float, ...]
    problem: CrfProblem = field(repr=False, compare=False, default=None)


def check_hypotheses_against(assembly: Assembly, hypotheses) -> None:
    """Structural consistency: member ids must index this assembly's components."""
    n = assembly.num_components
    for hyp in hypotheses:
        if not hyp.members:
            raise ValidationError(f"hypothesis {hyp.id} has no members")
        if min(hyp.members) < 0 or max(hyp.members) >= n:
            raise ValidationError(
                f"hypothesis {hyp.id} references component ids outside 0..{n - 1}; "
                "inputs do not belong to the same shape")


def scored_tuples(geometry: GroupGeometry, hypotheses, scores):
    """Pair hypotheses with their scores as build_problem input tuples."""
    if len(hypotheses) != len(scores):
        raise ValidationError("hypothesis and score counts differ")
    out = []
    for hyp, rec in zip(hypotheses, scores):
        if hyp.id != rec.hypothesis_id:
            raise ValidationError(
                f"score order mismatch: hypothesis {hyp.id} vs score {rec.hypothesis_id}")
        vol = geometry.volume(hyp.members)
        member_vols = [int(geometry.comp_counts[m]) for m in hyp.members]
        out.append((hyp.members, rec.probs, rec.confidence, vol, member_vols))
    return out


def label_components(assembly: Assembly, hypotheses, scores, config: RunConfig,
                     geometry: GroupGeometry | None = None) -> LabelResult:
    """Infer one label per component from scored hypotheses via the CRF."""
    check_hypotheses_against(assembly, hypotheses)
    if not scores:
        raise ValidationError("cannot label without scores")
    k = len(scores[0].probs) - 1
    for rec in scores:
        if len(rec.probs) != k + 1:
            raise ValidationError("score records disagree on the label count")
    if assembly.label_set is not None and assembly.label_set.size != k:
        raise ValidationError(
            f"scores carry {k} labels but the manifest defines {assembly.label_set.size}")

    geometry = geometry or GroupGeometry(assembly, config.grouping_resolution)
    problem = build_problem(assembly.num_components, k,
                            scored_tuples(geometry, hypotheses, scores),
                            config.crf())
    if problem.uncovered:
        logger.info("shape %s: %d components covered by no hypothesis",
                    assembly.id, len(problem.uncovered))
    labeling = solve(problem, SolverOptions(max_sweeps=config.max_sweeps))
    labels = {c: labeling.assignment[c] for c in range(assembly.num_components)}
    return LabelResult(labels, labeling.energy, problem.uncovered,
                       labeling.accepted_energies, problem)


class ShapePipeline:
    """Caches the per-shape stages so budget sweeps do not recompute them."""

    def __init__(self, assembly: Assembly, config: RunConfig = RunConfig()):
        self.assembly = assembly
        self.config = config
        self._geometry: GroupGeometry | None = None
        self._hierarchies = None
        self._truth: GroundTruthContext | None = None
        self._assign_cache: dict[frozenset, tuple[int, float]] = {}

    @property
    def geometry(self) -> GroupGeometry:
        if self._geometry is None:
            self._geometry = GroupGeometry(self.assembly, self.config.grouping_resolution)
        return self._geometry

    @property
    def hierarchies(self):
        if self._hierarchies is None:
            self._hierarchies = build_hierarchies(self.geometry)
        return self._hierarchies

    @property
    def truth(self) -> GroundTruthContext:
        if self._truth is None:
            self._truth = GroundTruthContext(self.assembly, self.config.eval_resolution,
                                             self.geometry)
        return self._truth

    def hypotheses(self, budget: int | None = None) -> list[PartHypothesis]:
        return select_hypotheses(self.hierarchies,
                                 budget if budget is not None else self.config.budget,
                                 self.config.seed)

    def oracle_scores(self, hypotheses) -> list[ScoreRecord]:
        k = self.assembly.label_set.size
        out = []
        for hyp in hypotheses:
            key = frozenset(hyp.members)
            hit = self._assign_cache.get(key)
            if hit is None:
                hit = self.truth.assign(hyp.members)
                self._assign_cache[key] = hit
            label, conf = hit
            probs = [0.0] * (k + 1)
            probs[label] = 1.0
            out.append(ScoreRecord(hyp.id, tuple(probs), conf))
        return out

    def label_with_oracle(self, budget: int | None = None) -> tuple[LabelResult, list[PartHypothesis]]:
        hyps = self.hypotheses(budget)
        scores = self.oracle_scores(hyps)
        return label_components(self.assembly, hyps, scores, self.config,
                                self.geometry), hyps
