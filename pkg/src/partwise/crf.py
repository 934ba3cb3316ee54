"""Higher-order CRF over components with hypothesis-consistency cliques.

The energy of a labeling x (labels 1..K per component) is

    E(x) = sum_c phi_c(x_c) + lam * sum_h psi_h(x_h)

phi is a soft-max style unary built from the hypotheses covering a
component: each covering hypothesis contributes exp(w * s * p_k), where w is
the component/hypothesis volume ratio, s the scorer confidence and p_k the
hypothesis's probability for label k renormalized over the K real labels.
The denominator sums the same terms over all labels, so the per-component
probabilities sum to one by construction.

psi is a robust consistency clique per hypothesis: with N the smallest
number of members that would have to change label to make the clique
uniform, psi ramps linearly as N * gamma / eta up to the truncation
threshold eta = eta_fraction * |h| and is the constant gamma beyond it.
gamma = exp(-G / |h|) with G the label entropy of the hypothesis, so pure
hypotheses press harder than ambiguous ones.

Minimization is alpha-beta swap: each move restricts to the components
currently labeled alpha or beta and solves one binary min-cut. A clique's
move energy is a concave function of the number of members taking alpha,
encoded exactly (whenever eta_fraction <= 0.5, always the case at the
default 0.2) with two auxiliary nodes carrying the truncated linear costs.
Proposals are re-scored with the exact float energy and accepted only on a
strict decrease, so the energy trace is strictly decreasing regardless of
the integer capacity scaling.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .errors import ValidationError

_CAP_SCALE = 10 ** 8


@dataclass(frozen=True)
class CrfConfig:
    lam: float = 0.1
    eta_fraction: float = 0.2
    top_k: int | str = "all"  # hypotheses per component feeding the unary
    drop_null_above: float = 0.9

    def validate(self) -> None:
        if self.lam < 0.0:
            raise ValidationError("lam must be >= 0")
        if not 0.0 < self.eta_fraction < 1.0:
            raise ValidationError("eta_fraction must lie in (0, 1)")
        if self.top_k != "all" and (not isinstance(self.top_k, int) or self.top_k < 1):
            raise ValidationError("top_k must be 'all' or a positive integer")


@dataclass(frozen=True)
class Clique:
    members: tuple[int, ...]
    probs: tuple[float, ...]  # length K, renormalized over real labels
    gamma_max: float
    eta: float


@dataclass(frozen=True)
class CrfProblem:
    num_components: int
    num_labels: int
    lam: float
    unaries: np.ndarray  # (n, K) float64
    cliques: tuple[Clique, ...]
    uncovered: tuple[int, ...] = ()

    def validate(self) -> None:
        if self.num_labels < 1:
            raise ValidationError("need at least one label")
        if self.unaries.shape != (self.num_components, self.num_labels):
            raise ValidationError("unary table shape mismatch")
        if not np.all(np.isfinite(self.unaries)):
            raise ValidationError("unary potentials must be finite")
        for cl in self.cliques:
            if not cl.members:
                raise ValidationError("clique with no members")
            if min(cl.members) < 0 or max(cl.members) >= self.num_components:
                raise ValidationError("clique member out of range")
            if len(cl.probs) != self.num_labels:
                raise ValidationError("clique probs must have K entries")
            if not 0.0 < cl.gamma_max <= 1.0:
                raise ValidationError("gamma_max must lie in (0, 1]")
            if cl.eta <= 0.0:
                raise ValidationError("eta must be positive")


@dataclass(frozen=True)
class Labeling:
    assignment: tuple[int, ...]  # labels in 1..K
    energy: float
    accepted_energies: tuple[float, ...] = field(default=(), compare=False)


# ============================================================
# Potentials
# ============================================================

def label_entropy(probs) -> float:
    """Shannon entropy with the 0 * log 0 = 0 convention."""
    g = 0.0
    for p in probs:
        if p > 0.0:
            g -= p * math.log(p)
    return g


def gamma_max(probs, clique_size: int) -> float:
    """exp(-entropy / clique size); 1.0 exactly for a one-hot distribution."""
    if clique_size < 1:
        raise ValidationError("clique size must be >= 1")
    return math.exp(-label_entropy(probs) / clique_size)


def unary_potential(covering, num_labels: int, top_k="all") -> tuple[np.ndarray, np.ndarray]:
    """Per-component label distribution and unary cost.

    covering: list of (w, s, probs) for the hypotheses containing the
    component, probs renormalized over the K real labels. The top_k entries
    with the highest confidence feed both the numerator and the denominator.
    Returns (P, phi) with P summing to 1 and phi = -log P. With no covering
    hypothesis P is uniform.
    """
    if num_labels < 1:
        raise ValidationError("need at least one label")
    if not covering:
        p = np.full(num_labels, 1.0 / num_labels)
        return p, -np.log(p)
    ranked = sorted(range(len(covering)), key=lambda i: (-covering[i][1], i))
    if top_k != "all":
        ranked = ranked[: int(top_k)]
    w = np.array([covering[i][0] for i in ranked], dtype=np.float64)
    s = np.array([covering[i][1] for i in ranked], dtype=np.float64)
    p = np.array([covering[i][2] for i in ranked], dtype=np.float64)
    if p.shape[1] != num_labels:
        raise ValidationError("covering probs must have K entries")
    exponents = w[:, np.newaxis] * s[:, np.newaxis] * p
    exponents -= exponents.max()  # uniform shift; cancels in the ratio
    ex = np.exp(exponents)
    dist = ex.sum(axis=0) / ex.sum()
    return dist, -np.log(dist)


def consistency_potential(clique: Clique, assignment) -> float:
    """Robust clique cost for one hypothesis under a labeling."""
    counts: dict[int, int] = {}
    for m in clique.members:
        lbl = assignment[m]
        counts[lbl] = counts.get(lbl, 0) + 1
    n_min = len(clique.members) - max(counts.values())
    if n_min <= clique.eta:
        return n_min * clique.gamma_max / clique.eta
    return clique.gamma_max


def total_energy(problem: CrfProblem, assignment) -> float:
    assignment = tuple(int(a) for a in assignment)
    if len(assignment) != problem.num_components:
        raise ValidationError("assignment length mismatch")
    for a in assignment:
        if not 1 <= a <= problem.num_labels:
            raise ValidationError(f"label {a} out of range 1..{problem.num_labels}")
    energy = float(sum(problem.unaries[c, assignment[c] - 1]
                       for c in range(problem.num_components)))
    for clique in problem.cliques:
        energy += problem.lam * consistency_potential(clique, assignment)
    return energy


# ============================================================
# Problem assembly
# ============================================================

def build_problem(num_components: int, num_labels: int, scored_hypotheses,
                  config: CrfConfig = CrfConfig()) -> CrfProblem:
    """Turn scored hypotheses into a CRF instance.

    scored_hypotheses: list of (members, probs, confidence, hyp_volume,
    member_volumes) tuples, where probs has K + 1 entries (null first),
    hyp_volume is the hypothesis's voxel count and member_volumes aligns
    with members, so w = member_volume / hyp_volume. Hypotheses whose null
    mass exceeds the drop threshold are discarded up front. Components
    covered by nothing get a uniform unary and are flagged in `uncovered`.
    """
    config.validate()
    cliques: list[Clique] = []
    covering: list[list[tuple[float, float, np.ndarray]]] = [[] for _ in range(num_components)]

    for members, probs, conf, hyp_volume, member_volumes in scored_hypotheses:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (num_labels + 1,):
            raise ValidationError("scored hypothesis probs must have K + 1 entries")
        if probs[0] > config.drop_null_above:
            continue
        mass = probs[1:].sum()
        if mass <= 0.0:
            continue
        label_probs = probs[1:] / mass
        size = len(members)
        cliques.append(Clique(
            members=tuple(int(m) for m in members),
            probs=tuple(float(v) for v in label_probs),
            gamma_max=gamma_max(label_probs, size),
            eta=config.eta_fraction * size,
        ))
        if hyp_volume <= 0:
            raise ValidationError("hypothesis volume must be positive")
        for m, v in zip(members, member_volumes):
            covering[int(m)].append((v / hyp_volume, float(conf), label_probs))

    unaries = np.zeros((num_components, num_labels))
    uncovered = []
    for c in range(num_components):
        _, phi = unary_potential(covering[c], num_labels, config.top_k)
        unaries[c] = phi
        if not covering[c]:
            uncovered.append(c)

    problem = CrfProblem(num_components, num_labels, config.lam, unaries,
                         tuple(cliques), tuple(uncovered))
    problem.validate()
    return problem


# ============================================================
# Inference
# ============================================================

def initial_labeling(problem: CrfProblem) -> tuple[int, ...]:
    """Per-component unary argmin; ties go to the smallest label id."""
    return tuple(int(np.argmin(problem.unaries[c])) + 1
                 for c in range(problem.num_components))


def _swap_move(problem: CrfProblem, assignment: list[int],
               alpha: int, beta: int) -> list[int] | None:
    """Optimal reassignment of the alpha/beta components, via min-cut.

    Node convention: source side takes alpha, sink side takes beta. Returns
    the proposed labels for the movable components in component order, or
    None when the pair has no movable components.
    """
    movable = [c for c in range(problem.num_components)
               if assignment[c] in (alpha, beta)]
    if not movable:
        return None
    node_of = {c: i + 2 for i, c in enumerate(movable)}
    rows: list[int] = []
    cols: list[int] = []
    caps: list[int] = []

    def add_edge(u: int, v: int, cap: float) -> None:
        c = int(round(cap * _CAP_SCALE))
        if c > 0:
            rows.append(u)
            cols.append(v)
            caps.append(c)

    for c in movable:
        add_edge(node_of[c], 1, problem.unaries[c, alpha - 1])
        add_edge(0, node_of[c], problem.unaries[c, beta - 1])

    next_node = 2 + len(movable)
    for clique in problem.cliques:
        inside = [m for m in clique.members if m in node_of]
        m = len(inside)
        if m == 0:
            continue
        size = len(clique.members)
        fixed_counts: dict[int, int] = {}
        for mem in clique.members:
            if mem not in node_of:
                lbl = assignment[mem]
                fixed_counts[lbl] = fixed_counts.get(lbl, 0) + 1
        f_max = max(fixed_counts.values()) if fixed_counts else 0
        # Move-local clique cost as a function of a = #members taking alpha:
        #   slope * (B + min(a, m - a, T)),  T = min(size - f_max, eta) - B
        # with B = size - m fixed members. T <= m / 2 holds whenever
        # eta_fraction <= 0.5; beyond that the cap makes the move approximate
        # (still guarded by the exact-energy acceptance below).
        t = min(size - f_max, clique.eta) - (size - m)
        if t <= 1e-12:
            continue
        t = min(t, m / 2.0)
        slope = problem.lam * clique.gamma_max / clique.eta
        if slope <= 0.0:
            continue
        z_alpha = next_node
        next_node += 1
        add_edge(z_alpha, 1, slope * t)
        for mem in inside:
            add_edge(node_of[mem], z_alpha, slope)
        z_beta = next_node
        next_node += 1
        add_edge(0, z_beta, slope * t)
        for mem in inside:
            add_edge(z_beta, node_of[mem], slope)

    if not rows:
        return None

    # Symmetrize the sparsity (zero-capacity reverse arcs) so the residual
    # graph is representable on the same structure.
    all_rows = rows + cols
    all_cols = cols + rows
    all_caps = caps + [0] * len(caps)
    graph = coo_matrix((all_caps, (all_rows, all_cols)),
                       shape=(next_node, next_node), dtype=np.int64).tocsr()
    result = maximum_flow(graph, 0, 1)
    residual = graph - result.flow
    residual.data = np.where(residual.data > 0, 1, 0)
    residual.eliminate_zeros()
    reachable = set(breadth_first_order(residual, 0, directed=True,
                                        return_predecessors=False).tolist())
    proposal = list(assignment)
    for c in movable:
        proposal[c] = alpha if node_of[c] in reachable else beta
    return proposal


@dataclass(frozen=True)
class SolverOptions:
    max_sweeps: int = 20
    min_decrease: float = 1e-12


def solve(problem: CrfProblem, options: SolverOptions = SolverOptions()) -> Labeling:
    """Alpha-beta swap from the unary argmin labeling.

    Sweeps all label pairs; every proposed move is re-evaluated with the
    exact energy and accepted only on a strict decrease. Stops after a sweep
    without improvement or after max_sweeps.
    """
    problem.validate()
    current = list(initial_labeling(problem))
    energy = total_energy(problem, current)
    accepted = [energy]

    k = problem.num_labels
    for _ in range(options.max_sweeps):
        improved = False
        for alpha in range(1, k + 1):
            for beta in range(alpha + 1, k + 1):
                proposal = _swap_move(problem, current, alpha, beta)
                if proposal is None or proposal == current:
                    continue
                cand = total_energy(problem, proposal)
                if cand < energy - options.min_decrease:
                    current = proposal
                    energy = cand
                    accepted.append(cand)
                    improved = True
        if not improved:
            break

    return Labeling(tuple(current), energy, tuple(accepted))


def solve_exhaustive(problem: CrfProblem, limit: int = 10_000_000) -> Labeling:
    """Exact minimum by enumeration; ties break to the lexicographically
    smallest assignment. The energy of each candidate is computed inline and
    independently of total_energy, so this doubles as an oracle for it.
    """
    problem.validate()
    n = problem.num_components
    k = problem.num_labels
    if k ** n > limit:
        raise ValidationError(f"state space {k}**{n} exceeds enumeration limit")

    clique_data = [(cl.members, cl.gamma_max, cl.eta) for cl in problem.cliques]
    best = None
    best_energy = math.inf
    for labels in itertools.product(range(1, k + 1), repeat=n):
        e = 0.0
        for c in range(n):
            e += float(problem.unaries[c, labels[c] - 1])
        for members, gamma, eta in clique_data:
            tally: dict[int, int] = {}
            for m in members:
                tally[labels[m]] = tally.get(labels[m], 0) + 1
            dissent = len(members) - max(tally.values())
            e += problem.lam * (dissent * gamma / eta if dissent <= eta else gamma)
        if e < best_energy:
            best_energy = e
            best = labels
    return Labeling(best, best_energy)


# ============================================================
# Serialization (regression fixtures, oracle cross-checks)
# ============================================================

def problem_to_json(problem: CrfProblem) -> str:
    return json.dumps({
        "num_components": problem.num_components,
        "num_labels": problem.num_labels,
        "lam": problem.lam,
        "unaries": problem.unaries.tolist(),
        "uncovered": list(problem.uncovered),
        "cliques": [{
            "members": list(cl.members),
            "probs": list(cl.probs),
            "gamma_max": cl.gamma_max,
            "eta": cl.eta,
        } for cl in problem.cliques],
    }, sort_keys=True)


def problem_from_json(text: str) -> CrfProblem:
    try:
        doc = json.loads(text)
        problem = CrfProblem(
            num_components=int(doc["num_components"]),
            num_labels=int(doc["num_labels"]),
            lam=float(doc["lam"]),
            unaries=np.asarray(doc["unaries"], dtype=np.float64).reshape(
                int(doc["num_components"]), int(doc["num_labels"])),
            cliques=tuple(Clique(tuple(cl["members"]), tuple(cl["probs"]),
                                 float(cl["gamma_max"]), float(cl["eta"]))
                          for cl in doc["cliques"]),
            uncovered=tuple(doc.get("uncovered", [])),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad problem document: {exc}")
    problem.validate()
    return problem
