"""Shared builders for solver and acceptance tests."""

from __future__ import annotations

import numpy as np

from partwise.crf import Clique, CrfProblem, gamma_max
from partwise.rng import Xoshiro256


def random_problem(seed: int, max_components: int = 8, max_labels: int = 3,
                   max_cliques: int = 5, lam: float = 0.1) -> CrfProblem:
    """Small random CRF instance; sized for exhaustive enumeration."""
    rng = Xoshiro256(seed)
    n = 2 + rng.randint(max_components - 1)
    k = 2 + rng.randint(max_labels - 1)
    unaries = np.array([[2.0 * rng.uniform() for _ in range(k)] for _ in range(n)])

    cliques = []
    for _ in range(rng.randint(max_cliques + 1)):
        size = 2 + rng.randint(n - 1)
        members = tuple(sorted(rng.sample(list(range(n)), size)))
        raw = [rng.uniform() + 1e-6 for _ in range(k)]
        total = sum(raw)
        probs = tuple(v / total for v in raw)
        cliques.append(Clique(
            members=members,
            probs=probs,
            gamma_max=gamma_max(probs, size),
            eta=0.2 * size,
        ))

    problem = CrfProblem(n, k, lam, unaries, tuple(cliques))
    problem.validate()
    return problem
