"""Shared builders for randomized test instances."""

import numpy as np

from nidslab.netgraph import generate_graph, metropolis_weights
from nidslab.objectives import LeastSquaresTerm, ProblemInstance, ProxTerm, centralized_reference


def random_problem(rng, n, p, m=None, l1=False, strongly_convex=True):
    """Small least-squares problem with random data; optional l1 terms of random weight."""
    m = m or (p + 2 if strongly_convex else max(1, p - 1))
    smooth = tuple(LeastSquaresTerm(rng.standard_normal((m, p)), rng.standard_normal(m)) for _ in range(n))
    if l1:
        prox = tuple(ProxTerm("l1", float(rng.uniform(0.01, 0.3))) for _ in range(n))
    else:
        prox = tuple(ProxTerm() for _ in range(n))
    prob = ProblemInstance(smooth, prox)
    ref = centralized_reference(prob, tol=1e-14, max_iter=2_000_000)
    return prob.with_reference(ref.x)


def random_mixing(rng, n):
    if n == 1:
        return metropolis_weights(generate_graph(1, "complete"))
    seed = int(rng.integers(1 << 30))
    return metropolis_weights(generate_graph(n, "erdos_renyi", seed=seed, prob=min(1.0, 3.0 / n + 0.2)))


