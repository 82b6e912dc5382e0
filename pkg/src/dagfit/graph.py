"""Learnable edge probabilities, discrete adjacency sampling, acyclicity.

Graphs over d nodes are dense boolean/0-1 matrices with entry (i, j) meaning
an edge i -> j. Self-loops are structurally excluded: the diagonal never
carries probability mass and is never sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, const


def offdiag_mask(d):
    return 1.0 - np.eye(d)


class EdgeLogits:
    """d x d matrix of edge-existence logits (sigmoid gives edge probability)."""

    def __init__(self, d, init=0.0):
        self.d = d
        self.lam = Tensor(np.full((d, d), float(init)), requires_grad=True)
        self._offdiag = offdiag_mask(d)

    def probs(self):
        """sigma(lambda) with a zeroed diagonal, as a plain array."""
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-self.lam.data))
        return p * self._offdiag

    def probs_tensor(self):
        """Differentiable sigma(lambda) with the diagonal masked out."""
        return ad.mul(ad.sigmoid(self.lam), const(self._offdiag))


@dataclass
class BinaryAdjacency:
    """A hard 0/1 adjacency sample plus the tensor that carries its gradient."""

    m: np.ndarray
    tensor: Tensor


def sample_adjacency(logits: EdgeLogits, rng) -> BinaryAdjacency:
    """Straight-through Bernoulli sample of the adjacency matrix.

    Forward value is 1[sigma(lambda + L) > 0.5] with L standard Logistic
    noise; the gradient w.r.t. lambda flows through the soft sample
    sigma(lambda + L) (temperature one).
    """
    if not np.all(np.isfinite(logits.lam.data * logits._offdiag)):
        raise ValueError("sample_adjacency: non-finite off-diagonal logits")
    noise = rng.logistic(size=(logits.d, logits.d))
    soft = ad.mul(ad.sigmoid(ad.add(logits.lam, const(noise))), const(logits._offdiag))
    hard = (soft.data > 0.5).astype(np.float64)
    return BinaryAdjacency(m=hard, tensor=ad.straight_through(hard, soft))


def acyclicity(adj):
    """tr(e^A) - d; zero exactly when the nonnegative matrix A is a DAG.

    Accepts a Tensor (differentiable, gradient (e^A)^T) or a plain array.
    """
    t = adj if isinstance(adj, Tensor) else const(np.asarray(adj, dtype=np.float64))
    if np.any(t.data < 0):
        raise ValueError("acyclicity: entries must be nonnegative")
    out = ad.trace_expm(t)
    return out if isinstance(adj, Tensor) else float(out.data)


@dataclass
class DagEstimate:
    """Boolean edge matrix; callers must check acyclicity where required."""

    edges: np.ndarray

    @property
    def d(self):
        return self.edges.shape[0]


def threshold_graph(logits: EdgeLogits, cutoff=0.5) -> DagEstimate:
    """Edge (i, j) present iff sigma(lambda_ij) > cutoff (strict), i != j."""
    return DagEstimate(edges=logits.probs() > cutoff)


def is_acyclic(g) -> bool:
    """Kahn's peeling: true iff repeatedly removing in-degree-0 nodes empties g."""
    edges = g.edges if isinstance(g, DagEstimate) else np.asarray(g)
    edges = edges.astype(bool)
    d = edges.shape[0]
    indeg = edges.sum(axis=0)
    alive = np.ones(d, dtype=bool)
    queue = [i for i in range(d) if indeg[i] == 0]
    removed = 0
    while queue:
        i = queue.pop()
        alive[i] = False
        removed += 1
        for j in np.flatnonzero(edges[i]):
            if alive[j]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
    return removed == d


def save_adjacency_csv(path, matrix, binary=True):
    m = np.asarray(matrix)
    fmt = "%d" if binary else "%.17g"
    np.savetxt(path, m.astype(int) if binary else m, fmt=fmt, delimiter=",")


def load_adjacency_csv(path):
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise ValueError(f"{path}: malformed adjacency CSV ({e})") from None
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{path}: adjacency matrix must be square, got {m.shape}")
    return m
