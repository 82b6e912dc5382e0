"""Graph-recovery metrics: SHD, SID, interventional Markov equivalence, NLL.

Graphs are (d, d) boolean adjacency matrices, entry (i, j) meaning i -> j.
SID counts ordered pairs (i, j) whose causal effect, estimated by adjusting
for i's parents in the estimate, is not guaranteed correct in the true
graph. Validity of the parent set as an adjustment set is decided by the
complete graphical criterion: it must avoid descendants of causal-path
nodes and block every proper non-causal path, the latter checked as a
d-separation in the graph with i's causal first edges removed.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import const
from .graph import is_acyclic
from .scores import _combine, _per_node_loglik

_TAIL, _HEAD = 0, 1


def _as_bool(g):
    m = np.asarray(g)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square adjacency matrix, got shape {m.shape}")
    return m.astype(bool)


def _check_pair(g_true, g_est):
    a, b = _as_bool(g_true), _as_bool(g_est)
    if a.shape != b.shape:
        raise ValueError(f"node counts differ: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def shd(g_true, g_est) -> int:
    """Edges that differ between two DAGs; a reversed edge counts once."""
    a, b = _check_pair(g_true, g_est)
    diff = a != b
    pair_diff = diff | diff.T
    return int(np.triu(pair_diff, k=1).sum())


def descendants(g, i):
    """Nodes reachable from i by a directed path (excluding i itself)."""
    g = _as_bool(g)
    seen = np.zeros(g.shape[0], dtype=bool)
    stack = list(np.flatnonzero(g[i]))
    while stack:
        v = stack.pop()
        if not seen[v]:
            seen[v] = True
            stack.extend(np.flatnonzero(g[v]))
    seen[i] = False
    return seen


def _all_descendants(g):
    return [descendants(g, i) for i in range(g.shape[0])]


def _ancestors_of_set(g, nodes):
    """nodes plus every ancestor of a node in the set (for collider opening)."""
    d = g.shape[0]
    seen = np.zeros(d, dtype=bool)
    stack = [v for v in range(d) if nodes[v]]
    while stack:
        v = stack.pop()
        if not seen[v]:
            seen[v] = True
            stack.extend(np.flatnonzero(g[:, v]))
    return seen


def d_connected(g, i, j, z_mask, banned=frozenset()):
    """Active-trail reachability from i to j given Z on DAG g.

    `banned` is a set of directed edges (u, v) removed from the graph before
    the check (used for the proper back-door reduction).
    """
    g = _as_bool(g)
    d = g.shape[0]
    an_z = _ancestors_of_set(g, z_mask)
    children = [np.flatnonzero(g[v]) for v in range(d)]
    parents = [np.flatnonzero(g[:, v]) for v in range(d)]

    def edge_ok(u, v):
        return (u, v) not in banned

    visited = np.zeros((d, 2), dtype=bool)
    stack = []
    for c in children[i]:
        if edge_ok(i, c):
            stack.append((c, _HEAD))
    for p in parents[i]:
        if edge_ok(p, i):
            stack.append((p, _TAIL))
    while stack:
        v, how = stack.pop()
        if v == j:
            return True
        if visited[v, how]:
            continue
        visited[v, how] = True
        if how == _HEAD:
            if not z_mask[v]:
                for w in children[v]:
                    if edge_ok(v, w):
                        stack.append((w, _HEAD))
            if an_z[v]:
                for u in parents[v]:
                    if edge_ok(u, v):
                        stack.append((u, _TAIL))
        else:
            if not z_mask[v]:
                for w in children[v]:
                    if edge_ok(v, w):
                        stack.append((w, _HEAD))
                for u in parents[v]:
                    if edge_ok(u, v):
                        stack.append((u, _TAIL))
    return False


def parent_adjustment_valid(g_true, i, j, z) -> bool:
    """Is Z a valid adjustment set for the effect of i on j in g_true?

    Complete criterion: (a) Z avoids causal-path nodes and their
    descendants; (b) Z blocks all proper non-causal paths, checked as
    d-separation once the first edge of every proper causal path from i is
    removed.
    """
    g = _as_bool(g_true)
    d = g.shape[0]
    z = set(int(v) for v in z)
    desc = _all_descendants(g)
    # nodes (other than i) lying on a directed i -> ... -> j path
    cn = [w for w in range(d) if w != i and desc[i][w] and (w == j or desc[w][j])]
    forb = np.zeros(d, dtype=bool)
    for w in cn:
        forb[w] = True
        forb |= desc[w]
    if any(forb[v] for v in z):
        return False
    banned = {(i, c) for c in np.flatnonzero(g[i]) if c == j or desc[c][j]}
    z_mask = np.zeros(d, dtype=bool)
    for v in z:
        z_mask[v] = True
    return not d_connected(g, i, j, z_mask, banned)


def sid(g_true, g_est) -> int:
    """Structural interventional distance between two DAGs."""
    a, b = _check_pair(g_true, g_est)
    if not is_acyclic(a) or not is_acyclic(b):
        raise ValueError("sid: inputs must be acyclic")
    d = a.shape[0]
    desc_true = _all_descendants(a)
    total = 0
    for i in range(d):
        z = set(np.flatnonzero(b[:, i]).tolist())
        for j in range(d):
            if j == i:
                continue
            if j in z:
                # the estimate claims j is unaffected by intervening on i
                mistake = bool(desc_true[i][j])
            else:
                mistake = not parent_adjustment_valid(a, i, j, z)
            total += mistake
    return total


# ---------------------------------------------------------------------------
# interventional Markov equivalence
# ---------------------------------------------------------------------------

def augmented_dag(g, family):
    """Adjacency of the graph plus one regime node per non-observational regime."""
    g = _as_bool(g)
    d = g.shape[0]
    extra = family.K - 1
    adj = np.zeros((d + extra, d + extra), dtype=bool)
    adj[:d, :d] = g
    for k in range(1, family.K):
        for j in family.targets[k]:
            adj[d + k - 1, j] = True
    return adj


def _skeleton(adj):
    sym = adj | adj.T
    return {frozenset((int(i), int(j))) for i, j in zip(*np.nonzero(np.triu(sym, 1)))}


def _immoralities(adj):
    out = set()
    d = adj.shape[0]
    sym = adj | adj.T
    for c in range(d):
        pars = np.flatnonzero(adj[:, c])
        for ai in range(len(pars)):
            for bi in range(ai + 1, len(pars)):
                a, b = int(pars[ai]), int(pars[bi])
                if not sym[a, b]:
                    out.add((frozenset((a, b)), c))
    return out


def imec_equivalent(g1, g2, family) -> bool:
    """True iff the augmented graphs share skeleton and immoralities."""
    a, b = _check_pair(g1, g2)
    if not is_acyclic(a) or not is_acyclic(b):
        raise ValueError("imec_equivalent: inputs must be acyclic")
    if a.shape[0] != family.d:
        raise ValueError("imec_equivalent: family dimension mismatch")
    ia, ib = augmented_dag(a, family), augmented_dag(b, family)
    return _skeleton(ia) == _skeleton(ib) and _immoralities(ia) == _immoralities(ib)


# ---------------------------------------------------------------------------
# likelihood evaluation and the summary report
# ---------------------------------------------------------------------------

def model_log_density(bank, adjacency, r_matrix):
    """Joint log-density function (X, regimes) -> (B,) for a trained bank.

    Uses a fixed hard adjacency; banks without intervention nets cover the
    untargeted terms only (their targeted conditionals are out of model).
    """
    m = const(np.asarray(adjacency, dtype=np.float64))
    r = np.asarray(r_matrix, dtype=np.float64)

    def fn(x, regimes):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        regimes = np.asarray(regimes, dtype=np.intp)
        ll_obs, ll_int = _per_node_loglik(x, regimes, m, bank, r.shape[0])
        ll = _combine(ll_obs, ll_int, r[regimes])
        return np.asarray(ad.tsum(ll, axis=-1).data)

    return fn


def heldout_nll(log_density_fn, x, regimes) -> float:
    """Mean negative joint log density over a held-out split."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    regimes = np.asarray(regimes, dtype=np.intp)
    return -float(np.mean(log_density_fn(x, regimes)))


def edge_counts(g_true, g_est):
    """tp / fn / fp / reversed / F1, with reversed edges outside precision
    and recall (they are tracked separately)."""
    a, b = _check_pair(g_true, g_est)
    tp = int((a & b).sum())
    rev = int((a & b.T & ~b).sum())
    fn = int((a & ~b & ~b.T).sum())
    fp = int((b & ~a & ~a.T).sum())
    denom = 2 * tp + fp + fn
    f1 = 1.0 if denom == 0 else 2.0 * tp / denom
    return {"tp": tp, "fn": fn, "fp": fp, "reversed": rev, "f1": f1}


def metrics_report(g_true=None, g_est=None, family=None, nll=None):
    """The evaluation JSON: {shd, sid, imec_equivalent, heldout_nll, tp, fn,
    fp, reversed, f1}.

    Graph metrics are null without a ground truth; sid and the equivalence
    check are null when either graph is cyclic (they are defined on DAGs
    only, and a non-converged estimate may be cyclic).
    """
    report = {"shd": None, "sid": None, "imec_equivalent": None,
              "heldout_nll": nll, "tp": None, "fn": None, "fp": None,
              "reversed": None, "f1": None}
    if g_true is not None and g_est is not None:
        report["shd"] = shd(g_true, g_est)
        report.update(edge_counts(g_true, g_est))
        if is_acyclic(_as_bool(g_true)) and is_acyclic(_as_bool(g_est)):
            report["sid"] = sid(g_true, g_est)
            if family is not None:
                report["imec_equivalent"] = imec_equivalent(g_true, g_est, family)
    return report
