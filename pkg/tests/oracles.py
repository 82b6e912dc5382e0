"""Independent brute-force oracles used to verify the library implementations.

These deliberately avoid the library's algorithms: the SID oracle enumerates
every simple path and applies the blocking rules by definition, and graph
enumeration builds DAG sets from scratch.
"""

import itertools

import numpy as np


def oracle_descendants(g, i):
    """Descendants by plain recursion (excluding i)."""
    g = np.asarray(g, dtype=bool)
    out = set()

    def walk(v):
        for w in np.flatnonzero(g[v]):
            if w not in out:
                out.add(int(w))
                walk(w)

    walk(i)
    out.discard(i)
    return out


def _simple_paths(g, i, j):
    """All simple paths i..j in the skeleton, as lists of (node, forward) steps.

    Each step records the node stepped onto and whether the connecting edge
    pointed in the walking direction.
    """
    g = np.asarray(g, dtype=bool)
    d = g.shape[0]
    paths = []

    def extend(path, visited):
        v = path[-1][0]
        if v == j:
            paths.append(list(path))
            return
        for w in range(d):
            if w in visited:
                continue
            if g[v, w]:
                path.append((w, True))
                visited.add(w)
                extend(path, visited)
                visited.remove(w)
                path.pop()
            if g[w, v]:
                path.append((w, False))
                visited.add(w)
                extend(path, visited)
                visited.remove(w)
                path.pop()

    extend([(i, True)], {i})
    return paths


def _path_blocked(g, path, z):
    """d-separation blocking of one simple path by conditioning set z."""
    for idx in range(1, len(path) - 1):
        node, into = path[idx]
        out_of = path[idx + 1][1]  # next edge leaves this node forward?
        collider = into and not out_of
        if collider:
            desc = oracle_descendants(g, node) | {node}
            if not (desc & z):
                return True
        else:
            if node in z:
                return True
    return False


def oracle_adjustment_valid(g_true, i, j, z):
    """Adjustment-criterion check by exhaustive path enumeration."""
    z = set(z)
    paths = _simple_paths(g_true, i, j)
    causal_nodes = set()
    for path in paths:
        if all(step[1] for step in path[1:]):
            causal_nodes.update(node for node, _ in path[1:])
    forbidden = set(causal_nodes)
    for w in causal_nodes:
        forbidden |= oracle_descendants(g_true, w)
    if z & forbidden:
        return False
    for path in paths:
        causal = all(step[1] for step in path[1:])
        if not causal and not _path_blocked(g_true, path, z):
            return False
    return True


def oracle_sid(g_true, g_est):
    g_true = np.asarray(g_true, dtype=bool)
    g_est = np.asarray(g_est, dtype=bool)
    d = g_true.shape[0]
    total = 0
    for i in range(d):
        z = set(int(v) for v in np.flatnonzero(g_est[:, i]))
        desc = oracle_descendants(g_true, i)
        for j in range(d):
            if j == i:
                continue
            if j in z:
                total += j in desc
            else:
                total += not oracle_adjustment_valid(g_true, i, j, z)
    return total


def all_dags(d):
    """Every DAG on d labeled nodes (orderings of upper-triangular edge sets)."""
    seen = set()
    out = []
    pairs = [(a, b) for a in range(d) for b in range(a + 1, d)]
    for perm in itertools.permutations(range(d)):
        for bits in range(2 ** len(pairs)):
            g = np.zeros((d, d), dtype=bool)
            for idx, (a, b) in enumerate(pairs):
                if bits >> idx & 1:
                    g[perm[a], perm[b]] = True
            key = g.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(g)
    return out


def random_dag(d, rng, p=0.5):
    perm = rng.permutation(d)
    g = np.zeros((d, d), dtype=bool)
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                g[perm[a], perm[b]] = True
    return g
