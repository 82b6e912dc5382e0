"""Ground-truth structural causal models, interventional sampling, dataset IO.

Graphs are drawn Erdos-Renyi style over a random topological order. Three
mechanism families are supported: linear, nonlinear additive noise (anm) and
nonlinear non-additive (nn). Perfect interventions replace a targeted node's
conditional by N(2, 1); imperfect interventions perturb mechanism parameters
(targeted root nodes fall back to the N(2, 1) marginal).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import is_acyclic
from .scores import InterventionalFamily, family_from_lists

NOISE_SCALE = 0.4  # multiplies N_j for non-root nodes
ANM_HIDDEN, ANM_SLOPE = 10, 0.25
NN_HIDDEN = 20


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


@dataclass
class GroundTruthScm:
    dag: np.ndarray                 # (d, d) bool, [i, j] means i -> j
    mechanism: str                  # linear | anm | nn
    params: list                    # per-node mechanism parameters
    noise_std: np.ndarray           # sigma_j, variance drawn from U[1, 2]

    @property
    def d(self):
        return self.dag.shape[0]

    def parents(self, j):
        return np.flatnonzero(self.dag[:, j])


@dataclass
class RegimePlan:
    family: InterventionalFamily
    kind: str                       # perfect | imperfect | none
    known_targets: bool = True
    perturbed: dict = field(default_factory=dict)  # (k, j) -> params override


def sample_dag(d, e, rng):
    """Random DAG: permutation order + independent order-respecting edges.

    Edge probability is set so the expected edge count is e * d.
    """
    if d < 2:
        raise ValueError("sample_dag: need at least 2 nodes")
    max_edges = d * (d - 1) / 2
    if e * d > max_edges:
        raise ValueError(f"sample_dag: e*d={e * d} exceeds {max_edges} possible edges")
    p = (e * d) / max_edges
    order = rng.permutation(d)
    dag = np.zeros((d, d), dtype=bool)
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                dag[order[a], order[b]] = True
    return dag


def _init_mlp(shapes, rng):
    return [rng.normal(size=s) for s in shapes]


def sample_mechanisms(dag, mechanism, rng):
    """Draw per-node mechanism parameters and noise scales."""
    d = dag.shape[0]
    noise_std = np.sqrt(rng.uniform(1.0, 2.0, size=d))
    params = []
    for j in range(d):
        p = int(dag[:, j].sum())
        if p == 0:
            params.append(None)
            continue
        if mechanism == "linear":
            w = rng.uniform(0.25, 1.0, size=p) * rng.choice([-1.0, 1.0], size=p)
            params.append({"w": w})
        elif mechanism == "anm":
            w1, w2 = _init_mlp([(ANM_HIDDEN, p), (1, ANM_HIDDEN)], rng)
            params.append({"w1": w1, "w2": w2})
        elif mechanism == "nn":
            w1, w2 = _init_mlp([(NN_HIDDEN, p + 1), (1, NN_HIDDEN)], rng)
            params.append({"w1": w1, "w2": w2})
        else:
            raise ValueError(f"unknown mechanism: {mechanism!r}")
    return GroundTruthScm(dag=dag, mechanism=mechanism, params=params, noise_std=noise_std)


def sample_scm(d, e, mechanism, rng):
    return sample_mechanisms(sample_dag(d, e, rng), mechanism, rng)


def default_targets(d, rng, n_regimes=None, max_targets=None):
    """Target sets per regime: one per node for small graphs, else 1-2 random.

    Small graphs (d <= 10) get a single-node intervention on every node;
    larger ones get d regimes with up to max(1, round(0.1 d)) targets each.
    """
    if d <= 10:
        return [[]] + [[j] for j in range(d)]
    n_regimes = n_regimes or d
    max_targets = max_targets or max(1, int(round(0.1 * d)))
    sets = [[]]
    for _ in range(n_regimes):
        size = int(rng.integers(1, max_targets + 1))
        sets.append(sorted(rng.choice(d, size=size, replace=False).tolist()))
    return sets


def _perturb(scm, j, rng):
    """Imperfect-intervention parameter override for a non-root node j."""
    base = scm.params[j]
    if scm.mechanism == "linear":
        p = base["w"].shape[0]
        shift = rng.uniform(2.0, 5.0, size=p) * rng.choice([-1.0, 1.0], size=p)
        return {"w": base["w"] + shift}
    new_last = base["w2"] + rng.normal(size=base["w2"].shape)
    return {"w1": base["w1"], "w2": new_last}


def make_plan(scm, kind, rng, known_targets=True, target_sets=None):
    """Build the regime plan (family + imperfect parameter overrides)."""
    if kind == "none":
        return RegimePlan(family=family_from_lists([[]], scm.d), kind="none",
                          known_targets=True)
    if target_sets is None:
        target_sets = default_targets(scm.d, rng)
    family = family_from_lists(target_sets, scm.d)
    plan = RegimePlan(family=family, kind=kind, known_targets=known_targets)
    if kind == "imperfect":
        for k in range(1, family.K):
            for j in sorted(family.targets[k]):
                if len(scm.parents(j)) > 0:
                    plan.perturbed[(k, j)] = _perturb(scm, j, rng)
    elif kind != "perfect":
        raise ValueError(f"unknown intervention kind: {kind!r}")
    return plan


def _node_value(scm, j, x_parents, noise, params):
    if params is None:
        raise ValueError("root nodes have no mechanism")
    if scm.mechanism == "linear":
        return x_parents @ params["w"] + NOISE_SCALE * noise
    if scm.mechanism == "anm":
        h = _leaky(x_parents @ params["w1"].T, ANM_SLOPE)
        return (h @ params["w2"].T)[:, 0] + NOISE_SCALE * noise
    inp = np.concatenate([x_parents, noise[:, None]], axis=1)
    h = np.tanh(inp @ params["w1"].T)
    return (h @ params["w2"].T)[:, 0]


def _sample_regime(scm, plan, k, n, rng):
    d = scm.d
    x = np.zeros((n, d))
    order = _topological_order(scm.dag)
    targets = plan.family.targets[k]
    for j in order:
        parents = scm.parents(j)
        noise = scm.noise_std[j] * rng.normal(size=n)
        if j in targets and plan.kind == "perfect":
            x[:, j] = 2.0 + rng.normal(size=n)
        elif j in targets and plan.kind == "imperfect":
            if len(parents) == 0:
                # root nodes under imperfect interventions use the N(2, 1) marginal
                x[:, j] = 2.0 + rng.normal(size=n)
            else:
                x[:, j] = _node_value(scm, j, x[:, parents], noise, plan.perturbed[(k, j)])
        elif len(parents) == 0:
            x[:, j] = noise
        else:
            x[:, j] = _node_value(scm, j, x[:, parents], noise, scm.params[j])
    return x


def _topological_order(dag):
    d = dag.shape[0]
    indeg = dag.sum(axis=0).astype(int)
    order, queue = [], [i for i in range(d) if indeg[i] == 0]
    while queue:
        i = queue.pop()
        order.append(i)
        for j in np.flatnonzero(dag[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    if len(order) != d:
        raise ValueError("ground-truth graph must be acyclic")
    return order


@dataclass
class Dataset:
    X: np.ndarray                    # (n, d)
    regimes: np.ndarray              # (n,) 0-based regime labels
    family: InterventionalFamily | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    scm: GroundTruthScm | None = None
    plan: RegimePlan | None = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def regime_counts(n, K):
    """Samples per regime: n // K each, the first n % K regimes get one extra."""
    base = n // K
    counts = np.full(K, base, dtype=int)
    counts[: n % K] += 1
    return counts


def sample_data(scm, plan, n, rng, normalize=True):
    """Ancestral sampling of all regimes, then pooled normalization."""
    K = plan.family.K
    counts = regime_counts(n, K)
    blocks, labels = [], []
    for k in range(K):
        blocks.append(_sample_regime(scm, plan, k, counts[k], rng))
        labels.append(np.full(counts[k], k, dtype=np.intp))
    x = np.concatenate(blocks)
    regimes = np.concatenate(labels)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if normalize:
        x = (x - mean) / std
    return Dataset(X=x, regimes=regimes, family=plan.family, mean=mean, std=std,
                   scm=scm, plan=plan)


def sample_bimodal_pair_dataset(n, rng, normalize=True):
    """2-node dataset whose effect conditional mixes two opposite-slope lines.

    x2 = s * w * x1 + 0.4 * N with a fair hidden switch s in {-1, +1}, so
    p(x2 | x1) is bimodal away from the origin. Regimes: observational plus
    perfect interventions on each node. Returns (dataset, w).
    """
    d = 2
    dag = np.zeros((d, d), dtype=bool)
    dag[0, 1] = True
    noise_std = np.sqrt(rng.uniform(1.0, 2.0, size=d))
    w = float(rng.uniform(0.25, 1.0) * rng.choice([-1.0, 1.0]))
    family = family_from_lists([[], [0], [1]], d)
    counts = regime_counts(n, family.K)
    blocks, labels = [], []
    for k in range(family.K):
        m = counts[k]
        x = np.zeros((m, d))
        if 0 in family.targets[k]:
            x[:, 0] = 2.0 + rng.normal(size=m)
        else:
            x[:, 0] = noise_std[0] * rng.normal(size=m)
        if 1 in family.targets[k]:
            x[:, 1] = 2.0 + rng.normal(size=m)
        else:
            sign = rng.choice([-1.0, 1.0], size=m)
            x[:, 1] = sign * w * x[:, 0] + NOISE_SCALE * noise_std[1] * rng.normal(size=m)
        blocks.append(x)
        labels.append(np.full(m, k, dtype=np.intp))
    x = np.concatenate(blocks)
    regimes = np.concatenate(labels)
    mean, std = x.mean(axis=0), x.std(axis=0)
    if normalize:
        x = (x - mean) / std
    scm = GroundTruthScm(dag=dag, mechanism="linear", params=[None, {"w": np.array([w])}],
                         noise_std=noise_std)
    plan = RegimePlan(family=family, kind="perfect", known_targets=True)
    return Dataset(X=x, regimes=regimes, family=family, mean=mean, std=std,
                   scm=scm, plan=plan), w


# ---------------------------------------------------------------------------
# on-disk layout: data.csv, regimes.csv, interventions.json,
# optional dag_true.csv and scm.json
# ---------------------------------------------------------------------------

def _params_to_json(params):
    out = []
    for p in params:
        if p is None:
            out.append(None)
        else:
            out.append({k: np.asarray(v).tolist() for k, v in p.items()})
    return out


def _params_from_json(doc):
    out = []
    for p in doc:
        if p is None:
            out.append(None)
        else:
            out.append({k: np.asarray(v, dtype=np.float64) for k, v in p.items()})
    return out


def write_dataset(ds: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "data.csv"), ds.X, fmt="%.17g", delimiter=",")
    with open(os.path.join(directory, "regimes.csv"), "w") as fh:
        for k in ds.regimes:
            fh.write(f"{int(k) + 1}\n")
    if ds.family is None:
        raise ValueError("write_dataset: dataset has no interventional family")
    targets = [sorted(int(j) + 1 for j in t) for t in ds.family.targets]
    with open(os.path.join(directory, "interventions.json"), "w") as fh:
        json.dump(targets, fh)
    if ds.scm is not None:
        np.savetxt(os.path.join(directory, "dag_true.csv"),
                   ds.scm.dag.astype(int), fmt="%d", delimiter=",")
        doc = {
            "mechanism": ds.scm.mechanism,
            "noise_std": ds.scm.noise_std.tolist(),
            "params": _params_to_json(ds.scm.params),
            "normalization": {"mean": ds.mean.tolist(), "std": ds.std.tolist()},
        }
        if ds.plan is not None:
            doc["plan"] = {
                "kind": ds.plan.kind,
                "known_targets": ds.plan.known_targets,
                "perturbed": [
                    {"regime": k, "node": j,
                     "params": {a: np.asarray(v).tolist() for a, v in p.items()}}
                    for (k, j), p in sorted(ds.plan.perturbed.items())
                ],
            }
        with open(os.path.join(directory, "scm.json"), "w") as fh:
            json.dump(doc, fh)


def read_dataset(directory) -> Dataset:
    data_path = os.path.join(directory, "data.csv")
    try:
        x = np.loadtxt(data_path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise ValueError(f"{data_path}: malformed data CSV ({e})") from None
    n, d = x.shape
    regimes = np.zeros(n, dtype=np.intp)
    reg_path = os.path.join(directory, "regimes.csv")
    with open(reg_path) as fh:
        for i, line in enumerate(fh):
            if i >= n:
                raise ValueError(f"{reg_path}: more regime labels than samples")
            try:
                regimes[i] = int(line.strip()) - 1
            except ValueError:
                raise ValueError(f"{reg_path}: line {i + 1}: invalid regime index "
                                 f"{line.strip()!r}") from None
    int_path = os.path.join(directory, "interventions.json")
    with open(int_path) as fh:
        raw = json.load(fh)
    targets = []
    for k, t in enumerate(raw):
        nodes = []
        for v in t:
            if not 1 <= int(v) <= d:
                raise ValueError(f"{int_path}: regime {k + 1}: node index {v} "
                                 f"out of range 1..{d}")
            nodes.append(int(v) - 1)
        targets.append(nodes)
    family = family_from_lists(targets, d)
    if regimes.min() < 0 or regimes.max() >= family.K:
        raise ValueError(f"{reg_path}: regime index out of range 1..{family.K}")
    ds = Dataset(X=x, regimes=regimes, family=family)
    scm_path = os.path.join(directory, "scm.json")
    dag_path = os.path.join(directory, "dag_true.csv")
    if os.path.exists(scm_path) and os.path.exists(dag_path):
        dag = np.loadtxt(dag_path, delimiter=",", ndmin=2).astype(bool)
        if not is_acyclic(dag):
            raise ValueError(f"{dag_path}: ground-truth graph is cyclic")
        with open(scm_path) as fh:
            doc = json.load(fh)
        ds.scm = GroundTruthScm(
            dag=dag, mechanism=doc["mechanism"],
            params=_params_from_json(doc["params"]),
            noise_std=np.asarray(doc["noise_std"]),
        )
        ds.mean = np.asarray(doc["normalization"]["mean"])
        ds.std = np.asarray(doc["normalization"]["std"])
        if "plan" in doc:
            plan = RegimePlan(family=family, kind=doc["plan"]["kind"],
                              known_targets=doc["plan"]["known_targets"])
            for entry in doc["plan"].get("perturbed", []):
                plan.perturbed[(entry["regime"], entry["node"])] = {
                    a: np.asarray(v, dtype=np.float64)
                    for a, v in entry["params"].items()
                }
            ds.plan = plan
    elif os.path.exists(dag_path):
        dag = np.loadtxt(dag_path, delimiter=",", ndmin=2).astype(bool)
        ds.scm = GroundTruthScm(dag=dag, mechanism="unknown", params=[None] * d,
                                noise_std=np.ones(d))
    return ds
