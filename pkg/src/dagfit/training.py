"""Augmented Lagrangian training of the edge/target logits and model bank.

The constrained maximization is solved as a sequence of unconstrained
subproblems score - gamma*h - (mu/2)*h^2, each optimized with RMSprop until
the held-out objective stops improving; multipliers then update per the
h-progress rule. Training stops when h <= 1e-8 and the thresholded graph is
acyclic (or an iteration cap is hit).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, const
from .densities import ConditionalModelBank, make_head
from .graph import EdgeLogits, acyclicity, is_acyclic, threshold_graph
from .scores import (InterventionalFamily, TargetLogits, _combine,
                     _per_node_loglik, observational_family, score_known,
                     score_perfect, score_unknown)

SCORE_TYPES = ("known-imperfect", "known-perfect", "unknown-perfect",
               "ignore-interventions")

_CONFIG_KEYMAP = {"lambda": "lam", "lambda_r": "lam_r"}


class TrainingDiverged(RuntimeError):
    """Raised when the subproblem objective turns non-finite."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class AugLagState:
    gamma: float = 0.0
    mu: float = 1e-8
    eta: float = 2.0
    delta: float = 0.9
    constraint_tol: float = 1e-8
    lr: float = 1e-3
    batch_size: int = 64


@dataclass
class TrainConfig:
    score_type: str = "known-perfect"
    density: str = "gaussian"
    hidden_layers: int = 2
    hidden_units: int = 16
    flow_layers: int = 2
    flow_units: int = 16
    lam: float = 0.01
    lam_r: float = 0.01
    lr: float = 1e-3
    batch_size: int = 64
    max_iters: int = 100_000
    seed: int = 0
    train_frac: float = 0.8
    # optimization details the protocol leaves open
    eval_every: int = 100
    patience: int = 10
    improvement_tol: float = 2e-2
    subproblem_max_iters: int = 20_000
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    mu_init: float = 1e-8
    gamma_init: float = 0.0
    eta: float = 2.0
    delta: float = 0.9
    constraint_tol: float = 1e-8

    def to_json(self):
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        doc["lambda_r"] = doc.pop("lam_r")
        return doc

    @classmethod
    def from_json(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in doc.items():
            key = _CONFIG_KEYMAP.get(key, key)
            if key not in known:
                raise ValueError(f"unknown config key: {key!r}")
            kwargs[key] = value
        return cls(**kwargs)


@dataclass
class TrainReport:
    status: str
    dag: np.ndarray
    edge_probs: np.ndarray
    target_probs: np.ndarray | None
    curves: list
    iterations: int
    subproblems: int
    wall_time: float
    heldout_nll: float
    final_h: float
    gamma: float
    mu: float
    config: TrainConfig
    model: object = field(default=None, repr=False, compare=False)

    def to_json(self):
        doc = {
            "status": self.status,
            "dag": self.dag.astype(int).tolist(),
            "edge_probs": self.edge_probs.tolist(),
            "target_probs": None if self.target_probs is None else self.target_probs.tolist(),
            "curves": self.curves,
            "iterations": self.iterations,
            "subproblems": self.subproblems,
            "wall_time": self.wall_time,
            "heldout_nll": self.heldout_nll,
            "final_h": self.final_h,
            "gamma": self.gamma,
            "mu": self.mu,
            "config": self.config.to_json(),
        }
        return doc


class RMSprop:
    """Gradient-descent step p -= lr * g / (sqrt(v) + eps), v an EMA of g^2."""

    def __init__(self, params, lr=1e-3, decay=0.99, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.sq):
            if p.grad is None:
                continue
            g = p.grad
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p.data -= self.lr * g / (np.sqrt(v) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def aug_lagrangian_objective(score, h, state: AugLagState):
    """score - gamma * h - (mu / 2) * h^2 (to be maximized)."""
    if h is None:
        return score
    penalty = ad.add(ad.mul(h, const(state.gamma)),
                     ad.mul(ad.mul(h, h), const(0.5 * state.mu)))
    return ad.sub(score, penalty)


def update_multipliers(state: AugLagState, h_now, h_prev) -> AugLagState:
    """gamma += mu * h; mu scales by eta iff h failed to shrink by delta."""
    if not (np.isfinite(h_now) and np.isfinite(h_prev)) or h_now < 0 or h_prev < 0:
        raise ValueError("update_multipliers: h values must be finite and nonnegative")
    gamma = state.gamma + state.mu * h_now
    mu = state.mu * state.eta if h_now > state.delta * h_prev else state.mu
    return replace(state, gamma=gamma, mu=mu)


@dataclass
class SubproblemResult:
    steps: int
    best_val: float
    history: list


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()


def solve_subproblem(score_fn, h_fn, params, state, cfg, rng_train, eval_seq,
                     max_steps):
    """RMSprop-maximize the penalized objective until held-out value stalls.

    score_fn(split, rng) returns the score Tensor on "train" (one minibatch)
    or "val" (full held-out split); h_fn() returns the constraint Tensor or
    None. Stops after `patience` evaluations without improving the best
    held-out value by more than `improvement_tol`, then restores the best
    parameters seen. Evaluations tied with the best within the tolerance
    refresh the snapshot, so progress that moves the objective by less than
    the noise floor (constraint decay, mostly) is kept rather than rolled
    back.
    """
    opt = RMSprop(params, lr=state.lr, decay=cfg.rmsprop_decay, eps=cfg.rmsprop_eps)
    best_val = -np.inf
    best_snap = _snapshot(params)
    bad = 0
    steps = 0
    history = []
    last_train = np.nan
    # fixed evaluation noise (common random numbers): successive validation
    # values differ only through the parameters, so plateaus are real
    eval_seed = eval_seq.spawn(1)[0]
    while steps < max_steps:
        chunk = min(cfg.eval_every, max_steps - steps)
        for _ in range(chunk):
            with Tape() as tape:
                obj = aug_lagrangian_objective(score_fn("train", rng_train),
                                               None if h_fn is None else h_fn(),
                                               state)
                loss = ad.neg(obj)
            last_train = float(obj.data)
            if not np.isfinite(last_train):
                raise TrainingDiverged(
                    "non-finite training objective",
                    {"step": steps, "gamma": state.gamma, "mu": state.mu},
                )
            tape.backward(loss)
            opt.step()
            opt.zero_grad()
            steps += 1
        val_obj = aug_lagrangian_objective(score_fn("val", np.random.default_rng(eval_seed)),
                                           None if h_fn is None else h_fn(),
                                           state)
        val = float(val_obj.data)
        if not np.isfinite(val):
            raise TrainingDiverged(
                "non-finite validation objective",
                {"step": steps, "gamma": state.gamma, "mu": state.mu},
            )
        if val > best_val + cfg.improvement_tol:
            bad = 0
        else:
            bad += 1
        if val >= best_val - cfg.improvement_tol:
            # within tolerance of the best: prefer the most recent parameters
            best_snap = _snapshot(params)
        best_val = max(best_val, val)
        history.append({"step": steps, "train_obj": last_train, "val_obj": val,
                        "val_best": best_val})
        if bad >= cfg.patience:
            break
    _restore(params, best_snap)
    return SubproblemResult(steps=steps, best_val=best_val, history=history)


def split_indices(n, train_frac, rng):
    perm = rng.permutation(n)
    n_train = max(1, int(round(train_frac * n)))
    n_train = min(n_train, n - 1) if n > 1 else n_train
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


class _Batches:
    """Epoch-shuffled minibatch cursor (deterministic under a seeded rng)."""

    def __init__(self, x, regimes, batch_size, rng):
        self.x = x
        self.regimes = regimes
        self.bs = min(batch_size, x.shape[0])
        self.rng = rng
        self.perm = rng.permutation(x.shape[0])
        self.pos = 0

    def next(self):
        if self.pos + self.bs > self.perm.size:
            self.perm = self.rng.permutation(self.perm.size)
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return self.x[idx], self.regimes[idx]


class _Model:
    """Bundle of learnable parts plus the score dispatch for one run."""

    def __init__(self, cfg: TrainConfig, d, family, n_regimes, rng):
        self.cfg = cfg
        self.logits = EdgeLogits(d, init=0.0)
        head = make_head(cfg.density, cfg.flow_layers, cfg.flow_units)
        self.target_logits = None
        if cfg.score_type == "known-imperfect":
            slot_pairs = family.targeted_pairs()
            perfect_masked = False
        elif cfg.score_type == "unknown-perfect":
            slot_pairs = [(k, j) for k in range(1, n_regimes) for j in range(d)]
            perfect_masked = True
            self.target_logits = TargetLogits(n_regimes, d, init=0.0)
        else:
            slot_pairs = []
            perfect_masked = False
        self.bank = ConditionalModelBank(
            d, head, cfg.hidden_layers, cfg.hidden_units, rng,
            slot_pairs=slot_pairs, perfect_masked=perfect_masked,
        )
        self.family = family
        self.n_regimes = n_regimes

    def parameters(self):
        params = [self.logits.lam] + self.bank.parameters()
        if self.target_logits is not None:
            params.append(self.target_logits.beta)
        return params

    def score(self, x, regimes, rng):
        cfg = self.cfg
        if cfg.score_type == "known-imperfect":
            return score_known(x, regimes, self.logits, self.family, self.bank,
                               cfg.lam, rng)
        if cfg.score_type == "known-perfect":
            return score_perfect(x, regimes, self.logits, self.family, self.bank,
                                 cfg.lam, rng)
        if cfg.score_type == "unknown-perfect":
            return score_unknown(x, regimes, self.logits, self.target_logits,
                                 self.bank, cfg.lam, cfg.lam_r, rng)
        # ignore-interventions: plain observational likelihood on pooled data
        zeros = np.zeros_like(regimes)
        return score_known(x, zeros, self.logits, observational_family(self.logits.d),
                           self.bank, cfg.lam, rng)

    def constraint(self):
        return acyclicity(self.logits.probs_tensor())

    def heldout_nll(self, x, regimes):
        """Mean negative joint log density with the thresholded hard graph.

        Likelihood only (no regularizers). Perfect-intervention models cover
        the untargeted terms; imperfect and unknown models the full joint.
        """
        m = const(threshold_graph(self.logits).edges.astype(np.float64))
        if self.cfg.score_type == "unknown-perfect":
            r = (self.target_logits.probs() > 0.5).astype(np.float64)
        elif self.cfg.score_type == "ignore-interventions":
            r = np.zeros((1, self.logits.d))
            regimes = np.zeros_like(regimes)
        else:
            r = self.family.R
        ll_obs, ll_int = _per_node_loglik(x, regimes, m, self.bank, r.shape[0])
        t = r[regimes]
        if self.cfg.score_type == "known-perfect":
            ll = ad.mul(ll_obs, const(1.0 - t))
        else:
            ll = _combine(ll_obs, ll_int, t)
        return -float(ad.mean(ad.tsum(ll, axis=-1)).data)


def _named_rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def train(config: TrainConfig, dataset) -> TrainReport:
    """Run the full augmented Lagrangian procedure; always emits a report."""
    cfg = config
    if cfg.score_type not in SCORE_TYPES:
        raise ValueError(f"unknown score type: {cfg.score_type!r}")
    if cfg.density not in ("gaussian", "dsf"):
        raise ValueError(f"unknown density: {cfg.density!r}")
    x_all = np.asarray(dataset.X, dtype=np.float64)
    regimes_all = np.asarray(dataset.regimes, dtype=np.intp)
    n, d = x_all.shape
    n_regimes = int(regimes_all.max()) + 1 if regimes_all.size else 1
    family = dataset.family
    if cfg.score_type in ("known-imperfect", "known-perfect"):
        if family is None:
            raise ValueError(f"{cfg.score_type} requires the dataset's interventional family")
        n_regimes = family.K
    if cfg.score_type == "unknown-perfect" and n_regimes < 2:
        raise ValueError("unknown-perfect needs at least one non-observational regime")
    if regimes_all.size and family is not None and regimes_all.max() >= family.K:
        raise ValueError("regime labels exceed the declared family size")

    start = time.perf_counter()
    rng_data = _named_rng(cfg.seed, 0)
    rng_model = _named_rng(cfg.seed, 1)
    rng_gumbel = _named_rng(cfg.seed, 2)
    eval_seq = np.random.SeedSequence([int(cfg.seed), 3])

    tr_idx, val_idx = split_indices(n, cfg.train_frac, rng_data)
    x_tr, r_tr = x_all[tr_idx], regimes_all[tr_idx]
    x_val, r_val = x_all[val_idx], regimes_all[val_idx]
    if x_val.shape[0] == 0:
        x_val, r_val = x_tr, r_tr

    model = _Model(cfg, d, family, n_regimes, rng_model)
    batches = _Batches(x_tr, r_tr, cfg.batch_size, rng_gumbel)

    def score_fn(split, rng):
        if split == "train":
            xb, rb = batches.next()
            return model.score(xb, rb, rng)
        return model.score(x_val, r_val, rng)

    state = AugLagState(gamma=cfg.gamma_init, mu=cfg.mu_init, eta=cfg.eta,
                        delta=cfg.delta, constraint_tol=cfg.constraint_tol,
                        lr=cfg.lr, batch_size=cfg.batch_size)
    curves = []
    total = 0
    subproblems = 0
    h_prev = None
    status = "not-converged"
    while total < cfg.max_iters:
        budget = min(cfg.subproblem_max_iters, cfg.max_iters - total)
        res = solve_subproblem(score_fn, model.constraint, model.parameters(),
                               state, cfg, rng_gumbel, eval_seq, budget)
        subproblems += 1
        for row in res.history:
            curves.append({"iteration": total + row["step"], "subproblem": subproblems,
                           "gamma": state.gamma, "mu": state.mu, **row})
        total += res.steps
        h_now = float(acyclicity(model.logits.probs()))
        estimate = threshold_graph(model.logits)
        if h_now <= state.constraint_tol and is_acyclic(estimate):
            status = "converged"
            break
        if h_prev is None:
            # first multiplier update has no progress baseline: only gamma moves
            state = replace(state, gamma=state.gamma + state.mu * h_now)
        else:
            state = update_multipliers(state, h_now, h_prev)
        h_prev = h_now

    estimate = threshold_graph(model.logits)
    h_final = float(acyclicity(model.logits.probs()))
    report = TrainReport(
        status=status,
        dag=estimate.edges.copy(),
        edge_probs=model.logits.probs(),
        target_probs=None if model.target_logits is None else model.target_logits.probs(),
        curves=curves,
        iterations=total,
        subproblems=subproblems,
        wall_time=time.perf_counter() - start,
        heldout_nll=model.heldout_nll(x_val, r_val),
        final_h=h_final,
        gamma=state.gamma,
        mu=state.mu,
        config=cfg,
        model=model,
    )
    return report


def fit_fixed_graph(x, regimes, adjacency, family, config: TrainConfig,
                    max_steps=20_000):
    """Maximum-likelihood fit of the conditionals for a fixed graph.

    The edge logits are saturated at the given adjacency and left out of the
    optimizer, so every sampled mask equals the graph; only the bank trains.
    Returns (model, subproblem_result).
    """
    cfg = config
    if cfg.score_type == "unknown-perfect":
        raise ValueError("fit_fixed_graph expects a known-target score")
    x = np.asarray(x, dtype=np.float64)
    regimes = np.asarray(regimes, dtype=np.intp)
    d = adjacency.shape[0]
    rng_data = _named_rng(cfg.seed, 0)
    rng_model = _named_rng(cfg.seed, 1)
    rng_gumbel = _named_rng(cfg.seed, 2)
    eval_seq = np.random.SeedSequence([int(cfg.seed), 3])
    model = _Model(cfg, d, family, family.K, rng_model)
    model.logits.lam.data = np.where(np.asarray(adjacency, dtype=bool), 30.0, -30.0)
    tr_idx, val_idx = split_indices(x.shape[0], cfg.train_frac, rng_data)
    x_tr, r_tr = x[tr_idx], regimes[tr_idx]
    x_val, r_val = x[val_idx], regimes[val_idx]
    batches = _Batches(x_tr, r_tr, cfg.batch_size, rng_gumbel)
    params = model.bank.parameters()

    def score_fn(split, rng):
        if split == "train":
            xb, rb = batches.next()
            return model.score(xb, rb, rng)
        return model.score(x_val, r_val, rng)

    state = AugLagState(lr=cfg.lr, batch_size=cfg.batch_size)
    res = solve_subproblem(score_fn, None, params, state, cfg, rng_gumbel,
                           eval_seq, max_steps)
    return model, res


def _run_grid_point(args):
    cfg, dataset = args
    report = train(cfg, dataset)
    return report


def select_hyperparameters(lambdas, dataset, base_config: TrainConfig,
                           lambda_rs=None, jobs=1):
    """Train one model per grid point; pick the lowest held-out NLL.

    The NLL is likelihood-only. Returns (best_config, reports) with reports
    ordered like the grid. Grid points run in parallel when jobs > 1; every
    run is fully seeded so results do not depend on scheduling.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("select_hyperparameters: empty grid")
    if base_config.score_type == "unknown-perfect":
        lambda_rs = list(lambda_rs) if lambda_rs else [base_config.lam_r]
        combos = [(lam, lr) for lam in lambdas for lr in lambda_rs]
    else:
        combos = [(lam, base_config.lam_r) for lam in lambdas]
    configs = [replace(base_config, lam=lam, lam_r=lam_r) for lam, lam_r in combos]
    reports = [None] * len(configs)
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_grid_point, (cfg, dataset)) for cfg in configs]
            for i, fut in enumerate(futures):
                try:
                    reports[i] = fut.result()
                except Exception as e:
                    failures.append((i, str(e)))
    else:
        for i, cfg in enumerate(configs):
            try:
                reports[i] = train(cfg, dataset)
            except Exception as e:
                failures.append((i, str(e)))
    if all(r is None for r in reports):
        raise RuntimeError(f"all hyperparameter runs failed: {failures}")
    best_i = min((i for i, r in enumerate(reports) if r is not None),
                 key=lambda i: reports[i].heldout_nll)
    return configs[best_i], reports


def default_lambda_grid():
    """log10(lambda) over {-7, ..., 2}: the 10-point known-intervention grid."""
    return [10.0 ** p for p in range(-7, 3)]


def default_lambda_r_grid():
    """log10(lambda_R) over {-4, -3, -2} for unknown-target runs."""
    return [10.0 ** p for p in range(-4, -1)]


def write_report(report: TrainReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, sort_keys=True)


def write_curves_csv(report: TrainReport, path):
    cols = ["iteration", "subproblem", "gamma", "mu", "step", "train_obj",
            "val_obj", "val_best"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.curves:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")
