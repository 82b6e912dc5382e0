"""Interventional likelihoods and the three training scores.

The joint log density of a sample under regime k sums, over nodes, the
observational conditional for untargeted nodes and a regime-specific
conditional for targeted ones. Scores are Monte Carlo estimates over one
adjacency sample per minibatch (and one target-matrix sample in the
unknown-target case), minus expected-L0 regularizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, const
from .densities import ConditionalModelBank
from .graph import EdgeLogits, sample_adjacency


@dataclass(frozen=True)
class InterventionalFamily:
    """K regimes with target sets; regime 0 is observational (empty)."""

    d: int
    targets: tuple

    def __post_init__(self):
        if len(self.targets) == 0:
            raise ValueError("family needs at least the observational regime")
        if len(self.targets[0]) != 0:
            raise ValueError("regime 1 must be observational (empty target set)")
        for t in self.targets:
            for j in t:
                if not 0 <= j < self.d:
                    raise ValueError(f"target node {j} out of range for d={self.d}")

    @property
    def K(self):
        return len(self.targets)

    @property
    def R(self):
        """(K, d) binary matrix, R[k, j] = 1 iff node j is targeted in regime k."""
        r = np.zeros((self.K, self.d))
        for k, t in enumerate(self.targets):
            for j in t:
                r[k, j] = 1.0
        return r

    def targeted_pairs(self):
        return [(k, j) for k in range(1, self.K) for j in sorted(self.targets[k])]


def family_from_lists(lists, d):
    return InterventionalFamily(d=d, targets=tuple(frozenset(t) for t in lists))


def observational_family(d):
    return InterventionalFamily(d=d, targets=(frozenset(),))


class TargetLogits:
    """(K, d) logits for intervention-target membership; row 0 is frozen off."""

    def __init__(self, K, d, init=0.0):
        self.K = K
        self.d = d
        self.beta = Tensor(np.full((K, d), float(init)), requires_grad=True)
        self._rowmask = np.ones((K, d))
        self._rowmask[0] = 0.0

    def probs(self):
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-self.beta.data))
        return p * self._rowmask

    def probs_tensor(self):
        return ad.mul(ad.sigmoid(self.beta), const(self._rowmask))

    def sample(self, rng):
        """Straight-through Bernoulli sample of R; row 0 always zero."""
        noise = rng.logistic(size=(self.K, self.d))
        soft = ad.mul(ad.sigmoid(ad.add(self.beta, const(noise))), const(self._rowmask))
        hard = (soft.data > 0.5).astype(np.float64)
        return ad.straight_through(hard, soft)


def _masked_input(x, m_tensor):
    """inp[b, j, i] = x[b, i] * M[i, j]: node j's net sees only its parents."""
    xb = const(x[:, None, :])
    return ad.mul(xb, ad.transpose(m_tensor))


def _per_node_loglik(x, regimes, m_tensor, bank: ConditionalModelBank, n_regimes):
    """(B, d) observational log densities, plus targeted-slot ones if any."""
    xt = const(x)
    inp = _masked_input(x, m_tensor)
    ll_obs = bank.head.log_density(xt, bank.obs.forward(inp))
    if bank.slots is None:
        return ll_obs, None
    slotmap = bank.slot_map(n_regimes)
    sel = slotmap[regimes]  # (B, d)
    if bank.perfect_masked:
        zero = const(np.zeros((1, bank.slots.n_nets, bank.d)))
        out = bank.slots.forward(zero)
        flat = ad.reshape(out, (bank.slots.n_nets, bank.head.out_dim))
        params_int = ad.gather_rows(flat, sel)
    else:
        slot_j = np.array([j for _, j in bank.slot_pairs], dtype=np.intp)
        mcols = ad.gather_rows(ad.transpose(m_tensor), slot_j)  # (S, d)
        inp_s = ad.mul(const(x[:, None, :]), mcols)
        out = bank.slots.forward(inp_s)  # (B, S, out)
        params_int = ad.gather_axis1(out, sel)
    ll_int = bank.head.log_density(xt, params_int)
    return ll_obs, ll_int


def _combine(ll_obs, ll_int, t):
    """(1 - T) * ll_obs + T * ll_int with T either constant or a Tensor."""
    tt = t if isinstance(t, Tensor) else const(t)
    one_m = ad.sub(const(np.ones_like(tt.data)), tt)
    if ll_int is None:
        return ad.mul(ll_obs, one_m)
    return ad.add(ad.mul(ll_obs, one_m), ad.mul(ll_int, tt))


def _check_batch(x, regimes):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"scores: batch must be a nonempty (B, d) array, got {x.shape}")
    regimes = np.asarray(regimes, dtype=np.intp)
    if regimes.shape != (x.shape[0],):
        raise ValueError("scores: regime labels must align with the batch")
    return x, regimes


def joint_log_density(x, k, m_tensor, family: InterventionalFamily,
                      bank: ConditionalModelBank):
    """Regime-k joint log density of one sample (or a batch), as a Tensor.

    Targeted nodes use their regime-specific conditional; for banks without
    slot nets (perfect-intervention training) they contribute nothing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    regimes = np.full(x.shape[0], k, dtype=np.intp)
    mt = m_tensor if isinstance(m_tensor, Tensor) else const(m_tensor)
    ll_obs, ll_int = _per_node_loglik(x, regimes, mt, bank, family.K)
    t = family.R[regimes]
    ll = _combine(ll_obs, ll_int, t)
    return ad.tsum(ll, axis=-1)


def _edge_sparsity(logits: EdgeLogits):
    return ad.tsum(logits.probs_tensor())


def score_known(x, regimes, logits, family, bank, lam, rng):
    """Relaxed interventional score for known (possibly imperfect) targets."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    x, regimes = _check_batch(x, regimes)
    m = sample_adjacency(logits, rng)
    ll_obs, ll_int = _per_node_loglik(x, regimes, m.tensor, bank, family.K)
    ll = _combine(ll_obs, ll_int, family.R[regimes])
    mean_ll = ad.mean(ad.tsum(ll, axis=-1))
    return ad.sub(mean_ll, ad.mul(_edge_sparsity(logits), const(lam)))


def score_perfect(x, regimes, logits, family, bank, lam, rng):
    """Known perfect interventions: targeted terms are dropped from the score."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    x, regimes = _check_batch(x, regimes)
    m = sample_adjacency(logits, rng)
    ll_obs, _ = _per_node_loglik(x, regimes, m.tensor, bank, family.K)
    keep = 1.0 - family.R[regimes]
    mean_ll = ad.mean(ad.tsum(ad.mul(ll_obs, const(keep)), axis=-1))
    return ad.sub(mean_ll, ad.mul(_edge_sparsity(logits), const(lam)))


def score_unknown(x, regimes, logits, target_logits: TargetLogits, bank,
                  lam, lam_r, rng):
    """Unknown perfect targets: R is sampled from sigma(beta), straight-through.

    Targeted terms evaluate regime-specific marginal nets (all inputs
    masked); the target regularizer is the expected family size.
    """
    if lam < 0 or lam_r < 0:
        raise ValueError("regularizer weights must be nonnegative")
    x, regimes = _check_batch(x, regimes)
    m = sample_adjacency(logits, rng)
    r = target_logits.sample(rng)
    ll_obs, ll_int = _per_node_loglik(x, regimes, m.tensor, bank, target_logits.K)
    t = ad.gather_rows(r, regimes)
    ll = _combine(ll_obs, ll_int, t)
    mean_ll = ad.mean(ad.tsum(ll, axis=-1))
    reg = ad.add(
        ad.mul(_edge_sparsity(logits), const(lam)),
        ad.mul(ad.tsum(target_logits.probs_tensor()), const(lam_r)),
    )
    return ad.sub(mean_ll, reg)
