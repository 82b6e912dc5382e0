import itertools

import numpy as np
import pytest

from dagfit import autodiff as ad
from dagfit.autodiff import Tape
from dagfit.graph import (EdgeLogits, acyclicity, is_acyclic,
                          load_adjacency_csv, sample_adjacency,
                          save_adjacency_csv, threshold_graph)


def test_saturated_logits_sample_deterministically():
    logits = EdgeLogits(2)
    logits.lam.data[0, 1] = 30.0
    logits.lam.data[1, 0] = -30.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = sample_adjacency(logits, rng).m
        assert m[0, 1] == 1.0 and m[1, 0] == 0.0


def test_zero_logit_samples_are_fair():
    logits = EdgeLogits(2)
    rng = np.random.default_rng(1)
    hits = sum(sample_adjacency(logits, rng).m[0, 1] for _ in range(10_000))
    assert 0.48 <= hits / 10_000 <= 0.52


def test_diagonal_never_sampled():
    logits = EdgeLogits(3, init=30.0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        assert np.all(np.diag(sample_adjacency(logits, rng).m) == 0)


def test_straight_through_mean_tracks_edge_probability():
    # empirical forward mean converges to sigma(lambda) (3-sigma binomial band)
    logits = EdgeLogits(2)
    logits.lam.data[0, 1] = 0.8
    p = 1 / (1 + np.exp(-0.8))
    rng = np.random.default_rng(3)
    n = 20_000
    hits = sum(sample_adjacency(logits, rng).m[0, 1] for _ in range(n))
    band = 3 * np.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= band


def test_nonfinite_logits_rejected():
    logits = EdgeLogits(2)
    logits.lam.data[0, 1] = np.nan
    with pytest.raises(ValueError):
        sample_adjacency(logits, np.random.default_rng(0))


def test_acyclicity_zero_matrix():
    assert acyclicity(np.zeros((3, 3))) == pytest.approx(0.0, abs=1e-12)


def test_acyclicity_nilpotent():
    assert acyclicity(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.0, abs=1e-12)


def test_acyclicity_two_cycle_closed_form():
    h = acyclicity(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert h == pytest.approx(1.0861612696, abs=1e-9)


def test_acyclicity_rejects_negative():
    with pytest.raises(ValueError):
        acyclicity(np.array([[0.0, -0.1], [0.0, 0.0]]))


def test_acyclicity_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a = ad.Tensor(rng.uniform(0, 1, size=(4, 4)), requires_grad=True)
        err = ad.grad_check(lambda t: ad.trace_expm(t), a, h=1e-6)
        assert err < 1e-6


def test_acyclicity_monotone_in_edges():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.uniform(0, 1, size=(4, 4)) * (rng.random((4, 4)) < 0.4)
        np.fill_diagonal(m, 0.0)
        h0 = acyclicity(m)
        i, j = rng.integers(0, 4, size=2)
        if i == j:
            continue
        m2 = m.copy()
        m2[i, j] = min(1.0, m[i, j] + rng.uniform(0.1, 0.5))
        assert acyclicity(m2) >= h0 - 1e-12


def test_acyclicity_iff_kahn_small_graphs():
    # spot check here; the acceptance suite enumerates every d <= 4 matrix
    for bits in range(2 ** 6):
        m = np.zeros((3, 3))
        vals = [(bits >> k) & 1 for k in range(6)]
        m[np.triu_indices(3, 1)] = vals[:3]
        m[np.tril_indices(3, -1)] = vals[3:]
        assert (acyclicity(m) <= 1e-9) == is_acyclic(m)


def test_threshold_graph_rules():
    logits = EdgeLogits(3, init=-30.0)
    assert threshold_graph(logits).edges.sum() == 0
    logits.lam.data[0, 1] = 5.0
    est = threshold_graph(logits)
    assert est.edges[0, 1] and est.edges.sum() == 1
    logits.lam.data[1, 0] = 5.0
    assert not is_acyclic(threshold_graph(logits))
    # exact tie at the cutoff: strict inequality, no edge
    logits2 = EdgeLogits(2, init=0.0)
    assert threshold_graph(logits2).edges.sum() == 0


def test_is_acyclic_cases():
    assert is_acyclic(np.zeros((3, 3), dtype=bool))
    chain = np.zeros((3, 3), dtype=bool)
    chain[0, 1] = chain[1, 2] = True
    assert is_acyclic(chain)
    cyc = np.zeros((3, 3), dtype=bool)
    cyc[0, 1] = cyc[1, 2] = cyc[2, 0] = True
    assert not is_acyclic(cyc)
    self_loop = np.zeros((2, 2), dtype=bool)
    self_loop[0, 0] = True
    assert not is_acyclic(self_loop)


def test_adjacency_csv_round_trip(tmp_path):
    m = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
    path = tmp_path / "adj.csv"
    save_adjacency_csv(path, m)
    np.testing.assert_array_equal(load_adjacency_csv(path), m)
    with open(tmp_path / "bad.csv", "w") as fh:
        fh.write("0,1\nnot-a-number,0\n")
    with pytest.raises(ValueError) as exc:
        load_adjacency_csv(tmp_path / "bad.csv")
    assert "bad.csv" in str(exc.value)


def test_gumbel_gradient_flows_through_soft_sample():
    logits = EdgeLogits(2)
    rng = np.random.default_rng(6)
    with Tape() as tape:
        adj = sample_adjacency(logits, rng)
        tape.backward(ad.tsum(adj.tensor))
    assert logits.lam.grad is not None
    assert np.all(logits.lam.grad[~np.eye(2, dtype=bool)] != 0)
    assert np.all(logits.lam.grad[np.eye(2, dtype=bool)] == 0)
