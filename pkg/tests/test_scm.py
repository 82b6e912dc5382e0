import numpy as np
import pytest

from dagfit.graph import is_acyclic
from dagfit.scm import (GroundTruthScm, make_plan, read_dataset, regime_counts,
                        sample_bimodal_pair_dataset, sample_dag, sample_data,
                        sample_scm, write_dataset)


def test_sample_dag_always_acyclic():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(2, 8))
        e = min(1.0, (d - 1) / 2)
        assert is_acyclic(sample_dag(d, e, rng))


def test_sample_dag_guaranteed_edge_at_max_density():
    rng = np.random.default_rng(1)
    for _ in range(50):
        dag = sample_dag(2, 0.5, rng)
        assert dag.sum() == 1


def test_sample_dag_rejects_infeasible_density():
    with pytest.raises(ValueError):
        sample_dag(4, 2.0, np.random.default_rng(0))


def test_sample_dag_mean_edge_count():
    rng = np.random.default_rng(2)
    d, e = 10, 1.0
    counts = [sample_dag(d, e, rng).sum() for _ in range(1000)]
    mean = np.mean(counts)
    assert abs(mean - e * d) <= 4 * np.sqrt(e * d) / np.sqrt(1000) * 10  # loose band
    assert abs(mean - e * d) <= 4 * np.sqrt(e * d)


def test_linear_chain_covariance_oracle():
    # X1 -> X2 with w = 0.5: Cov(X1, X2) = 0.5 * Var(X1)
    dag = np.array([[False, True], [False, False]])
    scm = GroundTruthScm(dag=dag, mechanism="linear",
                         params=[None, {"w": np.array([0.5])}],
                         noise_std=np.array([1.2, 1.1]))
    plan = make_plan(scm, "none", np.random.default_rng(3))
    ds = sample_data(scm, plan, 100_000, np.random.default_rng(4), normalize=False)
    cov = np.cov(ds.X.T)
    assert cov[0, 1] == pytest.approx(0.5 * cov[0, 0], rel=0.05)
    assert cov[0, 0] == pytest.approx(1.2 ** 2, rel=0.05)


def test_perfect_intervention_moments():
    rng = np.random.default_rng(5)
    scm = sample_scm(4, 1.0, "linear", rng)
    plan = make_plan(scm, "perfect", rng)
    ds = sample_data(scm, plan, 40_000, rng, normalize=False)
    for k in range(1, plan.family.K):
        (j,) = plan.family.targets[k]
        block = ds.X[ds.regimes == k, j]
        n = block.size
        assert abs(block.mean() - 2.0) <= 3.0 / np.sqrt(n)
        assert abs(block.var() - 1.0) <= 3.0 * np.sqrt(2.0 / n)


def test_imperfect_linear_shift_magnitude():
    rng = np.random.default_rng(6)
    for _ in range(20):
        scm = sample_scm(5, 1.0, "linear", rng)
        plan = make_plan(scm, "imperfect", rng)
        for (k, j), pert in plan.perturbed.items():
            delta = np.abs(pert["w"] - scm.params[j]["w"])
            assert np.all(delta >= 2.0) and np.all(delta <= 5.0)


def test_imperfect_root_uses_shifted_marginal():
    dag = np.zeros((2, 2), dtype=bool)
    dag[0, 1] = True
    scm = GroundTruthScm(dag=dag, mechanism="linear",
                         params=[None, {"w": np.array([0.8])}],
                         noise_std=np.array([1.0, 1.0]))
    plan = make_plan(scm, "imperfect", np.random.default_rng(7),
                     target_sets=[[], [0]])
    ds = sample_data(scm, plan, 20_000, np.random.default_rng(8), normalize=False)
    block = ds.X[ds.regimes == 1, 0]
    assert abs(block.mean() - 2.0) <= 3.0 / np.sqrt(block.size)


def test_anm_and_nn_mechanisms_run():
    rng = np.random.default_rng(9)
    for mech in ("anm", "nn"):
        scm = sample_scm(5, 1.0, mech, rng)
        plan = make_plan(scm, "imperfect", rng)
        ds = sample_data(scm, plan, 600, rng)
        assert np.all(np.isfinite(ds.X))


def test_regime_counts():
    counts = regime_counts(110, 11)
    assert np.all(counts == 10)
    counts = regime_counts(100, 3)
    np.testing.assert_array_equal(counts, [34, 33, 33])
    assert counts.sum() == 100


def test_normalization_pooled():
    rng = np.random.default_rng(10)
    scm = sample_scm(4, 1.0, "linear", rng)
    plan = make_plan(scm, "perfect", rng)
    ds = sample_data(scm, plan, 5000, rng)
    np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-8)
    np.testing.assert_allclose(ds.X.std(axis=0), 1.0, atol=1e-8)


def test_determinism_under_seed():
    scm1 = sample_scm(6, 1.0, "linear", np.random.default_rng(11))
    scm2 = sample_scm(6, 1.0, "linear", np.random.default_rng(11))
    np.testing.assert_array_equal(scm1.dag, scm2.dag)
    plan1 = make_plan(scm1, "perfect", np.random.default_rng(12))
    plan2 = make_plan(scm2, "perfect", np.random.default_rng(12))
    d1 = sample_data(scm1, plan1, 500, np.random.default_rng(13))
    d2 = sample_data(scm2, plan2, 500, np.random.default_rng(13))
    np.testing.assert_array_equal(d1.X, d2.X)


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    scm = sample_scm(4, 1.0, "anm", rng)
    plan = make_plan(scm, "imperfect", rng)
    ds = sample_data(scm, plan, 300, rng)
    out = tmp_path / "ds"
    write_dataset(ds, out)
    back = read_dataset(out)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.regimes, ds.regimes)
    assert back.family.targets == ds.family.targets
    np.testing.assert_array_equal(back.scm.dag, ds.scm.dag)
    np.testing.assert_allclose(back.mean, ds.mean)
    for (k, j), pert in ds.plan.perturbed.items():
        for key, val in pert.items():
            np.testing.assert_array_equal(back.plan.perturbed[(k, j)][key], val)


def test_dataset_without_ground_truth(tmp_path):
    rng = np.random.default_rng(15)
    out = tmp_path / "plain"
    out.mkdir()
    x = rng.normal(size=(10, 3))
    np.savetxt(out / "data.csv", x, fmt="%.17g", delimiter=",")
    with open(out / "regimes.csv", "w") as fh:
        fh.write("\n".join(["1"] * 10) + "\n")
    with open(out / "interventions.json", "w") as fh:
        fh.write("[[]]")
    ds = read_dataset(out)
    assert ds.scm is None and ds.plan is None
    np.testing.assert_allclose(ds.X, x)


def test_read_rejects_bad_regime_and_node_indices(tmp_path):
    out = tmp_path / "bad"
    out.mkdir()
    np.savetxt(out / "data.csv", np.zeros((4, 2)), fmt="%.17g", delimiter=",")
    with open(out / "regimes.csv", "w") as fh:
        fh.write("1\n1\n2\n2\n")
    with open(out / "interventions.json", "w") as fh:
        fh.write("[[], [7]]")  # node 7 out of range for d=2
    with pytest.raises(ValueError) as exc:
        read_dataset(out)
    assert "interventions.json" in str(exc.value)
    with open(out / "interventions.json", "w") as fh:
        fh.write("[[]]")  # now regime 2 is out of range
    with pytest.raises(ValueError):
        read_dataset(out)
    with open(out / "regimes.csv", "w") as fh:
        fh.write("1\nx\n1\n1\n")
    with pytest.raises(ValueError) as exc:
        read_dataset(out)
    assert "line 2" in str(exc.value)


def test_bimodal_pair_dataset_shape():
    ds, w = sample_bimodal_pair_dataset(3000, np.random.default_rng(16))
    assert ds.X.shape == (3000, 2)
    assert ds.family.K == 3
    assert 0.25 <= abs(w) <= 1.0
    # conditional p(x2 | x1) is a two-branch mixture: both signs present
    obs = ds.X[ds.regimes == 0]
    far = obs[np.abs(obs[:, 0]) > 1.0]
    corr_sign = np.sign(far[:, 0] * far[:, 1])
    assert (corr_sign > 0).any() and (corr_sign < 0).any()
