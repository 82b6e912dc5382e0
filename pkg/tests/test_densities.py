import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from dagfit import autodiff as ad
from dagfit.autodiff import Tape, Tensor, const
from dagfit.densities import (ConditionalModelBank, DsfHead, GaussianHead,
                              NodeNets, conditional_params, dsf_invert,
                              dsf_transform, flow_log_density,
                              gaussian_log_density, make_head)

SOFTPLUS_INV_1 = math.log(math.e - 1.0)  # softplus(x) = 1


def identity_layer():
    return [(np.zeros(1), np.full(1, SOFTPLUS_INV_1), np.zeros(1))]


def test_gaussian_standard_at_zero():
    out = gaussian_log_density(0.0, 0.0, 0.0)
    assert out.item() == pytest.approx(-0.9189385332046727, abs=1e-10)


def test_gaussian_at_mean():
    for log_sigma in (-1.0, 0.0, 2.0):
        out = gaussian_log_density(1.7, 1.7, log_sigma)
        assert out.item() == pytest.approx(-0.5 * np.log(2 * np.pi) - log_sigma, abs=1e-12)


def test_gaussian_integrates_to_one():
    mu, log_sigma = 0.4, 0.3
    sigma = np.exp(log_sigma)
    val, _ = quad(lambda x: np.exp(gaussian_log_density(x, mu, log_sigma).item()),
                  mu - 10 * sigma, mu + 10 * sigma)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_gaussian_log_sigma_clamped():
    out = gaussian_log_density(0.0, 0.0, -50.0)
    assert np.isfinite(out.item())
    assert out.item() == pytest.approx(-0.5 * np.log(2 * np.pi) + 7.0, abs=1e-9)


def test_dsf_identity_layer():
    for z in (-3.0, 0.0, 1.7):
        y, logdet = dsf_transform(z, identity_layer())
        assert y.item() == pytest.approx(z, abs=1e-9)
        assert logdet.item() == pytest.approx(0.0, abs=1e-9)


def _random_layers(rng, n_layers=2, u=5):
    return [(rng.normal(size=u), rng.normal(size=u), rng.normal(size=u))
            for _ in range(n_layers)]


def test_dsf_strictly_increasing():
    rng = np.random.default_rng(0)
    layers = _random_layers(rng)
    grid = np.linspace(-8, 8, 1000)
    y, _ = dsf_transform(grid, layers)
    assert np.all(np.diff(y.data) > 0)


def test_dsf_logdet_matches_finite_differences():
    rng = np.random.default_rng(1)
    layers = _random_layers(rng)
    h = 1e-6
    for z in np.linspace(-3, 3, 11):
        _, logdet = dsf_transform(z, layers)
        yp, _ = dsf_transform(z + h, layers)
        ym, _ = dsf_transform(z - h, layers)
        num = (yp.item() - ym.item()) / (2 * h)
        assert np.log(num) == pytest.approx(logdet.item(), rel=1e-5)


def test_flow_identity_is_standard_normal():
    for x in (-2.0, 0.0, 0.5):
        out = flow_log_density(x, identity_layer())
        assert out.item() == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5 * x * x, abs=1e-9)


def test_flow_density_integrates_to_one():
    rng = np.random.default_rng(2)
    layers = _random_layers(rng)
    val, _ = quad(lambda x: np.exp(flow_log_density(x, layers).item()), -40, 40,
                  limit=200)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_flow_log_density_finite_for_extreme_inputs():
    rng = np.random.default_rng(3)
    layers = _random_layers(rng)
    for x in (-1e6, -50.0, 50.0, 1e6):
        assert np.isfinite(flow_log_density(x, layers).item())


def test_dsf_bisection_inversion():
    rng = np.random.default_rng(4)
    layers = _random_layers(rng)
    for z in np.linspace(-5, 5, 21):
        y, _ = dsf_transform(z, layers)
        z_back = dsf_invert(y.item(), layers, tol=1e-12)
        assert z_back == pytest.approx(z, abs=1e-8)


def test_dsf_gradients_w_r_t_parameters():
    rng = np.random.default_rng(5)
    raw = Tensor(rng.normal(size=15), requires_grad=True)

    def f(p):
        layers = [(ad.narrow(p, 0, 5), ad.narrow(p, 5, 10), ad.narrow(p, 10, 15))]
        return flow_log_density(0.7, layers)

    assert ad.grad_check(f, raw, h=1e-5) < 1e-4


def test_dsf_fit_beats_single_gaussian_on_mixture():
    # balanced two-Gaussian mixture at +-2 with sigma = 0.5; the best single
    # Gaussian is mu=0 with sigma^2 = 4.25 (moment match), computable exactly
    rng = np.random.default_rng(6)
    n = 2000
    comp = rng.integers(0, 2, size=n)
    x = np.where(comp == 1, 2.0, -2.0) + 0.5 * rng.normal(size=n)
    x_train, x_test = x[:1600], x[1600:]

    head = DsfHead(flow_layers=2, flow_units=8)
    raw = Tensor(rng.normal(scale=0.1, size=head.out_dim), requires_grad=True)
    opt_state = np.zeros_like(raw.data)
    for step in range(1500):
        idx = rng.integers(0, x_train.size, size=128)
        with Tape() as tape:
            params = ad.reshape(raw, (1, 1, head.out_dim))
            ll = head.log_density(const(x_train[idx].reshape(-1, 1)),
                                  ad.mul(params, const(np.ones((idx.size, 1, 1)))))
            loss = ad.neg(ad.mean(ll))
            tape.backward(loss)
        opt_state = 0.99 * opt_state + 0.01 * raw.grad ** 2
        raw.data -= 5e-3 * raw.grad / (np.sqrt(opt_state) + 1e-8)
        raw.zero_grad()

    params = ad.reshape(raw, (1, 1, head.out_dim))
    ll = head.log_density(const(x_test.reshape(-1, 1)),
                          ad.mul(params, const(np.ones((x_test.size, 1, 1)))))
    dsf_nll = -float(ll.data.mean())

    best_var = x_test.var()  # mle single gaussian on the held-out set itself
    gauss_nll = 0.5 * np.log(2 * np.pi * best_var) + 0.5
    assert dsf_nll < gauss_nll


def test_masked_net_ignores_masked_coordinates():
    rng = np.random.default_rng(7)
    nets = NodeNets(4, 4, 2, 16, 2, rng)
    x = rng.normal(size=4)
    mask = np.array([1.0, 0.0, 1.0, 0.0])
    base = conditional_params(x, mask, nets, 2).data
    x2 = x.copy()
    x2[1] += 5.0
    x2[3] -= 3.0
    np.testing.assert_allclose(conditional_params(x2, mask, nets, 2).data, base)
    # all-zero mask: marginal model, independent of x entirely
    m0 = conditional_params(x, np.zeros(4), nets, 0).data
    np.testing.assert_allclose(conditional_params(rng.normal(size=4), np.zeros(4), nets, 0).data, m0)


def test_masked_gradient_is_zero_on_masked_inputs():
    rng = np.random.default_rng(8)
    nets = NodeNets(3, 3, 2, 8, 2, rng)
    mask = np.array([0.0, 1.0, 0.0])
    x = Tensor(rng.normal(size=3), requires_grad=True)

    def f(t):
        return ad.tsum(conditional_params(t, mask, nets, 1))

    with Tape() as tape:
        tape.backward(f(x))
    assert x.grad[0] == 0.0 and x.grad[2] == 0.0
    assert ad.grad_check(f, x, h=1e-6) < 1e-6


def test_bank_shares_observational_parameters():
    rng = np.random.default_rng(9)
    bank = ConditionalModelBank(3, GaussianHead(), 2, 8, rng,
                                slot_pairs=[(1, 0)], perfect_masked=False)
    x = rng.normal(size=3)
    mask = np.ones(3)
    mask[1] = 0
    before = conditional_params(x, mask, bank.obs, 1).data.copy()
    bank.obs.weights[0].data *= 1.5  # mutate phi^(1)
    after = conditional_params(x, mask, bank.obs, 1).data
    assert not np.allclose(before, after)


def test_bank_json_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    bank = ConditionalModelBank(3, make_head("dsf", 2, 4), 2, 8, rng,
                                slot_pairs=[(1, 0), (2, 2)], perfect_masked=True)
    path = tmp_path / "model.json"
    bank.save(path)
    loaded = ConditionalModelBank.load(path)
    for a, b in zip(bank.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert loaded.slot_index == bank.slot_index
    assert loaded.perfect_masked
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["head"]["name"] == "dsf"
