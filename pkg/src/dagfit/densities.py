"""Per-node conditional density models.

Each node j gets a small MLP that reads the masked sample M_j (.) x and emits
the parameters of a scalar density head: either Gaussian (mu, log sigma) or a
deep sigmoidal flow. All per-node nets of a bank are stacked along a leading
"net" axis so a whole minibatch runs through every node in one batched pass.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, const

LOG_2PI = math.log(2.0 * math.pi)
_CLAMP_EPS = 1e-10  # keeps w^T sigma(.) strictly inside (eps, 1 - eps)
_LOG_EPS = math.log(_CLAMP_EPS)
LOG_SIGMA_MIN, LOG_SIGMA_MAX = -7.0, 7.0


def xavier_uniform(shape, fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class NodeNets:
    """A stack of independent MLPs, one per net slot, evaluated jointly.

    Layer l holds weights of shape (n_nets, fan_out, fan_in) and biases of
    shape (n_nets, fan_out). Hidden activations are leaky-ReLU.
    """

    def __init__(self, n_nets, in_dim, hidden_layers, hidden_units, out_dim, rng, slope=0.01):
        self.n_nets = n_nets
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.slope = slope
        sizes = [in_dim] + [hidden_units] * hidden_layers + [out_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = xavier_uniform((n_nets, fan_out, fan_in), fan_in, fan_out, rng)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros((n_nets, fan_out)), requires_grad=True))

    def forward(self, x):
        """x: Tensor (..., n_nets, in_dim) -> (..., n_nets, out_dim)."""
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.node_linear(h, w, b)
            if l < last:
                h = ad.leaky_relu(h, self.slope)
        return h

    def parameters(self):
        return self.weights + self.biases


def conditional_params(x, mask_col, nets: NodeNets, j):
    """Head parameters for node j given the masked input mask_col (.) x.

    x and mask_col are d-vectors (or Tensors); the forward pass is the same
    batched path used in training, restricted to one node.
    """
    xt = x if isinstance(x, Tensor) else const(np.asarray(x, dtype=np.float64))
    mt = mask_col if isinstance(mask_col, Tensor) else const(np.asarray(mask_col, dtype=np.float64))
    inp = ad.reshape(ad.mul(xt, mt), (1, 1, nets.in_dim))
    h = inp
    last = len(nets.weights) - 1
    idx = np.array([j])
    for l, (w, b) in enumerate(zip(nets.weights, nets.biases)):
        h = ad.node_linear(h, ad.gather_rows(w, idx), ad.gather_rows(b, idx))
        if l < last:
            h = ad.leaky_relu(h, nets.slope)
    return ad.reshape(h, (nets.out_dim,))


def gaussian_log_density(x, mu, log_sigma):
    """Gaussian log density with log sigma clamped to [-7, 7].

    All arguments may be Tensors or arrays; shapes broadcast.
    """
    xt = x if isinstance(x, Tensor) else const(x)
    mt = mu if isinstance(mu, Tensor) else const(mu)
    st = log_sigma if isinstance(log_sigma, Tensor) else const(log_sigma)
    ls = ad.clamp(st, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    diff = ad.sub(xt, mt)
    z2 = ad.mul(ad.mul(diff, diff), ad.exp(ad.mul(ls, const(-2.0))))
    return ad.sub(ad.sub(const(-0.5 * LOG_2PI), ls), ad.mul(z2, const(0.5)))


class GaussianHead:
    """Head emitting (mu, log sigma) per node."""

    name = "gaussian"
    out_dim = 2

    def log_density(self, x, params):
        mu = ad.index_last(params, 0)
        log_sigma = ad.index_last(params, 1)
        return gaussian_log_density(x, mu, log_sigma)


def _dsf_layer(z, w_pre, a_pre, b):
    """One sigmoidal flow layer sigma^-1(w^T sigma(a z + b)), log-domain.

    z: Tensor (...,); w_pre, a_pre, b: Tensors (..., u). Returns (y, logdet)
    both shaped like z. w = softmax(w_pre), a = softplus(a_pre).
    """
    zb = ad.reshape(z, z.shape + (1,))
    a = ad.softplus(a_pre)
    pre = ad.add(ad.mul(a, zb), b)
    log_w = ad.log_softmax(w_pre, axis=-1)
    sp_pos = ad.softplus(pre)
    sp_neg = ad.softplus(ad.neg(pre))
    # log c and log(1 - c) for c = sum_u w sigma(pre), clamped inside (eps, 1-eps)
    log_c = ad.clamp(ad.logsumexp(ad.sub(log_w, sp_neg), axis=-1), _LOG_EPS, -_CLAMP_EPS)
    log_1c = ad.clamp(ad.logsumexp(ad.sub(log_w, sp_pos), axis=-1), _LOG_EPS, -_CLAMP_EPS)
    y = ad.sub(log_c, log_1c)
    slope = ad.logsumexp(
        ad.sub(ad.sub(ad.add(log_w, ad.log(a)), sp_pos), sp_neg), axis=-1
    )
    logdet = ad.sub(ad.sub(slope, log_c), log_1c)
    return y, logdet


def _as_layer_tensors(layers):
    out = []
    for w_pre, a_pre, b in layers:
        out.append(
            (
                w_pre if isinstance(w_pre, Tensor) else const(w_pre),
                a_pre if isinstance(a_pre, Tensor) else const(a_pre),
                b if isinstance(b, Tensor) else const(b),
            )
        )
    return out


def dsf_transform(z, layers):
    """Apply the flow layers to z; returns (tau(z), log |d tau / d z|).

    layers is a sequence of (w_pre, a_pre, b) pre-activation triples.
    """
    zt = z if isinstance(z, Tensor) else const(np.asarray(z, dtype=np.float64))
    y = zt
    logdet = None
    for w_pre, a_pre, b in _as_layer_tensors(layers):
        y, ld = _dsf_layer(y, w_pre, a_pre, b)
        logdet = ld if logdet is None else ad.add(logdet, ld)
    return y, logdet


def flow_log_density(x, layers):
    """Change-of-variable log density with a standard normal base."""
    y, logdet = dsf_transform(x, layers)
    base = ad.sub(const(-0.5 * LOG_2PI), ad.mul(ad.mul(y, y), const(0.5)))
    return ad.add(logdet, base)


def dsf_invert(y, layers, tol=1e-10, max_iter=200):
    """Invert tau by bisection (tau is strictly increasing)."""
    y = float(y)

    def f(z):
        out, _ = dsf_transform(np.asarray(z, dtype=np.float64), layers)
        return float(out.data)

    lo, hi = -1.0, 1.0
    while f(lo) > y:
        lo *= 2.0
        if lo < -1e9:
            raise ValueError("dsf_invert: failed to bracket from below")
    while f(hi) < y:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("dsf_invert: failed to bracket from above")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


class DsfHead:
    """Deep sigmoidal flow head; the net emits (w_pre, a_pre, b) per layer."""

    name = "dsf"

    def __init__(self, flow_layers=2, flow_units=16):
        self.flow_layers = flow_layers
        self.flow_units = flow_units
        self.out_dim = 3 * flow_units * flow_layers

    def split_layers(self, params):
        u = self.flow_units
        layers = []
        for l in range(self.flow_layers):
            off = 3 * u * l
            layers.append(
                (
                    ad.narrow(params, off, off + u),
                    ad.narrow(params, off + u, off + 2 * u),
                    ad.narrow(params, off + 2 * u, off + 3 * u),
                )
            )
        return layers

    def log_density(self, x, params):
        return flow_log_density(x, self.split_layers(params))


def make_head(density, flow_layers=2, flow_units=16):
    if density == "gaussian":
        return GaussianHead()
    if density == "dsf":
        return DsfHead(flow_layers=flow_layers, flow_units=flow_units)
    raise ValueError(f"unknown density head: {density!r}")


class ConditionalModelBank:
    """All conditional nets of a model: observational plus intervention slots.

    The observational bank holds one net per node (phi_j^(1)). Regimes reuse
    those same tensors for every untargeted node, so mutating phi_j^(1) is
    visible in every regime that leaves j alone. Targeted (regime k, node j)
    pairs are mapped to rows of a second stacked bank via `slot_index`.
    With perfect_masked=True the slot nets read an all-zero input (their
    conditionals are free marginals, as used for unknown-target training).
    """

    def __init__(self, d, head, hidden_layers, hidden_units, rng,
                 slot_pairs=(), perfect_masked=False, slope=0.01):
        self.d = d
        self.head = head
        self.perfect_masked = perfect_masked
        self.obs = NodeNets(d, d, hidden_layers, hidden_units, head.out_dim, rng, slope)
        self.slot_pairs = [(int(k), int(j)) for k, j in slot_pairs]
        self.slot_index = {pair: s for s, pair in enumerate(self.slot_pairs)}
        if self.slot_pairs:
            self.slots = NodeNets(len(self.slot_pairs), d, hidden_layers,
                                  hidden_units, head.out_dim, rng, slope)
        else:
            self.slots = None
        self._hidden_layers = hidden_layers
        self._hidden_units = hidden_units
        self._slope = slope

    def parameters(self):
        params = self.obs.parameters()
        if self.slots is not None:
            params = params + self.slots.parameters()
        return params

    def slot_map(self, n_regimes):
        """(K, d) int array mapping (regime, node) to a slot row (0 filler)."""
        m = np.zeros((n_regimes, self.d), dtype=np.intp)
        for (k, j), s in self.slot_index.items():
            m[k, j] = s
        return m

    def to_json(self):
        def dump(nets):
            return [
                {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
                for t in nets.parameters()
            ]

        doc = {
            "d": self.d,
            "head": {"name": self.head.name},
            "hidden_layers": self._hidden_layers,
            "hidden_units": self._hidden_units,
            "slope": self._slope,
            "perfect_masked": self.perfect_masked,
            "slot_pairs": [list(p) for p in self.slot_pairs],
            "obs": dump(self.obs),
        }
        if self.head.name == "dsf":
            doc["head"]["flow_layers"] = self.head.flow_layers
            doc["head"]["flow_units"] = self.head.flow_units
        if self.slots is not None:
            doc["slots"] = dump(self.slots)
        return doc

    @classmethod
    def from_json(cls, doc):
        head = make_head(
            doc["head"]["name"],
            flow_layers=doc["head"].get("flow_layers", 2),
            flow_units=doc["head"].get("flow_units", 16),
        )
        bank = cls(
            doc["d"], head, doc["hidden_layers"], doc["hidden_units"],
            np.random.default_rng(0),
            slot_pairs=[tuple(p) for p in doc["slot_pairs"]],
            perfect_masked=doc["perfect_masked"], slope=doc["slope"],
        )

        def load(nets, dumped):
            for t, entry in zip(nets.parameters(), dumped):
                arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
                if arr.shape != t.data.shape:
                    raise ValueError(f"model document shape mismatch: {arr.shape} vs {t.data.shape}")
                t.data = arr

        load(bank.obs, doc["obs"])
        if bank.slots is not None:
            load(bank.slots, doc["slots"])
        return bank

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))
