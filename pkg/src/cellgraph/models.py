"""The four benchmarked backbones (MLP, GAT, GINE, WCGCN-style) and the two
readout heads, all emitting per-node embeddings on the autodiff engine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

BACKBONE_KINDS = ("mlp", "gat", "gine", "wcgcn")
LEAKY_SLOPE = 0.2
KPI_BIN_COUNT = 4


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "gine"
    layers: int = 3
    hidden: int = 64
    epsilon: float = 0.0     # GINE self-weight, learnable
    gat_heads: int = 4

    def validate(self) -> None:
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden < 4:
            raise ValueError("hidden must be >= 4")
        if self.kind == "gat" and self.hidden % self.gat_heads != 0:
            raise ValueError("gat_heads must divide hidden")


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    def __init__(self, store: ad.ParamStore, rng, name: str, n_in: int, n_out: int,
                 bias_init: float = 0.0):
        self.w = store.add(f"{name}.w", glorot(rng, n_in, n_out))
        self.b = store.add(f"{name}.b", np.full(n_out, bias_init))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class Mlp2:
    """Linear -> relu -> Linear."""

    def __init__(self, store, rng, name, n_in, n_hidden, n_out, bias_init: float = 0.0):
        self.l1 = Linear(store, rng, f"{name}.l1", n_in, n_hidden, bias_init)
        self.l2 = Linear(store, rng, f"{name}.l2", n_hidden, n_out, bias_init)

    def __call__(self, x):
        return self.l2(ad.relu(self.l1(x)))


class MlpBackbone:
    """Structure-blind baseline: per-node linear->relu stack."""

    def __init__(self, cfg: BackboneConfig, in_dim: int, edge_dim: int, store, rng):
        self.cfg = cfg
        widths = [in_dim] + [cfg.hidden] * cfg.layers
        self.layers = [Linear(store, rng, f"mlp.layer{i}", widths[i], widths[i + 1])
                       for i in range(cfg.layers)]

    def forward(self, h, src, dst, eattr):
        for layer in self.layers:
            h = ad.relu(layer(h))
        return h


class GineLayer:
    def __init__(self, store, rng, name, in_dim, hidden, edge_dim, epsilon):
        self.phi = Linear(store, rng, f"{name}.edge_lift", edge_dim, in_dim)
        self.update = Mlp2(store, rng, f"{name}.update", in_dim, hidden, hidden)
        self.eps = store.add(f"{name}.eps", np.array(epsilon))

    def __call__(self, h, src, dst, eattr, n_nodes):
        msg = ad.relu(ad.add(ad.gather_rows(h, src), self.phi(eattr)))
        agg = ad.segment_sum(msg, dst, n_nodes)
        self_term = ad.mul(ad.add(1.0, self.eps), h)
        return self.update(ad.add(self_term, agg))


class GineBackbone:
    """Sum aggregation over relu'd neighbor messages with a learned edge lift."""

    def __init__(self, cfg: BackboneConfig, in_dim: int, edge_dim: int, store, rng):
        self.cfg = cfg
        widths = [in_dim] + [cfg.hidden] * cfg.layers
        self.layers = [GineLayer(store, rng, f"gine.layer{i}", widths[i], cfg.hidden,
                                 edge_dim, cfg.epsilon)
                       for i in range(cfg.layers)]

    def forward(self, h, src, dst, eattr):
        n = h.shape[0] if isinstance(h, np.ndarray) else h.values.shape[0]
        for i, layer in enumerate(self.layers):
            h = layer(h, src, dst, eattr, n)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h


class WcgcnLayer:
    def __init__(self, store, rng, name, in_dim, hidden, edge_dim):
        self.message = Linear(store, rng, f"{name}.message", in_dim + edge_dim, hidden)
        self.update = Mlp2(store, rng, f"{name}.update", in_dim + hidden, hidden, hidden)

    def __call__(self, h, src, dst, eattr, n_nodes):
        msg = ad.relu(self.message(ad.concat([ad.gather_rows(h, src), eattr], axis=1)))
        pooled = ad.segment_max(msg, dst, n_nodes)
        return self.update(ad.concat([h, pooled], axis=1))


class WcgcnBackbone:
    """Like GINE but pools messages with an elementwise max (duplicate-invariant)."""

    def __init__(self, cfg: BackboneConfig, in_dim: int, edge_dim: int, store, rng):
        self.cfg = cfg
        widths = [in_dim] + [cfg.hidden] * cfg.layers
        self.layers = [WcgcnLayer(store, rng, f"wcgcn.layer{i}", widths[i], cfg.hidden, edge_dim)
                       for i in range(cfg.layers)]

    def forward(self, h, src, dst, eattr):
        n = h.shape[0] if isinstance(h, np.ndarray) else h.values.shape[0]
        for i, layer in enumerate(self.layers):
            h = layer(h, src, dst, eattr, n)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h


class GatLayer:
    """Multi-head attention over in-neighbors with edge-feature-augmented scores.

    Every node gets an implicit self-loop (zero edge attributes) so isolated
    nodes stay well-defined.
    """

    def __init__(self, store, rng, name, in_dim, hidden, edge_dim, heads):
        self.heads = heads
        self.dh = hidden // heads
        self.w = [Linear(store, rng, f"{name}.h{k}.w", in_dim, self.dh) for k in range(heads)]
        self.we = [Linear(store, rng, f"{name}.h{k}.we", edge_dim, self.dh) for k in range(heads)]
        self.a_src = [store.add(f"{name}.h{k}.a_src", glorot(rng, self.dh, 1)[:, 0]) for k in range(heads)]
        self.a_dst = [store.add(f"{name}.h{k}.a_dst", glorot(rng, self.dh, 1)[:, 0]) for k in range(heads)]
        self.a_edge = [store.add(f"{name}.h{k}.a_edge", glorot(rng, self.dh, 1)[:, 0]) for k in range(heads)]
        self.last_alpha: np.ndarray | None = None
        self.last_edges: tuple[np.ndarray, np.ndarray] | None = None

    def __call__(self, h, src, dst, eattr, n_nodes):
        loop = np.arange(n_nodes, dtype=np.int64)
        src2 = np.concatenate([np.asarray(src, dtype=np.int64), loop])
        dst2 = np.concatenate([np.asarray(dst, dtype=np.int64), loop])
        eattr2 = ad.concat(
            [eattr, ad.Tensor(np.zeros((n_nodes, eattr.values.shape[1] if isinstance(eattr, ad.Tensor) else eattr.shape[1])))],
            axis=0)
        outs = []
        alphas = []
        for k in range(self.heads):
            z = self.w[k](h)
            ze = self.we[k](eattr2)
            zsrc = ad.gather_rows(z, src2)
            zdst = ad.gather_rows(z, dst2)
            logits = ad.leaky_relu(
                ad.add(ad.add(ad.row_sum(ad.mul(zsrc, self.a_src[k])),
                              ad.row_sum(ad.mul(zdst, self.a_dst[k]))),
                       ad.row_sum(ad.mul(ze, self.a_edge[k]))),
                LEAKY_SLOPE)
            alpha = ad.segment_softmax(logits, dst2, n_nodes)
            alphas.append(alpha.values.copy())
            weighted = ad.mul(zsrc, ad.reshape(alpha, (src2.size, 1)))
            outs.append(ad.segment_sum(weighted, dst2, n_nodes))
        self.last_alpha = np.stack(alphas, axis=1)  # (edges + self-loops, heads)
        self.last_edges = (src2, dst2)
        return ad.leaky_relu(ad.concat(outs, axis=1), LEAKY_SLOPE)


class GatBackbone:
    def __init__(self, cfg: BackboneConfig, in_dim: int, edge_dim: int, store, rng):
        cfg.validate()
        self.cfg = cfg
        widths = [in_dim] + [cfg.hidden] * cfg.layers
        self.layers = [GatLayer(store, rng, f"gat.layer{i}", widths[i], cfg.hidden,
                                edge_dim, cfg.gat_heads)
                       for i in range(cfg.layers)]

    def forward(self, h, src, dst, eattr):
        n = h.shape[0] if isinstance(h, np.ndarray) else h.values.shape[0]
        if not isinstance(eattr, ad.Tensor):
            eattr = ad.Tensor(eattr)
        for layer in self.layers:
            h = layer(h, src, dst, eattr, n)
        return h


_BACKBONES = {
    "mlp": MlpBackbone,
    "gat": GatBackbone,
    "gine": GineBackbone,
    "wcgcn": WcgcnBackbone,
}


def build_backbone(cfg: BackboneConfig, in_dim: int, edge_dim: int,
                   rng: np.random.Generator, store: ad.ParamStore | None = None):
    """Instantiate a backbone, registering its parameters into a (new) store."""
    cfg.validate()
    store = store if store is not None else ad.ParamStore()
    model = _BACKBONES[cfg.kind](cfg, in_dim, edge_dim, store, rng)
    return model, store


# Head biases start slightly positive: a relu-silenced row would otherwise land
# l2_normalize exactly on its non-differentiable origin.
HEAD_BIAS_INIT = 0.05


class PretextHead:
    """Two-layer perceptron to embedding width, l2-normalized so cosine targets
    in [0, 1] are reachable with bounded gradients."""

    def __init__(self, hidden: int, rng, store: ad.ParamStore | None = None):
        self.store = store if store is not None else ad.ParamStore()
        self.net = Mlp2(self.store, rng, "ro_pt", hidden, hidden, hidden, HEAD_BIAS_INIT)

    def __call__(self, h):
        return ad.l2_normalize(self.net(h))


class DownstreamHead:
    """Two-layer perceptron to the 4 KPI bins, softmaxed onto the simplex."""

    def __init__(self, hidden: int, rng, store: ad.ParamStore | None = None):
        self.store = store if store is not None else ad.ParamStore()
        self.net = Mlp2(self.store, rng, "ro_ft", hidden, hidden, KPI_BIN_COUNT, HEAD_BIAS_INIT)

    def __call__(self, h):
        return ad.softmax_rows(self.net(h))


def forward_embeddings(model, x: np.ndarray, src, dst, eattr: np.ndarray):
    """Wrap raw arrays as constants and run the backbone."""
    return model.forward(ad.Tensor(x), src, dst, ad.Tensor(eattr))
