"""Supervised pair training of an attention-layer stack on kNN subgraphs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import attention as att
from .attention import AttentionParams
from .errors import NumericError, ParameterError, ValidationError
from .graph import FeatureMatrix, KnnGraph, as_features, as_labels, build_knn_graph, l2_normalize
from .io import parse_kv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.008
    epochs: int = 50
    margin_pos: float = 0.9
    margin_neg: float = 0.3
    k: int = 10
    k_seed: int = 1
    layers: int = 1
    seed: int = 0
    variant: str = "band"
    fusion: str = "weighted_sum"
    use_w_qart: bool = True
    slope: float = 0.2
    head: bool = True
    pair_policy: str = "probe"
    init_scale: float = 0.05

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be non-negative")
        if not (0 < self.margin_pos < 1 and 0 < self.margin_neg < 1):
            raise ParameterError("margins must lie in (0, 1)")
        if self.layers < 1 or self.epochs < 1 or self.k < 1 or self.k_seed < 1:
            raise ParameterError("layers, epochs, k and k_seed must be >= 1")
        if self.pair_policy not in ("probe", "all"):
            raise ParameterError("pair_policy must be 'probe' or 'all'")
        if self.variant not in att.VARIANTS or self.fusion not in att.FUSIONS:
            raise ParameterError(f"bad variant/fusion {self.variant!r}/{self.fusion!r}")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Build from ``key=value`` lines; unknown keys are rejected."""
        types = {f.name: f.type for f in fields(cls)}
        raw = parse_kv(text, allowed=types)
        values = {}
        for key, val in raw.items():
            kind = types[key]
            if kind == "bool":
                if val.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValidationError(f"{key}: expected a boolean, got {val!r}")
                values[key] = val.lower() in ("1", "true", "yes")
            elif kind == "int":
                values[key] = int(val)
            elif kind == "float":
                values[key] = float(val)
            else:
                values[key] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class Network:
    """Attention layers followed by an optional linear head with leaky activation."""

    layers: tuple[AttentionParams, ...]
    head: np.ndarray | None = None
    head_slope: float = 0.2

    @property
    def subgraph_size(self) -> int:
        return self.layers[0].dims[0]

    @classmethod
    def init(cls, L: int, M: int, config: TrainConfig) -> "Network":
        rng = np.random.default_rng(config.seed)
        layers = tuple(
            AttentionParams.init(L, M, rng=rng, scale=config.init_scale, variant=config.variant,
                                 fusion=config.fusion, use_w_qart=config.use_w_qart, slope=config.slope)
            for _ in range(config.layers)
        )
        head = np.eye(M) + config.init_scale * rng.standard_normal((M, M)) if config.head else None
        return cls(layers, head, config.slope)


@dataclass(frozen=True)
class PairBatch:
    """Node pairs inside one subgraph, as rows ``(a, b, label)`` with label +1/-1."""

    pairs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 3)
        if np.any(p[:, 0] == p[:, 1]):
            raise ValidationError("pair endpoints must differ")
        if not np.all(np.isin(p[:, 2], (-1, 1))):
            raise ValidationError("pair labels must be +1 or -1")
        object.__setattr__(self, "pairs", p)

    def __len__(self):
        return self.pairs.shape[0]


def make_pairs(sub: att.Subgraph, labels, policy: str = "probe") -> PairBatch:
    """Probe-vs-neighbor pairs (``probe``) or every unmasked pair (``all``)."""
    lab = as_labels(labels)
    real = np.nonzero(sub.mask)[0]
    if policy == "probe":
        cand = [(sub.probe_index, int(t)) for t in real if t != sub.probe_index]
    else:
        cand = [(int(a), int(b)) for i, a in enumerate(real) for b in real[i + 1:]]
    rows = [(a, b, 1 if lab[sub.node_ids[a]] == lab[sub.node_ids[b]] else -1) for a, b in cand]
    return PairBatch(np.array(rows, dtype=np.int64).reshape(-1, 3))


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------


def _pair_loss(out: np.ndarray, pairs: np.ndarray, margin_pos: float, margin_neg: float):
    """Mean hinge loss over ``pairs`` rows ``(batch, a, b, label)`` and its gradient."""
    if pairs.shape[0] == 0:
        raise ValidationError("empty pair list")
    y = att._row_normalize(out)
    bi, a, b, lab = pairs.T
    s = np.sum(y[bi, a] * y[bi, b], axis=-1)
    pos = lab > 0
    per = np.where(pos, np.maximum(0.0, margin_pos - s), np.maximum(0.0, s - margin_neg))
    ds = np.where(pos, -(margin_pos - s > 0.0).astype(float), (s - margin_neg > 0.0).astype(float)) / pairs.shape[0]
    dy = np.zeros_like(y)
    np.add.at(dy, (bi, a), ds[:, None] * y[bi, b])
    np.add.at(dy, (bi, b), ds[:, None] * y[bi, a])
    return float(per.mean()), att._row_normalize_backward(dy, out)


def hinge_pair_loss(output_features, pairs: PairBatch, margin_pos: float = 0.9, margin_neg: float = 0.3) -> float:
    """Mean of ``max(0, m+ - s)`` over positive and ``max(0, s - m-)`` over negative pairs.

    ``s`` is the cosine between the two (L2-normalised) output rows.
    """
    out = np.asarray(output_features.data if isinstance(output_features, FeatureMatrix) else output_features,
                     dtype=np.float64)
    p = pairs.pairs if isinstance(pairs, PairBatch) else PairBatch(pairs).pairs
    p4 = np.column_stack([np.zeros(len(p), dtype=np.int64), p])
    return _pair_loss(out[None], p4, margin_pos, margin_neg)[0]


# --------------------------------------------------------------------------
# Forward / backward through the whole network
# --------------------------------------------------------------------------


def network_forward(net: Network, x, mask, adjacency=None):
    h = np.asarray(x, dtype=np.float64)
    caches = []
    for i, p in enumerate(net.layers):
        try:
            h, c = att.layer_forward(h, mask, p, adjacency)
        except NumericError as exc:
            raise NumericError(f"layer {i}: {exc}") from None
        caches.append(c)
    head_in = h
    if net.head is not None:
        u = h @ net.head
        h = att.leaky_relu(u, net.head_slope) * np.asarray(mask)[:, :, None]
        caches.append({"u": u, "h": head_in})
    return h, caches


def loss_and_grads(net: Network, x, mask, adjacency, pairs: np.ndarray, margin_pos: float, margin_neg: float):
    """Loss over batched pairs ``(batch, a, b, label)`` and gradients for every parameter.

    Returns ``(loss, layer_grads, head_grad)``.
    """
    out, caches = network_forward(net, x, mask, adjacency)
    loss, dout = _pair_loss(out, pairs, margin_pos, margin_neg)
    head_grad = None
    if net.head is not None:
        c = caches.pop()
        du = dout * np.where(c["u"] > 0, 1.0, net.head_slope) * np.asarray(mask)[:, :, None]
        head_grad = np.einsum("blm,bln->mn", c["h"], du)
        dout = du @ net.head.T
    layer_grads = [None] * len(net.layers)
    for i in reversed(range(len(net.layers))):
        try:
            dout, layer_grads[i] = att.layer_backward(dout, caches[i], net.layers[i])
        except NumericError as exc:
            raise NumericError(f"layer {i}: {exc}") from None
    return loss, layer_grads, head_grad


def backward(sub: att.Subgraph, net: Network | AttentionParams, pairs: PairBatch,
             margin_pos: float = 0.9, margin_neg: float = 0.3):
    """Gradients of :func:`hinge_pair_loss` for a single subgraph."""
    if isinstance(net, AttentionParams):
        net = Network((net,), None)
    p = pairs.pairs
    p4 = np.column_stack([np.zeros(len(p), dtype=np.int64), p])
    adj = None if sub.adjacency is None else sub.adjacency[None]
    _, layer_grads, head_grad = loss_and_grads(net, sub.features[None], sub.mask[None], adj, p4,
                                               margin_pos, margin_neg)
    return layer_grads, head_grad


# --------------------------------------------------------------------------
# Optimisation
# --------------------------------------------------------------------------


def cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    return lr0 * (1.0 + math.cos(math.pi * epoch / epochs)) / 2.0


def sgd_step(params, gradients, epoch: int, config: TrainConfig):
    """``params - lr(epoch) * grad`` with cosine-annealed ``lr``.

    Accepts a single :class:`AttentionParams` with its gradient dict, or a
    :class:`Network` with ``(layer_grads, head_grad)``.
    """
    lr = cosine_lr(config.learning_rate, epoch, config.epochs)
    if isinstance(params, AttentionParams):
        return _step_layer(params, gradients, lr)
    layer_grads, head_grad = gradients
    layers = tuple(_step_layer(p, g, lr) for p, g in zip(params.layers, layer_grads))
    head = None if params.head is None else params.head - lr * head_grad
    return replace(params, layers=layers, head=head)


def _step_layer(p: AttentionParams, g: dict, lr: float) -> AttentionParams:
    cur = p.arrays()
    for name, a in cur.items():
        if g[name].shape != a.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
    return p.with_arrays(**{name: a - lr * g[name] for name, a in cur.items()})


@dataclass
class TrainResult:
    network: Network
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def _all_subgraphs(x: FeatureMatrix, graph: KnnGraph, L: int):
    subs = [att.sample_subgraph(x, graph, i, L) for i in range(graph.n)]
    return subs, *att.stack_subgraphs(subs)


def train(features, labels, config: TrainConfig = TrainConfig(), network: Network | None = None) -> TrainResult:
    """Train on every node as a probe, ``k_seed`` subgraphs per SGD step.

    Each epoch visits the probes in a seeded random order; the recorded loss is
    the mean step loss over the epoch, measured before each update.
    """
    x = l2_normalize(as_features(features))
    lab = as_labels(labels)
    if len(lab) != x.rows:
        raise ValidationError("labels and features differ in length")
    graph = build_knn_graph(x, config.k)
    L = config.k + 1
    subs, X, mask, adj = _all_subgraphs(x, graph, L)
    pair_sets = [make_pairs(s, lab, config.pair_policy).pairs for s in subs]
    net = network if network is not None else Network.init(L, x.cols, config)
    rng = np.random.default_rng(config.seed + 1)
    result = TrainResult(net)
    for epoch in range(config.epochs):
        order = rng.permutation(x.rows)
        losses = []
        for start in range(0, len(order), config.k_seed):
            batch = order[start:start + config.k_seed]
            pairs = np.concatenate([
                np.column_stack([np.full(len(pair_sets[n]), b), pair_sets[n]])
                for b, n in enumerate(batch)
            ])
            if len(pairs) == 0:
                continue
            loss, lg, hg = loss_and_grads(net, X[batch], mask[batch], adj[batch], pairs,
                                          config.margin_pos, config.margin_neg)
            net = sgd_step(net, (lg, hg), epoch, config)
            losses.append(loss)
        result.losses.append(float(np.mean(losses)))
        result.lrs.append(cosine_lr(config.learning_rate, epoch, config.epochs))
        log.debug("epoch %d lr %.6f loss %.6f", epoch, result.lrs[-1], result.losses[-1])
    result.network = net
    return result


def enhance(features, network: Network, k: int | None = None, graph: KnnGraph | None = None,
            batch: int = 256) -> FeatureMatrix:
    """Run every node through the network as the probe of its own subgraph.

    Returns the L2-normalised probe rows of the network output.
    """
    x = l2_normalize(as_features(features))
    L = network.subgraph_size
    if graph is None:
        graph = build_knn_graph(x, L - 1 if k is None else k)
    subs, X, mask, adj = _all_subgraphs(x, graph, L)
    rows = []
    for start in range(0, x.rows, batch):
        out, _ = network_forward(network, X[start:start + batch], mask[start:start + batch],
                                 adj[start:start + batch])
        rows.append(out[:, 0, :])
    return l2_normalize(np.concatenate(rows))
