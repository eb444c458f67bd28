"""Central finite-difference oracle for the hand-written backward pass."""

import numpy as np

from battention.attention import FUSIONS, VARIANTS, AttentionParams, leaky_relu, layer_forward
from battention.training import Network, loss_and_grads

STEP = 1e-5
MARGIN_POS, MARGIN_NEG = 0.9, 0.3
# Instances this close to a rectifier or hinge corner make central differences
# straddle the kink; they say nothing about the analytic gradient.
KINK_GAP = 1e-3
MIN_GRAD = 1e-6

CONFIGS = [(v, f) for v in VARIANTS for f in (FUSIONS if v.startswith("band") else ("weighted_sum",))]


def make_instance(seed, variant, fusion, layers=1, L=5, M=4, M_d=3, padded=1):
    """Small subgraph, near-identity weights and probe-anchored pairs with random labels."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((L, M))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    mask = np.ones(L, dtype=bool)
    mask[L - padded:] = False
    x[~mask] = 0.0
    adj = np.triu((rng.random((L, L)) < 0.5).astype(float), 1)
    adj = adj + adj.T
    adj[~mask] = 0.0
    adj[:, ~mask] = 0.0

    def near_eye(r, c):
        return np.eye(r, c) + 0.3 * rng.standard_normal((r, c))

    stack = tuple(
        AttentionParams(near_eye(M, M_d), near_eye(M, M_d), near_eye(L, L), near_eye(L, L),
                        rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), near_eye(M, M),
                        variant=variant, fusion=fusion, use_w_qart=bool(rng.integers(0, 2)))
        for _ in range(layers)
    )
    net = Network(stack, near_eye(M, M))
    real = np.nonzero(mask)[0]
    labels = rng.choice([-1, 1], size=real.size - 1)
    pairs = np.array([(0, 0, int(t), int(lab)) for t, lab in zip(real[1:], labels)])
    return net, x[None], mask[None], adj[None], pairs


def _tensors(net):
    for i, p in enumerate(net.layers):
        for name, a in p.arrays().items():
            yield ("layer", i, name), np.atleast_1d(a)
    if net.head is not None:
        yield ("head",), net.head


def _replace(net, key, values):
    if key[0] == "head":
        return Network(net.layers, values.reshape(net.head.shape), net.head_slope)
    layers = list(net.layers)
    p = layers[key[1]]
    layers[key[1]] = p.with_arrays(**{key[2]: values.reshape(np.shape(p.arrays()[key[2]]))})
    return Network(tuple(layers), net.head, net.head_slope)


def near_kink(net, x, mask, adj, pairs):
    """True when a rectifier input or hinge argument sits within KINK_GAP of zero."""
    h = x
    for p in net.layers:
        h, cache = layer_forward(h, mask, p, adj)
        if np.min(np.abs(cache["u"][mask])) < KINK_GAP:
            return True
    u = h @ net.head
    if np.min(np.abs(u[mask])) < KINK_GAP:
        return True
    out = leaky_relu(u, net.head_slope)
    y = out[0]
    s = np.array([y[a] @ y[b] / (np.linalg.norm(y[a]) * np.linalg.norm(y[b])) for _, a, b, _ in pairs])
    args = np.where(pairs[:, 3] > 0, MARGIN_POS - s, s - MARGIN_NEG)
    return bool(np.min(np.abs(args)) < KINK_GAP)


def check(net, x, mask, adj, pairs, step=STEP):
    """Per-tensor relative error ``max|a - n| / max(max|a|, max|n|)`` of analytic vs numeric."""
    _, layer_grads, head_grad = loss_and_grads(net, x, mask, adj, pairs, MARGIN_POS, MARGIN_NEG)
    errors = {}
    for key, arr in _tensors(net):
        analytic = (head_grad if key[0] == "head" else np.atleast_1d(layer_grads[key[1]][key[2]])).ravel()
        base = arr.ravel().astype(np.float64)
        numeric = np.empty(base.size)
        for i in range(base.size):
            e = base.copy()
            e[i] += step
            up = loss_and_grads(_replace(net, key, e), x, mask, adj, pairs, MARGIN_POS, MARGIN_NEG)[0]
            e[i] -= 2 * step
            down = loss_and_grads(_replace(net, key, e), x, mask, adj, pairs, MARGIN_POS, MARGIN_NEG)[0]
            numeric[i] = (up - down) / (2 * step)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
        errors[key] = 0.0 if scale == 0 else float(np.max(np.abs(analytic - numeric)) / scale)
    return errors


def informative_instances(variant, fusion, count, layers=1, start=0):
    """First ``count`` seeds whose instance is away from kinks and has a non-trivial gradient."""
    seed = start
    found = []
    while len(found) < count:
        inst = make_instance(seed, variant, fusion, layers)
        seed += 1
        if near_kink(*inst):
            continue
        _, lg, hg = loss_and_grads(*inst[:4], inst[4], MARGIN_POS, MARGIN_NEG)
        peak = max([np.max(np.abs(hg))] + [np.max(np.abs(g)) for d in lg for g in d.values()])
        if peak < MIN_GRAD:
            continue
        found.append(inst)
    return found
