"""Attention layers over fixed-size kNN subgraphs.

A subgraph holds a seed node and its k nearest neighbors (L = k + 1 rows),
zero-padded when the seed has fewer neighbors. Padded rows are masked: they
receive and contribute no attention weight and produce zero outputs.

The public single-subgraph functions (:func:`a_x`, :func:`q_attention`,
:func:`self_attention`, :func:`fuse`) spell out each step. Layers run through
the batched :func:`layer_forward` / :func:`layer_backward` pair, which works
on ``(B, L, M)`` stacks and is also what training differentiates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .graph import FeatureMatrix, KnnGraph, as_features

VARIANTS = ("plain_gcn", "self", "qart", "qart_tilde", "band", "band_tilde")
FUSIONS = ("weighted_sum", "plain_sum", "elementwise_product")
MASK_FILL = -1e30

_USES_SELF = {"self", "qart_tilde", "band", "band_tilde"}
_USES_QART = {"qart", "qart_tilde", "band", "band_tilde"}
_TILDE = {"qart_tilde", "band_tilde"}


@dataclass(frozen=True)
class AttentionParams:
    """Weights of one layer. ``slope`` is the leaky-rectifier negative slope;
    ``slope=1`` gives the identity activation."""

    w_self_q: np.ndarray
    w_self_k: np.ndarray
    w_qart_q: np.ndarray
    w_qart_k: np.ndarray
    theta_qart: float
    theta_self: float
    w_l: np.ndarray
    variant: str = "band"
    fusion: str = "weighted_sum"
    use_w_qart: bool = True
    slope: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.fusion not in FUSIONS:
            raise ValidationError(f"unknown fusion {self.fusion!r}")
        for name in ("w_self_q", "w_self_k", "w_qart_q", "w_qart_k", "w_l"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 2 or not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} must be a finite matrix")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "theta_qart", float(self.theta_qart))
        object.__setattr__(self, "theta_self", float(self.theta_self))
        m, md = self.w_self_q.shape
        if self.w_self_k.shape != (m, md):
            raise ValidationError("w_self_q and w_self_k must share a shape")
        if self.w_l.shape[0] != m:
            raise ValidationError(f"w_l expects {self.w_l.shape[0]} input dims, self weights {m}")
        L = self.w_qart_q.shape[0]
        if self.w_qart_q.shape != (L, L) or self.w_qart_k.shape != (L, L):
            raise ValidationError("qart weights must both be L x L")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(L, M, M_d, M')"""
        return self.w_qart_q.shape[0], self.w_self_q.shape[0], self.w_self_q.shape[1], self.w_l.shape[1]

    @classmethod
    def init(cls, L: int, M: int, M_out: int | None = None, M_d: int | None = None, *,
             rng: np.random.Generator | int | None = 0, scale: float = 0.05, **flags) -> "AttentionParams":
        """Near-identity initialisation: identity blocks plus Gaussian noise of std ``scale``."""
        rng = np.random.default_rng(rng)
        M_out = M if M_out is None else M_out
        M_d = M if M_d is None else M_d

        def eye_noise(r, c):
            return np.eye(r, c) + scale * rng.standard_normal((r, c))

        return cls(eye_noise(M, M_d), eye_noise(M, M_d), eye_noise(L, L), eye_noise(L, L),
                   1.0, 1.0, eye_noise(M, M_out), **flags)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_self_q": self.w_self_q, "w_self_k": self.w_self_k, "w_qart_q": self.w_qart_q,
                "w_qart_k": self.w_qart_k, "theta_qart": np.array(self.theta_qart),
                "theta_self": np.array(self.theta_self), "w_l": self.w_l}

    def with_arrays(self, **arrays) -> "AttentionParams":
        fixed = {k: (float(v) if k.startswith("theta") else v) for k, v in arrays.items()}
        return replace(self, **fixed)


@dataclass(frozen=True)
class Subgraph:
    node_ids: np.ndarray
    features: np.ndarray
    mask: np.ndarray
    probe_index: int = 0
    adjacency: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if x.ndim != 2 or mask.shape != (x.shape[0],):
            raise ValidationError("features must be L x M with one mask flag per row")
        if np.any(x[~mask] != 0):
            raise ValidationError("padded rows must be zero")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "node_ids", np.asarray(self.node_ids, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_features(cls, features, mask=None, adjacency=None) -> "Subgraph":
        x = np.asarray(features, dtype=np.float64)
        if mask is None:
            mask = np.any(x != 0, axis=1)
        return cls(np.arange(x.shape[0]), x, mask, 0, adjacency)


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray
    kind: str
    mask: np.ndarray | None = None


# --------------------------------------------------------------------------
# Single-subgraph building blocks
# --------------------------------------------------------------------------


def _row_normalize(a: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.divide(a, n, out=np.zeros_like(a), where=n > 0)


def _as_subgraph(sub) -> Subgraph:
    return sub if isinstance(sub, Subgraph) else Subgraph.from_features(sub)


def a_x(sub) -> AttentionMap:
    """Gram matrix of the subgraph features with each row L2-normalised."""
    sub = _as_subgraph(sub)
    x = sub.features
    g = x @ x.T
    g[~sub.mask] = 0.0
    g[:, ~sub.mask] = 0.0
    return AttentionMap(_row_normalize(g), "a_x", sub.mask)


def _qart_weights(params: AttentionParams, L: int) -> tuple[np.ndarray, np.ndarray]:
    if params.use_w_qart:
        if params.w_qart_q.shape[0] != L:
            raise ValidationError(f"qart weights are {params.w_qart_q.shape[0]}x.. but subgraph has L={L}")
        return params.w_qart_q, params.w_qart_k
    eye = np.eye(L)
    return eye, eye


def q_attention(ax: AttentionMap, params: AttentionParams) -> AttentionMap:
    """``(A W_q)(A W_k)^T``; with ``use_w_qart=False`` this is ``A A^T``."""
    a = np.asarray(ax.values, dtype=np.float64)
    wq, wk = _qart_weights(params, a.shape[0])
    return AttentionMap((a @ wq) @ (a @ wk).T, "a_qart", ax.mask)


def self_attention(sub, params: AttentionParams, fill_masked: bool = True) -> AttentionMap:
    """Scaled dot-product scores ``(X W_q)(X W_k)^T / sqrt(M_d)``.

    Scores touching a padded row or column are replaced by ``MASK_FILL`` so a
    softmax gives them no weight; ``fill_masked=False`` leaves them raw (zero).
    """
    sub = _as_subgraph(sub)
    x = sub.features
    md = params.w_self_q.shape[1]
    s = (x @ params.w_self_q) @ (x @ params.w_self_k).T / np.sqrt(md)
    if fill_masked:
        valid = sub.mask[:, None] & sub.mask[None, :]
        s = np.where(valid, s, MASK_FILL)
    return AttentionMap(s, "a_self", sub.mask)


def _combine(aq, as_, params: AttentionParams, variant: str):
    if variant == "self":
        return params.theta_self * as_
    if variant in ("qart", "qart_tilde"):
        return params.theta_qart * aq
    if params.fusion == "weighted_sum":
        return params.theta_qart * aq + params.theta_self * as_
    if params.fusion == "plain_sum":
        return aq + as_
    return aq * as_


def masked_softmax(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Row softmax over ``valid`` entries; rows with no valid entry become zero."""
    z = np.where(valid, logits, -np.inf)
    mx = np.max(z, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(valid, np.exp(z - mx), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def fuse(aq: AttentionMap | None, as_: AttentionMap | None, params: AttentionParams,
         mask=None, variant: str = "band") -> AttentionMap:
    """Row-softmax fusion of the Q-attention and self-attention maps.

    ``variant`` picks which maps take part (``self``, ``qart``/``qart_tilde`` or
    the two ``band`` forms); ``params.fusion`` picks how two maps combine.
    """
    ref = aq if aq is not None else as_
    L = ref.values.shape[0]
    if mask is None:
        mask = ref.mask if ref.mask is not None else np.ones(L, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    valid = mask[:, None] & mask[None, :]
    zero = np.zeros((L, L))
    q = zero if aq is None else np.where(valid, aq.values, 0.0)
    s = zero if as_ is None else np.where(valid, as_.values, 0.0)
    return AttentionMap(masked_softmax(_combine(q, s, params, variant), valid), "a_band", mask)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def normalized_adjacency(adjacency: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with padded rows and columns zeroed."""
    a = np.asarray(adjacency, dtype=np.float64)
    L = a.shape[-1]
    if mask is None:
        mask = np.ones(a.shape[:-1], dtype=bool)
    valid = mask[..., :, None] & mask[..., None, :]
    at = np.where(valid, a + np.eye(L), 0.0)
    deg = at.sum(axis=-1)
    inv = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    return inv[..., :, None] * at * inv[..., None, :]


def plain_gcn_layer(features, adjacency, w_l, slope: float = 0.2) -> FeatureMatrix:
    """Symmetric-normalised GCN layer ``act(D^-1/2 (A+I) D^-1/2 X W)``."""
    x = np.asarray(features.data if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape != (x.shape[0], x.shape[0]):
        raise ValidationError("adjacency must be L x L")
    if not np.array_equal(a, a.T) or not np.all((a == 0) | (a == 1)):
        raise ValidationError("adjacency must be symmetric and binary")
    mask = np.any(x != 0, axis=1) | (a.sum(axis=1) > 0)
    return FeatureMatrix(leaky_relu(normalized_adjacency(a, mask) @ x @ np.asarray(w_l), slope))


def b_attention_layer(sub, params: AttentionParams) -> FeatureMatrix:
    """One layer ``act(A_band X W_l)`` on a single subgraph."""
    sub = _as_subgraph(sub)
    adj = None if sub.adjacency is None else sub.adjacency[None]
    out, _ = layer_forward(sub.features[None], sub.mask[None], params, adj)
    return FeatureMatrix(out[0])


def attention_map(sub, params: AttentionParams) -> AttentionMap:
    """The row-stochastic map the layer multiplies features with."""
    sub = _as_subgraph(sub)
    adj = None if sub.adjacency is None else sub.adjacency[None]
    _, cache = layer_forward(sub.features[None], sub.mask[None], params, adj)
    return AttentionMap(cache["P"][0], "a_band", sub.mask)


# --------------------------------------------------------------------------
# Batched forward / backward
# --------------------------------------------------------------------------


def _bT(a):
    return np.swapaxes(a, -1, -2)


def layer_forward(x: np.ndarray, mask: np.ndarray, params: AttentionParams, adjacency=None):
    """Forward one layer on a ``(B, L, M)`` stack. Returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    B, L, M = x.shape
    valid = mask[:, :, None] & mask[:, None, :]
    v = params.variant
    cache = {"x": x, "mask": mask, "valid": valid}

    if v == "plain_gcn":
        if adjacency is None:
            raise ValidationError("plain_gcn variant needs a subgraph adjacency")
        P = normalized_adjacency(adjacency, mask)
    else:
        aq = as_ = None
        if v in _USES_SELF:
            qs = x @ params.w_self_q
            ks = x @ params.w_self_k
            c = np.sqrt(params.w_self_q.shape[1])
            as_ = qs @ _bT(ks) / c
            cache.update(qs=qs, ks=ks, c=c, as_=as_)
        if v in _USES_QART:
            if v in _TILDE:
                base = as_
            else:
                g = x @ _bT(x)
                base = _row_normalize(g)
                cache.update(g=g)
            wq, wk = _qart_weights(params, L)
            q = base @ wq
            k = base @ wk
            aq = q @ _bT(k)
            cache.update(base=base, wq=wq, wk=wk, q=q, k=k, aq=aq)
        z = _combine(aq, as_, params, v)
        P = masked_softmax(z, valid)

    y = P @ x
    u = y @ params.w_l
    out = leaky_relu(u, params.slope) * mask[:, :, None]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite layer output")
    cache.update(P=P, y=y, u=u)
    return out, cache


def _row_normalize_backward(dy: np.ndarray, a: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    y = np.divide(a, n, out=np.zeros_like(a), where=n > 0)
    proj = np.sum(y * dy, axis=-1, keepdims=True)
    return np.divide(dy - y * proj, n, out=np.zeros_like(a), where=n > 0)


def layer_backward(dout: np.ndarray, cache: dict, params: AttentionParams):
    """Reverse pass of :func:`layer_forward`. Returns ``(d_input, grads)``."""
    x, mask, P = cache["x"], cache["mask"], cache["P"]
    v = params.variant
    grads = {name: np.zeros_like(a, dtype=np.float64) for name, a in params.arrays().items()}

    du = dout * mask[:, :, None] * np.where(cache["u"] > 0, 1.0, params.slope)
    grads["w_l"] = np.einsum("blm,bln->mn", cache["y"], du)
    dy = du @ params.w_l.T
    dx = _bT(P) @ dy
    if v == "plain_gcn":
        return dx, grads

    dP = dy @ _bT(x)
    dz = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    aq, as_ = cache.get("aq"), cache.get("as_")
    daq = das = None
    if v == "self":
        grads["theta_self"] = np.array(np.sum(dz * as_))
        das = params.theta_self * dz
    elif v in ("qart", "qart_tilde"):
        grads["theta_qart"] = np.array(np.sum(dz * aq))
        daq = params.theta_qart * dz
    elif params.fusion == "weighted_sum":
        grads["theta_qart"] = np.array(np.sum(dz * aq))
        grads["theta_self"] = np.array(np.sum(dz * as_))
        daq = params.theta_qart * dz
        das = params.theta_self * dz
    elif params.fusion == "plain_sum":
        daq, das = dz, dz
    else:
        daq, das = dz * as_, dz * aq

    if daq is not None:
        q, k, base = cache["q"], cache["k"], cache["base"]
        dq = daq @ k
        dk = _bT(daq) @ q
        if params.use_w_qart:
            grads["w_qart_q"] = np.einsum("bli,blj->ij", base, dq)
            grads["w_qart_k"] = np.einsum("bli,blj->ij", base, dk)
        dbase = dq @ cache["wq"].T + dk @ cache["wk"].T
        if v in _TILDE:
            das = dbase if das is None else das + dbase
        else:
            dg = _row_normalize_backward(dbase, cache["g"])
            dx = dx + (dg + _bT(dg)) @ x

    if das is not None:
        qs, ks, c = cache["qs"], cache["ks"], cache["c"]
        dqs = das @ ks / c
        dks = _bT(das) @ qs / c
        grads["w_self_q"] = np.einsum("blm,bld->md", x, dqs)
        grads["w_self_k"] = np.einsum("blm,bld->md", x, dks)
        dx = dx + dqs @ params.w_self_q.T + dks @ params.w_self_k.T

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return dx, grads


# --------------------------------------------------------------------------
# Subgraph sampling
# --------------------------------------------------------------------------


def sample_subgraph(features, graph: KnnGraph, seed_node: int, size: int | None = None) -> Subgraph:
    """Seed node followed by its kNN list, zero-padded to ``size`` (default k + 1).

    The adjacency links the seed to each neighbor plus any kNN edge among the
    neighbors themselves, symmetrised.
    """
    fm = as_features(features)
    L = graph.k + 1 if size is None else size
    nb = graph.neighbor_ids(seed_node)[: L - 1]
    ids = np.concatenate([[seed_node], nb])
    x = np.zeros((L, fm.cols))
    x[: ids.size] = fm.data[ids]
    mask = np.zeros(L, dtype=bool)
    mask[: ids.size] = True
    node_ids = np.full(L, -1, dtype=np.int64)
    node_ids[: ids.size] = ids
    pos = {int(n): t for t, n in enumerate(ids)}
    adj = np.zeros((L, L))
    for t, n in enumerate(ids):
        for j in graph.neighbor_ids(int(n)):
            s = pos.get(int(j))
            if s is not None and s != t:
                adj[t, s] = adj[s, t] = 1.0
    return Subgraph(node_ids, x, mask, 0, adj)


def stack_subgraphs(subs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([s.features for s in subs]), np.stack([s.mask for s in subs]),
            np.stack([s.adjacency for s in subs]))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CKPT_MAGIC = b"BATT"
CKPT_VERSION = 1


def save_checkpoint(path, layers: list[AttentionParams], head: np.ndarray | None = None,
                    head_slope: float = 0.2) -> None:
    """Binary ``BATT`` checkpoint, all integers u32 and all reals f64, little-endian.

    Layout: magic, version, layer count; per layer the dims ``L, M, M_d, M'``,
    variant/fusion indices and the ``use_w_qart`` flag, the activation slope,
    then ``w_self_q, w_self_k, w_qart_q, w_qart_k, theta_qart, theta_self,
    w_l``; finally a head flag and, when set, its shape, slope and matrix.
    """
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(layers))]
    for p in layers:
        parts.append(struct.pack("<4I", *p.dims))
        parts.append(struct.pack("<3I", VARIANTS.index(p.variant), FUSIONS.index(p.fusion), int(p.use_w_qart)))
        parts.append(struct.pack("<d", p.slope))
        for a in p.arrays().values():
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    if head is None:
        parts.append(struct.pack("<I", 0))
    else:
        parts.append(struct.pack("<III", 1, *head.shape))
        parts.append(struct.pack("<d", head_slope))
        parts.append(np.ascontiguousarray(head, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[list[AttentionParams], np.ndarray | None, float]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValidationError(f"{path}: not a BATT checkpoint")
    off = 4

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, raw, off)
        off += struct.calcsize(fmt)
        return vals

    def mat(r, c):
        nonlocal off
        a = np.frombuffer(raw, dtype="<f8", count=r * c, offset=off).reshape(r, c).astype(np.float64)
        off += 8 * r * c
        return a

    version, n_layers = take("<II")
    if version != CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        L, M, Md, Mo = take("<4I")
        vi, fi, use = take("<3I")
        (slope,) = take("<d")
        wsq, wsk = mat(M, Md), mat(M, Md)
        wqq, wqk = mat(L, L), mat(L, L)
        (tq, ts) = take("<2d")
        wl = mat(M, Mo)
        layers.append(AttentionParams(wsq, wsk, wqq, wqk, tq, ts, wl, VARIANTS[vi], FUSIONS[fi], bool(use), slope))
    (has_head,) = take("<I")
    head, head_slope = None, 0.2
    if has_head:
        r, c = take("<II")
        (head_slope,) = take("<d")
        head = mat(r, c)
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    return layers, head, head_slope
