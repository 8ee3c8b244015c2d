"""Forward pass of the instance-aware geometric transformer.

Each iteration runs a kNN geometric self-attention on both clouds (the scene
side restricted by the current instance mask), a cross-attention in both
directions and an instance masking block that re-predicts the scene mask.

Every attention sublayer is post-norm: ``x = LN(x + MHA(x))`` followed by
``x = LN(x + FFN(x))`` with a two-layer ReLU feed-forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .embedding import EmbeddingConfig, sinusoidal_embed
from .errors import ShapeMismatch

MASK_NEG = -1e9
LN_EPS = 1e-5
DEFAULT_TAU = 0.6


@dataclass
class InstanceMask:
    allowed: np.ndarray
    confidence: np.ndarray

    @classmethod
    def all_allowed(cls, n: int, k: int) -> "InstanceMask":
        return cls(np.ones((n, k), dtype=bool), np.ones((n, k)))

    @property
    def additive(self) -> np.ndarray:
        return np.where(self.allowed, 0.0, MASK_NEG)


@dataclass
class AttentionLayer:
    """Multi-head attention sublayer plus feed-forward sublayer.

    ``wr`` projects the pair embedding into key space; ``None`` for plain
    (cross) attention.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ff1: np.ndarray
    ff1_b: np.ndarray
    ff2: np.ndarray
    ff2_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    wr: Optional[np.ndarray] = None

    TENSORS = ("wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "ff1", "ff1_b",
               "ff2", "ff2_b", "ln2_g", "ln2_b", "wr")


@dataclass
class MaskHead:
    w1: np.ndarray   # (d + d_t, d)
    b1: np.ndarray
    w2: np.ndarray   # (d,)
    b2: np.ndarray   # (1,)

    TENSORS = ("w1", "b1", "w2", "b2")


@dataclass
class TransformerModule:
    geo: AttentionLayer
    cross: AttentionLayer
    geodesic: AttentionLayer
    wg: np.ndarray
    mask_head: MaskHead


@dataclass
class WeightSet:
    w_in: np.ndarray
    w_out: np.ndarray
    modules: list = field(default_factory=list)
    heads: int = 4

    @property
    def d(self) -> int:
        return self.w_in.shape[1]

    @property
    def d_in(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_t(self) -> int:
        if self.modules:
            return self.modules[0].wg.shape[0]
        return self.d

    @property
    def n_iters(self) -> int:
        return len(self.modules)

    # -- construction -------------------------------------------------
    @classmethod
    def random(cls, d_in: int, d: int = 256, heads: int = 4, n_iters: int = 3,
               d_t: Optional[int] = None, d_ff: Optional[int] = None, seed: int = 0) -> "WeightSet":
        """Uniform ``±1/sqrt(fan_in)`` initialisation from a seeded generator."""
        if d % heads:
            raise ShapeMismatch("d must be divisible by the head count")
        d_t = d if d_t is None else d_t
        d_ff = 2 * d if d_ff is None else d_ff
        rng = np.random.default_rng(seed)

        def u(rows, cols=None):
            shape = (rows,) if cols is None else (rows, cols)
            return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(rows)

        def layer(with_r):
            return AttentionLayer(
                wq=u(d, d), wk=u(d, d), wv=u(d, d), wo=u(d, d),
                ln1_g=np.ones(d), ln1_b=np.zeros(d),
                ff1=u(d, d_ff), ff1_b=np.zeros(d_ff),
                ff2=u(d_ff, d), ff2_b=np.zeros(d),
                ln2_g=np.ones(d), ln2_b=np.zeros(d),
                wr=u(d_t, d) if with_r else None,
            )

        modules = [
            TransformerModule(
                geo=layer(True), cross=layer(False), geodesic=layer(True),
                wg=u(d_t, d_t),
                mask_head=MaskHead(w1=u(d + d_t, d), b1=np.zeros(d), w2=u(d), b2=np.zeros(1)),
            )
            for _ in range(n_iters)
        ]
        return cls(w_in=u(d_in, d), w_out=u(d, d), modules=modules, heads=heads)

    @classmethod
    def passthrough(cls, d_in: int, d: int = 256, heads: int = 4, n_iters: int = 3,
                    d_t: Optional[int] = None, mask_logit: float = 10.0) -> "WeightSet":
        """Weights whose attention and feed-forward branches output zero.

        The forward pass then reduces to zero-padding and layer normalisation,
        which keeps cosine similarities of zero-mean input rows intact. The
        masking head outputs the constant logit ``mask_logit``.
        """
        if d_in > d:
            raise ShapeMismatch("passthrough weights need d_in <= d")
        w = cls.random(d_in, d, heads, n_iters, d_t=d_t, seed=0)
        w.w_in = np.eye(d_in, d)
        w.w_out = np.eye(d)
        for m in w.modules:
            for lay in (m.geo, m.cross, m.geodesic):
                lay.wv[:] = 0.0
                lay.wo[:] = 0.0
                lay.ff2[:] = 0.0
            m.mask_head.w1[:] = 0.0
            m.mask_head.w2[:] = 0.0
            m.mask_head.b2[:] = mask_logit
        return w

    # -- flat tensor view used by the weight file format --------------
    def tensors(self) -> dict:
        out = {"w_in": self.w_in, "w_out": self.w_out}
        for t, m in enumerate(self.modules):
            for block in ("geo", "cross", "geodesic"):
                lay = getattr(m, block)
                for name in AttentionLayer.TENSORS:
                    arr = getattr(lay, name)
                    if arr is not None:
                        out[f"modules.{t}.{block}.{name}"] = arr
            out[f"modules.{t}.wg"] = m.wg
            for name in MaskHead.TENSORS:
                out[f"modules.{t}.mask_head.{name}"] = getattr(m.mask_head, name)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, heads: int, n_iters: int) -> "WeightSet":
        def get(key):
            return np.asarray(tensors[key], dtype=np.float64)

        modules = []
        for t in range(n_iters):
            blocks = {}
            for block in ("geo", "cross", "geodesic"):
                kw = {}
                for name in AttentionLayer.TENSORS:
                    key = f"modules.{t}.{block}.{name}"
                    kw[name] = get(key) if key in tensors else None
                blocks[block] = AttentionLayer(**kw)
            head = MaskHead(**{n: get(f"modules.{t}.mask_head.{n}") for n in MaskHead.TENSORS})
            modules.append(TransformerModule(wg=get(f"modules.{t}.wg"), mask_head=head, **blocks))
        w = cls(w_in=get("w_in"), w_out=get("w_out"), modules=modules, heads=heads)
        w.validate()
        return w

    def validate(self):
        d, d_t = self.d, self.d_t
        if d % self.heads:
            raise ShapeMismatch("d must be divisible by the head count")
        if self.w_out.shape != (d, d):
            raise ShapeMismatch("w_out must be d x d")
        for m in self.modules:
            for lay, needs_r in ((m.geo, True), (m.cross, False), (m.geodesic, True)):
                for name in ("wq", "wk", "wv", "wo"):
                    if getattr(lay, name).shape != (d, d):
                        raise ShapeMismatch(f"{name} must be {d}x{d}")
                if needs_r and (lay.wr is None or lay.wr.shape != (d_t, d)):
                    raise ShapeMismatch("pair-embedding projection must be d_t x d")
                if lay.ff1.shape[0] != d or lay.ff2.shape != (lay.ff1.shape[1], d):
                    raise ShapeMismatch("feed-forward shapes inconsistent")
            if m.wg.shape != (d_t, d_t):
                raise ShapeMismatch("geodesic projection must be d_t x d_t")
            if m.mask_head.w1.shape != (d + d_t, d) or m.mask_head.w2.shape != (d,):
                raise ShapeMismatch("mask head shapes inconsistent")
        for arr in self.tensors().values():
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatch("weights must be finite")


# -- blocks ---------------------------------------------------------------

def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _finish(x: np.ndarray, attn: np.ndarray, layer: AttentionLayer) -> np.ndarray:
    x = layer_norm(x + attn @ layer.wo, layer.ln1_g, layer.ln1_b)
    hidden = np.maximum(x @ layer.ff1 + layer.ff1_b, 0.0)
    return layer_norm(x + hidden @ layer.ff2 + layer.ff2_b, layer.ln2_g, layer.ln2_b)


def _softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    s = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def local_attention(x: np.ndarray, knn: np.ndarray, pair_emb: np.ndarray,
                    additive_mask: Optional[np.ndarray], layer: AttentionLayer,
                    heads: int) -> np.ndarray:
    """Raw multi-head kNN attention output (before output projection)."""
    n, d = x.shape
    k = knn.shape[1]
    dh = d // heads
    q = (x @ layer.wq).reshape(n, heads, dh)
    keys = (x @ layer.wk).reshape(n, heads, dh)
    vals = (x @ layer.wv)[knn].reshape(n, k, heads, dh)
    # q . (r W^R) is evaluated as (q W^R^T) . r so the (n, k, d_t) embedding
    # is never multiplied by a d_t x d matrix
    wr = layer.wr.reshape(-1, heads, dh)                       # (d_t, h, dh)
    q_r = np.matmul(q.transpose(1, 0, 2), wr.transpose(1, 2, 0)).transpose(1, 0, 2)   # (n, h, d_t)
    kt = keys[knn].transpose(0, 2, 3, 1)                        # (n, h, dh, k)
    scores = np.matmul(q[:, :, None, :], kt)[:, :, 0, :]
    scores += np.matmul(q_r, pair_emb.transpose(0, 2, 1))
    scores /= np.sqrt(dh)
    if additive_mask is not None:
        scores = scores + additive_mask[:, None, :]
    attn = _softmax(scores, axis=-1)
    out = np.matmul(attn[:, :, None, :], vals.transpose(0, 2, 1, 3))   # (n, h, 1, dh)
    return out.reshape(n, d)


def _check_local(features, knn, pair_emb, mask, d_t):
    n = features.shape[0]
    if knn.ndim != 2 or knn.shape[0] != n:
        raise ShapeMismatch("kNN table does not match the feature rows")
    if pair_emb.shape != knn.shape + (d_t,):
        raise ShapeMismatch(f"pair embedding must be {knn.shape + (d_t,)}, got {pair_emb.shape}")
    if mask is not None and mask.allowed.shape != knn.shape:
        raise ShapeMismatch("mask shape does not match the kNN table")


def geometric_encoding_block(features: np.ndarray, knn: np.ndarray, struct_emb: np.ndarray,
                             mask: Optional[InstanceMask], layer: AttentionLayer,
                             heads: int) -> np.ndarray:
    """kNN self-attention with the structure embedding added to the keys.

    Pass ``mask=None`` for the model side, which aggregates over all
    neighbours.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[1] != layer.wq.shape[0]:
        raise ShapeMismatch("feature width does not match the weights")
    _check_local(x, knn, struct_emb, mask, layer.wr.shape[0])
    add = None if mask is None else mask.additive
    return _finish(x, local_attention(x, knn, struct_emb, add, layer, heads), layer)


def cross_attention_block(feat_a: np.ndarray, feat_b: np.ndarray, layer: AttentionLayer,
                          heads: int) -> np.ndarray:
    """Every row of ``feat_a`` attends to all rows of ``feat_b``."""
    a = np.asarray(feat_a, dtype=np.float64)
    b = np.asarray(feat_b, dtype=np.float64)
    d = layer.wq.shape[0]
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != d or b.shape[1] != d:
        raise ShapeMismatch("cross-attention inputs must share the model width")
    if len(b) == 0:
        raise ShapeMismatch("cross-attention needs a non-empty key set")
    dh = d // heads
    q = (a @ layer.wq).reshape(len(a), heads, dh)
    k = (b @ layer.wk).reshape(len(b), heads, dh)
    v = (b @ layer.wv).reshape(len(b), heads, dh)
    scores = np.einsum("nhc,mhc->hnm", q, k) / np.sqrt(dh)
    attn = _softmax(scores, axis=-1)
    out = np.einsum("hnm,mhc->nhc", attn, v).reshape(len(a), d)
    return _finish(a, out, layer)


def mask_confidence(y: np.ndarray, knn: np.ndarray, geo_emb: np.ndarray, head: MaskHead) -> np.ndarray:
    """Sigmoid confidence that each neighbour shares the anchor's instance."""
    d = y.shape[1]
    # [y_j - y_i ; g] W1 split into its two row blocks
    yw = y @ head.w1[:d]
    hidden = yw[knn] - yw[:, None, :] + geo_emb @ head.w1[d:] + head.b1
    hidden = np.maximum(hidden, 0.0)
    return expit(hidden @ head.w2 + head.b2[0])


def instance_masking_block(features: np.ndarray, knn: np.ndarray, geo_emb: np.ndarray,
                           prev_mask: InstanceMask, module: TransformerModule, heads: int,
                           tau: float = DEFAULT_TAU) -> InstanceMask:
    """Geodesic self-attention, confidence MLP and thresholding at ``tau``.

    ``geo_emb`` is the projected geodesic embedding of the scene graph.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    x = np.asarray(features, dtype=np.float64)
    _check_local(x, knn, geo_emb, prev_mask, module.geodesic.wr.shape[0])
    y = _finish(x, local_attention(x, knn, geo_emb, prev_mask.additive, module.geodesic, heads),
                module.geodesic)
    conf = mask_confidence(y, knn, geo_emb, module.mask_head)
    allowed = conf >= tau
    allowed[:, 0] = True
    return InstanceMask(allowed, conf)


@dataclass
class TransformerOutput:
    z_p: np.ndarray
    z_q: np.ndarray
    mask_q: InstanceMask


def run_transformer(f_p: np.ndarray, f_q: np.ndarray, knn_p: np.ndarray, knn_q: np.ndarray,
                    struct_p: np.ndarray, struct_q: np.ndarray, geodesic_q: np.ndarray,
                    weights: WeightSet, emb_cfg: EmbeddingConfig,
                    tau: float = DEFAULT_TAU) -> TransformerOutput:
    """Input projection, ``N_t`` transformer modules, output projection.

    ``geodesic_q`` holds raw scene-side graph distances ``(n_q, k_q)``; each
    module projects their sinusoid with its own ``wg``.
    """
    f_p = np.asarray(f_p, dtype=np.float64)
    f_q = np.asarray(f_q, dtype=np.float64)
    if f_p.shape[1] != weights.d_in or f_q.shape[1] != weights.d_in:
        raise ShapeMismatch("backbone feature width does not match w_in")
    if weights.modules and emb_cfg.dim != weights.d_t:
        raise ShapeMismatch("embedding dim must equal the weights' d_t")
    h = weights.heads
    x_p = f_p @ weights.w_in
    x_q = f_q @ weights.w_in
    mask = InstanceMask.all_allowed(*knn_q.shape)
    # the geodesic sinusoid is shared; each module applies its own projection
    geo_sin = sinusoidal_embed(geodesic_q, emb_cfg.sigma_geo, emb_cfg.dim) if weights.modules else None
    for module in weights.modules:
        s_p = geometric_encoding_block(x_p, knn_p, struct_p, None, module.geo, h)
        s_q = geometric_encoding_block(x_q, knn_q, struct_q, mask, module.geo, h)
        x_p = cross_attention_block(s_p, s_q, module.cross, h)
        x_q = cross_attention_block(s_q, x_p, module.cross, h)
        g = geo_sin @ module.wg
        mask = instance_masking_block(x_q, knn_q, g, mask, module, h, tau)
    return TransformerOutput(x_p @ weights.w_out, x_q @ weights.w_out, mask)
