"""Rigid-invariant pair embeddings between a superpoint and its neighbours.

Two encodings feed the attention blocks:

* the geometric structure embedding, ``sin(dist / sigma_d)`` plus the
  element-wise max over up to three reference neighbours of the angle
  sinusoid ``sin(angle_deg / sigma_a)`` (GeoTransformer-style);
* the geodesic embedding, the sinusoid of the graph distance divided by
  ``sigma_geo`` and multiplied by a projection matrix.

Every sinusoid uses the transformer base of 10000 with sin on even and cos on
odd channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ANGLE_REFS = 3


@dataclass(frozen=True)
class EmbeddingConfig:
    sigma_d: float = 0.2
    sigma_a: float = 15.0
    sigma_geo: float = 0.1
    dim: int = 256

    def __post_init__(self):
        if min(self.sigma_d, self.sigma_a, self.sigma_geo) <= 0:
            raise ValueError("embedding sigmas must be positive")
        if self.dim < 2 or self.dim % 2:
            raise ValueError("embedding dim must be even and >= 2")


def sinusoidal_embed(value, sigma: float, dim: int) -> np.ndarray:
    """Sin/cos encoding of ``value / sigma``; broadcasts over ``value``.

    Returns an array of shape ``value.shape + (dim,)``.
    """
    if dim % 2:
        raise ValueError("dim must be even")
    x = np.asarray(value, dtype=np.float64) / sigma
    freq = 1.0 / 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    phase = x[..., None] * freq
    out = np.empty(x.shape + (dim,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def _angles_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    safe = denom > 0
    cos = np.where(safe, np.sum(a * b, axis=-1) / np.where(safe, denom, 1.0), 1.0)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def geometric_structure_embedding(superpoints, knn: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """Pre-projection structure embedding, shape ``(n, k, dim)``."""
    sp = np.asarray(superpoints, dtype=np.float64)
    n, k = knn.shape
    vec = sp[knn] - sp[:, None, :]                       # (n, k, 3)
    dist = np.linalg.norm(vec, axis=2)
    out = sinusoidal_embed(dist, cfg.sigma_d, cfg.dim)

    # references: nearest non-self neighbours, skipping the pair's own slot
    n_ref_slots = min(N_ANGLE_REFS + 1, k - 1)
    if n_ref_slots <= 0:
        return out
    cand = np.arange(1, 1 + n_ref_slots)
    # the self slot has no pair direction, so it carries no angle term
    for j in range(1, k):
        refs = cand[cand != j][:N_ANGLE_REFS]
        if len(refs) == 0:
            continue
        ang = _angles_deg(vec[:, j:j + 1, :], vec[:, refs, :])   # (n, r)
        emb = sinusoidal_embed(ang / cfg.sigma_a, 1.0, cfg.dim)   # (n, r, dim)
        out[:, j, :] += emb.max(axis=1)
    return out


def geodesic_embedding(geodesic: np.ndarray, cfg: EmbeddingConfig, projection) -> np.ndarray:
    """Projected geodesic embedding, ``sinusoid(G / sigma_geo) @ projection``."""
    g = sinusoidal_embed(geodesic, cfg.sigma_geo, cfg.dim)
    return g @ np.asarray(projection, dtype=np.float64)
