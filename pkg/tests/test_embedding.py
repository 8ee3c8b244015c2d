import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multireg.embedding import (EmbeddingConfig, geodesic_embedding, geometric_structure_embedding,
                                sinusoidal_embed)
from multireg.geometry import RigidTransform, apply_transform
from multireg.preprocess import geodesic_table, knn_table

seeds = st.integers(0, 2**31 - 1)


def naive_sinusoid(value, sigma, dim):
    out = []
    for k in range(dim // 2):
        arg = (value / sigma) / 10000 ** (2 * k / dim)
        out += [math.sin(arg), math.cos(arg)]
    return np.array(out)


def naive_angle(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return math.degrees(math.acos(max(-1.0, min(1.0, float(u @ v) / (nu * nv)))))


def naive_structure(sp, knn, cfg):
    n, k = knn.shape
    out = np.zeros((n, k, cfg.dim))
    for i in range(n):
        for j in range(k):
            vec = sp[knn[i, j]] - sp[i]
            out[i, j] = naive_sinusoid(np.linalg.norm(vec), cfg.sigma_d, cfg.dim)
            if j == 0:
                continue
            refs = [x for x in range(1, k) if x != j][:3]
            if refs:
                embs = [naive_sinusoid(naive_angle(vec, sp[knn[i, x]] - sp[i]) / cfg.sigma_a, 1.0, cfg.dim)
                        for x in refs]
                out[i, j] += np.max(embs, axis=0)
    return out


def test_sinusoid_examples():
    assert np.array_equal(sinusoidal_embed(0.0, 1.0, 8), [0, 1, 0, 1, 0, 1, 0, 1])
    assert np.allclose(sinusoidal_embed(0.3, 0.3, 2), [math.sin(1), math.cos(1)], atol=1e-15)
    assert np.allclose(sinusoidal_embed(math.pi * 0.2, 0.2, 2), [0, -1], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 10), st.sampled_from([2, 4, 16, 64]))
def test_sinusoid_formula(value, sigma, dim):
    got = sinusoidal_embed(value, sigma, dim)
    assert np.allclose(got, naive_sinusoid(value, sigma, dim), atol=1e-12)
    assert np.all(np.abs(got) <= 1.0)


def test_sinusoid_batched_shape():
    vals = np.random.default_rng(0).uniform(0, 3, (4, 5))
    out = sinusoidal_embed(vals, 0.2, 6)
    assert out.shape == (4, 5, 6)
    assert np.allclose(out[2, 3], naive_sinusoid(vals[2, 3], 0.2, 6))


def test_config_validation():
    with pytest.raises(ValueError):
        EmbeddingConfig(dim=3)
    with pytest.raises(ValueError):
        EmbeddingConfig(sigma_d=0.0)


def test_structure_single_neighbour():
    sp = np.array([[0, 0, 0], [1, 0, 0]], float)
    cfg = EmbeddingConfig(sigma_d=0.5, dim=8)
    emb = geometric_structure_embedding(sp, knn_table(sp, 2), cfg)
    assert np.allclose(emb[0, 1], naive_sinusoid(1.0, 0.5, 8))


def test_structure_equilateral_distance():
    h = math.sqrt(3) / 2
    sp = np.array([[0, 0, 0], [1, 0, 0], [0.5, h, 0]])
    cfg = EmbeddingConfig(sigma_d=1.0, sigma_a=15.0, dim=16)
    knn = knn_table(sp, 3)
    emb = geometric_structure_embedding(sp, knn, cfg)
    # with one reference the angle term is the 60 degree sinusoid
    ang = naive_sinusoid(60.0 / 15.0, 1.0, 16)
    for i in range(3):
        for j in (1, 2):
            assert np.allclose(emb[i, j] - ang, naive_sinusoid(1.0, 1.0, 16), atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(2, 7))
def test_structure_matches_naive(seed, k):
    sp = np.random.default_rng(seed).normal(size=(12, 3))
    cfg = EmbeddingConfig(sigma_d=0.3, sigma_a=10.0, dim=8)
    knn = knn_table(sp, k)
    assert np.allclose(geometric_structure_embedding(sp, knn, cfg), naive_structure(sp, knn, cfg), atol=1e-12)


def test_structure_rigid_invariance():
    rng = np.random.default_rng(1)
    cfg = EmbeddingConfig(dim=64)
    sp = rng.normal(size=(40, 3))
    knn = knn_table(sp, 10)
    base = geometric_structure_embedding(sp, knn, cfg)
    for _ in range(25):
        moved = apply_transform(RigidTransform.random(rng, 10.0), sp)
        assert np.abs(geometric_structure_embedding(moved, knn, cfg) - base).max() < 1e-6


def test_geodesic_embedding():
    ang = np.deg2rad([20, 80, 140, 220, 280, 340])
    sp = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)])
    knn = np.array([[0, 1, 5], [1, 2, 0], [2, 3, 1], [3, 4, 2], [4, 5, 3], [5, 4, 0]])
    geo = geodesic_table(sp, knn, graph_k=2)
    cfg = EmbeddingConfig(sigma_geo=0.1, dim=8)
    assert np.allclose(geodesic_embedding(np.zeros((2, 2)), cfg, np.eye(8)), np.tile([0, 1.0], 4))
    assert np.all(geodesic_embedding(geo, cfg, np.zeros((8, 8))) == 0)
    proj = np.random.default_rng(2).normal(size=(8, 8))
    got = geodesic_embedding(geo, cfg, proj)
    for i in range(6):
        for j in range(3):
            s = naive_sinusoid(geo[i, j], 0.1, 8)
            ref = [sum(s[a] * proj[a, b] for a in range(8)) for b in range(8)]
            assert np.allclose(got[i, j], ref, atol=1e-12)


def test_structure_deterministic():
    sp = np.random.default_rng(3).normal(size=(20, 3))
    knn = knn_table(sp, 6)
    cfg = EmbeddingConfig(dim=16)
    a = geometric_structure_embedding(sp, knn, cfg)
    b = geometric_structure_embedding(sp.copy(), knn.copy(), cfg)
    assert np.array_equal(a, b)
