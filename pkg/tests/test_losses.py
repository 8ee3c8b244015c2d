import math

import numpy as np
import pytest

from multireg.errors import IndexOutOfRange, LengthMismatch, NoNegatives, NoPositives
from multireg.losses import LossConfig, circle_loss, mask_loss, nll_matching_loss


def at_distance(d, dim=4):
    # a unit anchor and a point at Euclidean distance d from it
    a = np.zeros(dim)
    a[0] = 1.0
    theta = 2 * math.asin(d / 2)
    p = np.zeros(dim)
    p[0], p[1] = math.cos(theta), math.sin(theta)
    return a, p


def naive_circle(d_pos, o, d_neg, cfg):
    s_pos = sum(math.exp(math.sqrt(oi) * cfg.gamma * (d - cfg.delta_p) * (d - cfg.delta_p))
                for d, oi in zip(d_pos, o))
    s_neg = sum(math.exp(cfg.gamma * (cfg.delta_n - d) * (cfg.delta_n - d)) for d in d_neg)
    return math.log(1 + s_pos * s_neg)


def test_circle_log2_at_margins():
    cfg = LossConfig()
    a, p = at_distance(cfg.delta_p)
    _, n = at_distance(cfg.delta_n)
    assert circle_loss([a], [[p]], [[1.0]], [[n]], cfg) == pytest.approx(math.log(2), abs=1e-9)


def test_circle_far_inside_and_outside():
    cfg = LossConfig()
    a = np.array([1.0, 0, 0])
    got = circle_loss([a], [[a]], [[1.0]], [[-a]], cfg)
    g, dp, dn = cfg.gamma, cfg.delta_p, cfg.delta_n
    # direct substitution of d = 0 and d = 2
    expect = math.log(1 + math.exp(1.0 * g * (0 - dp) * (0 - dp)) * math.exp(g * (dn - 2) * (dn - 2)))
    assert got == pytest.approx(expect, abs=1e-9)


def test_circle_zero_overlap_kills_positive_exponent():
    cfg = LossConfig()
    a, n = at_distance(1.0)
    for d in (0.0, 0.3, 1.9):
        _, p = at_distance(d)
        expect = math.log(1 + 1.0 * math.exp(cfg.gamma * (cfg.delta_n - 1.0) ** 2))
        assert circle_loss([a], [[p]], [[0.0]], [[n]], cfg) == pytest.approx(expect, abs=1e-9)


def test_circle_matches_naive_sum():
    rng = np.random.default_rng(0)
    cfg = LossConfig(gamma=2.0)
    feats = rng.normal(size=(30, 8))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    anchors, pos, ov, neg = feats[:3], [feats[3:6], feats[6:8], feats[8:9]], \
        [rng.uniform(0, 1, 3), rng.uniform(0, 1, 2), [0.5]], [feats[10:15], feats[15:16], feats[16:30]]
    expect = np.mean([naive_circle(np.linalg.norm(pp - a, axis=1), o, np.linalg.norm(nn - a, axis=1), cfg)
                      for a, pp, o, nn in zip(anchors, pos, ov, neg)])
    assert circle_loss(anchors, pos, ov, neg, cfg) == pytest.approx(expect, rel=1e-12)


def test_circle_large_exponents_stay_finite():
    a = np.array([1.0, 0])
    got = circle_loss([a], [[-a]], [[1.0]], [[a]], LossConfig(gamma=500.0))
    assert math.isfinite(got) and got > 1000


def test_circle_monotone_in_positive_distance():
    # at random unit features positive distances exceed delta_p, where the
    # loss grows with d; finite differences confirm the sign at 10 points
    rng = np.random.default_rng(1)
    cfg = LossConfig()
    for _ in range(10):
        f = rng.normal(size=(5, 6))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        a, pos, neg = f[0], f[1:3], f[3:]
        o = rng.uniform(0.1, 1, 2)
        assert np.all(np.linalg.norm(pos - a, axis=1) > cfg.delta_p)
        base = circle_loss([a], [pos], [o], [neg], cfg)
        closer = pos.copy()
        closer[0] = a + (pos[0] - a) * (1 - 1e-4)
        assert base >= 0
        assert circle_loss([a], [closer], [o], [neg], cfg) < base


def test_circle_errors():
    a = np.ones(3)
    with pytest.raises(NoPositives):
        circle_loss([a], [np.zeros((0, 3))], [[]], [[a]])
    with pytest.raises(NoNegatives):
        circle_loss([a], [[a]], [[1.0]], [np.zeros((0, 3))])
    with pytest.raises(LengthMismatch):
        circle_loss([a], [[a]], [[1.0, 1.0]], [[a]])
    with pytest.raises(ValueError):
        LossConfig(delta_p=1.0, delta_n=0.5)


def test_nll_examples():
    z = np.full((3, 4), 0.5)
    assert nll_matching_loss(np.ones((3, 3)), [[0, 0], [1, 1]], [0], [1]) == 0.0
    z1 = np.full((2, 2), math.exp(-1))
    assert nll_matching_loss(z1, [[0, 0]]) == pytest.approx(1.0, abs=1e-12)
    assert nll_matching_loss(z, [[0, 0], [1, 2]]) == pytest.approx(2 * math.log(2), abs=1e-12)
    z[0, 3], z[2, 1] = 0.25, 0.125
    assert nll_matching_loss(z, [], [0], [1]) == pytest.approx(math.log(4) + math.log(8), abs=1e-12)


def test_nll_properties_and_errors():
    rng = np.random.default_rng(2)
    z = rng.uniform(0.01, 1, (5, 6))
    assert nll_matching_loss(z, [[0, 1], [3, 4]], [2], [0]) > 0
    assert nll_matching_loss(z, [[0, 1]]) == nll_matching_loss(z, [[0, 1]])
    for bad in (dict(gt_pairs=[[4, 0]]), dict(gt_pairs=[[0, 5]]), dict(gt_pairs=[[-1, 0]]),
                dict(gt_pairs=[], unmatched_p=[4]), dict(gt_pairs=[], unmatched_q=[5])):
        with pytest.raises(IndexOutOfRange):
            nll_matching_loss(z, **bad)


@pytest.mark.parametrize("n", [1, 5, 100])
def test_mask_closed_forms(n):
    assert mask_loss(np.ones(n), np.ones(n)) == pytest.approx(1 - 2 * (n + 1) / (2 * n + 1), abs=1e-12)
    assert mask_loss(np.zeros(n), np.zeros(n)) == pytest.approx(-1.0, abs=1e-12)


def test_mask_half_prediction():
    g = np.array([1, 0, 1, 1, 0, 0, 0], float)
    p = np.full(7, 0.5)
    dice = 1 - 2 * (p @ g + 1) / (p.sum() + g.sum() + 1)
    assert mask_loss(p, g) == pytest.approx(math.log(2) + dice, abs=1e-12)


def test_mask_bounds_and_errors():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = rng.uniform(0.001, 0.999, 50)
        g = (rng.random(50) < 0.4).astype(float)
        bce = -np.mean(g * np.log(p) + (1 - g) * np.log(1 - p))
        dice = mask_loss(p, g) - bce
        assert bce >= 0 and -1 <= dice <= 1 and math.isfinite(mask_loss(p, g))
    with pytest.raises(LengthMismatch):
        mask_loss([0.5, 0.5], [1])
