import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dkbo.phantom import Observation, mask_from_quality
from dkbo.quality import (BCE_EPS, QualityScore, bce_loss, class_score, dice_loss, djb_loss,
                          jaccard_loss, quantize, seg_score, sop_covariance, sop_reweight)

binary_masks = arrays(np.float64, (6, 7), elements=st.sampled_from([0.0, 1.0]))
soft_masks = arrays(np.float64, (5, 5), elements=st.floats(0.0, 1.0))


def disjoint(k, shape=(8, 8)):
    a = np.zeros(shape)
    b = np.zeros(shape)
    a.flat[:k] = 1
    b.flat[k:2 * k] = 1
    return a, b


def obs_for(mask, contact=True):
    return Observation(mask=mask, contact=contact, q_true=0.5 if contact else 0.0, quality=0.5)


# -- scores ----------------------------------------------------------------

def test_seg_score_zero_mask():
    assert seg_score(np.zeros((64, 64))).value == 0.0


def test_seg_score_full_area():
    mask = np.full((10, 10), 0.35)
    assert seg_score(mask).value == pytest.approx(1.0)


def test_seg_score_717_pixels():
    mask = np.zeros(4096)
    mask[:717] = 1
    assert seg_score(mask.reshape(64, 64)).value == pytest.approx(0.5, abs=2e-4)


def test_seg_score_empty_mask_rejected():
    with pytest.raises(ValueError):
        seg_score(np.zeros((0, 0)))


def test_class_score_no_contact():
    assert class_score(obs_for(np.zeros((64, 64)), contact=False)).value == 0.0


@pytest.mark.parametrize("seg, expected", [(0.9, 1.0), (0.5, 0.5), (0.1, 0.0), (0.3, 0.25),
                                           (0.7, 0.75), (0.8, 1.0)])
def test_class_levels(seg, expected):
    assert quantize(seg) == expected


@settings(max_examples=50)
@given(st.floats(0.0, 1.0))
def test_class_score_is_quantized_seg_score(q):
    mask = mask_from_quality(q)
    obs = obs_for(mask)
    c = class_score(obs)
    assert c.value == quantize(seg_score(mask).value)
    assert c.value in (0.0, 0.25, 0.5, 0.75, 1.0)


def test_quality_score_validates():
    with pytest.raises(ValueError):
        QualityScore(0.3, "q_c")
    with pytest.raises(ValueError):
        QualityScore(1.2, "q_s")


# -- losses ----------------------------------------------------------------

@given(binary_masks)
def test_perfect_match_zero_loss(m):
    if m.sum() == 0:
        m[0, 0] = 1
    assert dice_loss(m, m) == 0.0
    assert jaccard_loss(m, m) == 0.0


@pytest.mark.parametrize("k", [1, 5, 20])
def test_dice_all_ones_vs_zeros(k):
    assert dice_loss(np.ones(k), np.zeros(k), s=1) == pytest.approx(1 - 1 / (k + 1), abs=1e-15)


@pytest.mark.parametrize("k", [1, 5, 20])
def test_disjoint_masks(k):
    a, b = disjoint(k)
    assert dice_loss(a, b, 1) == pytest.approx(1 - 1 / (2 * k + 1), abs=1e-15)
    assert jaccard_loss(a, b, 1) == pytest.approx(1 - 1 / (2 * k + 1), abs=1e-15)


def test_jaccard_half_overlap():
    k = 10
    y_t = np.zeros(20)
    y_t[:k] = 1
    y_p = np.zeros(20)
    y_p[: k // 2] = 1
    assert jaccard_loss(y_t, y_p, s=0) == pytest.approx(0.5, abs=1e-15)


def test_bce_symmetric_point():
    half = np.full((4, 4), 0.5)
    assert bce_loss(half, half) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_near_perfect():
    m = np.zeros((4, 4))
    m[1:3, 1:3] = 1
    assert bce_loss(m, m) == pytest.approx(-math.log(1 - BCE_EPS), rel=1e-6)


def test_bce_single_pixel():
    assert bce_loss([1.0], [0.25]) == pytest.approx(-math.log(0.25), abs=1e-12)


def test_djb_perfect_binary_match():
    m = np.zeros((5, 5))
    m[2, :] = 1
    assert djb_loss(m, m) == pytest.approx(-math.log(1 - BCE_EPS), rel=1e-6)


@given(soft_masks, soft_masks, st.floats(0.1, 5.0))
def test_djb_is_sum(y_t, y_p, s):
    total = dice_loss(y_t, y_p, s) + jaccard_loss(y_t, y_p, s) + bce_loss(y_t, y_p)
    assert abs(djb_loss(y_t, y_p, s) - total) <= 1e-12


@pytest.mark.parametrize("k", [3, 12])
def test_djb_disjoint(k):
    a, b = disjoint(k)
    n = a.size
    # 2k pixels disagree (log eps each), the rest agree (log(1 - eps) each)
    bce = (2 * k * -math.log(BCE_EPS) + (n - 2 * k) * -math.log(1 - BCE_EPS)) / n
    expected = 2 * (1 - 1 / (2 * k + 1)) + bce
    assert djb_loss(a, b, 1) == pytest.approx(expected, rel=1e-9)


@given(soft_masks, soft_masks)
def test_loss_ranges(y_t, y_p):
    assert 0.0 <= dice_loss(y_t, y_p) <= 1.0
    assert 0.0 <= jaccard_loss(y_t, y_p) <= 1.0
    assert djb_loss(y_t, y_p) >= 0.0


@given(binary_masks, binary_masks)
def test_jaccard_dominates_dice(y_t, y_p):
    if y_t.sum() + y_p.sum() == 0:
        return
    assert jaccard_loss(y_t, y_p, s=1e-12) >= dice_loss(y_t, y_p, s=1e-12) - 1e-12


def test_loss_shape_mismatch():
    for fn in (dice_loss, jaccard_loss, bce_loss, djb_loss):
        with pytest.raises(ValueError):
            fn(np.zeros(3), np.zeros(4))


# -- second-order pooling -------------------------------------------------------

def two_pass_covariance(X, P):
    H, W, N = X.shape
    rows = []
    for i in range(H):
        for j in range(W):
            rows.append([sum(X[i, j, c] * P[c, m] for c in range(N)) for m in range(P.shape[1])])
    M = P.shape[1]
    means = [sum(r[m] for r in rows) / len(rows) for m in range(M)]
    C = np.zeros((M, M))
    for a in range(M):
        for b in range(M):
            C[a, b] = sum((r[a] - means[a]) * (r[b] - means[b]) for r in rows)
    return C


def test_sop_constant_volume_is_zero():
    X = np.full((3, 4, 5), 2.5)
    np.testing.assert_array_equal(sop_covariance(X, np.eye(5)[:, :3]), np.zeros((3, 3)))


def test_sop_hand_set_volume_matches_oracle():
    X = np.array([[[1.0, 2.0], [3.0, -1.0]], [[0.5, 4.0], [-2.0, 1.5]]])
    P = np.array([[1.0, 0.5], [-0.5, 2.0]])
    np.testing.assert_allclose(sop_covariance(X, P), two_pass_covariance(X, P), atol=1e-12)


def test_sop_random_volume_matches_oracle(rng):
    X = rng.normal(size=(4, 3, 6))
    P = rng.normal(size=(6, 3))
    np.testing.assert_allclose(sop_covariance(X, P), two_pass_covariance(X, P), atol=1e-12)


def test_sop_symmetric_psd_and_shift_invariant(rng):
    X = rng.normal(size=(7, 5, 8))
    P = rng.normal(size=(8, 4))
    C = sop_covariance(X, P)
    np.testing.assert_array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    np.testing.assert_allclose(sop_covariance(X + 3.7, P), C, atol=1e-9)


def test_sop_zero_channels_rejected():
    with pytest.raises(ValueError):
        sop_covariance(np.ones((2, 2, 3)), np.zeros((3, 0)))


def test_sop_reweight():
    X = np.arange(24, dtype=float).reshape(2, 3, 4)
    np.testing.assert_array_equal(sop_reweight(X, np.ones(4)), X)
    np.testing.assert_array_equal(sop_reweight(X, np.zeros(4)), np.zeros_like(X))
    w = np.array([1.0, 2.0, 1.0, 1.0])
    V = sop_reweight(X, w)
    np.testing.assert_array_equal(V[..., 1], 2 * X[..., 1])
    np.testing.assert_array_equal(V[..., [0, 2, 3]], X[..., [0, 2, 3]])
    with pytest.raises(ValueError):
        sop_reweight(X, np.ones(3))
