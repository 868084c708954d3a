import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpfgl.autodiff import Tensor
from dpfgl.gradcheck import check_bce, check_fc, check_icc
from dpfgl.losses import (
    LossWeights, NoRealSamples, adaptation_loss, ball_project, bce, fc_loss, fc_loss_bruteforce, icc_loss,
    positive_partners, real_center, similarity_matrix, train_loss,
)

LN2 = math.log(2.0)


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


@pytest.mark.parametrize("label", [0, 1])
def test_bce_at_zero_logit(label):
    assert bce(T([0.0]), [label]).item() == pytest.approx(LN2, abs=1e-15)


def test_bce_saturation_and_hand_mean():
    assert bce(T([20.0]), [1]).item() == pytest.approx(0.0, abs=1e-8)
    assert bce(T([0.0, 0.0]), [1, 0]).item() == pytest.approx(LN2, abs=1e-15)
    assert np.isfinite(bce(T([-1000.0, 1000.0]), [1, 0]).item())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_bce_nonnegative(logits, seed):
    labels = np.random.default_rng(seed).integers(0, 2, len(logits))
    assert bce(T(logits), labels).item() >= 0.0


def test_real_center_values():
    np.testing.assert_array_equal(real_center(T([[3.0, 4.0]]), [0]).c_real.data, [3.0, 4.0])
    emb = T([[1.0, 0.0], [9.0, 9.0], [3.0, 0.0]])
    np.testing.assert_allclose(real_center(emb, [0, 1, 0]).c_real.data, [2.0, 0.0])
    with pytest.raises(NoRealSamples):
        real_center(emb, [1, 1, 1])


def test_real_center_permutation_invariant():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(8, 5))
    labels = np.array([0, 1, 0, 0, 1, 1, 0, 1])
    perm = rng.permutation(8)
    a = real_center(T(emb), labels).c_real.data
    b = real_center(T(emb[perm]), labels[perm]).c_real.data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_icc_hand_values():
    emb = T([[1.0, 0.0], [1.0, 0.0]])
    assert icc_loss(emb, [0, 1], real_center(emb, [0, 1])).item() == 0.0
    emb = T([[1.0, 0.0], [0.0, 1.0]])
    assert icc_loss(emb, [0, 1], real_center(emb, [0, 1])).item() == pytest.approx(-2.0)


def test_icc_farther_fake_decreases_loss():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(6, 4))
    labels = [0, 0, 0, 1, 1, 1]
    base = icc_loss(T(emb), labels, real_center(T(emb), labels)).item()
    c = real_center(T(emb), labels).c_real.data
    pushed = emb.copy()
    pushed[5] = c + 2.0 * (emb[5] - c)
    assert icc_loss(T(pushed), labels, real_center(T(pushed), labels)).item() < base


def test_icc_translation_consistent():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(6, 3))
    labels = [0, 1, 0, 1, 0, 1]
    a = icc_loss(T(emb), labels, real_center(T(emb), labels)).item()
    moved = emb + np.array([5.0, -3.0, 0.5])
    b = icc_loss(T(moved), labels, real_center(T(moved), labels)).item()
    assert a == pytest.approx(b, abs=1e-10)


def test_train_loss_compositions():
    logits, labels = T([0.3, -1.2]), [0, 1]
    emb = T([[1.0, 0.0], [0.0, 1.0]])
    plain = bce(logits, labels).item()
    assert train_loss(logits, labels, emb, LossWeights(icc_lambda=0.0)).item() == plain
    assert train_loss(logits, labels, emb, LossWeights(icc_lambda=1.0)).item() == pytest.approx(plain - 2.0)


def test_train_loss_embedding_gradient_iff_lambda():
    for lam, expect in [(0.0, False), (0.5, True)]:
        emb = Tensor(np.random.default_rng(3).normal(size=(4, 3)), requires_grad=True)
        train_loss(T([0.1, 0.2, -0.3, 0.4]), [0, 1, 0, 1], emb, LossWeights(icc_lambda=lam)).backward()
        assert (emb.grad is not None and np.any(emb.grad != 0)) == expect


def test_train_loss_skips_icc_without_reals():
    logits = T([0.5, -0.5])
    emb = T([[1.0, 2.0], [3.0, 4.0]])
    assert train_loss(logits, [1, 1], emb).item() == bce(logits, [1, 1]).item()


def test_ball_projection():
    x = T([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]])
    out = ball_project(x).data
    np.testing.assert_allclose(out[0], [0.6, 0.8], atol=1e-12)
    np.testing.assert_allclose(out[1], [0.3, 0.4], atol=1e-12)
    np.testing.assert_array_equal(out[2], [0.0, 0.0])


def test_similarity_matrix_values():
    S = similarity_matrix(T([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]), 0.5).data
    np.testing.assert_allclose(np.diag(S), 2.0, atol=1e-12)
    assert S[0, 1] == pytest.approx((1 / math.sqrt(2)) / 0.5, abs=1e-12)
    assert S[0, 2] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(S, S.T, atol=1e-12)


def test_similarity_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        similarity_matrix(T([[1.0, 0.0], [0.0, 0.0]]), 0.5)
    with pytest.raises(ValueError):
        similarity_matrix(T([[1.0, 0.0]]), 0.0)


def test_positive_partners():
    np.testing.assert_array_equal(positive_partners([0, 1, 0, 1, 1]), [2, 3, 0, 4, 1])
    np.testing.assert_array_equal(positive_partners([0, 1]), [-1, -1])


def test_fc_degenerate_pair():
    assert fc_loss(T([[1.0, 0.0], [1.0, 0.0]]), [0, 0], 1.0).item() == pytest.approx(0.0, abs=1e-15)


def test_fc_excludes_unpaired():
    loss, count = fc_loss(T([[1.0, 0.0], [0.0, 1.0]]), [0, 1], 0.5, return_count=True)
    assert count == 0 and loss.item() == 0.0


def test_fc_matches_bruteforce_b4():
    f = np.random.default_rng(4).normal(size=(4, 3))
    labels = [0, 1, 1, 0]
    assert fc_loss(T(f), labels, 0.1).item() == pytest.approx(fc_loss_bruteforce(f, labels, 0.1), abs=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_fc_matches_bruteforce_random(seed):
    rng = np.random.default_rng(100 + seed)
    B = int(rng.integers(2, 17))
    f = rng.normal(size=(B, int(rng.integers(1, 6))))
    labels = rng.integers(0, 2, B)
    tau = float(rng.uniform(0.05, 2.0))
    assert abs(fc_loss(T(f), labels, tau).item() - fc_loss_bruteforce(f, labels, tau)) <= 1e-10


def test_adaptation_loss_compositions():
    src, sup = T([0.2, -0.4]), T([1.0, -2.0])
    feats = T(np.random.default_rng(5).normal(size=(4, 3)))
    ys, yq, yf = [0, 1], [1, 0], [0, 1, 1, 0]
    b_src, b_sup = bce(src, ys).item(), bce(sup, yq).item()
    assert adaptation_loss(src, ys, sup, yq, feats, yf, LossWeights(mu=0, nu=0)).item() == b_src
    got = adaptation_loss(src, ys, sup, yq, feats, yf, LossWeights(mu=0.7, nu=0)).item()
    assert got == pytest.approx(b_src + 0.7 * b_sup, abs=1e-14)
    full = adaptation_loss(src, ys, sup, yq, feats, yf, LossWeights(mu=1.0, nu=0.1, tau=0.5)).item()
    assert full == pytest.approx(b_src + b_sup + 0.1 * fc_loss(feats, yf, 0.5).item(), abs=1e-14)
    assert full >= 0


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(tau=0.0)
    with pytest.raises(ValueError):
        LossWeights(mu=float("nan"))


@pytest.mark.parametrize("check", [check_bce, check_icc, check_fc])
def test_loss_gradchecks(check):
    assert check(seed=1).passed


def test_fc_gradient_reaches_features():
    f = Tensor(np.random.default_rng(6).normal(size=(4, 3)), requires_grad=True)
    fc_loss(f, [0, 1, 0, 1], 0.2).backward()
    assert np.all(np.isfinite(f.grad)) and np.any(f.grad != 0)
