"""Loss values, reductions, masking, and prediction gradients."""

import numpy as np
import pytest

from tlsmooth import (ClassBalance, FocalSpec, HorizonGrid,
                      InvalidInputError, Objective, UndefinedLossError, bce,
                      focal, focal_smoothed, ls_targets, mhp_loss, q_step,
                      weighted_bce)
from tlsmooth.objectives import (bce_grad, focal_grad, focal_smoothed_grad,
                                 mhp_grad, weighted_bce_grad)

CLAMP = 1e-7


def rand_batch(rng, n=40, hard=False):
    p = rng.uniform(0.02, 0.98, n)
    t = (rng.random(n) < 0.3).astype(float) if hard else rng.random(n)
    m = rng.random(n) < 0.8
    m[0] = True     # keep at least one unmasked
    return p, t, m


def test_bce_worked_value():
    # -(0.5*ln 0.7 + 0.5*ln 0.3), single unmasked step
    got = bce(np.array([0.7]), np.array([0.5]), np.array([True]))
    assert got == pytest.approx(0.7803238741323343, rel=1e-14)


def test_bce_perfect_prediction_is_zero_up_to_clamp():
    val = bce(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
              np.array([True, True]))
    assert 0 <= val < 1e-6


def test_bce_is_mean_over_unmasked():
    rng = np.random.default_rng(0)
    p, t, m = rand_batch(rng)
    per = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    assert bce(p, t, m) == pytest.approx(per[m].mean(), rel=1e-14)


def test_class_balance_weights():
    b = ClassBalance(positive_rate=0.25)
    assert b.weight_pos == pytest.approx(2.0)
    assert b.weight_neg == pytest.approx(2.0 / 3.0)
    even = ClassBalance(positive_rate=0.5)
    assert even.weight_pos == even.weight_neg == 1.0
    with pytest.raises(InvalidInputError):
        ClassBalance(positive_rate=0.0)
    with pytest.raises(InvalidInputError):
        ClassBalance(positive_rate=1.0)


def test_class_balance_from_labels_uses_mask():
    y = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
    m = np.array([True, True, True, True, False])
    assert ClassBalance.from_labels(y, m).positive_rate == 0.5


def test_weighted_bce_reduces_to_bce_at_even_balance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p, t, m = rand_batch(rng)
        even = ClassBalance(positive_rate=0.5)
        assert abs(weighted_bce(p, t, m, even) - bce(p, t, m)) < 1e-12


def test_weighted_bce_applies_class_weights():
    bal = ClassBalance(positive_rate=0.25)
    p = np.array([0.7, 0.7])
    t = np.array([1.0, 0.0])
    m = np.array([True, True])
    expected = (-2.0 * np.log(0.7) - (2.0 / 3.0) * np.log(0.3)) / 2.0
    assert weighted_bce(p, t, m, bal) == pytest.approx(expected, rel=1e-14)


def test_focal_worked_value():
    spec = FocalSpec(zeta=2.0)
    got = focal(np.array([0.9]), np.array([1.0]), np.array([True]), spec)
    assert got == pytest.approx(0.0010536051565782628, rel=1e-12)


def test_focal_confident_negative_vanishes():
    spec = FocalSpec(zeta=2.0)
    assert focal(np.array([1e-6]), np.array([0.0]), np.array([True]),
                 spec) < 1e-10


def test_focal_zeta_zero_unit_weights_equals_bce():
    rng = np.random.default_rng(2)
    spec = FocalSpec(zeta=0.0)
    for _ in range(50):
        p, t, m = rand_batch(rng, hard=True)
        assert abs(focal(p, t, m, spec) - bce(p, t, m)) < 1e-12


def test_focal_rejects_soft_targets():
    spec = FocalSpec(zeta=2.0)
    with pytest.raises(InvalidInputError):
        focal(np.array([0.5]), np.array([0.4]), np.array([True]), spec)


def test_focal_smoothed_matches_focal_on_hard_labels():
    rng = np.random.default_rng(3)
    spec = FocalSpec(zeta=1.7, balance=ClassBalance(positive_rate=0.2))
    for _ in range(20):
        p, t, m = rand_batch(rng, hard=True)
        assert focal_smoothed(p, t, m, spec) == pytest.approx(
            focal(p, t, m, spec), rel=1e-13)


def test_ls_targets_interpolation():
    y = np.array([1.0, 0.0, np.nan])
    out = ls_targets(y, 0.1)
    assert out[0] == pytest.approx(0.9)
    assert out[1] == pytest.approx(0.1)
    assert np.isnan(out[2])
    np.testing.assert_array_equal(ls_targets(y, 0.0)[:2], y[:2])
    with pytest.raises(InvalidInputError):
        ls_targets(y, -0.01)
    with pytest.raises(InvalidInputError):
        ls_targets(np.array([0.4]), 0.1)


def test_mhp_worked_value():
    # horizons {6,12}, dist=8: labels (0,1); shared prediction 0.7
    y_hat = np.array([[0.7, 0.7]])
    y = np.array([[0.0, 1.0]])
    m = np.array([True])
    got = mhp_loss(y_hat, y, m)
    assert got == pytest.approx(0.7803238741323343, rel=1e-14)


def test_mhp_perfect_prediction():
    y = np.array([[1.0, 1.0]])
    assert mhp_loss(np.array([[1.0, 1.0]]), y, np.array([True])) < 1e-6


def test_mhp_single_horizon_is_plain_bce():
    rng = np.random.default_rng(4)
    p, t, m = rand_batch(rng, hard=True)
    assert mhp_loss(p[:, None], t[:, None], m) == pytest.approx(
        bce(p, t, m), rel=1e-13)


def test_mhp_equals_bce_against_staircase_target():
    # shared prediction across horizons collapses the multi-horizon
    # loss onto cross entropy with the staircase soft target
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        h_count = int(rng.integers(1, 14))
        hs = np.sort(rng.choice(np.arange(1, 50), h_count, replace=False))
        grid = HorizonGrid(horizons=tuple(int(v) for v in hs),
                           index_of_true=0)
        n = int(rng.integers(1, 12))
        dist = rng.integers(1, 60, n).astype(float)
        dist[rng.random(n) < 0.1] = np.inf
        shared = rng.uniform(0.01, 0.99, n)
        y = (dist[:, None] <= grid.as_array()[None, :]).astype(float)
        y_hat = np.repeat(shared[:, None], h_count, axis=1)
        m = np.ones(n, dtype=bool)
        a = mhp_loss(y_hat, y, m)
        b = bce(shared, q_step(dist, grid), m)
        worst = max(worst, abs(a - b))
    assert worst < 1e-9


def test_mhp_shape_validation():
    with pytest.raises(InvalidInputError):
        mhp_loss(np.zeros((3, 2)), np.zeros((3, 3)), np.ones(3, dtype=bool))
    with pytest.raises(InvalidInputError):
        mhp_loss(np.zeros((3, 2)), np.zeros((3, 2)),
                 np.ones((3, 2), dtype=bool))


LOSSES = {
    "bce": (lambda p, t, m: bce(p, t, m),
            lambda p, t, m: bce_grad(p, t, m), False),
    "weighted": (
        lambda p, t, m: weighted_bce(p, t, m, ClassBalance(0.2)),
        lambda p, t, m: weighted_bce_grad(p, t, m, ClassBalance(0.2)), False),
    "focal": (
        lambda p, t, m: focal(p, t, m, FocalSpec(2.0, ClassBalance(0.3))),
        lambda p, t, m: focal_grad(p, t, m, FocalSpec(2.0, ClassBalance(0.3))),
        True),
    "focal_smoothed": (
        lambda p, t, m: focal_smoothed(p, t, m, FocalSpec(1.5)),
        lambda p, t, m: focal_smoothed_grad(p, t, m, FocalSpec(1.5)), False),
}


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_losses_ignore_masked_positions(name):
    loss, grad, hard = LOSSES[name]
    rng = np.random.default_rng(6)
    p, t, m = rand_batch(rng, hard=hard)
    p2 = p.copy()
    p2[~m] = rng.random((~m).sum())
    t2 = t.copy()
    t2[~m] = np.nan          # masked targets may even be unset
    assert loss(p, t, m) == loss(p2, t2, m)
    g = grad(p2, t2, m)
    assert (g[~m] == 0).all()


def test_mhp_ignores_masked_rows():
    rng = np.random.default_rng(7)
    p = rng.uniform(0.05, 0.95, (20, 4))
    t = (rng.random((20, 4)) < 0.4).astype(float)
    m = rng.random(20) < 0.7
    m[0] = True
    p2, t2 = p.copy(), t.copy()
    p2[~m] = rng.random(((~m).sum(), 4))
    t2[~m] = 123.0
    assert mhp_loss(p, t, m) == mhp_loss(p2, t2, m)
    assert (mhp_grad(p2, t2, m)[~m] == 0).all()


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_prediction_gradients_match_finite_differences(name):
    loss, grad, hard = LOSSES[name]
    rng = np.random.default_rng(8)
    p, t, m = rand_batch(rng, n=24, hard=hard)
    g = grad(p, t, m)
    eps = 1e-6
    for i in range(len(p)):
        dp = np.zeros_like(p)
        dp[i] = eps
        num = (loss(p + dp, t, m) - loss(p - dp, t, m)) / (2 * eps)
        denom = max(abs(num), abs(g[i]), 1.0)
        assert abs(num - g[i]) / denom < 1e-6


def test_mhp_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    p = rng.uniform(0.05, 0.95, (6, 3))
    t = (rng.random((6, 3)) < 0.4).astype(float)
    m = np.array([True, False, True, True, True, False])
    g = mhp_grad(p, t, m)
    eps = 1e-6
    for i in range(p.shape[0]):
        for k in range(p.shape[1]):
            dp = np.zeros_like(p)
            dp[i, k] = eps
            num = (mhp_loss(p + dp, t, m) - mhp_loss(p - dp, t, m)) / (2 * eps)
            assert abs(num - g[i, k]) <= 1e-6 * max(abs(num), 1.0)


def test_gradient_is_zero_where_clamp_is_active():
    p = np.array([0.0, 1.0, 0.5])
    t = np.array([1.0, 0.0, 1.0])
    m = np.ones(3, dtype=bool)
    g = bce_grad(p, t, m)
    assert g[0] == 0.0 and g[1] == 0.0 and g[2] != 0.0


def test_per_sample_optimum_sits_at_the_target():
    # golden-section search over the prediction for one fixed target
    for q in [0.11, 0.5, 0.73]:
        lo, hi = CLAMP, 1 - CLAMP
        invphi = (np.sqrt(5) - 1) / 2
        f = lambda p: bce(np.array([p]), np.array([q]), np.array([True]))
        a, b = lo, hi
        c, d = b - invphi * (b - a), a + invphi * (b - a)
        for _ in range(120):
            if f(c) < f(d):
                b, d = d, c
                c = b - invphi * (b - a)
            else:
                a, c = c, d
                d = a + invphi * (b - a)
        assert 0.5 * (a + b) == pytest.approx(q, abs=1e-6)


def test_all_masked_batch_is_undefined():
    m = np.zeros(3, dtype=bool)
    with pytest.raises(UndefinedLossError):
        bce(np.full(3, 0.5), np.zeros(3), m)
    with pytest.raises(UndefinedLossError):
        mhp_loss(np.full((3, 2), 0.5), np.zeros((3, 2)), m)


def test_out_of_range_predictions_rejected():
    with pytest.raises(InvalidInputError):
        bce(np.array([1.2]), np.array([1.0]), np.array([True]))
    with pytest.raises(InvalidInputError):
        bce(np.array([np.nan]), np.array([1.0]), np.array([True]))
    with pytest.raises(InvalidInputError):
        bce(np.array([0.5]), np.array([1.2]), np.array([True]))


class TestObjectiveDispatch:
    def test_bce_kind(self):
        rng = np.random.default_rng(10)
        p, t, m = rand_batch(rng)
        obj = Objective(kind="bce")
        assert obj.loss(p, t, m) == bce(p, t, m)
        np.testing.assert_array_equal(obj.grad(p, t, m), bce_grad(p, t, m))
        assert not obj.multi_horizon

    def test_weighted_requires_balance(self):
        with pytest.raises(InvalidInputError):
            Objective(kind="weighted")

    def test_mhp_kind_is_multi_horizon(self):
        assert Objective(kind="mhp").multi_horizon

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            Objective(kind="dice")
