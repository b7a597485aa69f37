"""Forward pass structure, analytic gradients, and the training loop."""

import numpy as np
import pytest

from tlsmooth import (ClassBalance, InvalidInputError, ModelSpec, Objective,
                      ParamStore, ScoredSet, StayData, TrainConfig, auprc,
                      forward, forward_batch, gradient, gradient_batch,
                      load_checkpoint, pad_batch, pooled_loss,
                      save_checkpoint, train)


def toy_batch(rng, spec, hard=False, t_lens=(3, 2)):
    """Padded (feats, targets, mask) pair of short stays."""
    b, t_max = len(t_lens), max(t_lens)
    feats = np.zeros((b, t_max, spec.input_dim))
    if spec.multi_horizon:
        shape = (b, t_max, spec.horizon_count)
    else:
        shape = (b, t_max)
    targets = np.zeros(shape)
    mask = np.zeros((b, t_max), dtype=bool)
    for i, t in enumerate(t_lens):
        feats[i, :t] = rng.normal(size=(t, spec.input_dim))
        if hard:
            targets[i, :t] = (rng.random(shape[1:][:1] + shape[2:]) < 0.5)[:t]
        else:
            targets[i, :t] = rng.random(shape[1:])[:t]
        mask[i, :t] = rng.random(t) < 0.8
    mask[0, 0] = True
    if spec.multi_horizon:
        targets = np.maximum.accumulate(targets, axis=2)  # monotone rows
    return feats, targets, mask


OBJECTIVES = {
    "bce": (Objective(kind="bce"), False, False),
    "weighted": (Objective(kind="weighted",
                           balance=ClassBalance(0.25)), True, False),
    "focal": (Objective(kind="focal", balance=ClassBalance(0.3),
                        zeta=2.0), True, False),
    "focal_smoothed": (Objective(kind="focal_smoothed", zeta=1.5),
                       False, False),
    "mhp": (Objective(kind="mhp"), True, True),
}


@pytest.mark.parametrize("name", sorted(OBJECTIVES))
@pytest.mark.parametrize("l1", [0.0, 0.01])
def test_parameter_gradients_match_finite_differences(name, l1):
    objective, hard, multi = OBJECTIVES[name]
    spec = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=3,
                     horizon_count=3 if multi else 1, l1_embed=l1)
    rng = np.random.default_rng(11)
    params = ParamStore.init(spec, seed=5)
    feats, targets, mask = toy_batch(rng, spec, hard=hard)

    eps = 1e-5
    # keep the l1 kink at embed=0 well away from the probe points
    assert np.abs(params.embed).min() > 10 * eps

    _, g = gradient_batch(feats, targets, mask, params, objective)
    worst = 0.0
    for i in range(params.n_params):
        theta_p = params.theta.copy()
        theta_p[i] += eps
        theta_m = params.theta.copy()
        theta_m[i] -= eps
        lp, _ = gradient_batch(feats, targets, mask,
                               ParamStore(spec, theta_p), objective)
        lm, _ = gradient_batch(feats, targets, mask,
                               ParamStore(spec, theta_m), objective)
        num = (lp - lm) / (2 * eps)
        worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1.0))
    assert worst < 1e-4


def test_l1_penalty_enters_loss_and_gradient_exactly():
    rng = np.random.default_rng(12)
    lam = 0.37
    plain = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=3)
    penal = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=3, l1_embed=lam)
    theta = ParamStore.init(plain, seed=2).theta
    feats, targets, mask = toy_batch(rng, plain)
    obj = Objective(kind="bce")
    l0, g0 = gradient_batch(feats, targets, mask,
                            ParamStore(plain, theta.copy()), obj)
    p1 = ParamStore(penal, theta.copy())
    l1_, g1 = gradient_batch(feats, targets, mask, p1, obj)
    assert l1_ - l0 == pytest.approx(lam * np.abs(p1.embed).sum(), rel=1e-12)
    diff = ParamStore(penal, g1 - g0)
    np.testing.assert_allclose(diff.embed, lam * np.sign(p1.embed),
                               rtol=0, atol=1e-12)


def test_zero_parameters_predict_one_half():
    spec = ModelSpec(input_dim=4, embed_dim=3, hidden_dim=5)
    params = ParamStore.zeros(spec)
    probs = forward(np.random.default_rng(0).normal(size=(7, 4)), params)
    np.testing.assert_array_equal(probs, np.full(7, 0.5))


def test_zero_parameters_multi_head_spacing():
    # increments pass through softplus, so zero parameters give logits
    # 0, ln2, 2 ln2, ... across horizons
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=3, horizon_count=4)
    probs = forward(np.ones((3, 2)), ParamStore.zeros(spec))
    expected = 1.0 / (1.0 + np.exp(-np.log(2) * np.arange(4)))
    np.testing.assert_allclose(probs, np.tile(expected, (3, 1)), atol=1e-15)


def test_outputs_are_causal():
    spec = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=4)
    params = ParamStore.init(spec, seed=3)
    rng = np.random.default_rng(13)
    feats = rng.normal(size=(20, 3))
    base = forward(feats, params)
    bumped = feats.copy()
    bumped[12:] += rng.normal(size=(8, 3))
    np.testing.assert_array_equal(forward(bumped, params)[:12], base[:12])
    assert not np.array_equal(forward(bumped, params)[12:], base[12:])


def test_feature_permutation_symmetry():
    # permuting input channels together with embedding rows is a no-op
    spec = ModelSpec(input_dim=5, embed_dim=3, hidden_dim=4)
    params = ParamStore.init(spec, seed=4)
    rng = np.random.default_rng(14)
    feats = rng.normal(size=(11, 5))
    perm = rng.permutation(5)
    permuted = params.copy()
    permuted.embed[...] = params.embed[perm]
    # exact in real arithmetic; the matmul sums in a different order
    np.testing.assert_allclose(forward(feats[:, perm], permuted),
                               forward(feats, params), rtol=0, atol=1e-12)


def test_multi_horizon_outputs_never_decrease():
    spec = ModelSpec(input_dim=1, embed_dim=1, hidden_dim=2, horizon_count=4)
    size = ParamStore.zeros(spec).n_params
    rng = np.random.default_rng(15)
    feats = rng.normal(size=(1, 2, 1))
    scales = (0.1, 1.0, 10.0)
    for i in range(10_000):
        theta = rng.normal(0.0, scales[i % 3], size)
        probs, _ = forward_batch(feats, ParamStore(spec, theta))
        assert (np.diff(probs, axis=2) >= 0).all()


def test_first_horizon_matches_single_head():
    multi = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=4, horizon_count=3)
    single = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=4)
    mp = ParamStore.init(multi, seed=6)
    sp = ParamStore.zeros(single)
    for name in sp.names():
        sp.block(name)[...] = mp.block(name)
    feats = np.random.default_rng(16).normal(size=(9, 3))
    np.testing.assert_array_equal(forward(feats, mp)[:, 0], forward(feats, sp))


def test_single_stay_gradient_matches_batch_of_one():
    spec = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=3)
    params = ParamStore.init(spec, seed=7)
    rng = np.random.default_rng(17)
    feats = rng.normal(size=(5, 3))
    targets = rng.random(5)
    mask = np.array([True, True, False, True, True])
    obj = Objective(kind="bce")
    l1_, g1 = gradient(feats, targets, mask, params, obj)
    l2, g2 = gradient_batch(feats[None], targets[None], mask[None], params, obj)
    assert l1_ == l2
    np.testing.assert_array_equal(g1, g2)


def test_shape_and_finiteness_validation():
    spec = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=3)
    params = ParamStore.init(spec, seed=0)
    with pytest.raises(InvalidInputError):
        forward(np.zeros((4, 2)), params)          # wrong channel count
    with pytest.raises(InvalidInputError):
        forward(np.zeros((0, 3)), params)          # no timesteps
    bad = np.zeros((4, 3))
    bad[1, 1] = np.nan
    with pytest.raises(InvalidInputError):
        forward(bad, params)
    with pytest.raises(InvalidInputError):
        gradient(np.zeros((4, 3)), np.zeros(3), np.ones(4, dtype=bool),
                 params, Objective(kind="bce"))    # target length mismatch
    with pytest.raises(InvalidInputError):
        gradient(np.zeros((4, 3)), np.zeros((4, 2)), np.ones(4, dtype=bool),
                 params, Objective(kind="bce"))    # head/objective mismatch


def test_param_store_views_share_memory():
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=2)
    store = ParamStore.zeros(spec)
    store.embed[0, 0] = 3.5
    assert store.theta[0] == 3.5
    assert sum(int(np.prod(store.block(n).shape)) for n in store.names()) \
        == store.n_params
    with pytest.raises(InvalidInputError):
        ParamStore(spec, np.zeros(store.n_params + 1))
    with pytest.raises(InvalidInputError):
        ParamStore(spec, np.full(store.n_params, np.nan))


def test_pad_batch_layout():
    stays = [
        StayData(features=np.ones((3, 2)), targets=np.ones(3),
                 mask=np.array([True, False, True])),
        StayData(features=2 * np.ones((5, 2)), targets=np.zeros(5),
                 mask=np.ones(5, dtype=bool)),
    ]
    feats, targets, mask = pad_batch(stays)
    assert feats.shape == (2, 5, 2)
    assert (feats[0, 3:] == 0).all() and not mask[0, 3:].any()
    np.testing.assert_array_equal(mask[0, :3], [True, False, True])
    np.testing.assert_array_equal(targets[1], np.zeros(5))
    with pytest.raises(InvalidInputError):
        pad_batch([])


def separable_stays(rng, n, t_len=30):
    """Labels readable off the first feature channel."""
    out = []
    for _ in range(n):
        y = (rng.random(t_len) < 0.25).astype(float)
        x = np.column_stack([2 * y - 1 + 0.2 * rng.normal(size=t_len),
                             rng.normal(size=t_len)])
        out.append(StayData(features=x, targets=y,
                            mask=np.ones(t_len, dtype=bool)))
    return out


def test_training_fits_a_separable_task():
    rng = np.random.default_rng(18)
    train_stays = separable_stays(rng, 30)
    val_stays = separable_stays(rng, 8)
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=4)
    result = train(ParamStore.init(spec, seed=1), train_stays, val_stays,
                   Objective(kind="bce"),
                   TrainConfig(learning_rate=0.05, max_epochs=50, patience=50,
                               seed=1))
    scores = np.concatenate([forward(s.features, result.params)
                             for s in val_stays])
    labels = np.concatenate([s.targets for s in val_stays])
    assert auprc(ScoredSet(scores=scores, labels=labels)) > 0.99
    assert result.best_epoch < len(result.history)


def test_training_is_bit_reproducible():
    rng = np.random.default_rng(19)
    train_stays = separable_stays(rng, 10, t_len=15)
    val_stays = separable_stays(rng, 4, t_len=15)
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=3)
    cfg = TrainConfig(learning_rate=0.01, max_epochs=6, patience=6, seed=9)

    def run():
        return train(ParamStore.init(spec, seed=2), train_stays, val_stays,
                     Objective(kind="bce"), cfg)

    a, b = run(), run()
    assert a.history == b.history
    assert a.params.theta.tobytes() == b.params.theta.tobytes()
    assert a.best_epoch == b.best_epoch


def test_early_stopping_restores_best_parameters():
    rng = np.random.default_rng(20)
    train_stays = separable_stays(rng, 6, t_len=12)
    val_stays = separable_stays(rng, 3, t_len=12)
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=3)
    # an absurd learning rate makes validation worsen quickly
    result = train(ParamStore.init(spec, seed=3), train_stays, val_stays,
                   Objective(kind="bce"),
                   TrainConfig(learning_rate=5.0, max_epochs=40, patience=3,
                               seed=3))
    assert result.stopped_early
    assert len(result.history) < 40
    val = pooled_loss(result.params, val_stays, Objective(kind="bce"))
    assert val == pytest.approx(result.best_val_loss, rel=1e-12)
    assert result.best_val_loss == min(r.val_loss for r in result.history)


def test_pooled_loss_matches_direct_computation():
    rng = np.random.default_rng(21)
    stays = separable_stays(rng, 5, t_len=9)
    spec = ModelSpec(input_dim=2, embed_dim=2, hidden_dim=3)
    params = ParamStore.init(spec, seed=4)
    obj = Objective(kind="bce")
    got = pooled_loss(params, stays, obj, batch_size=2)
    p = np.concatenate([forward(s.features, params) for s in stays])
    t = np.concatenate([s.targets for s in stays])
    m = np.concatenate([s.mask for s in stays])
    assert got == pytest.approx(obj.loss(p, t, m), rel=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    spec = ModelSpec(input_dim=3, embed_dim=2, hidden_dim=4, horizon_count=3,
                     l1_embed=0.01)
    params = ParamStore.init(spec, seed=8)
    path = tmp_path / "model.ckpt"
    meta = {"seed": 3, "chosen_gamma": 0.2}
    save_checkpoint(path, params, meta)
    loaded, got_meta = load_checkpoint(path)
    assert loaded.spec == spec
    np.testing.assert_array_equal(loaded.theta, params.theta)
    assert got_meta == meta
    probs = forward(np.ones((4, 3)), params)
    np.testing.assert_array_equal(forward(np.ones((4, 3)), loaded), probs)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InvalidInputError):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(max_epochs=0)
