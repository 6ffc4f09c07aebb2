import numpy as np
import pytest

from occseg.sbm import (
    SbmArchitecture,
    SbmTrainingConfig,
    cond_h1,
    cond_h2,
    cond_v,
    joint_train,
    mean_field_infer,
    pretrain_layer1,
    pretrain_layer2,
    reconstruction_error,
)

from conftest import toy_arch


def short_cfg(**kw):
    return SbmTrainingConfig(**{"epochs_layer1": 5, "epochs_layer2": 5, "epochs_joint": 5, **kw})


def test_config_validation_and_schedule():
    with pytest.raises(ValueError):
        SbmTrainingConfig(epochs_layer1=0)
    with pytest.raises(ValueError):
        SbmTrainingConfig(learning_rate=0.0)
    cfg = SbmTrainingConfig()
    assert (cfg.epochs_layer1, cfg.epochs_layer2, cfg.epochs_joint) == (3000, 1000, 1000)
    toy = SbmTrainingConfig.toy()
    assert (toy.epochs_layer1, toy.epochs_layer2, toy.epochs_joint) == (100, 50, 50)
    assert cfg.lr(0) == cfg.learning_rate and cfg.lr(100) < cfg.lr(10)


def test_empty_or_mismatched_data_is_rejected():
    arch = toy_arch()
    with pytest.raises(ValueError):
        pretrain_layer1(np.zeros((0, 16, 16)), arch, short_cfg())
    with pytest.raises(ValueError):
        pretrain_layer1(np.zeros((3, 8, 8)), arch, short_cfg())


def test_single_mask_is_reconstructed():
    arch = SbmArchitecture.tiled(8, 8, 2, 2, 2, 4, 2)
    mask = np.zeros((8, 8))
    mask[2:6, 1:7] = 1
    mask[0:2, 3:5] = 1
    params = pretrain_layer1(mask[None], arch, SbmTrainingConfig(epochs_layer1=300, minibatch=1))
    h = mean_field_infer(mask.ravel(), params, arch)
    rec = cond_v(h.h1, params, arch)
    assert np.abs(rec - mask.ravel()).mean() < 0.1


def _window_means(history, stage):
    losses = np.array([loss for s, _, loss in history if s == stage])
    usable = len(losses) // 10 * 10
    return losses[:usable].reshape(-1, 10).mean(1)


def test_pretraining_trend_is_downward(toy_ds):
    arch = toy_arch()
    hist = []
    cfg = SbmTrainingConfig.toy(seed=0)
    p = pretrain_layer1(toy_ds.train_shapes(), arch, cfg, history=hist)
    pretrain_layer2(toy_ds.train_shapes(), p, arch, cfg, history=hist)
    for stage in ("layer1", "layer2"):
        means = _window_means(hist, stage)
        assert np.all(np.diff(means) <= 0), (stage, means)


def test_training_is_seed_deterministic(toy_ds):
    arch = toy_arch()
    data = toy_ds.train_shapes()[:40]

    def run(seed):
        cfg = short_cfg(seed=seed)
        p = pretrain_layer1(data, arch, cfg)
        p = pretrain_layer2(data, p, arch, cfg)
        return joint_train(data, p, arch, cfg)

    a, b, c = run(3), run(3), run(4)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.W1, c.W1)


def test_layer2_only_touches_top_layer(toy_ds):
    arch = toy_arch()
    data = toy_ds.train_shapes()[:40]
    p1 = pretrain_layer1(data, arch, short_cfg())
    p2 = pretrain_layer2(data, p1, arch, short_cfg())
    assert p2.W2.shape == (arch.n_hidden1, arch.hidden2) and p2.c2.shape == (arch.hidden2,)
    for name in ("W1", "b", "c1"):
        assert np.array_equal(getattr(p1, name), getattr(p2, name))
    assert not np.array_equal(p1.W2, p2.W2)


def test_joint_training_keeps_parameters_finite_and_reconstruction(toy_ds, toy_model):
    arch, params = toy_model
    assert params.is_finite()
    data = toy_ds.train_shapes()
    cfg = SbmTrainingConfig.toy(seed=0)
    pre = pretrain_layer2(data, pretrain_layer1(data, arch, cfg), arch, cfg)
    before = reconstruction_error(data, pre, arch)
    after = reconstruction_error(data, params, arch)
    assert after <= 1.1 * before


def test_half_occluded_shape_completion(toy_ds, toy_model):
    # blank the right half, then treat it as latent: alternate mean-field
    # hidden updates with cond_v on the blanked pixels only
    arch, params = toy_model
    hidden = np.zeros((16, 16), dtype=bool)
    hidden[:, 8:] = True
    hidden = hidden.ravel()
    ious = []
    for shape in toy_ds.test_shapes()[:40]:
        v = shape.astype(float).ravel()
        v[hidden] = 0.0
        h2 = np.full(arch.hidden2, 0.5)
        for _ in range(25):
            h1 = cond_h1(v, h2, params, arch)
            h2 = cond_h2(h1, params)
            v[hidden] = cond_v(h1, params, arch)[hidden]
        pred = v[hidden] > 0.5
        truth = shape.ravel()[hidden] > 0
        ious.append((pred & truth).sum() / max((pred | truth).sum(), 1))
    assert np.mean(ious) > 0.7
