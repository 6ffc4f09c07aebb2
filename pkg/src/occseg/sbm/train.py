"""Greedy layer-wise pretraining and joint training of the SBM."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import (
    SbmArchitecture,
    SbmParams,
    bottom_up,
    cond_h2,
    cond_v,
    gibbs_step,
    mean_field_infer,
)

log = logging.getLogger(__name__)


@dataclass
class SbmTrainingConfig:
    epochs_layer1: int = 3000
    epochs_layer2: int = 1000
    epochs_joint: int = 1000
    learning_rate: float = 0.05
    minibatch: int = 20
    cd_steps: int = 1
    persistent_chains: int = 5
    seed: int = 0
    # lr at epoch e is learning_rate / (1 + lr_decay * e)
    lr_decay: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 2e-4
    init_std: float = 0.01
    joint_gibbs_steps: int = 5
    joint_mf_iters: int = 5
    joint_lr_scale: float = 0.2

    def __post_init__(self):
        for name in ("epochs_layer1", "epochs_layer2", "epochs_joint", "minibatch",
                     "cd_steps", "persistent_chains", "joint_gibbs_steps", "joint_mf_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    def lr(self, epoch: int, scale: float = 1.0) -> float:
        return scale * self.learning_rate / (1.0 + self.lr_decay * epoch)

    @classmethod
    def toy(cls, **kw) -> "SbmTrainingConfig":
        kw = {"epochs_layer1": 100, "epochs_layer2": 50, "epochs_joint": 50, **kw}
        return cls(**kw)


def _data_matrix(data, arch: SbmArchitecture) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2 and data.shape[1] == arch.n_visible and data.shape != (arch.visible_h, arch.visible_w):
        return data
    if data.ndim == 2:
        data = data[None]
    if len(data) == 0:
        raise ValueError("training data is empty")
    if data.shape[1:] != (arch.visible_h, arch.visible_w):
        raise ValueError(f"masks of shape {data.shape[1:]} do not match the "
                         f"{arch.visible_h}x{arch.visible_w} visible layer")
    return data.reshape(len(data), -1)


def _batches(n: int, size: int, rng):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _cross_entropy(v, p) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-(v * np.log(p) + (1 - v) * np.log(1 - p)).sum(-1).mean())


def _patch_outer(v, h1, arch: SbmArchitecture) -> np.ndarray:
    """Shared-weight gradient: sum over patches of ``v_k h1_k^T``."""
    patches = v[:, arch.patch_indices]  # (B, K, side^2)
    hk = h1.reshape(len(h1), arch.n_patches, arch.hidden1_per_patch)
    return np.einsum("bkp,bkm->pm", patches, hk)


class _Sgd:
    """Momentum SGD with L2 weight decay on weight matrices only."""

    def __init__(self, cfg: SbmTrainingConfig, shapes):
        self.cfg = cfg
        self.vel = [np.zeros(s) for s in shapes]

    def step(self, params, grads, lr, decay_mask):
        for i, (p, g) in enumerate(zip(params, grads)):
            if decay_mask[i]:
                g = g - self.cfg.weight_decay * p
            self.vel[i] = self.cfg.momentum * self.vel[i] + lr * g
            p += self.vel[i]


def reconstruction_error(data, params: SbmParams, arch: SbmArchitecture,
                         iters: int = 5) -> float:
    """Mean per-image cross-entropy of ``cond_v(mean-field h1)`` against the data."""
    v = _data_matrix(data, arch)
    h = mean_field_infer(v, params, arch, iters=iters)
    return _cross_entropy(v, cond_v(h.h1, params, arch))


def init_params(data, arch: SbmArchitecture, cfg: SbmTrainingConfig, rng) -> SbmParams:
    v = _data_matrix(data, arch)
    params = SbmParams.zeros(arch)
    params.W1 = rng.normal(0.0, cfg.init_std, params.W1.shape)
    params.W2 = rng.normal(0.0, cfg.init_std, params.W2.shape)
    mean = np.clip(v.mean(0), 1e-3, 1 - 1e-3)
    params.b = np.log(mean / (1 - mean))
    return params


def pretrain_layer1(data, arch: SbmArchitecture, cfg: SbmTrainingConfig,
                    params: SbmParams | None = None, history: list | None = None) -> SbmParams:
    """Train W1, b, c1 as a weight-shared RBM by CD-k.

    Returns full parameters with W2/c2 left at their initial values.
    """
    v_all = _data_matrix(data, arch)
    rng = np.random.default_rng([cfg.seed, 1])
    if params is None:
        params = init_params(data, arch, cfg, rng)
    params = params.copy()
    opt = _Sgd(cfg, [params.W1.shape, params.b.shape, params.c1.shape])
    for epoch in range(cfg.epochs_layer1):
        lr = cfg.lr(epoch)
        for idx in _batches(len(v_all), cfg.minibatch, rng):
            v0 = v_all[idx]
            ph0 = _rbm1_hidden(v0, params, arch)
            vk, phk = v0, ph0
            for _ in range(cfg.cd_steps):
                hk = (rng.random(phk.shape) < phk).astype(np.float64)
                pv = cond_v(hk, params, arch)
                vk = (rng.random(pv.shape) < pv).astype(np.float64)
                phk = _rbm1_hidden(vk, params, arch)
            n = len(v0)
            grads = [
                (_patch_outer(v0, ph0, arch) - _patch_outer(vk, phk, arch)) / n,
                (v0 - vk).mean(0),
                (ph0 - phk).mean(0),
            ]
            opt.step([params.W1, params.b, params.c1], grads, lr, (True, False, False))
        if history is not None:
            ph = _rbm1_hidden(v_all, params, arch)
            history.append(("layer1", epoch, _cross_entropy(v_all, cond_v(ph, params, arch))))
    return params


def _rbm1_hidden(v, params, arch):
    return expit(bottom_up(v, params, arch) + params.c1)


def pretrain_layer2(data, params: SbmParams, arch: SbmArchitecture, cfg: SbmTrainingConfig,
                    history: list | None = None) -> SbmParams:
    """Train W2, c2 as an RBM on the first layer's hidden activations."""
    v_all = _data_matrix(data, arch)
    params = params.check(arch).copy()
    rng = np.random.default_rng([cfg.seed, 2])
    x_all = _rbm1_hidden(v_all, params, arch)
    # the h1 biases of this RBM are auxiliary; c1 stays from the first layer
    a = np.log(np.clip(x_all.mean(0), 1e-3, 1 - 1e-3) / np.clip(1 - x_all.mean(0), 1e-3, 1))
    opt = _Sgd(cfg, [params.W2.shape, a.shape, params.c2.shape])
    for epoch in range(cfg.epochs_layer2):
        lr = cfg.lr(epoch)
        for idx in _batches(len(x_all), cfg.minibatch, rng):
            x0 = x_all[idx]
            p0 = cond_h2(x0, params)
            xk, pk = x0, p0
            for _ in range(cfg.cd_steps):
                hk = (rng.random(pk.shape) < pk).astype(np.float64)
                px = expit(hk @ params.W2.T + a)
                xk = (rng.random(px.shape) < px).astype(np.float64)
                pk = cond_h2(xk, params)
            n = len(x0)
            grads = [(x0.T @ p0 - xk.T @ pk) / n, (x0 - xk).mean(0), (p0 - pk).mean(0)]
            opt.step([params.W2, a, params.c2], grads, lr, (True, False, False))
        if history is not None:
            p = cond_h2(x_all, params)
            px = expit(p @ params.W2.T + a)
            history.append(("layer2", epoch, _cross_entropy(x_all, px)))
    return params


def joint_train(data, params: SbmParams, arch: SbmArchitecture, cfg: SbmTrainingConfig,
                history: list | None = None) -> SbmParams:
    """Fine-tune every parameter by stochastic approximation.

    The data term uses mean-field marginals with the visibles clamped; the model
    term uses persistent block-Gibbs chains.
    """
    v_all = _data_matrix(data, arch)
    params = params.check(arch).copy()
    rng = np.random.default_rng([cfg.seed, 3])
    chain_v = v_all[rng.integers(0, len(v_all), cfg.persistent_chains)].copy()
    chain_h2 = (rng.random((cfg.persistent_chains, arch.hidden2)) < 0.5).astype(np.float64)
    arrays = [params.W1, params.W2, params.b, params.c1, params.c2]
    opt = _Sgd(cfg, [a.shape for a in arrays])
    for epoch in range(cfg.epochs_joint):
        lr = cfg.lr(epoch, cfg.joint_lr_scale)
        for idx in _batches(len(v_all), cfg.minibatch, rng):
            v0 = v_all[idx]
            mf = mean_field_infer(v0, params, arch, iters=cfg.joint_mf_iters)
            for _ in range(cfg.joint_gibbs_steps):
                chain_v, chain_h1, chain_h2 = gibbs_step(chain_v, chain_h2, params, arch, rng)
            n, c = len(v0), len(chain_v)
            grads = [
                _patch_outer(v0, mf.h1, arch) / n - _patch_outer(chain_v, chain_h1, arch) / c,
                mf.h1.T @ mf.h2 / n - chain_h1.T @ chain_h2 / c,
                v0.mean(0) - chain_v.mean(0),
                mf.h1.mean(0) - chain_h1.mean(0),
                mf.h2.mean(0) - chain_h2.mean(0),
            ]
            opt.step(arrays, grads, lr, (True, True, False, False, False))
        if not params.is_finite():
            raise FloatingPointError(f"non-finite parameters after joint epoch {epoch}")
        if history is not None:
            history.append(("joint", epoch, reconstruction_error(v_all, params, arch)))
    return params


def train_sbm(data, arch: SbmArchitecture, cfg: SbmTrainingConfig,
              history: list | None = None) -> SbmParams:
    """Layer-wise pretraining followed by joint training."""
    params = pretrain_layer1(data, arch, cfg, history=history)
    params = pretrain_layer2(data, params, arch, cfg, history=history)
    log.info("pretraining done, reconstruction %.4f", reconstruction_error(data, params, arch))
    return joint_train(data, params, arch, cfg, history=history)
