import math

import numpy as np
import pytest

from agdnet.errors import ConfigurationError, OptimizerStateError, ParameterError, TrainingDivergedError
from agdnet.network import AGDModel, NetConfig, set_fixed_srf
from agdnet.observation import apply_srf, default_srf, jittered_gaussian_srf
from agdnet.rank_loss import RankLossConfig
from agdnet.tensor import Tensor
from agdnet.trainer import (
    OptimizerState,
    Sample,
    TrainConfig,
    adam_step,
    cosine_lr,
    evaluate,
    make_samples,
    sample_patches,
    split_by_scene,
    steps_per_epoch,
    synthetic_samples,
    train,
)

TINY_NET = NetConfig(s=6, stages=2, base_channels=6, dense_layers=1)


def tiny_data(n=3, size=16, srfs=None, seed=0):
    return synthetic_samples(n, 6, size, size, 2, srfs or [default_srf(6)], seed=seed)


def tiny_cfg(**kw):
    base = dict(epochs=1, batch=2, patch=8, rank=RankLossConfig(4, 4))
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(lr_start=1e-5, lr_end=1e-3)
    with pytest.raises(ParameterError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ParameterError):
        TrainConfig(epochs=0)


def test_cosine_lr_examples():
    assert cosine_lr(0, 10, 1e-3, 1e-5) == 1e-3
    assert math.isclose(cosine_lr(10, 10, 1e-3, 1e-5), 1e-5, rel_tol=1e-12)
    assert math.isclose(cosine_lr(5, 10, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, rel_tol=1e-12)
    assert cosine_lr(0, 0, 1e-3, 1e-5) == 1e-3


def test_adam_first_step_is_sign():
    for g in (0.3, -2.0, 1e-3):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([g])
        adam_step([p], OptimizerState.for_params([p]), 0.01)
        assert math.isclose(p.data[0], 1.0 - 0.01 * math.copysign(1, g), rel_tol=0, abs_tol=1e-7)


def test_adam_zero_grad_and_decay():
    p = Tensor([2.0], requires_grad=True)
    state = OptimizerState.for_params([p])
    p.grad = np.array([1.0])
    adam_step([p], state, 0.1)
    m1, v1, w1 = state.m[0].copy(), state.v[0].copy(), p.data.copy()
    p.grad = np.array([0.0])
    state2 = OptimizerState.for_params([p])
    before = p.data.copy()
    adam_step([p], state2, 0.1)
    assert np.array_equal(p.data, before)
    adam_step([p], state, 0.1)
    assert np.allclose(state.m[0], 0.9 * m1) and np.allclose(state.v[0], 0.999 * v1)
    assert state.step == 2 and not np.array_equal(p.data, w1)


def test_adam_scalar_convergence():
    w = Tensor([0.0], requires_grad=True)
    state = OptimizerState.for_params([w])
    for _ in range(200):
        w.grad = 2 * (w.data - 3.0)
        adam_step([w], state, 0.1)
    assert abs(w.data[0] - 3.0) < 1e-2


def test_adam_errors_and_frozen():
    p = Tensor([1.0], requires_grad=True)
    frozen = Tensor([5.0])
    state = OptimizerState.for_params([p, frozen])
    with pytest.raises(OptimizerStateError):
        adam_step([p, frozen], state, 0.1)
    p.grad = np.array([1.0])
    adam_step([p, frozen], state, 0.1)
    assert frozen.data[0] == 5.0
    with pytest.raises(OptimizerStateError):
        adam_step([p], state, 0.1)


def test_patches_deterministic_colocated_and_bounded():
    data = tiny_data(2, size=20)
    a = sample_patches(data, 8, 3, seed=1, epoch=2, step=1)
    b = sample_patches(data, 8, 3, seed=1, epoch=2, step=1)
    assert all(np.array_equal(p.hs, q.hs) and np.array_equal(p.rgb, q.rgb) for p, q in zip(a, b))
    for p in a:
        np.testing.assert_allclose(p.rgb, apply_srf(p.hs, p.srf), atol=1e-12)
    seen = 0
    for step in range(2500):
        for p in sample_patches(data, 8, 4, seed=0, epoch=0, step=step):
            assert p.hs.shape == (6, 8, 8) and p.rgb.shape == (3, 8, 8)
            seen += 1
    assert seen == 10_000
    with pytest.raises(ConfigurationError):
        sample_patches(data, 21, 1, 0, 0)
    with pytest.raises(ConfigurationError):
        sample_patches([], 4, 1, 0, 0)


def test_split_by_scene():
    data = make_samples([np.zeros((6, 4, 4))] * 10, [default_srf(6), jittered_gaussian_srf(6, 1)])
    tr, held = split_by_scene(data)
    assert {s.scene for s in tr} == set(range(8)) and {s.scene for s in held} == {8, 9}
    assert len(tr) == 16 and len(held) == 4


def test_steps_per_epoch():
    data = tiny_data(3, size=16)
    assert steps_per_epoch(data, tiny_cfg(patch=8, batch=2)) == 6
    assert steps_per_epoch(data, tiny_cfg(patch=16, batch=4)) == 1


def test_zero_lr_run_leaves_parameters():
    data = tiny_data()
    model = AGDModel(TINY_NET)
    before = [p.data.copy() for p in model.parameters()]
    res = train(model, data, tiny_cfg(lr_start=0.0, lr_end=0.0))
    assert len(res.history) == 1
    assert all(np.array_equal(a, p.data) for a, p in zip(before, model.parameters()))


def test_history_and_heldout_metrics():
    data = tiny_data(5)
    tr, held = split_by_scene(data)
    res = train(AGDModel(TINY_NET), tr, tiny_cfg(epochs=3, eval_every=2), heldout=held)
    assert [r["epoch"] for r in res.history] == [0, 1, 2]
    assert "psnr" in res.history[0] and "psnr" not in res.history[1] and "psnr" in res.history[2]
    assert all(math.isfinite(r["loss"]) for r in res.history)
    assert res.history[1]["lr"] < res.history[0]["lr"]


def test_divergence_aborts():
    data = tiny_data(1)
    bad = [Sample(np.full_like(data[0].hs, np.nan), data[0].rgb, data[0].srf)]
    with pytest.raises(TrainingDivergedError):
        train(AGDModel(TINY_NET), bad, tiny_cfg())


def test_fixed_srf_untouched_by_training():
    srfs = [jittered_gaussian_srf(6, i) for i in range(2)]
    data = tiny_data(2, srfs=srfs)
    model = AGDModel(NetConfig(**{**TINY_NET.__dict__, "mode": "fixed_srf"}))
    set_fixed_srf(model, srfs[0])
    snapshots = [c.matrix.tobytes() for c in srfs]
    fixed = model.fixed_srf
    train(model, data, tiny_cfg(epochs=2))
    assert [c.matrix.tobytes() for c in srfs] == snapshots
    assert all(p is not model.fixed_srf and p is not fixed for p in model.parameters())
    assert model.fixed_srf.data.tobytes() in snapshots


def test_band_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        train(AGDModel(NetConfig(s=8, stages=2, base_channels=8, dense_layers=1)), tiny_data(), tiny_cfg())


def test_training_reduces_loss_and_is_reproducible():
    data = tiny_data(2)
    runs = []
    for _ in range(2):
        model = AGDModel(TINY_NET)
        res = train(model, data, tiny_cfg(epochs=10, lr_start=1e-2, lr_end=1e-4))
        runs.append((res.history, [p.data.copy() for p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))
    losses = [r["loss"] for r in runs[0][0]]
    assert np.mean(losses[-3:]) < 0.8 * losses[0]
    assert set(evaluate(model, data)) == {"psnr", "assim", "sam", "rmse"}
