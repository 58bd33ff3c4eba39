"""End-to-end training: Adam with a per-epoch cosine learning rate over random crops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import metrics
from .errors import ConfigurationError, OptimizerStateError, ParameterError, TrainingDivergedError
from .losses import LossWeights, loss_total
from .network import AGDModel, forward, set_fixed_srf
from .observation import SRF, apply_srf, material_library, synth_scene
from .rank_loss import RankLossConfig
from .tensor import Tensor, backward, no_grad, scale

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 150
    batch: int = 4
    patch: int = 32
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    rank: RankLossConfig = field(default_factory=lambda: RankLossConfig(h1=16, w1=16))
    use_lf: bool = True
    use_lr: bool = True
    eval_every: int = 1

    def __post_init__(self):
        if self.lr_start < 0 or self.lr_end < 0 or self.lr_end > self.lr_start:
            raise ParameterError(f"need 0 <= lr_end <= lr_start, got {self.lr_start}, {self.lr_end}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.epsilon <= 0:
            raise ParameterError("Adam decay rates must lie in [0, 1) and epsilon must be > 0")
        if self.epochs < 1 or self.batch < 1 or self.patch < 1 or self.eval_every < 1:
            raise ParameterError("epochs, batch, patch and eval_every must be positive")


# -- data ---------------------------------------------------------------------

class Sample(NamedTuple):
    hs: np.ndarray
    rgb: np.ndarray
    srf: SRF
    scene: int = 0


class Patch(NamedTuple):
    hs: np.ndarray
    rgb: np.ndarray
    srf: SRF


def make_samples(scenes: Sequence[np.ndarray], srfs: Sequence[SRF], noise_sigma: float = 0.0,
                 seed: int = 0) -> list[Sample]:
    """Pair every scene with its projection under every SRF."""
    out = []
    for i, hs in enumerate(scenes):
        for j, c in enumerate(srfs):
            rgb = apply_srf(hs, c, noise_sigma, seed=seed * 100003 + i * 101 + j)
            out.append(Sample(hs, rgb, c, i))
    return out


def synthetic_samples(n: int, s: int, h: int, w: int, rank: int, srfs: Sequence[SRF],
                      noise_sigma: float = 0.0, seed: int = 0, library_size: int | None = 8) -> list[Sample]:
    """``n`` synthetic scenes projected through every SRF.

    Scenes draw their materials from one shared library of ``library_size``
    signatures (``None`` gives every scene fresh signatures).
    """
    library = None if library_size is None else material_library(s, library_size, seed=seed * 7919 + 104729)
    scenes = [synth_scene(s, h, w, rank, seed=seed * 7919 + i, library=library) for i in range(n)]
    return make_samples(scenes, srfs, noise_sigma, seed)


def split_by_scene(samples: Sequence[Sample], holdout_fraction: float = 0.2):
    """First 80% of scene indices train, the rest are held out."""
    scenes = sorted({smp.scene for smp in samples})
    n_train = max(1, int(len(scenes) * (1 - holdout_fraction)))
    train_ids = set(scenes[:n_train])
    train = [smp for smp in samples if smp.scene in train_ids]
    held = [smp for smp in samples if smp.scene not in train_ids]
    return train, held


def sample_patches(dataset: Sequence[Sample], patch: int, batch: int, seed: int, epoch: int,
                   step: int = 0) -> list[Patch]:
    """Co-located HS/RGB crops for one optimizer step.

    Each epoch visits the samples in a permutation drawn from ``(seed, epoch)``;
    crop ``j`` of step ``step`` takes its position from
    ``(seed, epoch, step * batch + j)``.
    """
    if not dataset:
        raise ConfigurationError("empty dataset")
    for smp in dataset:
        if patch > min(smp.hs.shape[1:]):
            raise ConfigurationError(f"patch {patch} exceeds image extent {smp.hs.shape[1:]}")
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    out = []
    for j in range(batch):
        slot = step * batch + j
        smp = dataset[int(order[slot % len(dataset)])]
        _, h, w = smp.hs.shape
        rng = np.random.default_rng([seed, epoch, slot])
        r = int(rng.integers(0, h - patch + 1))
        c = int(rng.integers(0, w - patch + 1))
        out.append(Patch(smp.hs[:, r:r + patch, c:c + patch], smp.rgb[:, r:r + patch, c:c + patch], smp.srf))
    return out


# -- optimisation ---------------------------------------------------------------

def cosine_lr(epoch: float, total_epochs: float, lr_start: float, lr_end: float) -> float:
    if total_epochs <= 0:
        return lr_start
    return lr_end + 0.5 * (lr_start - lr_end) * (1 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update using each parameter's ``grad``; in place."""
    if len(params) != len(state.m):
        raise OptimizerStateError(f"state tracks {len(state.m)} tensors, got {len(params)}")
    for p in params:
        if p.requires_grad and p.grad is None:
            raise OptimizerStateError(f"parameter of shape {p.shape} has no gradient; run backward first")
    state.step += 1
    t = state.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        if not p.requires_grad:
            continue
        g = p.grad
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- loop -----------------------------------------------------------------------

def reconstruct(model: AGDModel, rgb: np.ndarray, srf: SRF | None = None) -> np.ndarray:
    """Inference without recording; output clipped to [0, 1]."""
    if srf is not None and model.cfg.mode == "fixed_srf":
        set_fixed_srf(model, srf)
    with no_grad():
        xhat, _ = forward(model, Tensor(rgb))
    return np.clip(xhat.data, 0.0, 1.0)


def evaluate(model: AGDModel, samples: Sequence[Sample]) -> dict[str, float]:
    """Mean of each metric over the samples."""
    rows = [metrics.evaluate_all(smp.hs, reconstruct(model, smp.rgb, smp.srf)) for smp in samples]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


@dataclass
class TrainResult:
    model: AGDModel
    history: list[dict]


def train_step(model: AGDModel, patches: Sequence[Patch], cfg: TrainConfig) -> float:
    """Accumulate the batch-mean gradient into the parameters; returns the batch loss."""
    model.zero_grad()
    total = 0.0
    for pt in patches:
        if model.cfg.mode == "fixed_srf":
            set_fixed_srf(model, pt.srf)
        xhat, y_reproj = forward(model, Tensor(pt.rgb))
        if not np.all(np.isfinite(xhat.data)):
            raise TrainingDivergedError("network output became non-finite")
        try:
            loss = loss_total(xhat, pt.hs, pt.rgb, y_reproj, cfg.loss, cfg.rank, use_lf=cfg.use_lf,
                              use_lr=cfg.use_lr)
        except np.linalg.LinAlgError as exc:
            raise TrainingDivergedError(f"rank-loss SVD failed on non-finite data: {exc}") from None
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at optimizer step")
        backward(scale(loss, 1.0 / len(patches)))
        total += value / len(patches)
    return total


def steps_per_epoch(dataset: Sequence[Sample], cfg: TrainConfig) -> int:
    """Enough crops to cover every sample's area once: ``ceil(n * tiles / batch)``."""
    tiles = sum((smp.hs.shape[1] // cfg.patch) * (smp.hs.shape[2] // cfg.patch) for smp in dataset)
    return max(1, math.ceil(max(tiles, len(dataset)) / cfg.batch))


def train(model: AGDModel, dataset: Sequence[Sample], cfg: TrainConfig,
          heldout: Sequence[Sample] = (), callbacks: Sequence[Callable[[dict], None]] = ()) -> TrainResult:
    """Train in place. History holds one record per epoch.

    An epoch is :func:`steps_per_epoch` steps at a learning rate that
    follows the cosine schedule from ``lr_start`` (first epoch) to ``lr_end``
    (last epoch). Held-out metrics are recorded every ``eval_every`` epochs
    and always on the last one.
    """
    if model.cfg.mode == "fixed_srf" and any(smp.srf.band_count != model.cfg.s for smp in dataset):
        raise ConfigurationError("sample SRFs do not match the model band count")
    for smp in dataset:
        if smp.hs.shape[0] != model.cfg.s:
            raise ConfigurationError(f"sample has {smp.hs.shape[0]} bands, model expects {model.cfg.s}")
    params = model.parameters()
    state = OptimizerState.for_params(params)
    steps = steps_per_epoch(dataset, cfg)
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs - 1, cfg.lr_start, cfg.lr_end)
        losses = []
        for step in range(steps):
            patches = sample_patches(dataset, cfg.patch, cfg.batch, cfg.seed, epoch, step)
            losses.append(train_step(model, patches, cfg))
            adam_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.epsilon)
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        if heldout and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            record.update(evaluate(model, heldout))
        history.append(record)
        log.debug("epoch %d: %s", epoch, record)
        for cb in callbacks:
            cb(record)
    return TrainResult(model, history)
