"""Patch-wise rank loss with a hand-specified backward pass.

The forward value counts, per ``h1 x w1`` patch, the singular values of the
prediction that fall strictly inside ``(delta_l, delta_h)``. The backward pass
does not differentiate that count; it injects, for every patch, the direction

    D = U_hat diag((lam - lam_hat) / lam_hat * q) V_hat / (s * h1 * w1)

which moves each in-range singular value of the prediction towards the
matching singular value of the ground truth. Because optimizers subtract the
gradient, the gradient reported to the tape is ``-D``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, ParameterError, TapeStateError
from .tensor import Tensor, make_op


@dataclass(frozen=True)
class RankLossConfig:
    h1: int = 48
    w1: int = 48
    delta_l: float = 1e-3
    delta_h: float = 1.0

    def __post_init__(self):
        if self.h1 < 1 or self.w1 < 1:
            raise ParameterError("patch extents must be positive")
        if not 0 < self.delta_l < self.delta_h:
            raise ParameterError(f"need 0 < delta_l < delta_h, got {self.delta_l}, {self.delta_h}")


@dataclass
class PatchContext:
    row: int
    col: int
    lam: np.ndarray       # ground-truth singular values, descending
    u_hat: np.ndarray     # s x s
    lam_hat: np.ndarray   # s, descending
    v_hat: np.ndarray     # s x (h1*w1), rows orthonormal
    q: np.ndarray         # s, 0/1 mask


@dataclass
class RankLossContext:
    shape: tuple[int, int, int]
    h1: int
    w1: int
    patches: list[PatchContext] = field(default_factory=list)


_COMPLETION_SEED = 0x5EED


def svd_bands(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U diag(lam) V`` of an ``s x n`` matrix with ``s <= n``.

    Works on the ``s x s`` Gram matrix: ``U`` comes from its eigenvectors and
    the singular values are the row norms of ``U^T m`` (this keeps tiny
    singular values accurate to ~eps * sigma_1 rather than sqrt(eps)). Rows of
    ``V`` belonging to zero singular values are filled with an orthonormal
    completion.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"svd_bands expects a matrix, got shape {m.shape}")
    s, n = m.shape
    if s > n:
        raise ContractError(f"svd_bands needs s <= n, got {s} x {n}")
    _, vecs = np.linalg.eigh(m @ m.T)
    proj = vecs.T @ m
    lam = np.sqrt(np.einsum("ij,ij->i", proj, proj))
    order = np.argsort(-lam, kind="stable")
    lam, u, proj = lam[order], vecs[:, order], proj[order]
    tol = max(lam[0], 1e-300) * s * np.finfo(np.float64).eps
    live = lam > tol
    v = np.zeros((s, n))
    v[live] = proj[live] / lam[live, None]
    n_live = int(live.sum())
    if n_live < s:
        lam[~live] = 0.0
        rng = np.random.default_rng(_COMPLETION_SEED)
        basis = np.concatenate([v[live].T, rng.normal(size=(n, s - n_live))], axis=1)
        q, _ = np.linalg.qr(basis)
        v[~live] = q[:, n_live:s].T
    return u, lam, v


def _patch(cube: np.ndarray, row: int, col: int, h1: int, w1: int) -> np.ndarray:
    s = cube.shape[0]
    return cube[:, row * h1:(row + 1) * h1, col * w1:(col + 1) * w1].reshape(s, h1 * w1)


def patch_grid(shape, cfg: RankLossConfig) -> tuple[int, int]:
    s, h, w = shape
    rows, cols = h // cfg.h1, w // cfg.w1
    if rows * cols == 0:
        raise ConfigurationError(f"patch {cfg.h1}x{cfg.w1} does not fit in a {h}x{w} image")
    if s > cfg.h1 * cfg.w1:
        raise ConfigurationError(f"patch of {cfg.h1 * cfg.w1} pixels is smaller than {s} bands")
    return rows, cols


def rank_loss_forward(xhat, x, cfg: RankLossConfig) -> tuple[float, RankLossContext]:
    """Fraction of in-range predicted singular values; also returns the saved context."""
    xhat = np.asarray(xhat.data if isinstance(xhat, Tensor) else xhat, dtype=np.float64)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if xhat.shape != x.shape or xhat.ndim != 3:
        raise ContractError(f"rank loss needs matching [s,h,w] cubes, got {xhat.shape} and {x.shape}")
    rows, cols = patch_grid(x.shape, cfg)
    s = x.shape[0]
    ctx = RankLossContext(shape=x.shape, h1=cfg.h1, w1=cfg.w1)
    count = 0.0
    for r in range(rows):
        for c in range(cols):
            _, lam, _ = svd_bands(_patch(x, r, c, cfg.h1, cfg.w1))
            u_hat, lam_hat, v_hat = svd_bands(_patch(xhat, r, c, cfg.h1, cfg.w1))
            q = ((lam_hat > cfg.delta_l) & (lam_hat < cfg.delta_h)).astype(np.float64)
            count += q.sum()
            ctx.patches.append(PatchContext(r, c, lam, u_hat, lam_hat, v_hat, q))
    p = rows * cols
    return count / (p * s * cfg.h1 * cfg.w1), ctx


def singular_value_step(pc: PatchContext, s: int, h1: int, w1: int) -> np.ndarray:
    """Masked, weighted singular-value update ``(lam - lam_hat) / lam_hat * q / (s h1 w1)``."""
    inv = np.zeros_like(pc.lam_hat)
    on = pc.q > 0
    inv[on] = 1.0 / pc.lam_hat[on]
    return (pc.lam - pc.lam_hat) * inv * pc.q / (s * h1 * w1)


def improvement_direction(ctx: RankLossContext) -> np.ndarray:
    """The per-patch direction ``D`` assembled into a full cube (remainder pixels 0)."""
    s, h, w = ctx.shape
    h1, w1 = ctx.h1, ctx.w1
    out = np.zeros(ctx.shape)
    for pc in ctx.patches:
        step = singular_value_step(pc, s, h1, w1)
        d = (pc.u_hat * step) @ pc.v_hat
        out[:, pc.row * h1:(pc.row + 1) * h1, pc.col * w1:(pc.col + 1) * w1] = d.reshape(s, h1, w1)
    return out


def rank_loss_backward(ctx: RankLossContext, cfg: RankLossConfig) -> np.ndarray:
    """Loss gradient with respect to the prediction: ``-D``."""
    if (ctx.h1, ctx.w1) != (cfg.h1, cfg.w1):
        raise TapeStateError(f"context built for {ctx.h1}x{ctx.w1} patches, config says {cfg.h1}x{cfg.w1}")
    rows, cols = patch_grid(ctx.shape, cfg)
    if len(ctx.patches) != rows * cols:
        raise TapeStateError("context patch count does not match its image shape")
    return -improvement_direction(ctx)


def rank_loss(xhat: Tensor, x, cfg: RankLossConfig) -> Tensor:
    """Custom-gradient node: value from the forward count, gradient from ``-D``."""
    value, ctx = rank_loss_forward(xhat, x, cfg)
    return make_op("rank_loss", np.array(value), (xhat,),
                   lambda g: (rank_loss_backward(ctx, cfg) * float(g),))
