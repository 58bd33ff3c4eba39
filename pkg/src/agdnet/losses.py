"""Training objective: pixel-wise terms plus the rank loss."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionError, ParameterError
from .rank_loss import RankLossConfig, rank_loss
from .tensor import Tensor, add, as_tensor, scale, sub, sum_abs, sum_sq


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("loss weights must be >= 0")


def loss_pixelwise(xhat: Tensor, x, y, y_reproj: Tensor, w: LossWeights = LossWeights(),
                   use_lf: bool = True) -> Tensor:
    """``||f_c(xhat) - y||_F^2 / (3 hw) + alpha * ||xhat - x||_1 / (s hw)``."""
    x, y = as_tensor(x), as_tensor(y)
    if xhat.shape != x.shape:
        raise DimensionError(f"prediction {xhat.shape} and target {x.shape} differ")
    if y_reproj.shape != y.shape or y.shape[0] != 3 or y.shape[1:] != x.shape[1:]:
        raise DimensionError(f"reprojection {y_reproj.shape} and RGB {y.shape} are inconsistent")
    s, h, wd = x.shape
    l_o = scale(sum_abs(sub(xhat, x)), w.alpha / (s * h * wd))
    if not use_lf:
        return l_o
    l_f = scale(sum_sq(sub(y_reproj, y)), 1.0 / (3 * h * wd))
    return add(l_f, l_o)


def loss_total(xhat: Tensor, x, y, y_reproj: Tensor, w: LossWeights = LossWeights(),
               rank_cfg: RankLossConfig | None = None, use_lf: bool = True,
               use_lr: bool = True) -> Tensor:
    """Pixel-wise loss plus ``beta`` times the rank-loss node."""
    total = loss_pixelwise(xhat, x, y, y_reproj, w, use_lf=use_lf)
    if not use_lr or w.beta == 0 or rank_cfg is None:
        return total
    return add(total, scale(rank_loss(xhat, as_tensor(x), rank_cfg), w.beta))
