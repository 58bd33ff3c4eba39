"""The unrolled amended-gradient-descent network.

A model maps an RGB image to an HS estimate in ``K`` stages: a learned
initialization followed by ``K - 1`` descent steps. Each step forms the basic
gradient ``f_ct(y - f_c(x))`` with bias-free projection layers and adds the
incremental gradient predicted from it by a bias-free sub-network::

    g = f_ct(y - f_c(x_k))
    x_{k+1} = x_k + g + D_k(g)
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DimensionError, ParameterError
from .observation import SRF
from .tensor import (
    Tensor,
    add,
    concat_channels,
    depthwise_conv3x3,
    make_op,
    pointwise_conv,
    relu,
    sub,
)

MODES = ("learned_srf", "fixed_srf")


@dataclass(frozen=True)
class NetConfig:
    s: int = 16
    stages: int = 4
    base_channels: int = 32
    dense_layers: int = 2
    mode: str = "learned_srf"
    use_init_net: bool = True
    use_incremental: bool = True
    share_theta_c: bool = True
    use_szm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.s < 4:
            raise ParameterError(f"s must be >= 4, got {self.s}")
        if self.stages < 1:
            raise ParameterError(f"stages must be >= 1, got {self.stages}")
        if self.base_channels < self.s:
            raise ParameterError(f"base_channels ({self.base_channels}) must be >= s ({self.s})")
        if self.dense_layers < 1:
            raise ParameterError(f"dense_layers must be >= 1, got {self.dense_layers}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def full_scale(cls, stages: int = 12, **kw) -> "NetConfig":
        return cls(s=31, stages=stages, base_channels=62, dense_layers=4, **kw)


def szm_norm(x: Tensor) -> Tensor:
    """Subtract the per-pixel mean over channels."""
    out = x.data - x.data.mean(axis=0, keepdims=True)
    return make_op("szm_norm", out, (x,), lambda g: (g - g.mean(axis=0, keepdims=True),))


def _kaiming(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, gain / np.sqrt(fan_in), size=shape), requires_grad=True)


class DenseNet:
    """Densely connected stack of spectral-spatial separable convolutions.

    ``stem`` lifts the input to ``c`` channels; separable layer ``l`` sees the
    concatenation of the stem output and all earlier layer outputs (``c*l``
    channels); the head maps ``c*(L+1)`` channels to ``out_channels`` with no
    activation. No layer has a bias, so the network maps 0 to 0.
    """

    def __init__(self, in_channels: int, out_channels: int, channels: int, layers: int,
                 rng: np.random.Generator):
        c = channels
        relu_gain = np.sqrt(2.0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stem = _kaiming(rng, (c, in_channels), in_channels)
        self.layers = []
        for l in range(1, layers + 1):
            pw = _kaiming(rng, (c, c * l), c * l, relu_gain)
            dw = _kaiming(rng, (c, 3, 3), 9, relu_gain)
            self.layers.append((pw, dw))
        self.head_pw = _kaiming(rng, (out_channels, c * (layers + 1)), c * (layers + 1))
        # small head: each sub-network starts close to the zero map
        self.head_dw = _kaiming(rng, (out_channels, 3, 3), 9, 0.1)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.stem", self.stem)]
        for l, (pw, dw) in enumerate(self.layers, start=1):
            out += [(f"{prefix}.layer{l}.pw", pw), (f"{prefix}.layer{l}.dw", dw)]
        out += [(f"{prefix}.head.pw", self.head_pw), (f"{prefix}.head.dw", self.head_dw)]
        return out

    def forward(self, x: Tensor, use_szm: bool = True) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise DimensionError(f"DenseNet expects {self.in_channels} input channels, got shape {x.shape}")
        norm = szm_norm if use_szm else (lambda t: t)
        features = [pointwise_conv(x, self.stem)]
        for pw, dw in self.layers:
            inp = features[0] if len(features) == 1 else concat_channels(features)
            h = relu(norm(pointwise_conv(inp, pw)))
            h = relu(norm(depthwise_conv3x3(h, dw)))
            features.append(h)
        h = norm(pointwise_conv(concat_channels(features), self.head_pw))
        return norm(depthwise_conv3x3(h, self.head_dw))


class AGDModel:
    """All learnable state of one network.

    ``theta_c`` (``3 x s``) is a single tensor used by every stage when
    ``share_theta_c`` is set; otherwise there is one per stage. ``theta_ct[k]``
    (``s x 3``) is always stage-specific. In ``fixed_srf`` mode the forward
    projection is the constant matrix in ``fixed_srf`` instead.
    """

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        s, c, L = cfg.s, cfg.base_channels, cfg.dense_layers
        n_steps = cfg.stages - 1
        if cfg.use_init_net:
            self.init_net: DenseNet | None = DenseNet(3, s, c, L, rng)
            self.init_linear: Tensor | None = None
        else:
            self.init_net = None
            self.init_linear = _kaiming(rng, (s, 3), 3)
        self.stage_nets = [DenseNet(s, s, c, L, rng) for _ in range(n_steps)] if cfg.use_incremental else []
        n_fc = 1 if cfg.share_theta_c else max(n_steps, 1)
        # theta_c starts as a valid SRF (non-negative rows summing to one) and
        # theta_ct as a short step, so early stages do not amplify the residual
        self.theta_c_list = []
        for _ in range(n_fc):
            w = np.abs(rng.normal(size=(3, s)))
            self.theta_c_list.append(Tensor(w / w.sum(axis=1, keepdims=True), requires_grad=True))
        self.theta_ct = [_kaiming(rng, (s, 3), 3, 0.1) for _ in range(n_steps)]
        self.fixed_srf: Tensor | None = None

    @property
    def theta_c(self) -> Tensor:
        if not self.cfg.share_theta_c:
            raise ContractError("theta_c is not shared in this model; use theta_c_list")
        return self.theta_c_list[0]

    def fc_weight(self, k: int) -> Tensor:
        """Forward-projection weight for descent step ``k`` (1-based)."""
        if self.cfg.mode == "fixed_srf":
            if self.fixed_srf is None:
                raise ContractError("fixed_srf mode needs an SRF; call set_fixed_srf first")
            return self.fixed_srf
        return self.theta_c_list[0 if self.cfg.share_theta_c else k - 1]

    def reprojection_weight(self) -> Tensor:
        return self.fc_weight(max(self.cfg.stages - 1, 1))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors in a fixed order (the fixed SRF is excluded)."""
        out: list[tuple[str, Tensor]] = []
        if self.init_net is not None:
            out += self.init_net.named_parameters("init")
        else:
            out.append(("init.linear", self.init_linear))
        for k, net in enumerate(self.stage_nets, start=1):
            out += net.named_parameters(f"stage{k}")
        if self.cfg.mode == "learned_srf":
            if self.cfg.share_theta_c:
                out.append(("theta_c", self.theta_c_list[0]))
            else:
                out += [(f"theta_c.{k}", t) for k, t in enumerate(self.theta_c_list, start=1)]
        out += [(f"theta_ct.{k}", t) for k, t in enumerate(self.theta_ct, start=1)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def set_fixed_srf(model: AGDModel, c: SRF) -> None:
    """Switch the forward projection of every stage to the constant matrix ``C``."""
    if c.band_count != model.cfg.s:
        raise DimensionError(f"SRF has {c.band_count} bands, model expects {model.cfg.s}")
    model.fixed_srf = Tensor(c.matrix, requires_grad=False)
    if model.cfg.mode != "fixed_srf":
        model.cfg = replace(model.cfg, mode="fixed_srf")


def initialization(model: AGDModel, y: Tensor) -> Tensor:
    if model.init_net is not None:
        return model.init_net.forward(y, model.cfg.use_szm)
    return pointwise_conv(y, model.init_linear)


def basic_gradient(xk: Tensor, y: Tensor, theta_c: Tensor, theta_ct_k: Tensor) -> Tensor:
    """Scaled basic gradient ``f_ct(y - f_c(x_k))``; the step size lives in the weights."""
    return pointwise_conv(sub(y, pointwise_conv(xk, theta_c)), theta_ct_k)


def stage_step(xk: Tensor, y: Tensor, model: AGDModel, k: int) -> Tensor:
    """One amended descent step ``x_k + g + D_k(g)`` for 1 <= k <= K-1."""
    if not 1 <= k <= model.cfg.stages - 1:
        raise ContractError(f"stage index {k} outside [1, {model.cfg.stages - 1}]")
    g = basic_gradient(xk, y, model.fc_weight(k), model.theta_ct[k - 1])
    if not model.cfg.use_incremental:
        return add(xk, g)
    return add(xk, add(g, model.stage_nets[k - 1].forward(g, model.cfg.use_szm)))


def forward(model: AGDModel, y) -> tuple[Tensor, Tensor]:
    """Run all stages; returns the HS estimate and its reprojection ``f_c(x)``."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.ndim != 3 or y.shape[0] != 3:
        raise DimensionError(f"RGB input must be [3, h, w], got {y.shape}")
    x = initialization(model, y)
    for k in range(1, model.cfg.stages):
        x = stage_step(x, y, model, k)
    return x, pointwise_conv(x, model.reprojection_weight())
