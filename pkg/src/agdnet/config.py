"""JSON run configuration: schema, validation and conversion to config objects.

Layout (every section and key optional; omitted keys take the defaults)::

    {
      "net":       {"s", "stages", "base_channels", "dense_layers", "mode",
                    "use_init_net", "use_incremental", "share_theta_c",
                    "use_szm", "seed"},
      "train":     {"lr_start", "lr_end", "beta1", "beta2", "epsilon",
                    "epochs", "batch", "patch", "seed", "use_lf", "use_lr",
                    "eval_every"},
      "loss":      {"alpha", "beta"},
      "rank_loss": {"h1", "w1", "delta_l", "delta_h"}
    }

Unknown keys are rejected.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .errors import AGDError, ConfigurationError
from .losses import LossWeights
from .network import MODES, NetConfig
from .rank_loss import RankLossConfig
from .trainer import TrainConfig

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_BOOL = {"type": "boolean"}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "net": _section({
            "s": {"type": "integer", "minimum": 4},
            "stages": _POS_INT,
            "base_channels": _POS_INT,
            "dense_layers": _POS_INT,
            "mode": {"enum": list(MODES)},
            "use_init_net": _BOOL,
            "use_incremental": _BOOL,
            "share_theta_c": _BOOL,
            "use_szm": _BOOL,
            "seed": _INT,
        }),
        "train": _section({
            "lr_start": _NONNEG,
            "lr_end": _NONNEG,
            "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "epsilon": {"type": "number", "exclusiveMinimum": 0},
            "epochs": _POS_INT,
            "batch": _POS_INT,
            "patch": _POS_INT,
            "seed": _INT,
            "use_lf": _BOOL,
            "use_lr": _BOOL,
            "eval_every": _POS_INT,
        }),
        "loss": _section({"alpha": _NONNEG, "beta": _NONNEG}),
        "rank_loss": _section({
            "h1": _POS_INT,
            "w1": _POS_INT,
            "delta_l": {"type": "number", "exclusiveMinimum": 0},
            "delta_h": _NUM,
        }),
    },
}


@dataclass(frozen=True)
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        loss = train.pop("loss")
        rank = train.pop("rank")
        return {"net": asdict(self.net), "train": train, "loss": loss, "rank_loss": rank}


def parse_run_config(doc: dict) -> RunConfig:
    """Validate ``doc`` against the schema and build the config objects."""
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"run config invalid at {where}: {exc.message}") from None
    try:
        net = NetConfig(**doc.get("net", {}))
        rank = RankLossConfig(**{**{"h1": 16, "w1": 16}, **doc.get("rank_loss", {})})
        loss = LossWeights(**doc.get("loss", {}))
        train = TrainConfig(loss=loss, rank=rank, **doc.get("train", {}))
    except AGDError as exc:
        raise ConfigurationError(f"run config invalid: {exc}") from None
    return RunConfig(net=net, train=train)


def load_run_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return parse_run_config(doc)
