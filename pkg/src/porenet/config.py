"""INI-style configuration files for the command line.

Sections and keys (all optional)::

    [train]    epochs, lr, alpha, batch_size, dropout, checkpoint_every,
               val_every, clip_norm, seed
    [weights]  m, c, b, d
    [pipn]     local, global, decoder, activation
    [pigano]   geo_local, geo_global, geo_latent, branch, branch_latent,
               branch_points, trunk, output, activation
    [sampler]  mixture_weight, near_std, interface_fraction

Width lists are comma separated, e.g. ``decoder = 512, 256, 128``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .geometry import SamplerConfig
from .training import LossWeights, TrainConfig

_TRAIN_KEYS = {"epochs": int, "lr": float, "alpha": float, "batch_size": int, "dropout": float,
               "checkpoint_every": int, "val_every": int, "clip_norm": float, "seed": int}
_WEIGHT_KEYS = {"m": float, "c": float, "b": float, "d": float}
_SAMPLER_KEYS = {"mixture_weight": float, "near_std": float, "interface_fraction": float}
_WIDTHS = lambda s: tuple(int(x) for x in s.replace(" ", "").split(",") if x)
_MODEL_KEYS = {
    "pipn": {"local": _WIDTHS, "global": _WIDTHS, "decoder": _WIDTHS, "activation": str},
    "pigano": {"geo_local": _WIDTHS, "geo_global": _WIDTHS, "geo_latent": int, "branch": _WIDTHS,
               "branch_latent": int, "branch_points": int, "trunk": _WIDTHS, "output": _WIDTHS,
               "activation": str},
}


@dataclass
class RunConfig:
    train: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"pipn": {}, "pigano": {}})
    sampler: dict = field(default_factory=dict)

    def train_config(self, seed=None, **overrides) -> TrainConfig:
        kw = dict(self.train)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if seed is not None:
            kw["seed"] = seed
        try:
            return TrainConfig(weights=LossWeights(**self.weights), **kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def model_overrides(self, kind):
        kw = dict(self.model.get(kind, {}))
        if "global" in kw:
            kw["global_"] = kw.pop("global")
        return kw

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**self.sampler)


def _section(cp, name, keys, path):
    out = {}
    if not cp.has_section(name):
        return out
    for k, v in cp.items(name):
        if k not in keys:
            raise ConfigurationError(f"{path}: unknown key {k!r} in [{name}]")
        try:
            out[k] = keys[k](v)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: bad value for {name}.{k}: {v!r}") from exc
    return out


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    known = {"train", "weights", "pipn", "pigano", "sampler"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigurationError(f"{path}: unknown sections {sorted(extra)}")
    return RunConfig(
        train=_section(cp, "train", _TRAIN_KEYS, path),
        weights=_section(cp, "weights", _WEIGHT_KEYS, path),
        model={k: _section(cp, k, v, path) for k, v in _MODEL_KEYS.items()},
        sampler=_section(cp, "sampler", _SAMPLER_KEYS, path),
    )
