"""Run configuration and its strict INI-style file format.

Example::

    [model]
    n_scales = 2
    cells_per_scale = 1, 1

    [search]
    epochs = 60

Unknown sections or keys are errors. The defaults are the full-size
setting: three scales, 1/2/2 cells of 4 nodes, 60 search and 100 train
epochs, learning rates 0.01 and 0.001.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

ABLATIONS = ("shared", "non-shared", "no-att", "no-conv", "no-basic", "no-grouping")

DEFAULT_CELLS = (1, 2, 2)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # data
    t_in: int = 12
    horizon: int = 12
    train_frac: float = 0.7
    valid_frac: float = 0.2
    # model
    n_scales: int = 3
    tau: int = 20
    emb_dim: int = 20
    hidden: int = 32
    cells_per_scale: tuple[int, ...] | None = None
    nodes_per_cell: int = 4
    graph_mode: str = "snas4mtf"
    no_att: bool = False
    no_conv: bool = False
    no_basic: bool = False
    no_grouping: bool = False
    # optimisation
    search_epochs: int = 60
    train_epochs: int = 100
    lr_weights: float = 0.01
    lr_arch: float = 0.001
    optimizer: str = "sgd"
    arch_optimizer: str = "sgd"
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def cells(self) -> tuple[int, ...]:
        """Cells per scale; defaults to (1, 2, 2) truncated or padded to K."""
        if self.cells_per_scale is not None:
            return tuple(self.cells_per_scale)
        base = list(DEFAULT_CELLS[: self.n_scales])
        base += [DEFAULT_CELLS[-1]] * (self.n_scales - len(base))
        return tuple(base)

    def validate(self) -> None:
        positive = (
            "t_in", "horizon", "n_scales", "tau", "emb_dim", "hidden",
            "search_epochs", "train_epochs", "batch_size",
        )  # fmt: skip
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.nodes_per_cell < 2:
            raise ConfigError(f"nodes_per_cell must be >= 2, got {self.nodes_per_cell}")
        if self.lr_weights < 0 or self.lr_arch < 0:
            raise ConfigError("learning rates must be >= 0")
        if not (0 < self.train_frac < 1 and 0 <= self.valid_frac < 1 and self.train_frac + self.valid_frac < 1):
            raise ConfigError(f"bad split fractions {self.train_frac}, {self.valid_frac}")
        if self.graph_mode not in ("snas4mtf", "shared", "non_shared"):
            raise ConfigError(f"graph_mode must be snas4mtf, shared or non_shared, got {self.graph_mode!r}")
        for name in ("optimizer", "arch_optimizer"):
            if getattr(self, name) not in ("sgd", "adam"):
                raise ConfigError(f"{name} must be 'sgd' or 'adam', got {getattr(self, name)!r}")
        if len(self.cells) != self.n_scales:
            raise ConfigError(f"cells_per_scale has {len(self.cells)} entries for {self.n_scales} scales")
        if any(c < 1 for c in self.cells):
            raise ConfigError(f"cells_per_scale entries must be >= 1, got {self.cells}")
        if self.t_in % 2 ** (self.n_scales - 1):
            raise ConfigError(f"t_in={self.t_in} is not divisible by 2**(n_scales-1)={2 ** (self.n_scales - 1)}")

    def apply_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
        changes: dict = {}
        if name in ("shared", "non-shared"):
            mode = name.replace("-", "_")
            if self.graph_mode != "snas4mtf" and self.graph_mode != mode:
                raise ConfigError("ablations 'shared' and 'non-shared' are mutually exclusive")
            changes["graph_mode"] = mode
        else:
            changes[name.replace("-", "_")] = True
        return dataclasses.replace(self, **changes)

    def with_scales(self, n_scales: int) -> "TrainConfig":
        cells = self.cells_per_scale
        if cells is not None and len(cells) != n_scales:
            cells = None
        return dataclasses.replace(self, n_scales=n_scales, cells_per_scale=cells)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["cells_per_scale"] = list(self.cells)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        obj = dict(obj)
        if obj.get("cells_per_scale") is not None:
            obj["cells_per_scale"] = tuple(int(c) for c in obj["cells_per_scale"])
        return cls(**obj)


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.replace(",", " ").split())


# section -> {file key: (field name, parser)}
SCHEMA = {
    "data": {
        "t_in": ("t_in", _int),
        "horizon": ("horizon", _int),
        "train_frac": ("train_frac", _float),
        "valid_frac": ("valid_frac", _float),
    },
    "model": {
        "n_scales": ("n_scales", _int),
        "tau": ("tau", _int),
        "emb_dim": ("emb_dim", _int),
        "hidden": ("hidden", _int),
        "cells_per_scale": ("cells_per_scale", _int_list),
        "nodes_per_cell": ("nodes_per_cell", _int),
        "graph_mode": ("graph_mode", str),
        "no_att": ("no_att", _bool),
        "no_conv": ("no_conv", _bool),
        "no_basic": ("no_basic", _bool),
        "no_grouping": ("no_grouping", _bool),
    },
    "search": {
        "epochs": ("search_epochs", _int),
        "lr_weights": ("lr_weights", _float),
        "lr_arch": ("lr_arch", _float),
        "optimizer": ("optimizer", str),
        "arch_optimizer": ("arch_optimizer", str),
    },
    "train": {
        "epochs": ("train_epochs", _int),
        "batch_size": ("batch_size", _int),
        "seed": ("seed", _int),
    },
}


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from exc
    values: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            name, conv = SCHEMA[section][key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
