"""Pipeline configuration: one flat, JSON-serializable record of every tunable."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .descriptors import CHANNELS, PIPELINES, DescriptorConfig
from .errors import ConfigError

CONFIG_FORMAT = "mfhodg-config"
CONFIG_VERSION = 1

# channel selections accepted by --channels, mirroring the rows of the result table
SELECTIONS = {
    "rgb-trio": PIPELINES["rgb-trio"],
    "rgb": PIPELINES["rgb-trio"],
    "hodg": PIPELINES["hodg"],
    "hodg-only": PIPELINES["hodg"],
    "rgb+hodg": PIPELINES["combined"],
    "combined": PIPELINES["combined"],
}


def resolve_channels(selection: str) -> tuple[str, ...]:
    """Map a selection name or a comma list of channel names to ordered channels."""
    if selection in SELECTIONS:
        return SELECTIONS[selection]
    names = [s.strip() for s in selection.split(",") if s.strip()]
    bad = [n for n in names if n not in CHANNELS]
    if not names or bad:
        raise ConfigError(f"unknown channel selection {selection!r}")
    return tuple(c for c in CHANNELS if c in names)


@dataclass
class PipelineConfig:
    block_size: int = 16
    search_range: int = 7
    tau: float = 1.0
    stride: int = 5
    window: int = 32
    traj_len: int = 15
    grid: tuple = (2, 2, 3)
    orient_bins: int = 8
    hof_bins: int = 9
    epsilon_zero_flow: float = 0.4
    K: int = 64
    gmm_seed: int = 0
    gmm_max_iter: int = 100
    variance_floor: Optional[float] = None
    gmm_subsample: int = 200_000
    pca_dim: Optional[int] = None
    C: float = 100.0
    svm_seed: int = 0
    svm_epochs: int = 1000
    svm_tol: float = 1e-4
    channels: str = "rgb+hodg"
    workers: int = 1

    def __post_init__(self):
        self.grid = tuple(self.grid)
        self.validate()

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        for name in ("block_size", "search_range", "stride", "window", "traj_len", "orient_bins",
                     "hof_bins", "K", "gmm_max_iter", "gmm_subsample", "svm_epochs", "workers",
                     "gmm_seed", "svm_seed"):
            need(isinstance(getattr(self, name), int) and not isinstance(getattr(self, name), bool),
                 f"{name} must be an integer")
        need(self.block_size >= 2, "block_size must be >= 2")
        need(self.search_range >= 1, "search_range must be >= 1")
        need(self.tau >= 0, "tau must be >= 0")
        need(self.stride >= 1, "stride must be >= 1")
        need(self.K >= 1, "K must be >= 1")
        need(self.gmm_max_iter >= 1, "gmm_max_iter must be >= 1")
        need(self.variance_floor is None or self.variance_floor > 0, "variance_floor must be > 0")
        need(self.pca_dim is None or (isinstance(self.pca_dim, int) and self.pca_dim >= 1),
             "pca_dim must be a positive integer or null")
        need(self.C > 0, "C must be positive")
        need(self.svm_epochs >= 1, "svm_epochs must be >= 1")
        need(self.svm_tol > 0, "svm_tol must be positive")
        need(self.workers >= 1, "workers must be >= 1")
        need(len(self.grid) == 3, "grid must have three entries (nx, ny, nt)")
        resolve_channels(self.channels)
        try:
            self.descriptor_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def descriptor_config(self) -> DescriptorConfig:
        return DescriptorConfig(self.window, self.traj_len, tuple(self.grid), self.orient_bins,
                                self.hof_bins, self.epsilon_zero_flow)

    @property
    def channel_list(self) -> tuple[str, ...]:
        return resolve_channels(self.channels)

    def to_dict(self) -> dict:
        doc = {"format": CONFIG_FORMAT, "version": CONFIG_VERSION}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            doc[f.name] = list(val) if isinstance(val, tuple) else val
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        fmt = doc.pop("format", CONFIG_FORMAT)
        version = doc.pop("version", CONFIG_VERSION)
        if fmt != CONFIG_FORMAT:
            raise ConfigError(f"not a pipeline config (format {fmt!r})")
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return PipelineConfig.from_dict(doc)


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
