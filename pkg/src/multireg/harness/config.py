"""Pipeline configuration: one flat JSON document, with named presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from ..embedding import EmbeddingConfig
from ..errors import ConfigError
from ..selection import SelectionConfig
from .metrics import Thresholds


@dataclass(frozen=True)
class Config:
    # grid and graph
    voxel: float = 0.03
    stages: int = 4
    k: int = 16
    geodesic_k: int = 4
    # embeddings
    sigma_d: float = 0.2
    sigma_a: float = 15.0
    sigma_geo: float = 0.1
    # transformer; d_t is the pair-embedding width
    d: int = 256
    d_t: int = 64
    heads: int = 4
    n_iters: int = 3
    tau: float = 0.6
    mask_source: str = "predicted"
    # matching
    n_c: int = 128
    cap: int = 512
    sinkhorn_iters: int = 100
    mutual_k: int = 3
    dustbin: float = 1.0
    temperature: float = 0.1
    # selection
    tau2: float = 0.05
    tau_s: float = 0.7
    tau3: float = 0.2
    refine_iters: int = 5
    # evaluation
    tau1: float = 0.05
    rre_deg: float = 15.0
    rte: float = 0.1
    adds_frac: float = 0.1
    # features and baseline
    feature_dim: int = 128
    inlier_rate: float = 0.5
    ransac_iters: int = 1000
    n_g: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.mask_source not in ("predicted", "ground_truth"):
            raise ConfigError("mask_source must be 'predicted' or 'ground_truth'")
        if self.voxel <= 0 or self.stages < 2 or self.k < 1:
            raise ConfigError("voxel > 0, stages >= 2 and k >= 1 required")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")
        try:
            self.embedding()
            self.selection(1.0)
            self.thresholds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def embedding(self) -> EmbeddingConfig:
        return EmbeddingConfig(self.sigma_d, self.sigma_a, self.sigma_geo, self.d_t)

    def selection(self, diameter: float) -> SelectionConfig:
        return SelectionConfig(self.tau2, self.tau_s, self.tau3, self.refine_iters, diameter)

    def thresholds(self) -> Thresholds:
        return Thresholds(self.rre_deg, self.rte, self.adds_frac)

    def replace(self, **kw) -> "Config":
        return from_dict({**self.to_dict(), **kw})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# metric units; "synthetic" is sized for the unit-diameter generator
PRESETS = {
    "synthetic": {},
    "scan2cad": dict(voxel=0.025, k=16, d_t=256, sigma_d=0.2, sigma_geo=0.1, tau1=0.05, tau2=0.05,
                     tau_s=0.8, tau3=0.8, rte=0.1),
    "robi": dict(voxel=0.0015, k=32, d_t=256, sigma_d=0.02, sigma_geo=0.01, tau1=0.005, tau2=0.003,
                 tau_s=0.7, tau3=0.2, rte=0.006),
}


def from_dict(data: dict) -> Config:
    known = {f.name: f for f in dataclasses.fields(Config)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    clean = {}
    for key, val in data.items():
        typ = known[key].type
        if typ in ("int", int):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{key} must be an integer")
        elif typ in ("float", float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{key} must be a number")
            val = float(val)
        elif typ in ("str", str) and not isinstance(val, str):
            raise ConfigError(f"{key} must be a string")
        clean[key] = val
    return Config(**clean)


def preset(name: str, **overrides) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return from_dict({**PRESETS[name], **overrides})


def load_config(path) -> Config:
    """Read a JSON config; an optional ``"preset"`` key picks the base values."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    base = data.pop("preset", "synthetic")
    return preset(base, **data)
