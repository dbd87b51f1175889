"""Experiment configuration shared by every stage of the pipeline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    # model dimensions (desk scale; the paper runs D=256, 8 heads, 9 decoder layers)
    d: int = 64
    q: int = 16
    n_heads: int = 4
    n_frames: int = 4
    height: int = 32
    width: int = 32
    scales: int = 2
    phi: int = 4
    lpf: int = 8
    lpv: int = 8
    lpf_first: int | None = None
    lpv_first: int | None = None
    l_g: int = 6
    l_m: int = 3
    l_d: int = 3
    # optimization
    xi: float = 0.7
    lr: float = 5.0e-5
    epochs: int = 30
    batch_size: int = 1
    b: int | None = None
    seed: int = 42
    frame_prompt_init: str = "inherit"
    ogc_update: str = "subspace"
    # synthetic data
    split: list = field(default_factory=lambda: [4, 2])
    train_videos: int = 40
    test_videos: int = 20
    instances: list = field(default_factory=lambda: [1, 2])
    noise: float = 0.1
    # ablation switches
    disable_ogc: bool = False
    disable_gtssm: bool = False
    disable_video_prompt: bool = False
    gss_residual: bool = False
    msa_layernorm: bool = False
    cache_features: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (0.0 <= float(self.xi) <= 1.0):
            raise ConfigError(f"xi must lie in [0, 1], got {self.xi}")
        if self.d % self.n_heads:
            raise ConfigError(f"D={self.d} is not divisible by {self.n_heads} heads")
        if self.d % self.n_frames:
            raise ConfigError(f"D={self.d} is not divisible by N_f={self.n_frames}; PCA reduction to D/N_f needs it")
        if self.height % 2 or self.width % 2:
            raise ConfigError("frame height and width must be even for the 2x first scale")
        for name in ("d", "q", "n_heads", "n_frames", "lpf", "lpv", "epochs", "batch_size", "phi", "scales"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("l_g", "l_m", "l_d", "train_videos", "test_videos"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.split or any(int(k) < 1 for k in self.split):
            raise ConfigError(f"split must list positive task sizes, got {self.split}")
        lo, hi = self.instances
        if not (1 <= lo <= hi):
            raise ConfigError(f"instances range must satisfy 1 <= lo <= hi, got {self.instances}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.frame_prompt_init not in ("inherit", "random"):
            raise ConfigError("frame_prompt_init must be 'inherit' or 'random'")
        if self.ogc_update not in ("subspace", "direct"):
            raise ConfigError("ogc_update must be 'subspace' or 'direct'")
        if self.b is not None and self.b < 1:
            raise ConfigError("b must be positive")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def n_tasks(self) -> int:
        return len(self.split)

    def prompt_lengths(self, t: int) -> tuple[int, int]:
        """(L_p^f, L_p^v) for task t (1-based)."""
        if t == 1:
            return (self.lpf_first or self.lpf, self.lpv_first or self.lpv)
        return self.lpf, self.lpv

    def sample_count(self, n_classes: int) -> int:
        return self.b if self.b is not None else max(6, n_classes)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)
