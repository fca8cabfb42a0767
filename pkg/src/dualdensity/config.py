"""Experiment configuration: a single JSON-serializable dataclass tree.

The same object drives data generation, model construction, training,
and evaluation, and its canonical hash labels every artifact so that
comparison experiments can prove they ran on identical inputs.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .density import QuerySeedConfig, RecallFocalConfig

FAMILY_CHOICES = ("gabor", "fourier", "haar", "none")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    width: int = 64           # stem output channels; gradcheck runs use 8
    family: str = "gabor"
    n_groups: int = 4         # filter-bank groups (must divide width)
    n_scales: int = 2         # kernels per bank group
    loss: RecallFocalConfig = field(default_factory=RecallFocalConfig)
    queries: QuerySeedConfig = field(default_factory=QuerySeedConfig)
    lr: float = 1e-3
    lr_final: float = 1e-5
    epochs: int = 20
    batch_size: int = 8
    n_train: int = 2000
    n_val: int = 200
    image_size: tuple = (128, 128)
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.family not in FAMILY_CHOICES:
            raise ValueError(
                f"family must be one of {FAMILY_CHOICES}, got {self.family!r}"
            )
        if self.width <= 0 or self.width % 8 != 0:
            raise ValueError(
                f"width must be a positive multiple of 8 (channel splits in "
                f"both branches), got {self.width}"
            )
        if self.n_groups < 1 or self.width % self.n_groups != 0:
            raise ValueError(
                f"n_groups {self.n_groups} must divide width {self.width}"
            )
        if self.n_scales < 1:
            raise ValueError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_train < 1 or self.n_val < 0:
            raise ValueError(
                f"need n_train >= 1 and n_val >= 0, got {self.n_train}/{self.n_val}"
            )
        if not (0 < self.lr_final <= self.lr):
            raise ValueError(
                f"need 0 < lr_final <= lr, got {self.lr_final} / {self.lr}"
            )
        h, w = self.image_size
        if h % 8 != 0 or w % 8 != 0:
            raise ValueError(
                f"image size must be a multiple of 8, got {h}x{w}"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(
                f"unknown config keys: {sorted(unknown)}; known: {sorted(known)}"
            )
        kwargs = dict(data)
        if "loss" in kwargs and isinstance(kwargs["loss"], dict):
            kwargs["loss"] = RecallFocalConfig(**kwargs["loss"])
        if "queries" in kwargs and isinstance(kwargs["queries"], dict):
            kwargs["queries"] = QuerySeedConfig(**kwargs["queries"])
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(kwargs["image_size"])
        return cls(**kwargs)

    def replace(self, **updates):
        merged = self.to_dict()
        merged.update(updates)
        return self.from_dict(merged)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self):
        """Canonical sha256 of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("ascii")).hexdigest()
