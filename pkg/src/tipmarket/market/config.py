from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class MarketConfig:
    """Synthetic buyer/seller market. Defaults are the desk-scale reference market."""

    num_replications: int = 20
    num_sellers: int = 5
    n_train: int = 500
    n_eval: int = 500
    n_seller: int = 200
    n_features: int = 30
    # per-feature variances are geomspace(var_min, var_max), shuffled per replication
    var_min: float = 0.1
    var_max: float = 10.0
    weight_scale: float = 2.0
    shift_max: float = 1.5
    noise_max: float = 0.3
    # model
    hidden: tuple = ()
    l2: float = 0.01
    # valuation
    damping: float = 10.0
    k_in: int | None = None  # None = full head input (+ bias)
    k_out: int = 1
    # ground truth
    finetune_epochs: int = 1
    finetune_lr: float = 0.005
    finetune_batch: int = 10
    master_seed: int = 1
    # encrypted mode
    params: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("num_replications", "num_sellers", "n_train", "n_eval", "n_seller",
                     "n_features", "k_out", "finetune_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")
        if not 0 <= self.noise_max <= 0.5:
            raise ValueError("noise_max must lie in [0, 0.5]")
        if self.shift_max < 0 or self.damping < 0:
            raise ValueError("shift_max and damping must be non-negative")
        if not 0 < self.var_min <= self.var_max:
            raise ValueError("need 0 < var_min <= var_max")
        if self.params not in ("default", "small"):
            raise ValueError("params must be 'default' or 'small'")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown market config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "MarketConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
