from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .aggregate import VARIANTS
from .independence import VARIANTS as IND_VARIANTS, IndependenceConfig


@dataclass(frozen=True)
class TrainConfig:
    # model
    dim: int = 64
    layers: int = 3
    num_intents: int = 4
    variant: str = "full"
    normalize_by_pairs: bool = False
    intent_init: str = "xavier"
    # objective
    lambda1: float = 1e-4
    lambda2: float = 1e-5
    independence: str = "mutual_information"
    tau: float = 1.0
    l2_full: bool = False
    # optimisation
    lr: float = 1e-4
    batch_size: int = 1024
    epochs: int = 1000
    seed: int = 2020
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # evaluation / early stopping
    eval_every: int = 5
    patience: int = 10
    k: int = 20
    deterministic: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.independence not in IND_VARIANTS:
            raise ValueError(f"unknown independence variant {self.independence!r}")
        for name in ("dim", "num_intents", "batch_size", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("layers", "epochs", "eval_every", "patience", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.lr > 0 and self.tau > 0):
            raise ValueError("lr and tau must be positive")

    @property
    def independence_config(self) -> IndependenceConfig:
        return IndependenceConfig(self.independence, self.tau, self.lambda1)

    @property
    def effective_layers(self) -> int:
        return 0 if self.variant == "mf" else self.layers

    @property
    def uses_intents(self) -> bool:
        return self.variant in ("full", "no_intents")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        data = dict(data)
        # accept the nested form {"independence": {"variant": ..., "tau": ...}}
        ind = data.get("independence")
        if isinstance(ind, dict):
            data["independence"] = ind.get("variant", cls.independence)
            if "tau" in ind:
                data["tau"] = ind["tau"]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Published per-dataset settings (learning rate, size, depth, intents, lambda1, lambda2).
PRESETS = {
    "amazon-book": dict(lr=1e-4, dim=64, layers=3, num_intents=4, lambda1=1e-5, lambda2=1e-5),
    "last-fm": dict(lr=1e-4, dim=64, layers=3, num_intents=4, lambda1=1e-4, lambda2=1e-5),
    "alibaba-ifashion": dict(lr=1e-4, dim=64, layers=3, num_intents=4, lambda1=1e-4, lambda2=1e-5),
}


def make_ablation(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Configuration for one of the ablated models.

    ``no_intents`` is a single intent channel with no independence term;
    ``no_relations_no_intents`` additionally replaces relational messages with
    plain neighbor means; ``mf`` scores layer-0 embeddings only.
    """
    if variant == "full":
        return cfg.replace(variant="full")
    if variant == "no_intents":
        return cfg.replace(variant="no_intents", num_intents=1, lambda1=0.0)
    if variant == "no_relations_no_intents":
        return cfg.replace(variant="no_relations_no_intents", num_intents=1, lambda1=0.0)
    if variant == "mf":
        return cfg.replace(variant="mf", layers=0, num_intents=1, lambda1=0.0)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
