"""Planted-intent synthetic datasets.

Entities ``0..num_items-1`` are items; the rest are attribute values. Each
canonical relation draws its values from its own random subset of the
attribute entities (subsets overlap, so an attribute entity alone does not
identify the relation). Every item gets one value per relation.

Each user is assigned one planted intent (a probability vector over
relations) and a preferred value per relation. The user's affinity for an
item is the intent-weighted count of relations on which the item carries the
preferred value; interactions are drawn without replacement with
probability proportional to ``exp(sharpness * affinity)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..graph import InteractionSet, TripleSet, write_cf, write_kg


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    num_users: int = 200
    num_items: int = 100
    num_entities: int = 150
    num_relations_canonical: int = 6
    num_planted_intents: int = 3
    # rows: intents, columns: canonical relations; None -> round-robin focus
    mixtures: tuple[tuple[float, ...], ...] | None = None
    interactions_per_user: int = 10
    values_per_relation: int = 8
    # attribute entities actually used by relations (None -> all non-item entities)
    attribute_pool: int | None = None
    sharpness: float = 8.0
    focus: float = 0.9
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        n_attr = self.num_entities - self.num_items
        if self.num_items < 1 or self.num_users < 1 or self.num_relations_canonical < 1:
            raise SynthSpecError("sizes must be positive")
        if n_attr < 1:
            raise SynthSpecError("need at least one non-item entity")
        pool = n_attr if self.attribute_pool is None else self.attribute_pool
        if not 1 <= pool <= n_attr:
            raise SynthSpecError(f"attribute_pool must be in [1, {n_attr}]")
        if self.values_per_relation < 1 or self.values_per_relation > pool:
            raise SynthSpecError(f"values_per_relation must be in [1, {pool}]")
        if self.interactions_per_user > self.num_items:
            raise SynthSpecError(
                f"interactions_per_user ({self.interactions_per_user}) exceeds num_items ({self.num_items})")
        if self.interactions_per_user < 1:
            raise SynthSpecError("interactions_per_user must be >= 1")
        if not 0 <= self.test_fraction < 1:
            raise SynthSpecError("test_fraction must be in [0, 1)")
        if self.num_planted_intents < 1:
            raise SynthSpecError("need at least one planted intent")
        m = self.mixture_matrix()
        if m.shape != (self.num_planted_intents, self.num_relations_canonical):
            raise SynthSpecError(f"mixtures must be {self.num_planted_intents} x {self.num_relations_canonical}")
        if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0):
            raise SynthSpecError("each mixture must be a probability vector")

    def mixture_matrix(self) -> np.ndarray:
        if self.mixtures is not None:
            return np.asarray(self.mixtures, dtype=np.float64)
        P, R = self.num_planted_intents, self.num_relations_canonical
        m = np.zeros((P, R))
        for p in range(P):
            focused = [r for r in range(R) if r % P == p] or [p % R]
            m[p, :] = (1.0 - self.focus) / R
            m[p, focused] += self.focus / len(focused)
        return m

    @classmethod
    def from_file(cls, path) -> SynthSpec:
        data = json.loads(Path(path).read_text())
        if data.get("mixtures") is not None:
            data["mixtures"] = tuple(tuple(row) for row in data["mixtures"])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthData:
    train: InteractionSet
    test: InteractionSet
    kg: TripleSet  # canonical relations only
    user_intent: np.ndarray  # (num_users,)
    mixtures: np.ndarray  # (intents, relations)
    item_values: np.ndarray  # (num_items, relations) attribute entity ids
    user_preferences: np.ndarray  # (num_users, relations)
    spec: SynthSpec = field(default_factory=SynthSpec)

    @property
    def positives(self) -> list[list[int]]:
        return [sorted(a + b) for a, b in zip(self.train.positives, self.test.positives)]

    def truth(self) -> dict:
        return {
            "user_intent": self.user_intent.tolist(),
            "mixtures": self.mixtures.tolist(),
            "item_values": self.item_values.tolist(),
            "user_preferences": self.user_preferences.tolist(),
            "spec": self.spec.to_dict(),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_cf(out / "train.txt", self.train.positives)
        write_cf(out / "test.txt", self.test.positives)
        write_kg(out / "kg_final.txt", self.kg)
        (out / "truth.json").write_text(json.dumps(self.truth(), indent=1))


def generate(spec: SynthSpec = SynthSpec()) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    U, I, R = spec.num_users, spec.num_items, spec.num_relations_canonical
    n_pool = spec.num_entities - I if spec.attribute_pool is None else spec.attribute_pool
    attrs = np.arange(I, I + n_pool)
    pools = [rng.choice(attrs, size=spec.values_per_relation, replace=False) for _ in range(R)]

    item_values = np.stack([rng.choice(pools[r], size=I) for r in range(R)], axis=1)
    triples = [(i, r, int(item_values[i, r])) for i in range(I) for r in range(R)]
    kg = TripleSet.from_triples(triples, num_entities=spec.num_entities, num_relations=R)

    mixtures = spec.mixture_matrix()
    user_intent = rng.permutation(np.arange(U) % spec.num_planted_intents)
    prefs = np.stack([rng.choice(pools[r], size=U) for r in range(R)], axis=1)

    n_test = int(round(spec.interactions_per_user * spec.test_fraction))
    train, test = [], []
    for u in range(U):
        match = (item_values == prefs[u]).astype(np.float64)  # (I, R)
        affinity = match @ mixtures[user_intent[u]]
        # Gumbel top-k == sequential sampling without replacement
        keys = spec.sharpness * affinity + rng.gumbel(size=I)
        chosen = np.argsort(-keys, kind="stable")[: spec.interactions_per_user]
        chosen = rng.permutation(chosen)
        test.append(sorted(chosen[:n_test].tolist()))
        train.append(sorted(chosen[n_test:].tolist()))

    return SynthData(
        train=InteractionSet.from_lists(train, num_items=I),
        test=InteractionSet.from_lists(test, num_items=I),
        kg=kg,
        user_intent=user_intent,
        mixtures=mixtures,
        item_values=item_values,
        user_preferences=prefs,
        spec=spec,
    )
