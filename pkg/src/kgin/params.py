from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ParamTable
from .intents import IntentConfig


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass(eq=False)
class ModelParams:
    """All trainable tables: layer-0 user/entity embeddings, relation
    embeddings, and the (relation x intent) attention logits."""

    user: ParamTable
    entity: ParamTable
    relation: ParamTable
    intent_logits: ParamTable

    @classmethod
    def init(cls, num_users: int, num_entities: int, num_relations: int, dim: int,
             num_intents: int, rng: np.random.Generator, intent_init: str = "xavier") -> ModelParams:
        user = ParamTable("user", xavier_uniform(rng, num_users, dim))
        entity = ParamTable("entity", xavier_uniform(rng, num_entities, dim))
        relation = ParamTable("relation", xavier_uniform(rng, num_relations, dim))
        if intent_init == "zeros":
            logits = np.zeros((num_relations, num_intents))
        elif intent_init == "xavier":
            logits = xavier_uniform(rng, num_relations, num_intents)
        else:
            raise ValueError(f"unknown intent_init {intent_init!r}")
        return cls(user, entity, relation, ParamTable("intent_logits", logits))

    def tables(self) -> list[ParamTable]:
        return [self.user, self.entity, self.relation, self.intent_logits]

    @property
    def dim(self) -> int:
        return self.user.shape[1]

    @property
    def num_intents(self) -> int:
        return self.intent_logits.shape[1]

    def intent_config(self) -> IntentConfig:
        return IntentConfig(self.num_intents, self.intent_logits.values)

    def zero_grad(self) -> None:
        for t in self.tables():
            t.zero_grad()

    def copy(self) -> ModelParams:
        return ModelParams(*(ParamTable(t.name, t.values.copy()) for t in self.tables()))

    def state(self) -> dict[str, np.ndarray]:
        return {t.name: t.values for t in self.tables()}
