"""Relational path-aware aggregation over the intent graph and the KG.

Per layer ``l``:

    user:   e_u^l = (1/deg_u) sum_{i in N(u)} sum_p beta(u,p) e_p * e_i^{l-1}
    entity: e_v^l = (1/|N_v|) sum_{(r,w) in N(v)} e_r * e_w^{l-1}

``*`` is the element-wise product. There are no transforms, activations or
self messages; a node's own signal survives through the layer sum.
Because ``beta`` only depends on the user, the user update factorises into
``(beta @ E_p)[u] * mean_{i in N(u)} e_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autograd import Tape, Var
from .graph import GraphIndex
from .intents import IntentTable, attention_vars, intent_vars

Variant = Literal["full", "no_intents", "no_relations_no_intents", "mf"]
VARIANTS = ("full", "no_intents", "no_relations_no_intents", "mf")


@dataclass
class LayerStates:
    user_reps: list[np.ndarray]
    entity_reps: list[np.ndarray]
    isolated_users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    isolated_entities: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_layers(self) -> int:
        return len(self.user_reps) - 1


@dataclass
class FinalReps:
    users: np.ndarray  # (num_users, d)
    items: np.ndarray  # (num_items, d)


@dataclass
class Forward:
    """Tape-level result of a full propagation."""

    users: list[Var]
    entities: list[Var]
    final_users: Var
    final_items: Var
    alpha: Var | None = None
    intents: Var | None = None
    beta: Var | None = None


def user_layer(tape: Tape, prev_entities: Var, graph: GraphIndex, mix: Var | None,
               pair_scale: float = 1.0) -> Var:
    """``mix`` is ``beta @ E_p`` of shape (U, d); ``None`` means plain item means."""
    msgs = tape.gather(prev_entities, graph.user_items)
    agg = tape.scatter_mean(msgs, graph.user_mean)
    if mix is None:
        return agg
    out = tape.mul(mix, agg)
    return tape.scale(out, pair_scale) if pair_scale != 1.0 else out


def entity_layer(tape: Tape, prev_entities: Var, graph: GraphIndex, relations: Var | None) -> Var:
    """``relations=None`` drops relational messages (plain neighbor mean)."""
    msgs = tape.gather(prev_entities, graph.ent_nbr)
    if relations is not None:
        msgs = tape.mul(tape.gather(relations, graph.ent_rel), msgs)
    return tape.scatter_mean(msgs, graph.entity_mean)


def propagate_vars(tape: Tape, params, graph: GraphIndex, layers: int, variant: Variant = "full",
                   normalize_by_pairs: bool = False) -> Forward:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if variant == "mf":
        layers = 0
    users0 = tape.param(params.user)
    ents0 = tape.param(params.entity)
    uses_intents = variant in ("full", "no_intents")
    relations = tape.param(params.relation) if variant != "no_relations_no_intents" else None

    alpha = intents = beta = mix = None
    if uses_intents:
        alpha, intents = intent_vars(tape, tape.param(params.intent_logits), relations)
        beta = attention_vars(tape, users0, intents)
        if layers > 0:
            mix = tape.matmul(beta, intents)
    pair_scale = 1.0 / params.num_intents if (normalize_by_pairs and uses_intents) else 1.0

    users, ents = [users0], [ents0]
    for _ in range(layers):
        users.append(user_layer(tape, ents[-1], graph, mix, pair_scale))
        ents.append(entity_layer(tape, ents[-1], graph, relations))

    u_sum, e_sum = users[0], ents[0]
    for u, e in zip(users[1:], ents[1:]):
        u_sum = tape.add(u_sum, u)
        e_sum = tape.add(e_sum, e)
    items = tape.gather(e_sum, np.arange(graph.num_items))
    return Forward(users, ents, u_sum, items, alpha, intents, beta)


# ---- array-level wrappers over the same code path ----

def aggregate_user_layer(prev_item_reps, graph: GraphIndex, intents: IntentTable | None, beta,
                         normalize_by_pairs: bool = False) -> np.ndarray:
    """One intent-graph layer. ``prev_item_reps`` is indexed by entity/item id."""
    tape = Tape(grad=False)
    mix = None
    scale = 1.0
    if intents is not None:
        mix = tape.const(np.asarray(beta, dtype=np.float64) @ intents.embeddings)
        if normalize_by_pairs:
            scale = 1.0 / intents.num_intents
    return user_layer(tape, tape.const(prev_item_reps), graph, mix, scale).value


def aggregate_entity_layer(prev_entity_reps, graph: GraphIndex, relation_embs=None) -> np.ndarray:
    tape = Tape(grad=False)
    rel = tape.const(relation_embs) if relation_embs is not None else None
    return entity_layer(tape, tape.const(prev_entity_reps), graph, rel).value


def propagate(params, graph: GraphIndex, layers: int, variant: Variant = "full",
              normalize_by_pairs: bool = False) -> LayerStates:
    fw = propagate_vars(Tape(grad=False), params, graph, layers, variant, normalize_by_pairs)
    isolated_users = graph.user_mean.empty_segments if layers else np.zeros(0, dtype=np.int64)
    isolated_ents = graph.entity_mean.empty_segments if layers else np.zeros(0, dtype=np.int64)
    return LayerStates([v.value for v in fw.users], [v.value for v in fw.entities],
                       isolated_users, isolated_ents)


def final_representations(states: LayerStates, num_items: int) -> FinalReps:
    users = np.sum(states.user_reps, axis=0)
    ents = np.sum(states.entity_reps, axis=0)
    return FinalReps(users, ents[:num_items])


def final_reps(params, graph: GraphIndex, layers: int, variant: Variant = "full",
               normalize_by_pairs: bool = False) -> FinalReps:
    fw = propagate_vars(Tape(grad=False), params, graph, layers, variant, normalize_by_pairs)
    return FinalReps(fw.final_users.value, fw.final_items.value)
