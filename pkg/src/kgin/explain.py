"""Intent-level explanations.

Intent attention is a function of the user alone, so an interaction
explanation ranks intents for the user; the item only appears in the header.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .intents import compute_intents, user_intent_attention
from .params import ModelParams


@dataclass(frozen=True)
class IntentProfile:
    intent: int
    relations: list[tuple[int, float]]  # (relation id, attention weight), descending


@dataclass(frozen=True)
class InteractionExplanation:
    user: int
    item: int
    intents: list[tuple[int, float]]  # (intent id, beta), descending
    top_profile: IntentProfile


def _ranked(weights: np.ndarray) -> list[tuple[int, float]]:
    order = sorted(range(len(weights)), key=lambda j: (-weights[j], j))
    return [(j, float(weights[j])) for j in order]


def intent_profiles(params: ModelParams, top: int | None = None) -> list[IntentProfile]:
    """Per intent, relations ranked by attention weight (weight desc, id asc)."""
    alpha = compute_intents(params.intent_config(), params.relation.values).attention
    profiles = []
    for p in range(alpha.shape[1]):
        ranked = _ranked(alpha[:, p])
        profiles.append(IntentProfile(p, ranked[:top] if top else ranked))
    return profiles


def explain_interaction(u: int, i: int, params: ModelParams, top: int | None = None) -> InteractionExplanation:
    num_users, num_entities = params.user.shape[0], params.entity.shape[0]
    if not 0 <= u < num_users:
        raise LookupError(f"unknown user id {u}")
    if not 0 <= i < num_entities:
        raise LookupError(f"unknown item id {i}")
    intents = compute_intents(params.intent_config(), params.relation.values)
    # batched over all users so the values are bitwise those used in aggregation
    beta = user_intent_attention(params.user.values, intents)[u]
    ranked = _ranked(beta)
    profiles = intent_profiles(params, top)
    return InteractionExplanation(u, i, ranked, profiles[ranked[0][0]])


def load_names(path) -> dict[int, str]:
    """Id-to-name map: one ``id name...`` pair per line; a header line is skipped."""
    names = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split(maxsplit=1)
        if len(parts) == 2 and parts[0].lstrip("-").isdigit():
            names[int(parts[0])] = parts[1].strip()
        elif len(parts) == 2 and parts[1].strip().lstrip("-").isdigit():
            # KGAT-style relation_list.txt: "org_id remap_id"
            names[int(parts[1])] = parts[0]
    return names


def format_explanation(exp: InteractionExplanation, names: dict[int, str] | None = None) -> str:
    names = names or {}
    lines = [f"user {exp.user} / item {exp.item}",
             "(intent attention depends on the user only)",
             "intent   beta"]
    lines += [f"  p{p:<5d} {b:.4f}" for p, b in exp.intents]
    lines.append(f"top intent p{exp.top_profile.intent}: relation weights")
    for r, w in exp.top_profile.relations:
        label = names.get(r, f"r{r}")
        lines.append(f"  {label:<40s} {w:.4f}")
    return "\n".join(lines)


def explanation_record(exp: InteractionExplanation, names: dict[int, str] | None = None) -> str:
    rec = asdict(exp)
    if names:
        rec["top_profile"]["names"] = {str(r): names.get(r) for r, _ in exp.top_profile.relations}
    return json.dumps(rec, sort_keys=True)
