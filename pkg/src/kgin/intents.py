"""Intent embeddings as attention mixtures of relation embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ContractError, Tape, Var


@dataclass(frozen=True)
class IntentConfig:
    num_intents: int
    relation_logits: np.ndarray  # (num_relations, num_intents)

    def __post_init__(self):
        w = np.asarray(self.relation_logits, dtype=np.float64)
        if self.num_intents < 1:
            raise ContractError("num_intents must be >= 1")
        if w.ndim != 2 or w.shape[1] != self.num_intents:
            raise ContractError(f"relation_logits must be (num_relations, {self.num_intents}), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ContractError("relation_logits must be finite")
        object.__setattr__(self, "relation_logits", w)


@dataclass(frozen=True)
class IntentTable:
    embeddings: np.ndarray  # (P, d)
    attention: np.ndarray  # (R, P); each column sums to 1

    @property
    def num_intents(self) -> int:
        return self.embeddings.shape[0]


def intent_vars(tape: Tape, logits: Var, relations: Var) -> tuple[Var, Var]:
    """Return ``(alpha, intents)``: alpha = softmax of the logits over relations,
    intents[p] = sum_r alpha[r, p] * relations[r]."""
    if logits.shape[0] == 0:
        raise ContractError("at least one relation is required to form intents")
    if logits.shape[0] != relations.shape[0]:
        raise ContractError(f"{logits.shape[0]} relation logits for {relations.shape[0]} relation embeddings")
    alpha = tape.softmax(logits, axis=0)
    return alpha, tape.matmul(tape.transpose(alpha), relations)


def attention_vars(tape: Tape, users0: Var, intents: Var) -> Var:
    """Per-user softmax over intents of ``intents[p] . users0[u]``; shape (U, P)."""
    return tape.softmax(tape.matmul(users0, tape.transpose(intents)), axis=1)


def compute_intents(cfg: IntentConfig, relation_embs) -> IntentTable:
    tape = Tape(grad=False)
    alpha, ep = intent_vars(tape, tape.const(cfg.relation_logits), tape.const(relation_embs))
    return IntentTable(ep.value, alpha.value)


def user_intent_attention(user_emb0, intents: IntentTable) -> np.ndarray:
    tape = Tape(grad=False)
    u = tape.const(np.atleast_2d(user_emb0))
    beta = attention_vars(tape, u, tape.const(intents.embeddings)).value
    return beta[0] if np.ndim(user_emb0) == 1 else beta
