"""Knowledge-graph intent network recommender."""

from .aggregate import (
    FinalReps,
    LayerStates,
    aggregate_entity_layer,
    aggregate_user_layer,
    final_representations,
    propagate,
)
from .config import TrainConfig, make_ablation
from .evaluate import EvalReport, evaluate, ndcg_at_k, rank_all, recall_at_k
from .graph import (
    GraphIndex,
    InteractionSet,
    TripleSet,
    add_inverse_relations,
    build_index,
    load_cf,
    load_dataset,
    load_kg,
)
from .independence import dcor, dcor_loss, mean_pairwise_dcor, mi_loss
from .intents import IntentConfig, IntentTable, compute_intents, user_intent_attention
from .params import ModelParams
from .train import Batch, bpr_loss, fit, sample_negatives, score, total_loss

__version__ = "0.1.0"
