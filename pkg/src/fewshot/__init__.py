"""Few-shot metric-learning engine.

Prototype-based episodic classifiers with a class-aware margin loss and
hard/soft-voting ensembles, trainable on synthetic data or on frozen
precomputed embeddings.
"""

from .cal import CalTerms, LossBreakdown, cal_loss, cal_terms, combined_loss
from .dataio import load_frozen, read_embedding_store, write_embedding_store
from .encoders import EncoderSpec, FrozenEmbeddingStore, init_encoder
from .ensemble import PredictionMatrix, ensemble_evaluate, hard_vote, soft_vote
from .episodes import (DatasetIndex, Episode, EpisodeSpec, episode_stream,
                       sample_episode, stratified_split)
from .metrics import ConfusionMatrix, MetricsReport, confusion, report
from .protonet import (PrototypeSet, QueryPrediction, ce_loss, classify,
                       compute_prototypes, sq_euclidean)
from .synthetic import SyntheticSpec, gen_synthetic
from .training import (EvalResult, ProtoModel, TrainConfig, TrainReport,
                       evaluate_model, train_model)

__version__ = "0.1.0"
