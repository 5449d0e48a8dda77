"""Episodic training and evaluation of one prototype-based model.

Each episode is one optimizer step: embed support and query samples,
average supports into class prototypes, score queries by squared distance,
take the cross-entropy over softmaxed negative distances, optionally add
the class-aware margin term, and apply one Adam update.

Everything is deterministic for a fixed seed and precision.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import cal, protonet
from .dataio import TensorDataset
from .encoders import EncoderSpec, FrozenEmbeddingStore, init_encoder
from .episodes import DatasetIndex, Episode, EpisodeSpec, episode_stream
from .optim import AdamState, adam_step

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainReport",
    "ProtoModel",
    "EvalResult",
    "TrainingDivergedError",
    "episode_loss",
    "train_model",
    "evaluate_model",
    "parameter_checksum",
    "compactness_ratio",
]

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    episode_spec: EpisodeSpec
    seed: int
    epochs: int = 100
    episodes_per_epoch: int = 32
    learning_rate: float = 1e-4
    margin: float = 0.5
    use_cal: bool = True
    precision: str = "float32"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.episodes_per_epoch < 1:
            raise ValueError(f"episodes_per_epoch must be >= 1, got {self.episodes_per_epoch}")
        if self.precision not in _PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return {
            "n_way": self.episode_spec.n_way,
            "k_shot": self.episode_spec.k_shot,
            "q_query": self.episode_spec.q_query,
            "seed": self.seed,
            "epochs": self.epochs,
            "episodes_per_epoch": self.episodes_per_epoch,
            "learning_rate": self.learning_rate,
            "margin": self.margin,
            "use_cal": self.use_cal,
            "precision": self.precision,
        }


@dataclass(frozen=True)
class EpochRecord:
    ce: float
    l_ca: float
    l_comb: float         # always ce + l_ca exactly
    accuracy: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0
    checksum: str = ""

    def curves(self) -> dict:
        return {
            "ce": [r.ce for r in self.records],
            "l_ca": [r.l_ca for r in self.records],
            "l_comb": [r.l_comb for r in self.records],
            "accuracy": [r.accuracy for r in self.records],
        }


@dataclass
class ProtoModel:
    model_id: str
    encoder: object
    adam: AdamState

    @classmethod
    def create(cls, model_id: str, spec: EncoderSpec, learning_rate: float = 1e-4,
               precision: str = "float32",
               store: FrozenEmbeddingStore | None = None) -> "ProtoModel":
        encoder = init_encoder(spec, dtype=_PRECISIONS[precision], store=store)
        return cls(model_id=model_id, encoder=encoder,
                   adam=AdamState(learning_rate=learning_rate))


def parameter_checksum(encoder) -> str:
    """SHA-256 over (name, shape, raw bytes) of all parameters, name order."""
    h = hashlib.sha256()
    for p in encoder.parameters():
        h.update(p.name.encode())
        h.update(str(p.value.shape).encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def _episode_arrays(dataset: TensorDataset, episode: Episode, dtype):
    """Flatten an episode into (support_x, support_cls, query_x, query_cls).

    Class labels are positions within the episode's class list.
    """
    spec_k = len(episode.support[0])
    support_ids = episode.support_ids()
    query_ids = episode.query_ids()
    support_x = dataset.batch(support_ids).astype(dtype, copy=False)
    query_x = dataset.batch(query_ids).astype(dtype, copy=False)
    support_cls = np.repeat(np.arange(len(episode.classes)), spec_k)
    query_cls = np.repeat(np.arange(len(episode.classes)), len(episode.query[0]))
    return support_x, support_cls, query_x, query_cls


def _averaging_matrix(support_cls: np.ndarray, n_way: int, dtype) -> np.ndarray:
    """[n_way, S] constant matrix whose product with embeddings is the class mean."""
    a = np.zeros((n_way, support_cls.shape[0]), dtype=dtype)
    for i in range(n_way):
        members = support_cls == i
        a[i, members] = 1.0 / members.sum()
    return a


def episode_loss(encoder, support_x, support_cls, query_x, query_cls,
                 margin: float, use_cal: bool):
    """Differentiable combined loss for one episode.

    Returns (loss node, breakdown); the breakdown's cross-entropy and
    margin terms are forward values of the corresponding subgraphs.
    """
    n_way = int(support_cls.max()) + 1
    s_emb = encoder.embed(support_x)
    q_emb = encoder.embed(query_x)
    avg = ad.constant(_averaging_matrix(np.asarray(support_cls), n_way, s_emb.value.dtype))
    protos = ad.matmul(avg, s_emb)
    d2 = ad.sq_distances(q_emb, protos)
    ce_node = ad.cross_entropy_from_sq_distances(d2, query_cls)
    ce_value = float(ce_node.value)
    if not use_cal:
        breakdown = cal.combined_loss(ce_value, 0.0, margin=margin)
        return ce_node, breakdown, d2
    support_d = ad.euclidean_distances(s_emb, protos)
    support_cls = np.asarray(support_cls)
    per_class_sum = None
    for i in range(n_way):
        col = ad.take_column(support_d, i)
        pos = ad.take_rows(col, np.flatnonzero(support_cls == i))
        neg = ad.take_rows(col, np.flatnonzero(support_cls != i))
        d_max = ad.reduce_max(pos)
        d_min = ad.reduce_min(neg)
        central = ad.reduce_mean(pos)
        term = ad.relu(d_max - d_min + margin) + ad.relu(d_max - central)
        per_class_sum = term if per_class_sum is None else per_class_sum + term
    l_ca_node = per_class_sum * (1.0 / n_way)
    loss = ce_node + l_ca_node
    breakdown = cal.combined_loss(ce_value, float(l_ca_node.value), margin=margin)
    return loss, breakdown, d2


def train_model(model: ProtoModel, dataset: TensorDataset, index: DatasetIndex,
                config: TrainConfig) -> TrainReport:
    """Run episodic training in place and return the per-epoch report."""
    start = time.perf_counter()
    report = TrainReport()
    params = model.encoder.parameters()
    model.adam.learning_rate = config.learning_rate
    episodes = episode_stream(index, config.episode_spec,
                              config.epochs * config.episodes_per_epoch, config.seed)
    for epoch in range(config.epochs):
        ce_sum = lca_sum = acc_sum = 0.0
        for j in range(config.episodes_per_epoch):
            episode = episodes[epoch * config.episodes_per_epoch + j]
            sx, sc, qx, qc = _episode_arrays(dataset, episode, config.dtype)
            try:
                loss, breakdown, d2 = episode_loss(
                    model.encoder, sx, sc, qx, qc, config.margin, config.use_cal)
            except ValueError as exc:
                raise TrainingDivergedError(
                    f"loss failed at epoch {epoch}, episode {j}: {exc}") from exc
            if not np.isfinite(breakdown.l_comb):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, episode {j}: {breakdown}")
            grads = ad.backward(loss, params)
            adam_step(params, grads, model.adam)
            ce_sum += breakdown.ce
            lca_sum += breakdown.l_ca
            acc_sum += float((d2.value.argmin(axis=1) == qc).mean())
        n = config.episodes_per_epoch
        ce, lca = ce_sum / n, lca_sum / n
        report.records.append(EpochRecord(ce=ce, l_ca=lca, l_comb=ce + lca,
                                          accuracy=acc_sum / n))
    report.wall_time = time.perf_counter() - start
    report.checksum = parameter_checksum(model.encoder)
    return report


@dataclass
class EvalResult:
    metrics: object                   # metrics.MetricsReport
    predictions: object               # ensemble.PredictionMatrix, single model
    compactness_ratio: float
    n_episodes: int


def compactness_ratio(support_emb: np.ndarray, support_cls: np.ndarray,
                      protos: np.ndarray) -> float:
    """mean over classes of max positive distance / mean of min negative distance.

    Diagnostic for how tightly classes cluster relative to their separation;
    lower is better.
    """
    terms = []
    for i in range(protos.shape[0]):
        pos = support_emb[support_cls == i]
        neg = support_emb[support_cls != i]
        terms.append(cal.cal_terms(protos[i], pos, neg))
    mean_max_pos = float(np.mean([t.d_max_pos for t in terms]))
    mean_min_neg = float(np.mean([t.d_min_neg for t in terms]))
    return mean_max_pos / max(mean_min_neg, 1e-30)


def evaluate_model(model: ProtoModel, dataset: TensorDataset, index: DatasetIndex,
                   spec: EpisodeSpec, n_episodes: int, seed: int) -> EvalResult:
    """Score query predictions over a fixed episode stream.

    Emits the aggregate metrics plus the per-query probability matrix needed
    for ensembling; models evaluated with the same (index, spec, n_episodes,
    seed) see identical episodes, so their matrices align query-for-query.
    """
    from . import metrics as metrics_mod
    from .ensemble import PredictionMatrix

    if n_episodes < 1:
        raise ValueError("no evaluation episodes")
    episodes = episode_stream(index, spec, n_episodes, seed)
    dtype = model.encoder.parameters()[0].value.dtype
    true_ids: list[int] = []
    pred_ids: list[int] = []
    orders: list[tuple[int, ...]] = []
    probs: list[np.ndarray] = []
    ratios: list[float] = []
    for episode in episodes:
        sx, sc, qx, qc = _episode_arrays(dataset, episode, dtype)
        s_emb = model.encoder.embed(sx).value
        q_emb = model.encoder.embed(qx).value
        grouped = {cid: s_emb[sc == i] for i, cid in enumerate(episode.classes)}
        protoset = protonet.compute_prototypes(grouped)
        predictions = protonet.classify(q_emb, protoset)
        ratios.append(compactness_ratio(s_emb, sc, protoset.matrix))
        for q, pred in enumerate(predictions):
            true_ids.append(episode.classes[qc[q]])
            pred_ids.append(episode.classes[pred.predicted])
            orders.append(episode.classes)
            probs.append(pred.probabilities.astype(np.float64))
    cm = metrics_mod.confusion(true_ids, pred_ids, index.classes)
    matrix = PredictionMatrix(
        model_ids=[model.model_id],
        classes=list(index.classes),
        true_labels=true_ids,
        query_class_orders=orders,
        probs=np.stack(probs)[None, :, :],
    )
    return EvalResult(
        metrics=metrics_mod.report(cm),
        predictions=matrix,
        compactness_ratio=float(np.mean(ratios)),
        n_episodes=n_episodes,
    )
