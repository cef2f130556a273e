"""Two-phase training, early stopping, filtered-ranking evaluation and ensembles."""

from __future__ import annotations

import copy
import json
import time
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from retemp import autodiff as ad
from retemp.autodiff import log_softmax
from retemp.config import TrainConfig
from retemp.data import INVERSE, ORIGINAL, Snapshot, TkgDataset, add_inverses, build_snapshots
from retemp.encoder import EncoderTrace, QueryBatch
from retemp.errors import TrainingError
from retemp.model import ReTemp
from retemp.optim import AdamState

POOLINGS = ("avg", "max", "min")


@dataclass
class TemporalGraph:
    """An augmented dataset together with its snapshots."""

    dataset: TkgDataset
    snapshots: list[Snapshot]

    @classmethod
    def from_dataset(cls, dataset: TkgDataset) -> "TemporalGraph":
        if not dataset.augmented:
            dataset = add_inverses(dataset)
        return cls(dataset, build_snapshots(dataset))

    def batches(self, split: str, single_phase: bool = False):
        facts = self.dataset.split(split)
        phases = (None,) if single_phase else (ORIGINAL, INVERSE)
        for t in self.dataset.timestamps(split).tolist():
            if t < 1:
                continue  # nothing to encode without history
            for phase in phases:
                batch = QueryBatch.from_facts(facts, t, phase)
                if len(batch):
                    yield batch


@dataclass
class EvaluationReport:
    split: str
    ranks: np.ndarray
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    num_queries: int
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {"split": self.split, "mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "num_queries": self.num_queries,
                "config_digest": self.config_digest}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    optimizer: AdamState
    epoch: int
    val_history: list[float]
    num_entities: int
    num_relations: int
    num_snapshots: int
    losses: list[float] = field(default_factory=list)

    def to_model(self) -> ReTemp:
        model = ReTemp(self.num_entities, self.num_relations, self.num_snapshots, self.config)
        model.load_state_dict(self.params)
        model.optimizer.state = copy.deepcopy(self.optimizer)
        return model


# ---------------------------------------------------------------- ranking


def rank_query(scores: np.ndarray, gold: int, filter_set=()) -> int:
    """Filtered rank of ``gold``: 1 + number of unfiltered candidates scoring strictly higher.

    Other true answers in ``filter_set`` are removed; ties go to the gold entity.
    """
    scores = np.asarray(scores)
    if not 0 <= gold < len(scores):
        raise IndexError(f"gold entity {gold} out of range for {len(scores)} candidates")
    better = scores > scores[gold]
    others = [c for c in filter_set if c != gold]
    if others:
        better[np.asarray(others, dtype=np.int64)] = False
    return 1 + int(better.sum())


def aggregate_metrics(ranks: Sequence[int], split: str = "", config_digest: str = "") -> EvaluationReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise TrainingError("aggregate_metrics needs at least one rank")
    return EvaluationReport(
        split=split, ranks=ranks, mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1)), hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)), num_queries=int(ranks.size),
        config_digest=config_digest)


def ensemble_scores(score_vectors: Sequence[np.ndarray], pooling: str = "max") -> np.ndarray:
    """Elementwise avg/max/min over per-model score vectors (already normalized by the caller)."""
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if not score_vectors:
        raise ValueError("ensemble needs at least one score vector")
    stacked = np.stack([np.asarray(s) for s in score_vectors])
    return {"avg": stacked.mean, "max": stacked.max, "min": stacked.min}[pooling](axis=0)


def _filter_index(dataset: TkgDataset) -> dict[tuple[int, int, int], set[int]]:
    index: dict[tuple[int, int, int], set[int]] = defaultdict(set)
    for s, r, o, t in dataset.all_facts()[:, :4].tolist():
        index[(s, r, t)].add(o)
    return index


def _query_scores(model: ReTemp, graph: TemporalGraph, batch: QueryBatch) -> np.ndarray:
    with ad.no_grad():
        return model.scores(graph.snapshots, batch, training=False).data


def evaluate_many(models: Sequence[ReTemp], graph: TemporalGraph, split: str,
                  pooling: str = "max", normalize: bool = True) -> EvaluationReport:
    """Filtered evaluation of one model, or of an ensemble pooled per query."""
    if len(graph.dataset.split(split)) == 0:
        raise TrainingError(f"split {split!r} is empty")
    single_phase = len(models) == 1 and models[0].config.single_phase
    filters = _filter_index(graph.dataset)
    ranks = []
    for batch in graph.batches(split, single_phase):
        per_model = [_query_scores(m, graph, batch) for m in models]
        if len(models) > 1:
            if normalize:
                per_model = [np.exp(log_softmax(s)) for s in per_model]
            pooled = ensemble_scores(per_model, pooling)
        else:
            pooled = per_model[0]
        for (s, r, o), row in zip(batch.queries.tolist(), pooled):
            ranks.append(rank_query(row, o, filters[(s, r, batch.timestamp)]))
    digest = models[0].config.digest() if len(models) == 1 else \
        "+".join(m.config.digest() for m in models)
    return aggregate_metrics(ranks, split, digest)


def evaluate(model: ReTemp, graph: TemporalGraph, split: str) -> EvaluationReport:
    return evaluate_many([model], graph, split)


# ---------------------------------------------------------------- training


def train_epoch(model: ReTemp, graph: TemporalGraph, trace: EncoderTrace | None = None) -> float:
    """One pass over the training timestamps; one Adam step per (timestamp, phase)."""
    ts = [t for t in graph.dataset.timestamps("train").tolist() if t >= 1]
    if not ts:
        raise TrainingError("no trainable timestamp: training needs at least one timestamp "
                            "with history before it")
    facts = graph.dataset.train
    phases = (None,) if model.config.single_phase else (ORIGINAL, INVERSE)
    opt = model.optimizer
    losses = []
    for t in ts:
        for phase in phases:
            batch = QueryBatch.from_facts(facts, t, phase)
            if not len(batch):
                continue
            opt.zero_grad()
            loss = model.batch_loss(graph.snapshots, batch, training=True, trace=trace)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
    return float(np.mean(losses))


class EarlyStopping:
    """Stop once the monitored value has not improved for ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        """Record one epoch; returns True if it is a new best."""
        self.epoch += 1
        if value > self.best:
            self.best, self.best_epoch = value, self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


def fit(model: ReTemp, graph: TemporalGraph,
        log: Callable[[dict], None] | None = None) -> Checkpoint:
    """Train with early stopping on validation filtered MRR; returns the best checkpoint."""
    if len(graph.dataset.valid) == 0:
        raise TrainingError("validation split is empty; early stopping needs it")
    cfg = model.config
    stopper = EarlyStopping(cfg.patience)
    history: list[float] = []
    losses: list[float] = []
    best = None
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        loss = train_epoch(model, graph)
        mrr = evaluate(model, graph, "valid").mrr
        losses.append(loss)
        history.append(mrr)
        if stopper.update(mrr):
            best = (epoch, model.state_dict(), copy.deepcopy(model.optimizer.state))
        if log is not None:
            log({"event": "epoch", "epoch": epoch, "loss": loss, "val_mrr": mrr,
                 "wall_ms": round(1000 * (time.perf_counter() - start), 1)})
        if stopper.should_stop:
            break
    epoch, params, opt_state = best
    return Checkpoint(config=cfg, params=params, optimizer=opt_state, epoch=epoch,
                      val_history=history, num_entities=model.num_entities,
                      num_relations=model.num_relations, num_snapshots=model.num_snapshots,
                      losses=losses)
