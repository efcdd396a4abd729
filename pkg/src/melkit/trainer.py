"""Triplet training loop for the joint representation model.

Each epoch samples (mention, gold, negative) triples from the training
split, runs minibatch SGD with classical momentum on the mean hinge loss,
evaluates validation accuracy once, then applies the plateau learning-rate
schedule and the early-stopping rule. The checkpoint with the best
validation accuracy is returned. Runs are bit-reproducible per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import jmel as jm
from . import nnkernel as nn
from .candgen import CandidateSet
from .corpus import DatasetSplit, KnowledgeBase, MentionRecord
from .features import FeatureBundle, FeatureStore, entity_bundles, mention_bundle


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr0: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 100
    plateau_tol: float = 1e-4
    plateau_window: int = 6
    early_stop_start: int = 50
    early_stop_patience: int = 5
    negatives_per_positive: int = 16
    random_fill_negatives: bool = True
    # the loss is an L2 hinge but linking scores are cosines; training on the
    # unit sphere keeps the two geometries aligned
    normalize_joint: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "lr0", "momentum", "max_epochs", "plateau_tol",
                     "plateau_window", "early_stop_start", "negatives_per_positive"):
            if getattr(self, name) <= 0 and name != "momentum":
                raise ValueError(f"{name} must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    velocities: list[np.ndarray] | None = None
    loss_history: list[float] = field(default_factory=list)
    window_start: int = 0
    best_acc: float = -1.0
    best_params: jm.JmelParams | None = None
    best_epoch: int = 0
    stale_evals: int = 0


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    mean_loss: float
    valid_acc: float
    stale_count: int

    def to_json(self) -> str:
        return json.dumps(
            {"epoch": self.epoch, "lr": self.lr, "mean_loss": self.mean_loss,
             "valid_acc": self.valid_acc, "stale_count": self.stale_count}
        )


@dataclass
class TrainData:
    """Everything the loop needs, precomputed once."""

    kb: KnowledgeBase
    split: DatasetSplit
    store: FeatureStore
    candidates: dict[tuple[str, str], CandidateSet]

    def __post_init__(self):
        self.entity_vecs = entity_bundles(self.store, self.kb)
        self.mention_vecs = {
            m.key(): mention_bundle(self.store, self.kb, m)
            for m in self.split.all_records()
        }


def sample_triplets(
    train: tuple[MentionRecord, ...],
    kb: KnowledgeBase,
    cands: dict[tuple[str, str], CandidateSet],
    config: TrainConfig,
    epoch_seed,
) -> tuple[list[tuple[MentionRecord, str, str]], int]:
    """One epoch's (mention, positive, negative) stream, shuffled.

    Negatives come from the mention's candidate set (without replacement);
    when it is too small, random non-matching KB entities fill the quota.
    Mentions with an empty candidate set are skipped and counted.
    Returns (triples, skipped).
    """
    rng = np.random.default_rng(np.random.SeedSequence(epoch_seed))
    all_entities = sorted(kb.entities)
    triples: list[tuple[MentionRecord, str, str]] = []
    skipped = 0
    for m in train:
        cset = cands[m.key()]
        names = cset.names()
        if not names:
            skipped += 1
            continue
        negatives = [n for n in names if n != m.gold]
        k = config.negatives_per_positive
        if len(negatives) > k:
            idx = rng.choice(len(negatives), size=k, replace=False)
            chosen = [negatives[int(i)] for i in sorted(idx)]
        else:
            chosen = list(negatives)
            if config.random_fill_negatives and len(chosen) < k:
                in_cand = set(names) | {m.gold}
                pool = [n for n in all_entities if n not in in_cand]
                need = min(k - len(chosen), len(pool))
                if need > 0:
                    idx = rng.choice(len(pool), size=need, replace=False)
                    chosen.extend(pool[int(i)] for i in sorted(idx))
        triples.extend((m, m.gold, neg) for neg in chosen)
    perm = rng.permutation(len(triples))
    return [triples[int(i)] for i in perm], skipped


def lr_schedule_step(loss_history: list[float], state: TrainState, config: TrainConfig) -> float:
    """Divide lr by 10 when the loss range over the window is within tolerance.

    Only losses recorded since the last trigger count toward the window, so
    two plateaus need two disjoint windows.
    """
    window = loss_history[state.window_start :]
    if len(window) >= config.plateau_window:
        recent = window[-config.plateau_window :]
        if max(recent) - min(recent) <= config.plateau_tol:
            state.lr /= 10.0
            state.window_start = len(loss_history)
    return state.lr


def early_stop_check(state: TrainState, config: TrainConfig) -> bool:
    """True once the epoch gate is reached and patience is exhausted."""
    return (
        state.epoch >= config.early_stop_start
        and state.stale_evals >= config.early_stop_patience
    )


def _stack(bundles: list[FeatureBundle]) -> FeatureBundle:
    return FeatureBundle(
        u=np.stack([b.u for b in bundles]),
        b=np.stack([b.b for b in bundles]),
        i=np.stack([b.i for b in bundles]),
    )


def train_jmel(
    params: jm.JmelParams,
    data: TrainData,
    config: TrainConfig,
    eval_fn=None,
):
    """Run the full loop; returns (best_params, list[EpochRecord]).

    ``eval_fn(params) -> float`` computes validation accuracy; the default
    links the validation split with the cosine scorer.
    """
    from .evalharness import accuracy_with_params

    if eval_fn is None:
        eval_fn = lambda p: accuracy_with_params(p, data, "valid")

    state = TrainState(lr=config.lr0, best_params=params)
    arrays = params.param_arrays()
    report: list[EpochRecord] = []

    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        triples, _ = sample_triplets(
            data.split.train, data.kb, data.candidates, config,
            epoch_seed=[config.seed, epoch],
        )
        if not triples:
            raise ValueError("no triples could be sampled from the training split")

        loss_sum = 0.0
        current = params.with_param_arrays(arrays)
        for start in range(0, len(triples), config.batch_size):
            batch = triples[start : start + config.batch_size]
            m_rows = _stack([data.mention_vecs[m.key()] for m, _, _ in batch])
            p_rows = _stack([data.entity_vecs[pos] for _, pos, _ in batch])
            n_rows = _stack([data.entity_vecs[neg] for _, _, neg in batch])

            j_m, cache_m = jm.jmel_forward_cached(current, m_rows)
            j_p, cache_p = jm.jmel_forward_cached(current, p_rows)
            j_n, cache_n = jm.jmel_forward_cached(current, n_rows)
            if config.normalize_joint:
                u_m, nc_m = nn.l2_normalize_forward(j_m)
                u_p, nc_p = nn.l2_normalize_forward(j_p)
                u_n, nc_n = nn.l2_normalize_forward(j_n)
                losses, g_m, g_p, g_n = jm.triplet_loss(u_m, u_p, u_n, current.config.margin)
                g_m = nn.l2_normalize_backward(nc_m, g_m)
                g_p = nn.l2_normalize_backward(nc_p, g_p)
                g_n = nn.l2_normalize_backward(nc_n, g_n)
            else:
                losses, g_m, g_p, g_n = jm.triplet_loss(j_m, j_p, j_n, current.config.margin)
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise nn.NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                    f" (lr={state.lr})"
                )
            loss_sum += float(np.sum(losses))

            scale = 1.0 / len(batch)
            grads = jm.jmel_backward(current, cache_m, g_m * scale)
            for g, extra in zip(grads, jm.jmel_backward(current, cache_p, g_p * scale)):
                g += extra
            for g, extra in zip(grads, jm.jmel_backward(current, cache_n, g_n * scale)):
                g += extra

            arrays, state.velocities = nn.sgd_momentum_step(
                arrays, grads, state.velocities, state.lr, config.momentum
            )
            current = params.with_param_arrays(arrays)

        mean_loss = loss_sum / len(triples)
        state.loss_history.append(mean_loss)

        valid_acc = float(eval_fn(current))
        if valid_acc > state.best_acc:
            state.best_acc = valid_acc
            state.best_params = current
            state.best_epoch = epoch
            state.stale_evals = 0
        else:
            state.stale_evals += 1

        epoch_lr = state.lr
        lr_schedule_step(state.loss_history, state, config)
        report.append(EpochRecord(epoch, epoch_lr, mean_loss, valid_acc, state.stale_evals))
        if early_stop_check(state, config):
            break

    return state.best_params, report


def write_report(report: list[EpochRecord], path) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(rec.to_json() + "\n" for rec in report), encoding="utf-8")
