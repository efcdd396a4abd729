"""Non-neural comparison systems: popularity argmax, single-feature cosine
rankings, and an extremely-randomized-trees feature combiner.

The tree ensemble follows the classic recipe: every tree sees the full
training set; at each node K features are drawn and each gets one uniform
random cut inside its (min, max) range; the split with the best Gini
reduction wins. Trees grow until nodes are pure, constant, or smaller than
n_min. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .candgen import CandidateSet
from .corpus import KnowledgeBase, MentionRecord
from .features import FeatureBundle, cosine

MODALITIES = ("uni", "bi", "img", "s2v")


def popularity_rank(base: CandidateSet, kb: KnowledgeBase) -> CandidateSet:
    """Followers desc; ties by friends, tweet_count, then screen name."""
    if not base.candidates:
        raise ValueError("popularity_rank needs a nonempty candidate set")
    entries = []
    for name in base.names():
        e = kb.entity(name)
        entries.append(((-e.followers, -e.friends, -e.tweet_count, name), name, e.followers))
    entries.sort()
    return CandidateSet(
        tweet_id=base.tweet_id,
        mention=base.mention,
        candidates=tuple((name, float(fo)) for _, name, fo in entries),
    )


def raw_similarity(mb: FeatureBundle, eb: FeatureBundle, modality: str) -> float:
    """Cosine between one modality of the two bundles; s2v = mean(uni, bi)."""
    if modality == "uni":
        return cosine(mb.u, eb.u)
    if modality == "bi":
        return cosine(mb.b, eb.b)
    if modality == "img":
        return cosine(mb.i, eb.i)
    if modality == "s2v":
        return 0.5 * (cosine(mb.u, eb.u) + cosine(mb.b, eb.b))
    raise ValueError(f"unknown modality {modality!r}")


# ---------------------------------------------------------------------------
# Extra-Trees


@dataclass(frozen=True)
class ExtraTreesConfig:
    n_trees: int = 100
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("need at least one tree")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")

    def k_for(self, d: int) -> int:
        k = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(d))
        if not 1 <= k <= d:
            raise ValueError(f"features_per_split {k} outside [1, {d}]")
        return k


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _leaf(y: np.ndarray) -> dict:
    return {"leaf": True, "n": int(y.size), "p1": float(y.mean()) if y.size else 0.0}


def _build_tree(X: np.ndarray, y: np.ndarray, idx: np.ndarray,
                rng: np.random.Generator, config: ExtraTreesConfig) -> dict:
    labels = y[idx]
    if idx.size < config.min_samples_split or labels.min() == labels.max():
        return _leaf(labels)

    rows = X[idx]
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    usable = np.flatnonzero(hi > lo)
    if usable.size == 0:  # all rows identical (possibly with mixed labels)
        return _leaf(labels)

    k = min(config.k_for(X.shape[1]), usable.size)
    chosen = usable[rng.choice(usable.size, size=k, replace=False)]

    parent_counts = np.array([np.sum(labels == 0), np.sum(labels == 1)], dtype=np.float64)
    parent_gini = _gini(parent_counts)
    best = None
    for f in chosen:
        cut = rng.uniform(lo[f], hi[f])
        left = rows[:, f] < cut
        n_left = int(left.sum())
        if n_left == 0 or n_left == idx.size:
            continue
        l_counts = np.array([np.sum(labels[left] == 0), np.sum(labels[left] == 1)], float)
        r_counts = parent_counts - l_counts
        w_gini = (n_left * _gini(l_counts) + (idx.size - n_left) * _gini(r_counts)) / idx.size
        reduction = parent_gini - w_gini
        if best is None or reduction > best[0]:
            best = (reduction, int(f), float(cut), left)
    if best is None:
        return _leaf(labels)

    _, f, cut, left = best
    return {
        "leaf": False,
        "feature": f,
        "cut": cut,
        "left": _build_tree(X, y, idx[left], rng, config),
        "right": _build_tree(X, y, idx[~left], rng, config),
    }


@dataclass
class ExtraTreesForest:
    config: ExtraTreesConfig
    n_features: int
    trees: list[dict]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Mean positive-class leaf frequency across trees, one value per row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            for r in range(X.shape[0]):
                node = tree
                while not node["leaf"]:
                    node = node["left"] if X[r, node["feature"]] < node["cut"] else node["right"]
                out[r] += node["p1"]
        return out / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


def extratrees_train(X: np.ndarray, y: np.ndarray, config: ExtraTreesConfig) -> ExtraTreesForest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"bad training shapes X{X.shape} y{y.shape}")
    if X.shape[0] < config.min_samples_split:
        raise ValueError("fewer samples than min_samples_split")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be binary 0/1")
    config.k_for(X.shape[1])  # validate early

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    idx = np.arange(X.shape[0])
    trees = [
        _build_tree(X, y.astype(np.float64), idx, np.random.default_rng(s), config)
        for s in seeds
    ]
    return ExtraTreesForest(config=config, n_features=X.shape[1], trees=trees)


def extratrees_rank(
    mention: MentionRecord,
    base: CandidateSet,
    forest: ExtraTreesForest,
    ctx,
    mask: tuple[str, ...],
    standardizer=None,
) -> CandidateSet:
    """Candidates ordered by forest probability; ties as in popularity_rank."""
    from .fusion import Standardizer, assemble_features

    if not base.candidates:
        raise ValueError("extratrees_rank needs a nonempty candidate set")
    if standardizer is None:
        standardizer = Standardizer.identity(mask)
    names = base.names()
    rows = np.stack(
        [assemble_features(mention, name, ctx, mask, standardizer) for name in names]
    )
    probs = forest.predict_proba(rows)
    entries = []
    for name, p in zip(names, probs):
        e = ctx.kb.entity(name)
        entries.append(((-p, -e.followers, -e.friends, -e.tweet_count, name), name, p))
    entries.sort()
    return CandidateSet(
        tweet_id=base.tweet_id,
        mention=base.mention,
        candidates=tuple((name, float(p)) for _, name, p in entries),
    )


def save_forest(forest: ExtraTreesForest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "extratrees",
        "version": 1,
        "n_features": forest.n_features,
        "config": {
            "n_trees": forest.config.n_trees,
            "features_per_split": forest.config.features_per_split,
            "min_samples_split": forest.config.min_samples_split,
            "seed": forest.config.seed,
        },
        "trees": forest.trees,
    }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_forest(path) -> ExtraTreesForest:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "extratrees":
        raise ValueError(f"{path}: not an extra-trees file")
    return ExtraTreesForest(
        config=ExtraTreesConfig(**payload["config"]),
        n_features=int(payload["n_features"]),
        trees=payload["trees"],
    )
