"""Pairwise (mention, entity) scoring that fuses the learned similarity with
popularity and retrieval features.

A small MLP (two tanh hidden layers, each one neuron wider than the input,
sigmoid output) is trained with binary cross-entropy over all training
pairs: label 1 for the gold entity, 0 for every other candidate. Popularity
counts are log1p-ed and, together with the BM25 score, standardized with
train-set constants that are frozen into the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bm25 as bm
from . import nnkernel as nn
from .candgen import CandidateSet, ranked
from .corpus import KnowledgeBase, MentionRecord
from .features import FeatureBundle, FeatureStore, cosine, entity_bundle, mention_bundle
from .jmel import JmelParams, jmel_forward, joint_cosine

FEATURE_ORDER = ("jmel", "uni", "bi", "img", "pop", "bm25")


def feature_names(mask: tuple[str, ...]) -> list[str]:
    """Expanded feature vector layout for a mask, in canonical order."""
    names = []
    for feat in FEATURE_ORDER:
        if feat not in mask:
            continue
        if feat == "pop":
            names += ["pop_fo", "pop_fr", "pop_t"]
        else:
            names.append(feat)
    return names


def normalize_mask(mask) -> tuple[str, ...]:
    mask = tuple(mask)
    bad = [m for m in mask if m not in FEATURE_ORDER]
    if bad:
        raise ValueError(f"unknown fusion features: {bad}")
    return tuple(f for f in FEATURE_ORDER if f in mask)


@dataclass
class FeatureContext:
    """Shared artifacts plus lazy caches for pairwise feature extraction."""

    kb: KnowledgeBase
    store: FeatureStore
    jmel_params: JmelParams | None = None
    index: bm.TimelineIndex | None = None
    _entity_bundles: dict = field(default_factory=dict, repr=False)
    _mention_bundles: dict = field(default_factory=dict, repr=False)
    _entity_joints: dict = field(default_factory=dict, repr=False)
    _mention_joints: dict = field(default_factory=dict, repr=False)
    _queries: dict = field(default_factory=dict, repr=False)

    def bundle_of_entity(self, screen: str) -> FeatureBundle:
        if screen not in self._entity_bundles:
            self._entity_bundles[screen] = entity_bundle(self.store, self.kb, screen)
        return self._entity_bundles[screen]

    def bundle_of_mention(self, m: MentionRecord) -> FeatureBundle:
        if m.key() not in self._mention_bundles:
            self._mention_bundles[m.key()] = mention_bundle(self.store, self.kb, m)
        return self._mention_bundles[m.key()]

    def joint_of_entity(self, screen: str) -> np.ndarray:
        if screen not in self._entity_joints:
            self._entity_joints[screen] = jmel_forward(
                self.jmel_params, self.bundle_of_entity(screen)
            )
        return self._entity_joints[screen]

    def joint_of_mention(self, m: MentionRecord) -> np.ndarray:
        if m.key() not in self._mention_joints:
            self._mention_joints[m.key()] = jmel_forward(
                self.jmel_params, self.bundle_of_mention(m)
            )
        return self._mention_joints[m.key()]

    def query_of_mention(self, m: MentionRecord) -> list[str]:
        if m.key() not in self._queries:
            text = self.kb.tweet(m.tweet_id).text
            self._queries[m.key()] = bm.mention_query(text, m.mention)
        return self._queries[m.key()]


def assemble_raw(
    mention: MentionRecord, screen: str, ctx: FeatureContext, mask: tuple[str, ...]
) -> np.ndarray:
    """Unstandardized feature vector for one (mention, entity) pair."""
    values = []
    for feat in normalize_mask(mask):
        if feat == "jmel":
            if ctx.jmel_params is None:
                raise ValueError("jmel feature requested but no model is loaded")
            values.append(joint_cosine(ctx.joint_of_mention(mention), ctx.joint_of_entity(screen)))
        elif feat in ("uni", "bi", "img"):
            mb = ctx.bundle_of_mention(mention)
            eb = ctx.bundle_of_entity(screen)
            pair = {"uni": (mb.u, eb.u), "bi": (mb.b, eb.b), "img": (mb.i, eb.i)}[feat]
            values.append(cosine(*pair))
        elif feat == "pop":
            e = ctx.kb.entity(screen)
            values += [np.log1p(e.followers), np.log1p(e.friends), np.log1p(e.tweet_count)]
        elif feat == "bm25":
            if ctx.index is None:
                raise ValueError("bm25 feature requested but no index is loaded")
            values.append(bm.bm25_score(ctx.query_of_mention(mention), screen, ctx.index))
    return np.asarray(values, dtype=np.float64)


@dataclass
class Standardizer:
    """Train-set moments for the standardized feature positions."""

    mean: np.ndarray
    std: np.ndarray
    standardized: np.ndarray  # boolean mask over the expanded feature vector

    @classmethod
    def identity(cls, mask: tuple[str, ...]) -> "Standardizer":
        n = len(feature_names(mask))
        return cls(mean=np.zeros(n), std=np.ones(n), standardized=np.zeros(n, dtype=bool))

    @classmethod
    def fit(cls, rows: np.ndarray, mask: tuple[str, ...]) -> "Standardizer":
        names = feature_names(mask)
        standardized = np.array(
            [name.startswith("pop") or name == "bm25" for name in names]
        )
        mean = np.where(standardized, rows.mean(axis=0), 0.0)
        std = np.where(standardized, rows.std(axis=0), 1.0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std, standardized=standardized)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "standardized": [bool(v) for v in self.standardized],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Standardizer":
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
            standardized=np.asarray(obj["standardized"], dtype=bool),
        )


def assemble_features(
    mention: MentionRecord,
    screen: str,
    ctx: FeatureContext,
    mask: tuple[str, ...],
    standardizer: Standardizer,
) -> np.ndarray:
    return standardizer.transform(assemble_raw(mention, screen, ctx, mask))


def build_pairs(
    mentions,
    ctx: FeatureContext,
    cands: dict,
    mask: tuple[str, ...],
):
    """All (mention, candidate) rows: gold labeled 1, every other candidate 0.

    Returns (raw feature matrix, labels). Standardization is applied later.
    """
    rows = []
    labels = []
    for m in mentions:
        rows.append(assemble_raw(m, m.gold, ctx, mask))
        labels.append(1.0)
        for name in cands[m.key()].names():
            if name == m.gold:
                continue
            rows.append(assemble_raw(m, name, ctx, mask))
            labels.append(0.0)
    if not rows:
        raise ValueError("no training pairs could be built")
    return np.stack(rows), np.asarray(labels)


# ---------------------------------------------------------------------------
# the MLP


@dataclass(frozen=True)
class FusionMlp:
    """Two tanh hidden layers of width n_in + 1, then a sigmoid unit."""

    hidden1: nn.DenseLayer
    hidden2: nn.DenseLayer
    output: nn.DenseLayer

    @property
    def n_in(self) -> int:
        return self.hidden1.W.shape[1]

    def param_arrays(self) -> list[np.ndarray]:
        return [self.hidden1.W, self.hidden1.b, self.hidden2.W, self.hidden2.b,
                self.output.W, self.output.b]

    def with_param_arrays(self, arrays) -> "FusionMlp":
        return FusionMlp(
            hidden1=nn.DenseLayer(arrays[0], arrays[1]),
            hidden2=nn.DenseLayer(arrays[2], arrays[3]),
            output=nn.DenseLayer(arrays[4], arrays[5]),
        )


def init_fusion_mlp(n_in: int, seed: int) -> FusionMlp:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    width = n_in + 1
    return FusionMlp(
        hidden1=nn.init_dense(n_in, width, rng),
        hidden2=nn.init_dense(width, width, rng),
        output=nn.init_dense(width, 1, rng),
    )


def mlp_forward_cached(mlp: FusionMlp, x: np.ndarray):
    z1 = nn.dense_forward(mlp.hidden1, x)
    a1 = nn.tanh(z1)
    z2 = nn.dense_forward(mlp.hidden2, a1)
    a2 = nn.tanh(z2)
    z3 = nn.dense_forward(mlp.output, a2)
    p = nn.sigmoid(z3)[..., 0] if z3.ndim > 1 else float(nn.sigmoid(z3)[0])
    return p, (x, z1, a1, z2, a2, z3)


def mlp_forward(mlp: FusionMlp, x: np.ndarray):
    """Probability in (0, 1) for a feature vector (or batch of rows)."""
    p, _ = mlp_forward_cached(mlp, x)
    return p


def mlp_backward_from_logit(mlp: FusionMlp, cache, dz3: np.ndarray):
    """Gradients given d(loss)/d(pre-sigmoid output); aligned with param_arrays."""
    x, z1, a1, z2, a2, _ = cache
    da2, dW3, db3 = nn.dense_backward(mlp.output, a2, dz3)
    dz2 = nn.tanh_backward(z2, da2)
    da1, dW2, db2 = nn.dense_backward(mlp.hidden2, a1, dz2)
    dz1 = nn.tanh_backward(z1, da1)
    _, dW1, db1 = nn.dense_backward(mlp.hidden1, x, dz1)
    return [dW1, db1, dW2, db2, dW3, db3]


def mlp_backward(mlp: FusionMlp, cache, dp: np.ndarray):
    """Gradients given d(loss)/dp (through the sigmoid)."""
    z3 = cache[5]
    s = nn.sigmoid(z3)
    dz3 = np.asarray(dp)[..., None] * s * (1.0 - s) if z3.ndim > 1 else dp * s * (1 - s)
    return mlp_backward_from_logit(mlp, cache, np.reshape(dz3, z3.shape))


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clipped at 1e-12."""
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def train_fusion(
    mlp: FusionMlp,
    X: np.ndarray,
    y: np.ndarray,
    step_scale: float = 1e-5,
    max_iters: int = 200,
    tol: float = 1e-8,
):
    """Minimize mean BCE over all pairs with L-BFGS; returns (mlp, result)."""
    template = mlp
    shapes = [a.shape for a in mlp.param_arrays()]

    def objective(vec):
        model = template.with_param_arrays(nn.unpack_params(vec, shapes))
        p, cache = mlp_forward_cached(model, X)
        loss = bce_loss(p, y)
        dz3 = ((np.clip(p, 1e-12, 1.0 - 1e-12) - y) / len(y))[..., None]
        grads = mlp_backward_from_logit(model, cache, dz3)
        return loss, nn.pack_params(grads)

    x0 = nn.pack_params(mlp.param_arrays())
    result = nn.lbfgs_minimize(
        objective, x0, step_scale=step_scale, max_iters=max_iters, tol=tol
    )
    trained = template.with_param_arrays(nn.unpack_params(result.x, shapes))
    return trained, result


@dataclass
class FusionModel:
    """Trained fusion stack: mask + standardization constants + MLP."""

    mask: tuple[str, ...]
    standardizer: Standardizer
    mlp: FusionMlp


def fusion_rank(
    mention: MentionRecord,
    base: CandidateSet,
    ctx: FeatureContext,
    model: FusionModel,
) -> CandidateSet:
    """Candidates ordered by MLP probability (desc); ties by followers, name."""
    scores = {}
    for name in base.names():
        x = assemble_features(mention, name, ctx, model.mask, model.standardizer)
        scores[name] = float(mlp_forward(model.mlp, x))
    return ranked(base, scores, ctx.kb)


def save_fusion(model: FusionModel, path) -> None:
    header = {
        "model": "fusion",
        "version": 1,
        "mask": list(model.mask),
        "standardizer": model.standardizer.to_dict(),
    }
    nn.save_checkpoint(path, header, model.mlp.param_arrays())


def load_fusion(path) -> FusionModel:
    header, arrays = nn.load_checkpoint(path)
    if header.get("model") != "fusion":
        raise ValueError(f"{path}: not a fusion checkpoint")
    mlp = FusionMlp(
        hidden1=nn.DenseLayer(arrays[0], arrays[1]),
        hidden2=nn.DenseLayer(arrays[2], arrays[3]),
        output=nn.DenseLayer(arrays[4], arrays[5]),
    )
    return FusionModel(
        mask=tuple(header["mask"]),
        standardizer=Standardizer.from_dict(header["standardizer"]),
        mlp=mlp,
    )
