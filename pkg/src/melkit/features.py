"""Context representations for mentions and entities.

Text vectors come from averaging n-gram table vectors over a tweet's tokens
(unigram mode averages the token vectors; bigram mode also averages in the
adjacent-pair vectors). Entity vectors are arithmetic means over the
timeline. The synthetic oracle manufactures a feature store whose image
vectors carry a controllable amount of entity-discriminative signal, so
linking quality can be dialed for benchmarks.

Store layout on disk: manifest.json + records.jsonl (text vectors keyed by
tweet id) + images.jsonl (image vectors keyed by image_ref).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bm25
from .corpus import Entity, KnowledgeBase, MentionRecord

DEFAULT_TEXT_DIM = 700
DEFAULT_IMAGE_DIM = 1000

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.jsonl"
IMAGES_FILE = "images.jsonl"

UNIGRAM = "unigram"
UNIGRAM_BIGRAM = "unigram+bigram"


class FeatureError(Exception):
    """Missing keys, inconsistent dimensions, or malformed store files."""


@dataclass(frozen=True)
class FeatureBundle:
    """Unigram, bigram, and image vectors for one mention or entity side."""

    u: np.ndarray
    b: np.ndarray
    i: np.ndarray


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs yield 0.0."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def _key_rng(seed: int, kind: str, key: str) -> np.random.Generator:
    """Generator derived from (seed, kind, key) via sha256; order-independent."""
    digest = hashlib.sha256(f"{kind}\x00{key}".encode("utf-8")).digest()
    words = [int.from_bytes(digest[k : k + 8], "little") for k in range(0, 32, 8)]
    return np.random.default_rng([seed & 0xFFFFFFFF, *words])


@dataclass
class NgramTables:
    """Seeded unigram/bigram lookup tables; unseen n-grams map to zeros."""

    dim: int
    seed: int
    unigrams: dict[str, np.ndarray] = field(default_factory=dict)
    bigrams: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(cls, token_lists: list[list[str]], dim: int, seed: int) -> "NgramTables":
        tables = cls(dim=dim, seed=seed)
        scale = 1.0 / math.sqrt(dim)
        unigram_vocab = sorted({t for toks in token_lists for t in toks})
        bigram_vocab = sorted(
            {(a, b) for toks in token_lists for a, b in zip(toks, toks[1:])}
        )
        for tok in unigram_vocab:
            rng = _key_rng(seed, "uni", tok)
            tables.unigrams[tok] = rng.standard_normal(dim) * scale
        for pair in bigram_vocab:
            rng = _key_rng(seed, "bi", "\x00".join(pair))
            tables.bigrams[pair] = rng.standard_normal(dim) * scale
        return tables

    def unigram(self, token: str) -> np.ndarray:
        vec = self.unigrams.get(token)
        return vec if vec is not None else np.zeros(self.dim)

    def bigram(self, pair: tuple[str, str]) -> np.ndarray:
        vec = self.bigrams.get(pair)
        return vec if vec is not None else np.zeros(self.dim)


def compose_sentence(tokens: list[str], tables: NgramTables, mode: str = UNIGRAM) -> np.ndarray:
    """Mean of the n-gram vectors over the sentence.

    Every occurrence contributes one term; the denominator counts all
    n-grams present, including out-of-vocabulary ones (which map to zeros).
    """
    if not tokens:
        raise FeatureError("cannot compose an empty token list")
    if mode not in (UNIGRAM, UNIGRAM_BIGRAM):
        raise FeatureError(f"unknown composition mode {mode!r}")
    total = np.zeros(tables.dim)
    count = 0
    for tok in tokens:
        total += tables.unigram(tok)
        count += 1
    if mode == UNIGRAM_BIGRAM:
        for pair in zip(tokens, tokens[1:]):
            total += tables.bigram(pair)
            count += 1
    return total / count


def entity_features(entity: Entity, tweet_bundles: list[FeatureBundle]) -> FeatureBundle:
    """Component-wise mean over the timeline (one bundle per timeline tweet)."""
    if not tweet_bundles:
        raise FeatureError(f"entity {entity.screen_name!r} has an empty timeline")
    if len(tweet_bundles) != len(entity.timeline):
        raise FeatureError(
            f"entity {entity.screen_name!r}: {len(tweet_bundles)} bundles for "
            f"{len(entity.timeline)} timeline tweets"
        )
    n = float(len(tweet_bundles))
    return FeatureBundle(
        u=sum(b.u for b in tweet_bundles) / n,
        b=sum(b.b for b in tweet_bundles) / n,
        i=sum(b.i for b in tweet_bundles) / n,
    )


@dataclass
class FeatureStore:
    """Immutable-after-build map of precomputed feature vectors."""

    dim_u: int
    dim_b: int
    dim_i: int
    text: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    images: dict[str, np.ndarray] = field(default_factory=dict)

    def text_vectors(self, tweet_id: str) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.text[tweet_id]
        except KeyError:
            raise FeatureError(f"no text features for tweet {tweet_id!r}") from None

    def image_vector(self, image_ref: str) -> np.ndarray:
        try:
            return self.images[image_ref]
        except KeyError:
            raise FeatureError(f"no image features for {image_ref!r}") from None

    def bundle_for_tweet(self, kb: KnowledgeBase, tweet_id: str) -> FeatureBundle:
        tweet = kb.tweet(tweet_id)
        u, b = self.text_vectors(tweet_id)
        if tweet.image_ref is not None:
            i = self.image_vector(tweet.image_ref)
        else:
            i = np.zeros(self.dim_i)
        return FeatureBundle(u=u, b=b, i=i)


def mention_bundle(store: FeatureStore, kb: KnowledgeBase, mention: MentionRecord) -> FeatureBundle:
    return store.bundle_for_tweet(kb, mention.tweet_id)


def entity_bundle(store: FeatureStore, kb: KnowledgeBase, screen_name: str) -> FeatureBundle:
    entity = kb.entity(screen_name)
    bundles = [store.bundle_for_tweet(kb, tid) for tid in entity.timeline]
    return entity_features(entity, bundles)


def entity_bundles(store: FeatureStore, kb: KnowledgeBase) -> dict[str, FeatureBundle]:
    """Timeline averages for every entity, keyed by screen name."""
    return {name: entity_bundle(store, kb, name) for name in sorted(kb.entities)}


def synth_features(
    kb: KnowledgeBase,
    mentions: list[MentionRecord],
    topics: dict[str, np.ndarray],
    snr: float,
    seed: int,
    dim_text: int = DEFAULT_TEXT_DIM,
    dim_image: int = DEFAULT_IMAGE_DIM,
    nuisance_rank: int = 4,
    nuisance_share: float = 0.7,
) -> FeatureStore:
    """Build the synthetic oracle store for a forged corpus.

    Text vectors are composed from seeded n-gram tables over each tweet's
    tokens. Image vectors are a unit-norm projection of the subject entity's
    hidden topic vector scaled by ``snr`` plus unit-expected-norm Gaussian
    noise; snr = 0 means pure noise. The subject of a timeline tweet is its
    author; the subject of a mention host tweet is the gold entity.

    The noise covariance is anisotropic: ``nuisance_share`` of its energy
    lives in a fixed rank-``nuisance_rank`` subspace shared by all images
    (think lighting/background directions of a CNN feature space). Plain
    cosine is polluted by it; a trained metric can learn to project it out.
    """
    if snr < 0:
        raise FeatureError("snr must be nonnegative")
    if not 0 <= nuisance_share <= 1:
        raise FeatureError("nuisance_share must be in [0, 1]")
    missing = sorted(
        {e for e in kb.entities if e not in topics}
    )
    if missing:
        raise FeatureError(f"entities without topic vectors: {missing[:5]}")

    token_lists = [bm25.tokenize(kb.tweets[t].text) for t in sorted(kb.tweets)]
    tables = NgramTables.build(token_lists, dim=dim_text, seed=seed)

    subject_of: dict[str, str] = {}
    for m in sorted(mentions, key=lambda m: m.key()):
        subject_of.setdefault(m.tweet_id, m.gold)

    topic_dim = len(next(iter(topics.values()))) if topics else 1
    proj = _key_rng(seed, "proj", "topics").standard_normal((dim_image, topic_dim))
    nuisance = _key_rng(seed, "proj", "nuisance").standard_normal((nuisance_rank, dim_image))
    nuisance /= np.linalg.norm(nuisance, axis=1, keepdims=True)

    store = FeatureStore(dim_u=dim_text, dim_b=dim_text, dim_i=dim_image)
    for tid in sorted(kb.tweets):
        tweet = kb.tweets[tid]
        tokens = bm25.tokenize(tweet.text)
        if tokens:
            u = compose_sentence(tokens, tables, UNIGRAM)
            b = compose_sentence(tokens, tables, UNIGRAM_BIGRAM)
        else:
            u = np.zeros(dim_text)
            b = np.zeros(dim_text)
        store.text[tid] = (u, b)

        if tweet.image_ref is None:
            continue
        rng = _key_rng(seed, "img", tweet.image_ref)
        coeffs = rng.standard_normal(nuisance_rank) * math.sqrt(nuisance_share / nuisance_rank)
        noise = coeffs @ nuisance + rng.standard_normal(dim_image) * math.sqrt(
            (1.0 - nuisance_share) / dim_image
        )
        subject = subject_of.get(tid, tweet.author if tweet.author in topics else None)
        if subject is None or snr == 0.0:
            vec = noise
        else:
            signal = proj @ np.asarray(topics[subject], dtype=np.float64)
            norm = float(np.linalg.norm(signal))
            if norm > 0:
                signal = signal / norm
            vec = snr * signal + noise
        store.images[tweet.image_ref] = vec
    return store


def write_features(store: FeatureStore, path: str | Path) -> None:
    """Persist a store: manifest + sorted JSONL records. Lossless for float64."""
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dim_u": store.dim_u,
        "dim_b": store.dim_b,
        "dim_i": store.dim_i,
        "count": len(store.text) + len(store.images),
    }
    (base / MANIFEST_FILE).write_text(
        json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = []
    for key in sorted(store.text):
        u, b = store.text[key]
        lines.append(json.dumps({"key": key, "u": u.tolist(), "b": b.tolist()}))
    (base / RECORDS_FILE).write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
    lines = []
    for key in sorted(store.images):
        lines.append(json.dumps({"key": key, "i": store.images[key].tolist()}))
    (base / IMAGES_FILE).write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


def read_features(path: str | Path) -> FeatureStore:
    base = Path(path)
    manifest_path = base / MANIFEST_FILE
    if not manifest_path.exists():
        raise FeatureError(f"{manifest_path}: missing manifest")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for field_name in ("dim_u", "dim_b", "dim_i", "count"):
        if field_name not in manifest:
            raise FeatureError(f"{manifest_path}: manifest lacks {field_name!r}")
    store = FeatureStore(
        dim_u=int(manifest["dim_u"]),
        dim_b=int(manifest["dim_b"]),
        dim_i=int(manifest["dim_i"]),
    )
    records_path = base / RECORDS_FILE
    if records_path.exists():
        for lineno, line in enumerate(records_path.read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            key = obj["key"]
            u = np.asarray(obj["u"], dtype=np.float64)
            b = np.asarray(obj["b"], dtype=np.float64)
            if u.shape != (store.dim_u,):
                raise FeatureError(
                    f"{records_path}:{lineno}: key {key!r} has u of dim {u.size}, "
                    f"manifest says {store.dim_u}"
                )
            if b.shape != (store.dim_b,):
                raise FeatureError(
                    f"{records_path}:{lineno}: key {key!r} has b of dim {b.size}, "
                    f"manifest says {store.dim_b}"
                )
            store.text[key] = (u, b)
    images_path = base / IMAGES_FILE
    if images_path.exists():
        for lineno, line in enumerate(images_path.read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            key = obj["key"]
            vec = np.asarray(obj["i"], dtype=np.float64)
            if vec.shape != (store.dim_i,):
                raise FeatureError(
                    f"{images_path}:{lineno}: key {key!r} has i of dim {vec.size}, "
                    f"manifest says {store.dim_i}"
                )
            store.images[key] = vec
    if len(store.text) + len(store.images) != int(manifest["count"]):
        raise FeatureError(
            f"{manifest_path}: count {manifest['count']} != "
            f"{len(store.text) + len(store.images)} records on disk"
        )
    return store
