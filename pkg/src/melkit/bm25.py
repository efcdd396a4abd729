"""BM25 retrieval baseline over entity timelines.

Each entity's timeline is concatenated into one bag-of-words document; a
mention tweet is the query. Scoring uses the Okapi form with the smoothed
idf variant: idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), k1 = 1.2, b = 0.75.
Query terms are deduplicated (the query is a set).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import KnowledgeBase

K1 = 1.2
B = 0.75

_URL_PREFIXES = ("http://", "https://", "www.")


def tokenize(text: str) -> list[str]:
    """Casefold and split on non-alphanumeric runs; URLs are dropped whole.

    Sigils fall out naturally ("@AndrewYNg" -> "andrewyng", "#AI" -> "ai").
    """
    out = []
    for raw in text.casefold().split():
        if raw.startswith(_URL_PREFIXES):
            continue
        current = []
        for ch in raw:
            if ch.isalnum():
                current.append(ch)
            elif current:
                out.append("".join(current))
                current = []
        if current:
            out.append("".join(current))
    return out


@dataclass
class TimelineIndex:
    """Per-entity term statistics for BM25 scoring."""

    k1: float = K1
    b: float = B
    term_freqs: dict[str, Counter] = field(default_factory=dict)
    doc_len: dict[str, int] = field(default_factory=dict)
    df: Counter = field(default_factory=Counter)

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    @property
    def avgdl(self) -> float:
        if not self.doc_len:
            return 0.0
        return sum(self.doc_len.values()) / len(self.doc_len)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_index(kb: KnowledgeBase, k1: float = K1, b: float = B) -> TimelineIndex:
    """One document per entity: the concatenation of its timeline texts."""
    if not kb.entities:
        raise ValueError("cannot index an empty knowledge base")
    index = TimelineIndex(k1=k1, b=b)
    for name in sorted(kb.entities):
        tokens: list[str] = []
        for tid in kb.entities[name].timeline:
            tokens.extend(tokenize(kb.tweets[tid].text))
        index.term_freqs[name] = Counter(tokens)
        index.doc_len[name] = len(tokens)
    for tf in index.term_freqs.values():
        for term in tf:
            index.df[term] += 1
    return index


def bm25_score(query_tokens: list[str], screen_name: str, index: TimelineIndex) -> float:
    """Okapi BM25 of the query against one entity document.

    Duplicate query terms score once. Terms absent from the document
    contribute 0, so zero-overlap queries score exactly 0.
    """
    if screen_name not in index.term_freqs:
        raise KeyError(f"entity {screen_name!r} is not in the index")
    tf = index.term_freqs[screen_name]
    dl = index.doc_len[screen_name]
    avgdl = index.avgdl
    score = 0.0
    for term in sorted(set(query_tokens)):
        f = tf.get(term, 0)
        if f == 0:
            continue
        norm = 1.0 - index.b + index.b * dl / avgdl
        score += index.idf(term) * f * (index.k1 + 1.0) / (f + index.k1 * norm)
    return score


def mention_query(text: str, mention_tokens: tuple[str, ...]) -> list[str]:
    """Tokenize a host tweet and drop the mention surface tokens.

    The mention matches every candidate by construction, so it carries no
    discriminative signal.
    """
    drop = set()
    for word in mention_tokens:
        drop.update(tokenize(word))
    return [t for t in tokenize(text) if t not in drop]


def save_index(index: TimelineIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "bm25-index",
        "version": 1,
        "k1": index.k1,
        "b": index.b,
        "doc_len": {k: index.doc_len[k] for k in sorted(index.doc_len)},
        "term_freqs": {
            k: {t: c for t, c in sorted(index.term_freqs[k].items())}
            for k in sorted(index.term_freqs)
        },
    }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_index(path: str | Path) -> TimelineIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "bm25-index":
        raise ValueError(f"{path}: not a bm25 index file")
    index = TimelineIndex(k1=payload["k1"], b=payload["b"])
    index.doc_len = {k: int(v) for k, v in payload["doc_len"].items()}
    index.term_freqs = {k: Counter(v) for k, v in payload["term_freqs"].items()}
    for tf in index.term_freqs.values():
        for term in tf:
            index.df[term] += 1
    return index
