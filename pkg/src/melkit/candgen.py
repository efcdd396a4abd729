"""Candidate generation: which accounts could an ambiguous mention refer to.

An entity is a candidate for a mention iff every normalized mention token
occurs among the entity's normalized user-name tokens (plain inclusion, no
fuzzy matching). Empty candidate sets are legal and mean "unlinkable".
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import KnowledgeBase, MentionRecord


@dataclass(frozen=True)
class CandidateSet:
    """Ordered candidates for one mention: (screen_name, score) pairs.

    Order is deterministic: score descending, screen name ascending; unscored
    sets are plain name order.
    """

    tweet_id: str
    mention: tuple[str, ...]
    candidates: tuple[tuple[str, float | None], ...]

    def names(self) -> list[str]:
        return [name for name, _ in self.candidates]

    def top(self) -> str | None:
        return self.candidates[0][0] if self.candidates else None

    def __len__(self) -> int:
        return len(self.candidates)


def normalize_name(text: str) -> list[str]:
    """Casefold, strip punctuation, and split into tokens.

    Punctuation is treated as a separator so "Andrew Y. Ng" -> ["andrew",
    "y", "ng"]. Idempotent under join+renormalize.
    """
    tokens = []
    current = []
    for ch in text.casefold():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def candidates(mention: MentionRecord, kb: KnowledgeBase) -> CandidateSet:
    """All entities whose user-name tokens include every mention token."""
    wanted = set()
    for word in mention.mention:
        wanted.update(normalize_name(word))
    found = []
    for name in sorted(kb.entities):
        entity_tokens = set(normalize_name(kb.entities[name].user_name))
        if wanted and wanted <= entity_tokens:
            found.append((name, None))
    return CandidateSet(
        tweet_id=mention.tweet_id, mention=mention.mention, candidates=tuple(found)
    )


def candidate_map(
    mentions: list[MentionRecord], kb: KnowledgeBase
) -> dict[tuple[str, str], CandidateSet]:
    """Candidate sets for many mentions, keyed by (tweet_id, gold)."""
    return {m.key(): candidates(m, kb) for m in mentions}


def save_candidates(cands: dict[tuple[str, str], CandidateSet], path) -> None:
    """Optional cache: one {"tweet_id", "candidates"} record per mention."""
    import json
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in sorted(cands):
        cset = cands[key]
        lines.append(json.dumps(
            {"tweet_id": cset.tweet_id, "mention": list(cset.mention),
             "gold": key[1], "candidates": cset.names()}
        ))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_candidates(path) -> dict[tuple[str, str], CandidateSet]:
    import json
    from pathlib import Path

    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        cset = CandidateSet(
            tweet_id=obj["tweet_id"],
            mention=tuple(obj["mention"]),
            candidates=tuple((name, None) for name in obj["candidates"]),
        )
        out[(obj["tweet_id"], obj["gold"])] = cset
    return out


def ranked(base: CandidateSet, scores: dict[str, float], kb: KnowledgeBase) -> CandidateSet:
    """Attach scores and re-order: score desc, followers desc, screen asc."""
    entries = []
    for name in base.names():
        score = scores[name]
        followers = kb.entities[name].followers if name in kb.entities else 0
        entries.append((-score, -followers, name))
    entries.sort()
    return CandidateSet(
        tweet_id=base.tweet_id,
        mention=base.mention,
        candidates=tuple((name, -neg_score) for neg_score, _, name in entries),
    )
