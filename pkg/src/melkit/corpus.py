"""Domain model and JSONL persistence for tweets, entities, mentions, and splits.

A knowledge base is a set of user accounts, each with a timeline of
(text, image) posts. Mentions are ambiguous word spans inside host tweets
that point at some account. Everything is immutable after load; files are
UTF-8 JSONL with a manifest first line and records sorted for determinism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

ENTITY_KINDS = ("person", "organization")

KB_FILE = "kb.jsonl"
TWEETS_FILE = "tweets.jsonl"
MENTIONS_FILE = "mentions.jsonl"


class CorpusError(Exception):
    """A corpus file failed to parse or broke referential integrity."""


@dataclass(frozen=True)
class Tweet:
    id: str
    author: str
    text: str
    image_ref: str | None = None
    is_retweet: bool = False


@dataclass(frozen=True)
class Entity:
    screen_name: str
    user_name: str
    kind: str
    followers: int
    friends: int
    tweet_count: int
    timeline: tuple[str, ...] = ()


@dataclass(frozen=True)
class MentionRecord:
    """An ambiguous mention: surface tokens + host tweet + gold account.

    ``split`` is a persisted annotation ("train"/"valid"/"test") used by the
    mentions file; it is not part of the record identity.
    """

    mention: tuple[str, ...]
    tweet_id: str
    gold: str
    split: str | None = None

    def key(self) -> tuple[str, str]:
        return (self.tweet_id, self.gold)


@dataclass
class KnowledgeBase:
    """Account and tweet maps. Treated as read-only once constructed."""

    entities: dict[str, Entity] = field(default_factory=dict)
    tweets: dict[str, Tweet] = field(default_factory=dict)

    def entity(self, screen_name: str) -> Entity:
        try:
            return self.entities[screen_name]
        except KeyError:
            raise CorpusError(f"unknown entity {screen_name!r}") from None

    def tweet(self, tweet_id: str) -> Tweet:
        try:
            return self.tweets[tweet_id]
        except KeyError:
            raise CorpusError(f"unknown tweet {tweet_id!r}") from None


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[MentionRecord, ...]
    valid: tuple[MentionRecord, ...]
    test: tuple[MentionRecord, ...]

    def sections(self) -> dict[str, tuple[MentionRecord, ...]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def all_records(self) -> list[MentionRecord]:
        return list(self.train) + list(self.valid) + list(self.test)

    def tagged(self) -> list[MentionRecord]:
        """All records with their section written into ``split``."""
        out = []
        for name, section in self.sections().items():
            out.extend(replace(m, split=name) for m in section)
        return out

    @classmethod
    def from_records(cls, mentions: list[MentionRecord]) -> "DatasetSplit":
        by_section: dict[str, list[MentionRecord]] = {"train": [], "valid": [], "test": []}
        for m in mentions:
            if m.split not in by_section:
                raise CorpusError(f"mention {m.key()} has no valid split tag: {m.split!r}")
            by_section[m.split].append(m)
        return cls(*(tuple(by_section[k]) for k in ("train", "valid", "test")))


def _read_jsonl(path: Path, expect_format: str) -> list[tuple[int, dict]]:
    """Parse a manifest-headed JSONL file into (line_number, record) pairs."""
    if not path.exists():
        raise CorpusError(f"{path}: file not found")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object")
            if lineno == 1 and "format" in obj:
                if obj.get("format") != expect_format:
                    raise CorpusError(
                        f"{path}:1: manifest format {obj.get('format')!r}, expected {expect_format!r}"
                    )
                continue
            records.append((lineno, obj))
    return records


def _require(obj: dict, key: str, path: Path, lineno: int):
    if key not in obj:
        raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
    return obj[key]


def _manifest_line(fmt: str, count: int) -> str:
    return json.dumps({"format": fmt, "version": 1, "count": count}, sort_keys=True)


def load_kb(path: str | Path) -> KnowledgeBase:
    """Load a knowledge base from a directory holding kb.jsonl + tweets.jsonl.

    ``path`` may also point directly at kb.jsonl; tweets.jsonl is read from
    the same directory. Unknown JSON fields are ignored.
    """
    path = Path(path)
    base = path if path.is_dir() else path.parent
    kb_path = base / KB_FILE
    tweets_path = base / TWEETS_FILE

    kb = KnowledgeBase()
    for lineno, obj in _read_jsonl(tweets_path, "tweets"):
        tweet = Tweet(
            id=str(_require(obj, "id", tweets_path, lineno)),
            author=str(_require(obj, "author", tweets_path, lineno)),
            text=str(_require(obj, "text", tweets_path, lineno)),
            image_ref=obj.get("image"),
            is_retweet=bool(obj.get("retweet", False)),
        )
        if not tweet.id:
            raise CorpusError(f"{tweets_path}:{lineno}: empty tweet id")
        if tweet.id in kb.tweets:
            raise CorpusError(f"{tweets_path}:{lineno}: duplicate tweet id {tweet.id!r}")
        kb.tweets[tweet.id] = tweet

    for lineno, obj in _read_jsonl(kb_path, "kb"):
        entity = Entity(
            screen_name=str(_require(obj, "screen_name", kb_path, lineno)),
            user_name=str(_require(obj, "user_name", kb_path, lineno)),
            kind=str(_require(obj, "kind", kb_path, lineno)),
            followers=int(_require(obj, "followers", kb_path, lineno)),
            friends=int(_require(obj, "friends", kb_path, lineno)),
            tweet_count=int(_require(obj, "tweet_count", kb_path, lineno)),
            timeline=tuple(str(t) for t in _require(obj, "timeline", kb_path, lineno)),
        )
        if entity.screen_name in kb.entities:
            raise CorpusError(
                f"{kb_path}:{lineno}: duplicate screen name {entity.screen_name!r}"
            )
        for tid in entity.timeline:
            if tid not in kb.tweets:
                raise CorpusError(
                    f"{kb_path}:{lineno}: entity {entity.screen_name!r} references "
                    f"unknown timeline tweet {tid!r}"
                )
        kb.entities[entity.screen_name] = entity
    return kb


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    """Write kb.jsonl + tweets.jsonl under ``path`` (a directory).

    Output is deterministic: entities sorted by screen name, tweets by id,
    keys sorted inside each record. Saving the same KB twice is byte-identical.
    """
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)

    lines = [_manifest_line("tweets", len(kb.tweets))]
    for tid in sorted(kb.tweets):
        t = kb.tweets[tid]
        rec = {"id": t.id, "author": t.author, "text": t.text, "retweet": t.is_retweet}
        if t.image_ref is not None:
            rec["image"] = t.image_ref
        lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    (base / TWEETS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [_manifest_line("kb", len(kb.entities))]
    for name in sorted(kb.entities):
        e = kb.entities[name]
        rec = {
            "screen_name": e.screen_name,
            "user_name": e.user_name,
            "kind": e.kind,
            "followers": e.followers,
            "friends": e.friends,
            "tweet_count": e.tweet_count,
            "timeline": list(e.timeline),
        }
        lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    (base / KB_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mentions(path: str | Path) -> list[MentionRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / MENTIONS_FILE
    out = []
    seen: set[tuple[str, str]] = set()
    for lineno, obj in _read_jsonl(path, "mentions"):
        rec = MentionRecord(
            mention=tuple(str(w) for w in _require(obj, "mention", path, lineno)),
            tweet_id=str(_require(obj, "tweet_id", path, lineno)),
            gold=str(_require(obj, "gold", path, lineno)),
            split=obj.get("split"),
        )
        if rec.key() in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate mention {rec.key()}")
        seen.add(rec.key())
        out.append(rec)
    return out


def save_mentions(mentions: list[MentionRecord], path: str | Path) -> None:
    path = Path(path)
    if path.is_dir():
        path = path / MENTIONS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_manifest_line("mentions", len(mentions))]
    for m in mentions:
        rec = {"mention": list(m.mention), "tweet_id": m.tweet_id, "gold": m.gold}
        if m.split is not None:
            rec["split"] = m.split
        lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def validate_kb(kb: KnowledgeBase, mentions: list[MentionRecord] | tuple = ()) -> list[str]:
    """Check every KB (and, optionally, mention) invariant.

    Returns a list of human-readable violations, empty iff the KB is valid.
    Violations are data, not errors: the function never raises on bad content.
    """
    violations = []

    for tid, tweet in kb.tweets.items():
        if not tweet.id:
            violations.append(f"tweet {tid!r}: empty id")
        elif tweet.id != tid:
            violations.append(f"tweet {tid!r}: id field {tweet.id!r} does not match key")
        if not tweet.text.strip():
            violations.append(f"tweet {tid!r}: empty text")

    for name, e in kb.entities.items():
        if not e.screen_name:
            violations.append(f"entity {name!r}: empty screen name")
        elif e.screen_name != name:
            violations.append(f"entity {name!r}: screen_name field does not match key")
        if e.kind not in ENTITY_KINDS:
            violations.append(f"entity {name!r}: unknown kind {e.kind!r}")
        for label, count in (("followers", e.followers), ("friends", e.friends),
                             ("tweet_count", e.tweet_count)):
            if count < 0:
                violations.append(f"entity {name!r}: negative {label} ({count})")
        for tid in e.timeline:
            tweet = kb.tweets.get(tid)
            if tweet is None:
                violations.append(f"entity {name!r}: timeline tweet {tid!r} does not exist")
                continue
            if tweet.author != name:
                violations.append(
                    f"entity {name!r}: timeline tweet {tid!r} is authored by {tweet.author!r}"
                )
            if tweet.image_ref is None:
                violations.append(f"entity {name!r}: timeline tweet {tid!r} has no image")
            if tweet.is_retweet:
                violations.append(f"entity {name!r}: timeline tweet {tid!r} is a retweet")

    for m in mentions:
        label = f"mention {m.key()}"
        if not m.mention:
            violations.append(f"{label}: empty mention tokens")
        gold = kb.entities.get(m.gold)
        if gold is None:
            violations.append(f"{label}: gold entity {m.gold!r} does not exist")
        host = kb.tweets.get(m.tweet_id)
        if host is None:
            violations.append(f"{label}: host tweet {m.tweet_id!r} does not exist")
            continue
        if host.image_ref is None:
            violations.append(f"{label}: host tweet has no image")
        if host.is_retweet:
            violations.append(f"{label}: host tweet is a retweet")
        if gold is not None:
            if m.tweet_id in gold.timeline:
                violations.append(
                    f"{label}: host tweet appears in the gold entity's timeline"
                )
            if host.author == m.gold:
                violations.append(f"{label}: host tweet is authored by the gold entity")

    return violations
