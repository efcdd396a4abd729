"""Synthetic benchmark construction.

Builds a Twitter-like corpus in which account names collide on purpose
(shared last names for people, shared acronyms for organizations), every
account has a hidden topic that drives its timeline text and image signal,
and mention tweets are rewritten so an ambiguous surface form replaces the
@screen_name. The result is a fully annotated linking benchmark that is a
pure function of (config, seed).
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field, replace

import numpy as np

from . import candgen
from .corpus import DatasetSplit, Entity, KnowledgeBase, MentionRecord, Tweet


class ForgeError(Exception):
    """Configuration cannot be realized (pool exhausted, infeasible split...)."""


DEFAULT_FIRST_NAMES = (
    "Ava", "Liam", "Noah", "Emma", "Mia", "Lucas", "Sofia", "Ethan", "Isla", "Mason",
    "Zoe", "Caleb", "Ruby", "Owen", "Nina", "Felix", "Clara", "Hugo", "Ivy", "Jonas",
    "Lena", "Marco", "Nadia", "Oscar", "Petra", "Quinn", "Rosa", "Samir", "Tara", "Umar",
    "Vera", "Wade", "Ximena", "Yusuf", "Zara", "Arno", "Bella", "Cyrus", "Dina", "Elio",
)

DEFAULT_LAST_NAMES = (
    "Ng", "Chen", "Patel", "Okafor", "Silva", "Haddad", "Kim", "Novak", "Reyes", "Sato",
    "Ter", "Umba", "Vasquez", "Weber", "Xu", "Yilmaz", "Zhou", "Abara", "Bakker", "Costa",
    "Duarte", "Eriksen", "Farah", "Gupta", "Horvat", "Ishii", "Jansen", "Koval", "Lindt",
    "Moreau",
)

DEFAULT_ACRONYM_ROOTS = (
    "NPA", "WDC", "AMT", "GRF", "KLX", "OSB", "PVT", "QRD", "SNF", "TBV",
    "UMC", "VRL", "WPX", "YDS", "ZKT", "BRN", "CQF", "DLM", "FHG", "HJP",
)

_ORG_SUFFIXES = ("hq", "org", "news", "live", "team", "global", "daily", "labs",
                 "media", "group", "intl", "net")

_LEADING_HONORIFICS = {"dr", "mr", "ms", "mrs", "prof", "sir"}
_TRAILING_HONORIFICS = {"jr", "sr", "ii", "iii", "iv", "phd", "md", "esq"}

TOPIC_VOCAB = tuple(
    base + suffix
    for base in (
        "quantum", "orbital", "sourdough", "peloton", "ledger", "sonata", "compost",
        "gambit", "glacier", "montage", "neural", "lunar", "ferment", "sprint",
        "dividend", "chord", "pollen", "endgame", "permafrost", "celluloid",
        "tensor", "rover", "brioche", "cadence", "futures", "tempo", "mulch",
        "zugzwang", "icecore", "storyboard", "gradient", "telescope", "galette",
        "derailleur", "hedging", "livret", "trellis", "castling", "moraine", "reel",
    )
    for suffix in ("", "s", "ing", "craft", "lab", "works")
)

FILLER_WORDS = (
    "today", "again", "finally", "honestly", "quietly", "somehow", "meanwhile",
    "anyway", "lately", "still", "almost", "maybe", "truly", "slowly", "weekly",
)

TIMELINE_TEMPLATES = (
    "{t0} {t1} session notes {f0}",
    "deep dive on {t0} {t1} {t2}",
    "{t0} progress and {t1} experiments",
    "drafting the {t0} {t1} writeup",
    "notes on {t0} {t1} and {t2}",
    "{t0} workshop then {t1} practice {f0}",
    "revisiting {t0} {t1} basics",
    "{t0} {t1} {t2} roundup {f0}",
    "slow morning of {t0} {t1} reading",
    "shipped the {t0} {t1} milestone",
)

MENTION_TEMPLATES = (
    "great {t0} {t1} talk by {m} {f0}",
    "{m} on {t0} and {t1} today",
    "congrats {m} for the {t0} {t1} award",
    "enjoyed that {t0} {t1} thread from {m}",
    "{m} posted sharp {t0} {t1} takes",
    "big {t0} {t1} announcement from {m}",
    "{f0} rewatching the {m} {t0} {t1} interview",
    "loved how {m} framed {t0} {t1} yesterday",
)

_SHORT_MENTION_TEMPLATES = ("{m} thanks", "{m} same", "cheers {m}")


@dataclass(frozen=True)
class ForgeConfig:
    """Knobs for corpus synthesis; fully determines output together with seed."""

    n_person_entities: int = 16
    n_org_entities: int = 4
    collision_factor: int = 16
    first_names: tuple[str, ...] = DEFAULT_FIRST_NAMES
    last_names: tuple[str, ...] = DEFAULT_LAST_NAMES
    acronym_roots: tuple[str, ...] = DEFAULT_ACRONYM_ROOTS
    timeline_mu: float = math.log(10.0)
    timeline_sigma: float = 0.6
    timeline_min: int = 4
    timeline_max: int = 48
    mention_tweets_min: int = 24
    mention_tweets_max: int = 32
    # how strongly mention volume follows follower counts; 0 = balanced,
    # 1 = fully proportional (popular accounts get mentioned more)
    pop_mention_correlation: float = 0.85
    image_snr: float = 0.6
    topic_dim: int = 8
    topic_words_per_entity: int = 8
    group_shared_words: int = 2
    confuser_prob: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.n_person_entities < 0 or self.n_org_entities < 0:
            raise ForgeError("entity counts must be nonnegative")
        if self.n_person_entities + self.n_org_entities == 0:
            raise ForgeError("need at least one entity")
        if self.collision_factor < 2:
            raise ForgeError("collision factor must be at least 2")
        if not (0 < self.timeline_min <= self.timeline_max):
            raise ForgeError("timeline bounds must satisfy 0 < min <= max")
        if not (0 < self.mention_tweets_min <= self.mention_tweets_max):
            raise ForgeError("mention tweet range must satisfy 0 < min <= max")
        if self.image_snr < 0:
            raise ForgeError("image snr must be nonnegative")
        if not 0 <= self.group_shared_words < self.topic_words_per_entity:
            raise ForgeError("group_shared_words must be smaller than the topic pool")
        if not 0 <= self.pop_mention_correlation <= 1:
            raise ForgeError("pop_mention_correlation must be in [0, 1]")

    @classmethod
    def paper_scale(cls, n_person: int = 960, n_org: int = 240, seed: int = 0) -> "ForgeConfig":
        """Distribution parameters matched to the reference corpus statistics
        (timeline mean ~128, median ~52, range 1..3117)."""
        return cls(
            n_person_entities=n_person,
            n_org_entities=n_org,
            collision_factor=4,
            last_names=extend_last_names(max(1, n_person // 4)),
            acronym_roots=extend_acronyms(max(1, n_org // 4)),
            timeline_mu=math.log(52.0),
            timeline_sigma=1.3416,
            timeline_min=1,
            timeline_max=3117,
            mention_tweets_min=1,
            mention_tweets_max=3,
            seed=seed,
        )


def extend_last_names(n_needed: int) -> tuple[str, ...]:
    """Deterministically grow the last-name pool with hyphenated pairs."""
    pool = list(DEFAULT_LAST_NAMES)
    for a in DEFAULT_LAST_NAMES:
        for b in DEFAULT_LAST_NAMES:
            if len(pool) >= n_needed:
                return tuple(pool)
            if a != b:
                pool.append(f"{a}-{b}")
    return tuple(pool)


def extend_acronyms(n_needed: int) -> tuple[str, ...]:
    pool = list(DEFAULT_ACRONYM_ROOTS)
    letters = string.ascii_uppercase
    for a in letters:
        for b in letters:
            for c in letters:
                if len(pool) >= n_needed:
                    return tuple(pool)
                acro = a + b + c
                if acro not in DEFAULT_ACRONYM_ROOTS:
                    pool.append(acro)
    return tuple(pool)


@dataclass(frozen=True)
class AmbiguityGroup:
    surface: str
    members: tuple[str, ...]


@dataclass
class ForgeResult:
    kb: KnowledgeBase
    raw_tweets: list[Tweet]
    topics: dict[str, np.ndarray]
    planted_groups: list[AmbiguityGroup]


@dataclass
class MentionGenResult:
    mentions: list[MentionRecord]
    host_tweets: list[Tweet]
    report: dict[str, int]


@dataclass
class ForgeDataset:
    """Everything one forge run produces, with host tweets merged into the KB."""

    kb: KnowledgeBase
    mentions: list[MentionRecord]
    split: DatasetSplit
    topics: dict[str, np.ndarray]
    planted_groups: list[AmbiguityGroup]
    report: dict[str, int]


# --------------------------------------------------------------------------
# corpus synthesis


def _group_sizes(total: int, factor: int) -> list[int]:
    if total == 0:
        return []
    if total < factor:  # one smaller group rather than none
        return [total]
    n_groups = total // factor
    sizes = [factor] * n_groups
    for k in range(total - factor * n_groups):
        sizes[k % n_groups] += 1
    return sizes


def sample_timeline_sizes(config: ForgeConfig, rng: np.random.Generator, n: int) -> list[int]:
    """Log-normal timeline lengths, rounded and clamped to the configured range."""
    draws = rng.lognormal(mean=config.timeline_mu, sigma=config.timeline_sigma, size=n)
    return [int(min(max(round(x), config.timeline_min), config.timeline_max)) for x in draws]


def _choose(rng: np.random.Generator, pool, k: int, distinct: bool = True) -> list:
    idx = rng.choice(len(pool), size=k, replace=not distinct)
    return [pool[int(j)] for j in np.atleast_1d(idx)]


def _fill_template(template: str, rng: np.random.Generator, topic_pool, mention: str | None = None) -> str:
    text = template
    for slot in ("{t0}", "{t1}", "{t2}"):
        if slot in text:
            text = text.replace(slot, topic_pool[int(rng.integers(len(topic_pool)))])
    for slot in ("{f0}", "{f1}"):
        if slot in text:
            text = text.replace(slot, FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))])
    if mention is not None:
        text = text.replace("{m}", mention)
    return text


def synth_corpus(config: ForgeConfig) -> ForgeResult:
    """Generate the KB (entities + timelines) and the raw mention-bearing tweets.

    Persons are "First Last" with planted last-name collisions; organizations
    carry a bare acronym as user name, several per acronym. Each entity owns a
    hidden unit topic vector and a pool of topic words that both its timeline
    text and (via the feature oracle) its image vectors are drawn from.
    """
    seq = np.random.SeedSequence(config.seed)
    rng_names, rng_pop, rng_topics, rng_timeline, rng_mention = (
        np.random.default_rng(s) for s in seq.spawn(5)
    )

    person_sizes = _group_sizes(config.n_person_entities, config.collision_factor)
    org_sizes = _group_sizes(config.n_org_entities, config.collision_factor)
    if len(person_sizes) > len(config.last_names):
        raise ForgeError(
            f"last-name pool too small: need {len(person_sizes)} surfaces, "
            f"have {len(config.last_names)}"
        )
    if len(org_sizes) > len(config.acronym_roots):
        raise ForgeError(
            f"acronym pool too small: need {len(org_sizes)} surfaces, "
            f"have {len(config.acronym_roots)}"
        )
    if person_sizes and max(person_sizes) > len(config.first_names):
        raise ForgeError("first-name pool too small for the largest collision group")

    entities: list[Entity] = []
    planted: list[AmbiguityGroup] = []
    used_screens: set[str] = set()

    def unique_screen(base: str) -> str:
        name = "".join(ch for ch in base if ch.isalnum() or ch == "_")
        candidate = name
        k = 2
        while candidate in used_screens:
            candidate = f"{name}{k}"
            k += 1
        used_screens.add(candidate)
        return candidate

    last_names = _choose(rng_names, config.last_names, len(person_sizes))
    for last, size in zip(last_names, person_sizes):
        firsts = _choose(rng_names, config.first_names, size)
        members = []
        for first in firsts:
            user_name = f"{first} {last}"
            roll = rng_names.random()
            if roll < 0.15:
                user_name = f"Dr {user_name}"
            elif roll < 0.25:
                user_name = f"{user_name} PhD"
            screen = unique_screen(f"{first}{last}")
            entities.append(
                Entity(screen_name=screen, user_name=user_name, kind="person",
                       followers=0, friends=0, tweet_count=0)
            )
            members.append(screen)
        planted.append(AmbiguityGroup(surface=_surface_key(last), members=tuple(sorted(members))))

    acros = _choose(rng_names, config.acronym_roots, len(org_sizes))
    for acro, size in zip(acros, org_sizes):
        members = []
        for j in range(size):
            screen = unique_screen(f"{acro}_{_ORG_SUFFIXES[j % len(_ORG_SUFFIXES)]}")
            entities.append(
                Entity(screen_name=screen, user_name=acro, kind="organization",
                       followers=0, friends=0, tweet_count=0)
            )
            members.append(screen)
        planted.append(AmbiguityGroup(surface=_surface_key(acro), members=tuple(sorted(members))))

    # hidden topics and per-entity word pools; colliding entities share a few
    # words so the text signal has a ceiling below 1.0
    topics: dict[str, np.ndarray] = {}
    word_pools: dict[str, list[str]] = {}
    for e in entities:
        vec = rng_topics.standard_normal(config.topic_dim)
        topics[e.screen_name] = vec / np.linalg.norm(vec)
    for group in planted:
        shared = _choose(rng_topics, TOPIC_VOCAB, config.group_shared_words)
        own = config.topic_words_per_entity - config.group_shared_words
        for screen in group.members:
            word_pools[screen] = shared + _choose(rng_topics, TOPIC_VOCAB, own)

    # popularity counts, long-tailed; friends and tweet volume track followers
    # the way they do for real accounts
    sized = []
    timeline_sizes = sample_timeline_sizes(config, rng_timeline, len(entities))
    for e, tl_size in zip(entities, timeline_sizes):
        followers = int(rng_pop.lognormal(mean=math.log(400.0), sigma=1.6))
        friends = int(followers ** 0.75 * rng_pop.lognormal(mean=0.0, sigma=0.35))
        tweet_count = tl_size + int(
            followers ** 0.6 * rng_pop.lognormal(mean=0.0, sigma=0.3)
        )
        sized.append((replace(e, followers=followers, friends=friends,
                              tweet_count=tweet_count), tl_size))

    kb = KnowledgeBase()
    seq_id = 0
    final_entities = []
    for e, tl_size in sized:
        pool = word_pools[e.screen_name]
        timeline = []
        for _ in range(tl_size):
            seq_id += 1
            tid = f"t{seq_id:07d}"
            template = TIMELINE_TEMPLATES[int(rng_timeline.integers(len(TIMELINE_TEMPLATES)))]
            tweet = Tweet(
                id=tid,
                author=e.screen_name,
                text=_fill_template(template, rng_timeline, pool),
                image_ref=f"im{seq_id:07d}",
                is_retweet=False,
            )
            kb.tweets[tid] = tweet
            timeline.append(tid)
        final_entities.append(replace(e, timeline=tuple(timeline)))
    for e in final_entities:
        kb.entities[e.screen_name] = e

    # raw mention-bearing tweets, with injected noise cases; mention volume
    # tracks follower counts so the popularity prior carries real signal
    raw_tweets: list[Tweet] = []
    screens = [e.screen_name for e in final_entities]
    weights = np.array([max(e.followers, 1) for e in final_entities], dtype=np.float64)
    share = weights / weights.sum()
    total_target = len(final_entities) * (config.mention_tweets_min
                                          + config.mention_tweets_max) / 2.0
    corr = config.pop_mention_correlation
    for e, pop_share in zip(final_entities, share):
        balanced = int(rng_mention.integers(config.mention_tweets_min,
                                            config.mention_tweets_max + 1))
        n_mentions = round((1.0 - corr) * balanced + corr * total_target * pop_share)
        for _ in range(n_mentions):
            seq_id += 1
            tid = f"t{seq_id:07d}"
            others = [s for s in screens if s != e.screen_name]
            author = others[int(rng_mention.integers(len(others)))] if others else e.screen_name
            pool = list(word_pools[e.screen_name])
            if rng_mention.random() < config.confuser_prob:
                confuser = screens[int(rng_mention.integers(len(screens)))]
                pool.append(word_pools[confuser][int(rng_mention.integers(len(word_pools[confuser])))])

            handle = f"@{e.screen_name}"
            roll = rng_mention.random()
            image_ref: str | None = f"im{seq_id:07d}"
            is_retweet = False
            if roll < 0.08:
                image_ref = None
                template = MENTION_TEMPLATES[int(rng_mention.integers(len(MENTION_TEMPLATES)))]
                text = _fill_template(template, rng_mention, pool, mention=handle)
            elif roll < 0.13:
                is_retweet = True
                template = MENTION_TEMPLATES[int(rng_mention.integers(len(MENTION_TEMPLATES)))]
                text = _fill_template(template, rng_mention, pool, mention=handle)
            elif roll < 0.21:
                # recipient list: the handle sits inside a leading @-run
                extra = [s for s in screens if s != e.screen_name][
                    int(rng_mention.integers(max(1, len(screens) - 1)))
                ]
                tail = _fill_template("thanks for the {t0} chat {f0}", rng_mention, pool)
                text = f"@{extra} {handle} {tail}"
            elif roll < 0.25:
                template = _SHORT_MENTION_TEMPLATES[
                    int(rng_mention.integers(len(_SHORT_MENTION_TEMPLATES)))
                ]
                text = _fill_template(template, rng_mention, pool, mention=handle)
            elif roll < 0.29:
                author = e.screen_name  # self mention, rejected downstream
                template = MENTION_TEMPLATES[int(rng_mention.integers(len(MENTION_TEMPLATES)))]
                text = _fill_template(template, rng_mention, pool, mention=handle)
            else:
                template = MENTION_TEMPLATES[int(rng_mention.integers(len(MENTION_TEMPLATES)))]
                text = _fill_template(template, rng_mention, pool, mention=handle)

            raw_tweets.append(
                Tweet(id=tid, author=author, text=text, image_ref=image_ref,
                      is_retweet=is_retweet)
            )

    planted = [g for g in planted if len(g.members) >= 2]
    planted.sort(key=lambda g: g.surface)
    return ForgeResult(kb=kb, raw_tweets=raw_tweets, topics=topics, planted_groups=planted)


# --------------------------------------------------------------------------
# ambiguity analysis


def _strip_punct(token: str) -> str:
    return token.strip(string.punctuation)


def _surface_key(surface: str) -> str:
    return " ".join(candgen.normalize_name(surface))


def last_name_of(user_name: str) -> str | None:
    """Final whitespace token after trimming honorifics; None if nothing is left."""
    tokens = [t for t in user_name.split() if _strip_punct(t)]
    while tokens and _strip_punct(tokens[0]).casefold() in _LEADING_HONORIFICS:
        tokens.pop(0)
    while tokens and _strip_punct(tokens[-1]).casefold() in _TRAILING_HONORIFICS:
        tokens.pop()
    if not tokens:
        return None
    return _strip_punct(tokens[-1])


def acronym_of(user_name: str) -> str | None:
    """The user name itself when all-caps, else initials of capitalized words."""
    stripped = user_name.strip()
    if not stripped:
        return None
    condensed = stripped.replace(" ", "").replace(".", "")
    if condensed.isupper():
        return condensed
    initials = "".join(
        w[0] for w in (_strip_punct(t) for t in stripped.split()) if w and w[0].isupper()
    )
    return initials if initials else None


def surface_form(entity: Entity) -> str | None:
    """The ambiguous replacement text for an entity's screen name."""
    if entity.kind == "person":
        return last_name_of(entity.user_name)
    return acronym_of(entity.user_name)


def select_ambiguous_entities(kb: KnowledgeBase) -> list[AmbiguityGroup]:
    """Group persons by last name and organizations by acronym; drop singletons."""
    buckets: dict[tuple[str, str], list[str]] = {}
    for name in sorted(kb.entities):
        e = kb.entities[name]
        surface = surface_form(e)
        if not surface:
            continue
        buckets.setdefault((e.kind, _surface_key(surface)), []).append(name)
    groups = [
        AmbiguityGroup(surface=key, members=tuple(sorted(members)))
        for (_, key), members in buckets.items()
        if len(members) >= 2
    ]
    groups.sort(key=lambda g: (g.surface, g.members))
    return groups


def filter_inactive(entities: list[Entity]) -> list[Entity]:
    """Hook mirroring the source pipeline's inactive-account filter.

    Synthetic accounts have no activity timestamps, so this is a no-op."""
    return entities


def filter_unverified(entities: list[Entity]) -> list[Entity]:
    """Hook mirroring the source pipeline's verified-account filter; no-op here."""
    return entities


# --------------------------------------------------------------------------
# mention generation


def filter_noise(tweet: Tweet, mention_pos: int) -> bool:
    """Drop recipient-list mentions and near-empty remainders.

    A mention inside a leading run of two or more @-tokens is rejected, as is
    any tweet whose text has fewer than 3 tokens once the mention is removed.
    """
    tokens = tweet.text.split()
    if not (0 <= mention_pos < len(tokens)):
        raise ValueError(f"mention position {mention_pos} out of range")
    run = 0
    for tok in tokens:
        if tok.startswith("@"):
            run += 1
        else:
            break
    if run >= 2 and mention_pos < run:
        return False
    if len(tokens) - 1 < 3:
        return False
    return True


def _rewrite_token(token: str, surface: str) -> str:
    """Replace the @handle inside a raw token, keeping trailing punctuation."""
    core = token[1:]
    trail = ""
    while core and not (core[-1].isalnum() or core[-1] == "_"):
        trail = core[-1] + trail
        core = core[:-1]
    return surface + trail


def generate_mentions(kb: KnowledgeBase, raw_tweets: list[Tweet]) -> MentionGenResult:
    """Turn raw @screen_name tweets into ambiguous mention records.

    For each qualifying tweet and each mentioned KB entity, the @token is
    replaced by the entity's surface form (last name or acronym) and a record
    with that gold entity is emitted. Tweets without images, retweets,
    self-mentions, and noise-filtered positions are skipped and counted.
    Host tweets (rewritten) are returned for inclusion in the corpus.
    """
    by_fold: dict[str, str] = {}
    for screen in sorted(kb.entities):
        by_fold.setdefault(screen.casefold(), screen)

    report = {
        "raw_tweets": len(raw_tweets),
        "matched_handles": 0,
        "unmatched_handles": 0,
        "tweets_without_kb_mention": 0,
        "skipped_no_image": 0,
        "skipped_retweet": 0,
        "skipped_self_mention": 0,
        "skipped_noise": 0,
        "skipped_no_surface": 0,
        "emitted": 0,
        "host_tweets": 0,
    }
    mentions: list[MentionRecord] = []
    host_tweets: list[Tweet] = []

    for tweet in raw_tweets:
        tokens = tweet.text.split()
        matches: list[tuple[int, str]] = []
        for pos, tok in enumerate(tokens):
            if not tok.startswith("@") or len(tok) < 2:
                continue
            handle = _strip_punct(tok[1:]).casefold()
            screen = by_fold.get(handle)
            if screen is None:
                report["unmatched_handles"] += 1
            else:
                report["matched_handles"] += 1
                matches.append((pos, screen))
        if not matches:
            report["tweets_without_kb_mention"] += 1
            continue
        if tweet.image_ref is None:
            report["skipped_no_image"] += 1
            continue
        if tweet.is_retweet:
            report["skipped_retweet"] += 1
            continue

        surviving: list[tuple[int, str, str]] = []
        for pos, screen in matches:
            if screen == tweet.author:
                report["skipped_self_mention"] += 1
                continue
            surface = surface_form(kb.entities[screen])
            if not surface:
                report["skipped_no_surface"] += 1
                continue
            if not filter_noise(tweet, pos):
                report["skipped_noise"] += 1
                continue
            surviving.append((pos, screen, surface))
        if not surviving:
            continue

        new_tokens = list(tokens)
        for pos, screen in matches:
            surface = surface_form(kb.entities[screen])
            if surface:
                new_tokens[pos] = _rewrite_token(tokens[pos], surface)
        host = replace(tweet, text=" ".join(new_tokens))
        host_tweets.append(host)
        report["host_tweets"] += 1
        for pos, screen, surface in surviving:
            mentions.append(
                MentionRecord(mention=tuple(surface.split()), tweet_id=tweet.id, gold=screen)
            )
            report["emitted"] += 1

    return MentionGenResult(mentions=mentions, host_tweets=host_tweets, report=report)


# --------------------------------------------------------------------------
# splitting


def split_mentions(mentions: list[MentionRecord], seed: int) -> DatasetSplit:
    """40/20/40 split with at least half the test mentions on unseen entities.

    Records sharing a host tweet move together. A random subset of entities is
    reserved exclusively for test until the unseen quota is reachable, then
    the remaining tweet groups are filled at random. Deterministic per seed.
    """
    if len(mentions) < 10:
        raise ForgeError(f"need at least 10 mentions to split, got {len(mentions)}")
    golds = sorted({m.gold for m in mentions})
    if len(golds) < 4:
        raise ForgeError(f"need at least 4 distinct gold entities, got {len(golds)}")

    n = len(mentions)
    n_test = round(0.4 * n)
    n_valid = round(0.2 * n)

    groups: dict[str, list[MentionRecord]] = {}
    for m in mentions:
        groups.setdefault(m.tweet_id, []).append(m)
    group_ids = sorted(groups)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F11]))
    entity_order = list(golds)
    rng.shuffle(entity_order)
    fill_order = list(range(len(group_ids)))
    rng.shuffle(fill_order)

    per_entity = {g: 0 for g in golds}
    for m in mentions:
        per_entity[m.gold] += 1

    # entities that fit inside the test section, in shuffled order; oversized
    # ones (very popular accounts) stay shareable between sections
    reservable: list[str] = []
    running = 0
    for screen in entity_order:
        if running + per_entity[screen] <= n_test:
            reservable.append(screen)
            running += per_entity[screen]

    problems: list[str] = ["no entity subset can be reserved for the test set"]
    for n_reserved in range(1, len(reservable) + 1):
        reserved = set(reservable[:n_reserved])
        test: list[MentionRecord] = []
        rest: set[str] = set()
        for gid in group_ids:
            if any(m.gold in reserved for m in groups[gid]):
                test.extend(groups[gid])
            else:
                rest.add(gid)
        if len(test) > n_test + 1:
            break

        valid: list[MentionRecord] = []
        train: list[MentionRecord] = []
        for k in fill_order:
            gid = group_ids[k]
            if gid not in rest:
                continue
            block = groups[gid]
            if len(test) + len(block) <= n_test:
                test.extend(block)
            elif len(valid) + len(block) <= n_valid:
                valid.extend(block)
            else:
                train.extend(block)

        split = DatasetSplit(train=tuple(train), valid=tuple(valid), test=tuple(test))
        problems = check_split(split, n)
        if not problems:
            return split
    raise ForgeError("split constraints infeasible: " + "; ".join(problems))


def check_split(split: DatasetSplit, n_input: int) -> list[str]:
    """Independent recount of the split contract; empty list when satisfied."""
    problems = []
    n = len(split.train) + len(split.valid) + len(split.test)
    if n != n_input:
        problems.append(f"split covers {n} of {n_input} mentions")
    for name, frac in (("train", 0.4), ("valid", 0.2), ("test", 0.4)):
        size = len(getattr(split, name))
        if abs(size - frac * n_input) > 1.0:
            problems.append(f"{name} has {size} records, expected {frac * n_input:.1f} +-1")
    ids = [set(m.tweet_id for m in sec) for sec in (split.train, split.valid, split.test)]
    if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
        problems.append("sections share tweet ids")
    seen = {m.gold for m in split.train} | {m.gold for m in split.valid}
    if split.test:
        unseen = sum(1 for m in split.test if m.gold not in seen)
        if unseen < 0.5 * len(split.test):
            problems.append(
                f"only {unseen}/{len(split.test)} test mentions have unseen entities"
            )
    return problems


# --------------------------------------------------------------------------
# statistics


PAPER_TIMELINE_STATS = {"mean": 127.9, "median": 52, "max": 3117, "min": 1, "stddev": 222.2}
PAPER_CANDIDATE_STATS = {"mean": 16.5, "median": 16, "max": 67, "min": 2, "stddev": 12}

_STAT_COLUMNS = ("Mean", "Median", "Max", "Min", "StdDev")


@dataclass
class DatasetStats:
    rows: dict[str, dict[str, float]]
    reference: dict[str, dict[str, float]]

    def to_text(self) -> str:
        lines = ["dataset statistics", ""]
        for name, ref in self.reference.items():
            ref_txt = "  ".join(f"{c}={ref[c.lower()]}" for c in _STAT_COLUMNS)
            lines.append(f"# reference ({name}): {ref_txt}")
        lines.append("")
        header = f"{'row':<28}" + "".join(f"{c:>12}" for c in _STAT_COLUMNS)
        lines.append(header)
        for name, row in self.rows.items():
            lines.append(
                f"{name:<28}" + "".join(f"{row[c.lower()]:>12.2f}" for c in _STAT_COLUMNS)
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["row," + ",".join(c.lower() for c in _STAT_COLUMNS)]
        for name, row in self.rows.items():
            lines.append(name + "," + ",".join(repr(row[c.lower()]) for c in _STAT_COLUMNS))
        return "\n".join(lines) + "\n"


def _describe(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {c.lower(): float("nan") for c in _STAT_COLUMNS}
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "max": float(arr.max()),
        "min": float(arr.min()),
        "stddev": float(arr.std()),
    }


def dataset_stats(kb: KnowledgeBase, mentions: list[MentionRecord]) -> DatasetStats:
    """Timeline-size and candidate-set-size distributions, Table-style."""
    timeline_sizes = [float(len(kb.entities[n].timeline)) for n in sorted(kb.entities)]
    candidate_sizes = [float(len(candgen.candidates(m, kb))) for m in mentions]
    return DatasetStats(
        rows={
            "tweets_per_timeline": _describe(timeline_sizes),
            "candidates_per_mention": _describe(candidate_sizes),
        },
        reference={
            "tweets_per_timeline": PAPER_TIMELINE_STATS,
            "candidates_per_mention": PAPER_CANDIDATE_STATS,
        },
    )


# --------------------------------------------------------------------------
# sidecar persistence


def save_topics(topics: dict[str, np.ndarray], path) -> None:
    """Write the hidden-topic sidecar: one {"screen_name", "topic"} per line."""
    import json
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps({"screen_name": name, "topic": topics[name].tolist()})
        for name in sorted(topics)
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_topics(path) -> dict[str, np.ndarray]:
    import json
    from pathlib import Path

    topics = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        topics[obj["screen_name"]] = np.asarray(obj["topic"], dtype=np.float64)
    return topics


# --------------------------------------------------------------------------
# one-call pipeline


def forge_dataset(config: ForgeConfig) -> ForgeDataset:
    """synth_corpus + generate_mentions + split, with host tweets merged in."""
    result = synth_corpus(config)
    gen = generate_mentions(result.kb, result.raw_tweets)
    kb = result.kb
    for tweet in gen.host_tweets:
        kb.tweets[tweet.id] = tweet
    split = split_mentions(gen.mentions, seed=config.seed)
    return ForgeDataset(
        kb=kb,
        mentions=gen.mentions,
        split=split,
        topics=result.topics,
        planted_groups=result.planted_groups,
        report=gen.report,
    )
