import numpy as np
import pytest

from melkit import bm25 as bm
from melkit import candgen
from melkit import features as ft
from melkit import forge as fg
from melkit.corpus import Entity, KnowledgeBase, MentionRecord, Tweet


def make_entity(screen, user, kind="person", followers=10, friends=5, tweets=3,
                timeline=()):
    return Entity(screen_name=screen, user_name=user, kind=kind, followers=followers,
                  friends=friends, tweet_count=tweets, timeline=tuple(timeline))


def make_tweet(tid, author, text, image=None, retweet=False):
    return Tweet(id=tid, author=author, text=text, image_ref=image, is_retweet=retweet)


@pytest.fixture
def tiny_kb():
    """Two colliding persons plus one unrelated account, one timeline tweet each."""
    kb = KnowledgeBase()
    for k, (screen, user) in enumerate(
        [("AndrewYNg", "Andrew Ng"), ("AliceNg", "Alice Ng"), ("BobLee", "Bob Lee")]
    ):
        tid = f"tl{k}"
        kb.tweets[tid] = make_tweet(tid, screen, f"post number {k} about things", image=f"im{k}")
        kb.entities[screen] = make_entity(screen, user, followers=100 * (k + 1),
                                          timeline=[tid])
    return kb


@pytest.fixture(scope="session")
def desk():
    """One forged desk corpus + features + index, shared across test modules."""
    config = fg.ForgeConfig(seed=1)
    dataset = fg.forge_dataset(config)
    store = ft.synth_features(
        dataset.kb, dataset.mentions, dataset.topics,
        snr=config.image_snr, seed=1, dim_text=48, dim_image=48,
    )
    index = bm.build_index(dataset.kb)
    cands = candgen.candidate_map(dataset.mentions, dataset.kb)
    return dataset, store, index, cands
