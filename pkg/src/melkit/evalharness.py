"""Linking decisions, accuracy, and the experiment matrices.

A scorer ranks a mention's candidate set; linking takes the top candidate
(argmax), and an empty candidate set links to nothing and counts as a miss.
The run matrix evaluates a roster of scorers on the validation and test
sections and emits aligned-text and CSV tables; reference numbers from the
source experiments are carried along as annotations only, never asserted.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from . import baselines as bl
from . import bm25 as bm
from . import candgen
from .candgen import CandidateSet
from .corpus import KnowledgeBase, MentionRecord
from .fusion import FeatureContext, FusionModel, fusion_rank
from .jmel import JmelConfig, JmelParams, init_jmel

PAPER_REFERENCE = {
    "Popularity": (0.369, 0.590),
    "BM25": (0.415, 0.433),
    "S2V-uni": (0.482, 0.513),
    "S2V-bi": (0.487, 0.523),
    "Img": (0.290, 0.299),
    "ET(S2V)": (0.495, 0.529),
    "ET(S2V+Img)": (0.507, 0.542),
    "ET(S2V+Img+Pop)": (0.585, 0.627),
    "ET(S2V+Img+Pop+BM25)": (0.654, 0.671),
    "JMEL(S2V)": (0.628, 0.724),
    "JMEL(S2V+Img)": (0.639, 0.731),
    "JMEL(S2V+Img+Pop)": (0.767, 0.776),
    "JMEL(S2V+Img+Pop+BM25)": (0.795, 0.803),
}


class Scorer:
    """Base: a named strategy that orders a mention's candidate set."""

    name = "scorer"

    def rank(self, mention: MentionRecord, base: CandidateSet) -> CandidateSet:
        raise NotImplementedError


class PopularityScorer(Scorer):
    name = "Popularity"

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb

    def rank(self, mention, base):
        return bl.popularity_rank(base, self.kb)


class Bm25Scorer(Scorer):
    name = "BM25"

    def __init__(self, ctx: FeatureContext):
        if ctx.index is None:
            raise ValueError("BM25 scorer needs an index")
        self.ctx = ctx

    def rank(self, mention, base):
        query = self.ctx.query_of_mention(mention)
        scores = {n: bm.bm25_score(query, n, self.ctx.index) for n in base.names()}
        return candgen.ranked(base, scores, self.ctx.kb)


class RawScorer(Scorer):
    """Single-modality cosine between mention and entity bundles."""

    def __init__(self, modality: str, ctx: FeatureContext):
        self.modality = modality
        self.ctx = ctx
        self.name = {"uni": "S2V-uni", "bi": "S2V-bi", "img": "Img", "s2v": "S2V"}[modality]

    def rank(self, mention, base):
        mb = self.ctx.bundle_of_mention(mention)
        scores = {
            n: bl.raw_similarity(mb, self.ctx.bundle_of_entity(n), self.modality)
            for n in base.names()
        }
        return candgen.ranked(base, scores, self.ctx.kb)


class JmelScorer(Scorer):
    """Cosine in the learned joint space."""

    def __init__(self, ctx: FeatureContext, name: str = "JMEL(S2V+Img)"):
        if ctx.jmel_params is None:
            raise ValueError("JMEL scorer needs model parameters")
        self.ctx = ctx
        self.name = name

    def rank(self, mention, base):
        j_m = self.ctx.joint_of_mention(mention)
        nm = float(np.linalg.norm(j_m))
        scores = {}
        for n in base.names():
            j_e = self.ctx.joint_of_entity(n)
            ne = float(np.linalg.norm(j_e))
            scores[n] = float(j_m @ j_e) / (nm * ne) if nm > 0 and ne > 0 else 0.0
        return candgen.ranked(base, scores, self.ctx.kb)


class FusionScorer(Scorer):
    def __init__(self, ctx: FeatureContext, model: FusionModel, name: str):
        self.ctx = ctx
        self.model = model
        self.name = name

    def rank(self, mention, base):
        return fusion_rank(mention, base, self.ctx, self.model)


class ExtraTreesScorer(Scorer):
    def __init__(self, ctx: FeatureContext, forest, mask, standardizer, name: str):
        self.ctx = ctx
        self.forest = forest
        self.mask = mask
        self.standardizer = standardizer
        self.name = name

    def rank(self, mention, base):
        return bl.extratrees_rank(
            mention, base, self.forest, self.ctx, self.mask, self.standardizer
        )


def link(mention: MentionRecord, kb: KnowledgeBase, scorer: Scorer) -> str | None:
    """Argmax of the scorer over the candidate set; None when it is empty."""
    base = candgen.candidates(mention, kb)
    if not base.candidates:
        return None
    return scorer.rank(mention, base).top()


@dataclass
class EvalResult:
    accuracy: float
    n: int
    n_correct: int
    n_empty: int


def evaluate(section, kb: KnowledgeBase, scorer: Scorer) -> EvalResult:
    """Linking accuracy over a split section; empty candidate sets are misses."""
    if not section:
        raise ValueError("cannot evaluate an empty split section")
    n_correct = 0
    n_empty = 0
    for m in section:
        predicted = link(m, kb, scorer)
        if predicted is None:
            n_empty += 1
        elif predicted == m.gold:
            n_correct += 1
    return EvalResult(
        accuracy=n_correct / len(section), n=len(section),
        n_correct=n_correct, n_empty=n_empty,
    )


def accuracy(section, kb: KnowledgeBase, scorer: Scorer) -> float:
    return evaluate(section, kb, scorer).accuracy


def accuracy_with_params(params: JmelParams, data, section: str) -> float:
    """Fast cosine-linking accuracy for one parameter set (used during training).

    Uses the precomputed bundles and candidate sets on a TrainData object;
    entity and mention joints are batch-forwarded once.
    """
    from .jmel import jmel_forward
    from .features import FeatureBundle

    mentions = getattr(data.split, section)
    if not mentions:
        raise ValueError(f"split section {section!r} is empty")
    names = sorted(data.entity_vecs)
    rows = FeatureBundle(
        u=np.stack([data.entity_vecs[n].u for n in names]),
        b=np.stack([data.entity_vecs[n].b for n in names]),
        i=np.stack([data.entity_vecs[n].i for n in names]),
    )
    joints = jmel_forward(params, rows)
    norms = np.linalg.norm(joints, axis=1)
    norms[norms == 0.0] = 1.0
    unit = joints / norms[:, None]
    unit_by_name = {n: unit[k] for k, n in enumerate(names)}

    n_correct = 0
    for m in mentions:
        cand_names = data.candidates[m.key()].names()
        if not cand_names:
            continue
        j_m = jmel_forward(params, data.mention_vecs[m.key()])
        nm = float(np.linalg.norm(j_m))
        um = j_m / nm if nm > 0 else j_m
        best = None
        for name in cand_names:
            score = float(um @ unit_by_name[name]) if nm > 0 else 0.0
            key = (-score, -data.kb.entities[name].followers, name)
            if best is None or key < best[0]:
                best = (key, name)
        if best[1] == m.gold:
            n_correct += 1
    return n_correct / len(mentions)


# ---------------------------------------------------------------------------
# experiment matrices


@dataclass
class ResultRow:
    name: str
    valid: EvalResult
    test: EvalResult
    seed: int = 0

    def paper_note(self) -> str:
        ref = PAPER_REFERENCE.get(self.name)
        return f"paper: {ref[0]:.3f}/{ref[1]:.3f}" if ref else ""


def run_matrix(rows: list[tuple[str, Scorer]], kb, split, seed: int = 0) -> list[ResultRow]:
    """Evaluate every requested scorer on valid and test, preserving order."""
    out = []
    for name, scorer in rows:
        out.append(
            ResultRow(
                name=name,
                valid=evaluate(split.valid, kb, scorer),
                test=evaluate(split.test, kb, scorer),
                seed=seed,
            )
        )
    return out


def matrix_text(rows: list[ResultRow]) -> str:
    width = max([len(r.name) for r in rows] + [13])
    lines = [
        f"{'configuration':<{width}}  {'valid':>7}  {'test':>7}  "
        f"{'n(v/t)':>9}  {'empty(v/t)':>10}  reference"
    ]
    for r in rows:
        lines.append(
            f"{r.name:<{width}}  {r.valid.accuracy:>7.3f}  {r.test.accuracy:>7.3f}  "
            f"{r.valid.n:>4}/{r.test.n:<4}  {r.valid.n_empty:>4}/{r.test.n_empty:<5}  "
            f"{r.paper_note()}"
        )
    return "\n".join(lines) + "\n"


def matrix_csv(rows: list[ResultRow]) -> str:
    lines = ["config,split,accuracy,n,empty_candidates,seed"]
    for r in rows:
        for split_name, res in (("valid", r.valid), ("test", r.test)):
            lines.append(
                f"{r.name},{split_name},{res.accuracy!r},{res.n},{res.n_empty},{r.seed}"
            )
    return "\n".join(lines) + "\n"


@dataclass
class AblationCell:
    store: str
    inputs: str  # "txt" or "txt+img"
    valid: float
    test: float


def ablation_matrix(
    stores: dict,
    kb,
    split,
    candidates: dict,
    jmel_config: JmelConfig,
    train_config,
) -> list[AblationCell]:
    """Train and evaluate the joint model per store, with and without images.

    ``stores`` maps a display name to a FeatureStore. Emits one cell per
    (store, inputs) pair in a Valid/Test x Txt/Txt+Img grid.
    """
    from dataclasses import replace as dc_replace

    from .trainer import TrainData, train_jmel

    cells = []
    for store_name in sorted(stores):
        store = stores[store_name]
        if (store.dim_u, store.dim_b, store.dim_i) != (
            jmel_config.dim_u, jmel_config.dim_b, jmel_config.dim_i,
        ):
            raise ValueError(
                f"store {store_name!r} dims ({store.dim_u},{store.dim_b},{store.dim_i}) "
                f"do not match the model config"
            )
        for inputs, mask in (("txt", ("uni", "bi")), ("txt+img", ("uni", "bi", "img"))):
            config = dc_replace(jmel_config, mask=mask)
            data = TrainData(kb=kb, split=split, store=store, candidates=candidates)
            params = init_jmel(config, seed=train_config.seed)
            best, _ = train_jmel(params, data, train_config)
            cells.append(
                AblationCell(
                    store=store_name,
                    inputs=inputs,
                    valid=accuracy_with_params(best, data, "valid"),
                    test=accuracy_with_params(best, data, "test"),
                )
            )
    return cells


def ablation_text(cells: list[AblationCell]) -> str:
    stores = sorted({c.store for c in cells})
    by_key = {(c.store, c.inputs): c for c in cells}
    width = max([len(s) for s in stores] + [14])
    lines = [
        f"{'embedding':<{width}}  {'valid txt':>9}  {'valid txt+img':>13}  "
        f"{'test txt':>9}  {'test txt+img':>13}"
    ]
    for s in stores:
        txt = by_key.get((s, "txt"))
        both = by_key.get((s, "txt+img"))
        lines.append(
            f"{s:<{width}}  "
            f"{txt.valid if txt else float('nan'):>9.3f}  "
            f"{both.valid if both else float('nan'):>13.3f}  "
            f"{txt.test if txt else float('nan'):>9.3f}  "
            f"{both.test if both else float('nan'):>13.3f}"
        )
    return "\n".join(lines) + "\n"


def ablation_csv(cells: list[AblationCell]) -> str:
    lines = ["store,inputs,valid,test"]
    for c in cells:
        lines.append(f"{c.store},{c.inputs},{c.valid!r},{c.test!r}")
    return "\n".join(lines) + "\n"
