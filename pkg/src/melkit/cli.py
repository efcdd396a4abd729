"""Command-line front door.

One JSON config file describes an experiment; subcommands run its stages
and write only under the output directory. All randomness flows from the
config's master seed, so re-running any stage with the same inputs is
byte-identical.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import bm25 as bm
from . import candgen
from . import corpus
from . import evalharness as ev
from . import features as ft
from . import forge as fg
from . import fusion as fu
from . import jmel as jm
from . import trainer as tr
from .nnkernel import NumericError


class UsageError(Exception):
    exit_code = 1


class DataError(Exception):
    exit_code = 2


ROW_FEATURES = ("S2V", "Img", "Pop", "BM25")

DEFAULT_EVAL_ROWS = ["Popularity", "BM25", "S2V-uni", "S2V-bi", "Img"]


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class FusionSection:
    mask: tuple[str, ...] = ("jmel", "pop", "bm25")
    jmel_mask: tuple[str, ...] | None = None  # None -> the jmel section's mask
    step_scale: float = 1e-5
    max_iters: int = 200
    tol: float = 1e-8


@dataclasses.dataclass
class EtSection:
    mask: tuple[str, ...] = ("uni", "bi", "img")
    n_trees: int = 100
    features_per_split: int | None = None
    min_samples_split: int = 2


@dataclasses.dataclass
class FeatureSection:
    snr: float | None = None  # None -> forge.image_snr
    dim_text: int = ft.DEFAULT_TEXT_DIM
    dim_image: int = ft.DEFAULT_IMAGE_DIM


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    data_dir: str | None = None
    features_dir: str | None = None
    forge: fg.ForgeConfig = dataclasses.field(default_factory=fg.ForgeConfig)
    features: FeatureSection = dataclasses.field(default_factory=FeatureSection)
    jmel: jm.JmelConfig = dataclasses.field(default_factory=jm.JmelConfig)
    train: tr.TrainConfig = dataclasses.field(default_factory=tr.TrainConfig)
    fusion: FusionSection = dataclasses.field(default_factory=FusionSection)
    extratrees: EtSection = dataclasses.field(default_factory=EtSection)
    eval_rows: list[str] = dataclasses.field(default_factory=lambda: list(DEFAULT_EVAL_ROWS))
    ablate_stores: dict[str, str] = dataclasses.field(default_factory=dict)


_SECTION_TYPES = {
    "forge": fg.ForgeConfig,
    "features": FeatureSection,
    "jmel": jm.JmelConfig,
    "train": tr.TrainConfig,
    "fusion": FusionSection,
    "extratrees": EtSection,
}

_TUPLE_FIELDS = {"mask", "jmel_mask", "first_names", "last_names", "acronym_roots"}


def _build_section(cls, obj: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise UsageError(f"unknown config keys in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, fg.ForgeError) as exc:
        raise UsageError(f"bad config section {where}: {exc}") from None


def load_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    obj = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            obj = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc.msg})")
    known_top = {"seed", "out_dir", "data_dir", "features_dir", "eval", "ablate"}
    known_top |= set(_SECTION_TYPES)
    unknown = sorted(set(obj) - known_top)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")

    cfg = RunConfig(
        seed=int(obj.get("seed", 0)),
        out_dir=str(obj.get("out_dir", "run")),
        data_dir=obj.get("data_dir"),
        features_dir=obj.get("features_dir"),
    )
    for name, cls in _SECTION_TYPES.items():
        if name in obj:
            section = _build_section(cls, obj[name], name)
            setattr(cfg, name, section)
    if "eval" in obj:
        section = obj["eval"]
        unknown = sorted(set(section) - {"rows"})
        if unknown:
            raise UsageError(f"unknown config keys in eval: {', '.join(unknown)}")
        cfg.eval_rows = list(section.get("rows", DEFAULT_EVAL_ROWS))
    if "ablate" in obj:
        section = obj["ablate"]
        unknown = sorted(set(section) - {"stores"})
        if unknown:
            raise UsageError(f"unknown config keys in ablate: {', '.join(unknown)}")
        cfg.ablate_stores = dict(section.get("stores", {}))

    if overrides.seed is not None:
        cfg.seed = overrides.seed
    if overrides.out is not None:
        cfg.out_dir = overrides.out
    # stage seeds follow the master seed unless the config pinned them
    if "forge" not in obj or "seed" not in obj.get("forge", {}):
        cfg.forge = dataclasses.replace(cfg.forge, seed=cfg.seed)
    if "train" not in obj or "seed" not in obj.get("train", {}):
        cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def _mask_override(cfg: RunConfig, mask_arg: str | None, section: str) -> RunConfig:
    if mask_arg is None:
        return cfg
    mask = tuple(t.strip() for t in mask_arg.split(",") if t.strip())
    if not mask:
        raise UsageError("--mask must name at least one feature")
    if section == "jmel":
        cfg.jmel = dataclasses.replace(cfg.jmel, mask=mask)
    elif section == "fusion":
        cfg.fusion = dataclasses.replace(cfg.fusion, mask=mask)
    elif section == "extratrees":
        cfg.extratrees = dataclasses.replace(cfg.extratrees, mask=mask)
    return cfg


# ---------------------------------------------------------------------------
# paths and artifact loading


def _slug(mask: tuple[str, ...]) -> str:
    return "-".join(mask)


class Paths:
    def __init__(self, cfg: RunConfig):
        self.out = Path(cfg.out_dir)
        self.data = Path(cfg.data_dir) if cfg.data_dir else self.out / "data"
        self.features = Path(cfg.features_dir) if cfg.features_dir else self.out / "features"
        self.index = self.out / "index.json"
        self.models = self.out / "models"

    def jmel_ckpt(self, mask) -> Path:
        return self.models / f"jmel-{_slug(mask)}.ckpt"

    def fusion_ckpt(self, jmel_mask, fusion_mask) -> Path:
        return self.models / f"fusion-{_slug(jmel_mask)}--{_slug(fusion_mask)}.ckpt"

    def et_model(self, mask) -> Path:
        return self.models / f"et-{_slug(mask)}.json"


def _load_data(paths: Paths):
    try:
        kb = corpus.load_kb(paths.data)
        mentions = corpus.load_mentions(paths.data)
    except corpus.CorpusError as exc:
        raise DataError(str(exc)) from None
    problems = corpus.validate_kb(kb, mentions)
    if problems:
        raise DataError(f"corpus invalid: {problems[0]} (+{len(problems) - 1} more)"
                        if len(problems) > 1 else f"corpus invalid: {problems[0]}")
    try:
        split = corpus.DatasetSplit.from_records(mentions)
    except corpus.CorpusError as exc:
        raise DataError(f"mentions are not split yet: {exc}") from None
    return kb, mentions, split


def _load_store(paths: Paths) -> ft.FeatureStore:
    try:
        return ft.read_features(paths.features)
    except ft.FeatureError as exc:
        raise DataError(str(exc)) from None


def _require_artifact(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing artifact {path} -- run `{hint}` first")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_forge(cfg: RunConfig, args) -> int:
    try:
        dataset = fg.forge_dataset(cfg.forge)
    except fg.ForgeError as exc:
        raise DataError(str(exc)) from None
    problems = corpus.validate_kb(dataset.kb, dataset.mentions)
    if problems:
        raise DataError(f"forge produced an invalid corpus: {problems[0]}")
    paths = Paths(cfg)
    corpus.save_kb(dataset.kb, paths.data)
    corpus.save_mentions(dataset.split.tagged(), paths.data)
    fg.save_topics(dataset.topics, paths.data / "topics.jsonl")
    report = {
        "entities": len(dataset.kb.entities),
        "tweets": len(dataset.kb.tweets),
        "mentions": len(dataset.mentions),
        "split": {k: len(v) for k, v in dataset.split.sections().items()},
        "planted_groups": [
            {"surface": g.surface, "members": list(g.members)}
            for g in dataset.planted_groups
        ],
        "generation": dataset.report,
    }
    (paths.data / "forge_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"forged {report['entities']} entities, {report['tweets']} tweets, "
          f"{report['mentions']} mentions -> {paths.data}")
    return 0


def cmd_features(cfg: RunConfig, args) -> int:
    if args.validate is not None:
        try:
            store = ft.read_features(args.validate)
        except ft.FeatureError as exc:
            raise DataError(str(exc)) from None
        print(f"store ok: dims ({store.dim_u},{store.dim_b},{store.dim_i}), "
              f"{len(store.text)} text records, {len(store.images)} image records")
        return 0
    paths = Paths(cfg)
    kb, mentions, _ = _load_data(paths)
    topics_path = _require_artifact(paths.data / "topics.jsonl", "melkit forge")
    topics = fg.load_topics(topics_path)
    snr = cfg.features.snr if cfg.features.snr is not None else cfg.forge.image_snr
    try:
        store = ft.synth_features(
            kb, mentions, topics, snr=snr, seed=cfg.seed,
            dim_text=cfg.features.dim_text, dim_image=cfg.features.dim_image,
        )
    except ft.FeatureError as exc:
        raise DataError(str(exc)) from None
    ft.write_features(store, paths.features)
    print(f"wrote feature store ({len(store.text)} text, {len(store.images)} image) "
          f"-> {paths.features}")
    return 0


def cmd_index(cfg: RunConfig, args) -> int:
    paths = Paths(cfg)
    kb, _, _ = _load_data(paths)
    try:
        index = bm.build_index(kb)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    bm.save_index(index, paths.index)
    print(f"indexed {index.n_docs} timelines (avgdl {index.avgdl:.1f}) -> {paths.index}")
    return 0


def _train_data(cfg: RunConfig, paths: Paths):
    kb, mentions, split = _load_data(paths)
    store = _load_store(paths)
    cands = candgen.candidate_map(mentions, kb)
    return kb, mentions, split, store, cands


def cmd_train_jmel(cfg: RunConfig, args) -> int:
    cfg = _mask_override(cfg, args.mask, "jmel")
    paths = Paths(cfg)
    kb, mentions, split, store, cands = _train_data(cfg, paths)
    jmel_cfg = dataclasses.replace(
        cfg.jmel, dim_u=store.dim_u, dim_b=store.dim_b, dim_i=store.dim_i
    )
    data = tr.TrainData(kb=kb, split=split, store=store, candidates=cands)
    params = jm.init_jmel(jmel_cfg, seed=cfg.train.seed)
    best, report = tr.train_jmel(params, data, cfg.train)
    ckpt = paths.jmel_ckpt(jmel_cfg.mask)
    jm.save_jmel(best, ckpt)
    tr.write_report(report, ckpt.with_suffix(".report.jsonl"))
    last = report[-1]
    best_acc = max(r.valid_acc for r in report)
    print(f"trained jmel[{_slug(jmel_cfg.mask)}] for {last.epoch} epochs, "
          f"best valid acc {best_acc:.3f} -> {ckpt}")
    return 0


def cmd_train_fusion(cfg: RunConfig, args) -> int:
    cfg = _mask_override(cfg, args.mask, "fusion")
    paths = Paths(cfg)
    kb, mentions, split, store, cands = _train_data(cfg, paths)
    mask = fu.normalize_mask(cfg.fusion.mask)
    jmel_mask = tuple(cfg.fusion.jmel_mask or cfg.jmel.mask)
    params = None
    if "jmel" in mask:
        ckpt = _require_artifact(
            paths.jmel_ckpt(jmel_mask), f"melkit train-jmel --mask {','.join(jmel_mask)}"
        )
        params = jm.load_jmel(ckpt)
    index = None
    if "bm25" in mask:
        index = bm.load_index(_require_artifact(paths.index, "melkit index"))
    ctx = fu.FeatureContext(kb=kb, store=store, jmel_params=params, index=index)
    X_raw, y = fu.build_pairs(split.train, ctx, cands, mask)
    standardizer = fu.Standardizer.fit(X_raw, mask)
    X = standardizer.transform(X_raw)
    mlp = fu.init_fusion_mlp(X.shape[1], seed=cfg.train.seed)
    trained, result = fu.train_fusion(
        mlp, X, y, step_scale=cfg.fusion.step_scale,
        max_iters=cfg.fusion.max_iters, tol=cfg.fusion.tol,
    )
    model = fu.FusionModel(mask=mask, standardizer=standardizer, mlp=trained)
    out = paths.fusion_ckpt(jmel_mask, mask)
    header_extra = {"jmel_mask": list(jmel_mask)}
    _save_fusion_with_jmel_mask(model, out, header_extra)
    print(f"trained fusion[{_slug(mask)}] on {len(y)} pairs "
          f"(final bce {result.fx:.4f}) -> {out}")
    return 0


def _save_fusion_with_jmel_mask(model: fu.FusionModel, path: Path, extra: dict) -> None:
    from . import nnkernel as nn

    header = {
        "model": "fusion",
        "version": 1,
        "mask": list(model.mask),
        "standardizer": model.standardizer.to_dict(),
    }
    header.update(extra)
    nn.save_checkpoint(path, header, model.mlp.param_arrays())


def cmd_train_et(cfg: RunConfig, args) -> int:
    cfg = _mask_override(cfg, args.mask, "extratrees")
    paths = Paths(cfg)
    kb, mentions, split, store, cands = _train_data(cfg, paths)
    mask = fu.normalize_mask(cfg.extratrees.mask)
    params = None
    if "jmel" in mask:
        ckpt = _require_artifact(paths.jmel_ckpt(tuple(cfg.jmel.mask)), "melkit train-jmel")
        params = jm.load_jmel(ckpt)
    index = None
    if "bm25" in mask:
        index = bm.load_index(_require_artifact(paths.index, "melkit index"))
    ctx = fu.FeatureContext(kb=kb, store=store, jmel_params=params, index=index)
    X_raw, y = fu.build_pairs(split.train, ctx, cands, mask)
    standardizer = fu.Standardizer.fit(X_raw, mask)
    X = standardizer.transform(X_raw)
    et_cfg = bl.ExtraTreesConfig(
        n_trees=cfg.extratrees.n_trees,
        features_per_split=cfg.extratrees.features_per_split,
        min_samples_split=cfg.extratrees.min_samples_split,
        seed=cfg.train.seed,
    )
    forest = bl.extratrees_train(X, y.astype(int), et_cfg)
    out = paths.et_model(mask)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "et-model",
        "version": 1,
        "mask": list(mask),
        "standardizer": standardizer.to_dict(),
        "n_features": forest.n_features,
        "config": {
            "n_trees": et_cfg.n_trees,
            "features_per_split": et_cfg.features_per_split,
            "min_samples_split": et_cfg.min_samples_split,
            "seed": et_cfg.seed,
        },
        "trees": forest.trees,
    }
    out.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    print(f"trained extra-trees[{_slug(mask)}] on {len(y)} pairs -> {out}")
    return 0


def _load_et_model(path: Path):
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != "et-model":
        raise DataError(f"{path}: not an extra-trees model file")
    forest = bl.ExtraTreesForest(
        config=bl.ExtraTreesConfig(**payload["config"]),
        n_features=int(payload["n_features"]),
        trees=payload["trees"],
    )
    return forest, tuple(payload["mask"]), fu.Standardizer.from_dict(payload["standardizer"])


ROW_RE = re.compile(r"(JMEL|ET)\((.+)\)")


def _row_masks(feats: list[str], kind: str):
    unknown = sorted(set(feats) - set(ROW_FEATURES))
    if unknown:
        raise UsageError(f"unknown features in row: {', '.join(unknown)}")
    mask: list[str] = []
    if "S2V" in feats:
        mask += ["uni", "bi"]
    if "Img" in feats:
        mask.append("img")
    if kind == "ET":
        if "Pop" in feats:
            mask.append("pop")
        if "BM25" in feats:
            mask.append("bm25")
    return tuple(mask)


def _build_row_scorer(name: str, cfg: RunConfig, paths: Paths, kb, store, ctx_cache):
    def base_ctx(jmel_mask=None):
        key = _slug(jmel_mask) if jmel_mask else ""
        if key not in ctx_cache:
            params = None
            if jmel_mask:
                ckpt = _require_artifact(
                    paths.jmel_ckpt(jmel_mask),
                    f"melkit train-jmel --mask {','.join(jmel_mask)}",
                )
                params = jm.load_jmel(ckpt)
            index = bm.load_index(paths.index) if paths.index.exists() else None
            ctx_cache[key] = fu.FeatureContext(
                kb=kb, store=store, jmel_params=params, index=index
            )
        return ctx_cache[key]

    if name == "Popularity":
        return ev.PopularityScorer(kb)
    if name == "BM25":
        _require_artifact(paths.index, "melkit index")
        return ev.Bm25Scorer(base_ctx())
    if name in ("S2V-uni", "S2V-bi", "Img", "S2V"):
        modality = {"S2V-uni": "uni", "S2V-bi": "bi", "Img": "img", "S2V": "s2v"}[name]
        return ev.RawScorer(modality, base_ctx())

    match = ROW_RE.fullmatch(name)
    if not match:
        raise UsageError(f"unknown eval row {name!r}")
    kind, feats_text = match.groups()
    feats = [f.strip() for f in feats_text.split("+")]
    if kind == "ET":
        mask = _row_masks(feats, "ET")
        path = _require_artifact(
            paths.et_model(mask), f"melkit train-et --mask {','.join(mask)}"
        )
        forest, saved_mask, standardizer = _load_et_model(path)
        ctx = base_ctx()
        if "bm25" in saved_mask and ctx.index is None:
            raise DataError(f"row {name} needs the BM25 index -- run `melkit index`")
        return ev.ExtraTreesScorer(ctx, forest, saved_mask, standardizer, name)

    branch_mask = _row_masks(feats, "JMEL")
    if not branch_mask:
        raise UsageError(f"row {name!r} has no branch features")
    uses_fusion = "Pop" in feats or "BM25" in feats
    if not uses_fusion:
        return ev.JmelScorer(base_ctx(branch_mask), name)
    fusion_mask = ["jmel"]
    if "Pop" in feats:
        fusion_mask.append("pop")
    if "BM25" in feats:
        fusion_mask.append("bm25")
    fusion_mask = tuple(fusion_mask)
    path = _require_artifact(
        paths.fusion_ckpt(branch_mask, fusion_mask),
        f"melkit train-fusion --mask {','.join(fusion_mask)}",
    )
    model = fu.load_fusion(path)
    return ev.FusionScorer(base_ctx(branch_mask), model, name)


def cmd_eval(cfg: RunConfig, args) -> int:
    paths = Paths(cfg)
    kb, mentions, split = _load_data(paths)
    store = _load_store(paths)
    ctx_cache: dict = {}
    rows = []
    for name in cfg.eval_rows:
        rows.append((name, _build_row_scorer(name, cfg, paths, kb, store, ctx_cache)))
    results = ev.run_matrix(rows, kb, split, seed=cfg.seed)
    text = ev.matrix_text(results)
    paths.out.mkdir(parents=True, exist_ok=True)
    (paths.out / "results.txt").write_text(text, encoding="utf-8")
    (paths.out / "results.csv").write_text(ev.matrix_csv(results), encoding="utf-8")
    print(text, end="")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    paths = Paths(cfg)
    kb, mentions, split = _load_data(paths)
    if not cfg.ablate_stores:
        raise UsageError("ablate needs config ablate.stores mapping names to store dirs")
    stores = {}
    for name, store_path in sorted(cfg.ablate_stores.items()):
        try:
            stores[name] = ft.read_features(store_path)
        except ft.FeatureError as exc:
            raise DataError(str(exc)) from None
    cands = candgen.candidate_map(mentions, kb)
    first = next(iter(stores.values()))
    jmel_cfg = dataclasses.replace(
        cfg.jmel, dim_u=first.dim_u, dim_b=first.dim_b, dim_i=first.dim_i
    )
    try:
        cells = ev.ablation_matrix(stores, kb, split, cands, jmel_cfg, cfg.train)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    text = ev.ablation_text(cells)
    paths.out.mkdir(parents=True, exist_ok=True)
    (paths.out / "ablation.txt").write_text(text, encoding="utf-8")
    (paths.out / "ablation.csv").write_text(ev.ablation_csv(cells), encoding="utf-8")
    print(text, end="")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    paths = Paths(cfg)
    kb, mentions, _ = _load_data(paths)
    stats = fg.dataset_stats(kb, mentions)
    text = stats.to_text()
    paths.out.mkdir(parents=True, exist_ok=True)
    (paths.out / "stats.txt").write_text(text, encoding="utf-8")
    (paths.out / "stats.csv").write_text(stats.to_csv(), encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="melkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "forge": ("synthesize a benchmark corpus, mentions, and splits", cmd_forge),
        "features": ("build the synthetic feature store (or --validate one)", cmd_features),
        "index": ("build the BM25 timeline index", cmd_index),
        "train-jmel": ("train the joint representation model", cmd_train_jmel),
        "train-fusion": ("train the fusion MLP over pairwise features", cmd_train_fusion),
        "train-et": ("train the extra-trees feature combiner", cmd_train_et),
        "eval": ("evaluate configured rows on valid and test", cmd_eval),
        "ablate": ("train/evaluate per feature store, with and without images", cmd_ablate),
        "stats": ("dataset statistics report", cmd_stats),
    }
    for name, (help_text, fn) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        if name in ("train-jmel", "train-fusion", "train-et"):
            p.add_argument("--mask", help="comma-separated feature mask override")
        else:
            p.set_defaults(mask=None)
        if name == "features":
            p.add_argument("--validate", metavar="STORE",
                           help="validate an existing feature store and exit")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args)
        return args.fn(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (corpus.CorpusError, fg.ForgeError, ft.FeatureError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
