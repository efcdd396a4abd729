"""Joint multimodal representation model.

Three branches (unigram, bigram, image), each two dense layers with ReLU
and a layer norm, concatenated and projected by a final linear layer into
one joint vector. The SAME parameters embed mentions and entities, so the
map is a single shared function f(.). Training pulls a mention's joint
vector toward its gold entity and pushes it from a negative entity with a
hinge (triplet) loss; linking scores are cosine similarities in the joint
space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nnkernel as nn
from .features import FeatureBundle

BRANCH_ORDER = ("uni", "bi", "img")

# incremented when a zero-norm joint vector forces similarity to 0
zero_norm_count = 0


@dataclass(frozen=True)
class JmelConfig:
    dim_u: int = 700
    dim_b: int = 700
    dim_i: int = 1000
    d_hidden: int = 256
    d_branch: int = 128
    d_joint: int = 128
    mask: tuple[str, ...] = BRANCH_ORDER
    margin: float = 1.0
    relu_after_second: bool = True
    norm_last: bool = True

    def __post_init__(self):
        if not self.mask:
            raise ValueError("modality mask must be nonempty")
        bad = [m for m in self.mask if m not in BRANCH_ORDER]
        if bad:
            raise ValueError(f"unknown modalities in mask: {bad}")

    @property
    def active(self) -> tuple[str, ...]:
        return tuple(m for m in BRANCH_ORDER if m in self.mask)

    def input_dim(self, modality: str) -> int:
        return {"uni": self.dim_u, "bi": self.dim_b, "img": self.dim_i}[modality]

    def to_dict(self) -> dict:
        return {
            "dim_u": self.dim_u, "dim_b": self.dim_b, "dim_i": self.dim_i,
            "d_hidden": self.d_hidden, "d_branch": self.d_branch,
            "d_joint": self.d_joint, "mask": list(self.mask),
            "margin": self.margin, "relu_after_second": self.relu_after_second,
            "norm_last": self.norm_last,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "JmelConfig":
        obj = dict(obj)
        obj["mask"] = tuple(obj["mask"])
        return cls(**obj)


@dataclass(frozen=True)
class BranchParams:
    dense1: nn.DenseLayer
    dense2: nn.DenseLayer
    norm: nn.LayerNormParams


@dataclass(frozen=True)
class JmelParams:
    config: JmelConfig
    branches: dict[str, BranchParams]
    final: nn.DenseLayer

    def param_arrays(self) -> list[np.ndarray]:
        """All weights in a stable order (branches in mask order, then final)."""
        arrays = []
        for name in self.config.active:
            br = self.branches[name]
            arrays += [br.dense1.W, br.dense1.b, br.dense2.W, br.dense2.b,
                       br.norm.g, br.norm.beta]
        arrays += [self.final.W, self.final.b]
        return arrays

    def with_param_arrays(self, arrays: list[np.ndarray]) -> "JmelParams":
        it = iter(arrays)
        branches = {}
        for name in self.config.active:
            old = self.branches[name]
            branches[name] = BranchParams(
                dense1=nn.DenseLayer(next(it), next(it)),
                dense2=nn.DenseLayer(next(it), next(it)),
                norm=replace(old.norm, g=next(it), beta=next(it)),
            )
        final = nn.DenseLayer(next(it), next(it))
        return JmelParams(config=self.config, branches=branches, final=final)


def init_jmel(config: JmelConfig, seed: int) -> JmelParams:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    branches = {}
    for name in config.active:
        branches[name] = BranchParams(
            dense1=nn.init_dense(config.input_dim(name), config.d_hidden, rng),
            dense2=nn.init_dense(config.d_hidden, config.d_branch, rng),
            norm=nn.init_layer_norm(config.d_branch),
        )
    final = nn.init_dense(len(config.active) * config.d_branch, config.d_joint, rng)
    return JmelParams(config=config, branches=branches, final=final)


def _branch_inputs(config: JmelConfig, bundle: FeatureBundle) -> dict[str, np.ndarray]:
    inputs = {"uni": bundle.u, "bi": bundle.b, "img": bundle.i}
    out = {}
    for name in config.active:
        x = np.asarray(inputs[name], dtype=np.float64)
        if x.shape[-1] != config.input_dim(name):
            raise ValueError(
                f"{name} input dim {x.shape[-1]} != configured {config.input_dim(name)}"
            )
        out[name] = x
    return out


def _branch_forward(br: BranchParams, x: np.ndarray, config: JmelConfig):
    z1 = nn.dense_forward(br.dense1, x)
    a1 = nn.relu(z1)
    z2 = nn.dense_forward(br.dense2, a1)
    if config.norm_last:
        a2 = nn.relu(z2) if config.relu_after_second else z2
        out, norm_cache = nn.layer_norm_forward(br.norm, a2)
        cache = (x, z1, a1, z2, a2, norm_cache)
    else:
        normed, norm_cache = nn.layer_norm_forward(br.norm, z2)
        out = nn.relu(normed) if config.relu_after_second else normed
        cache = (x, z1, a1, z2, normed, norm_cache)
    return out, cache


def _branch_backward(br: BranchParams, cache, dout: np.ndarray, config: JmelConfig):
    if config.norm_last:
        x, z1, a1, z2, a2, norm_cache = cache
        da2, dg, dbeta = nn.layer_norm_backward(br.norm, norm_cache, dout)
        dz2 = nn.relu_backward(z2, da2) if config.relu_after_second else da2
    else:
        x, z1, a1, z2, normed, norm_cache = cache
        dnormed = nn.relu_backward(normed, dout) if config.relu_after_second else dout
        dz2, dg, dbeta = nn.layer_norm_backward(br.norm, norm_cache, dnormed)
    da1, dW2, db2 = nn.dense_backward(br.dense2, a1, dz2)
    dz1 = nn.relu_backward(z1, da1)
    dx, dW1, db1 = nn.dense_backward(br.dense1, x, dz1)
    return dx, [dW1, db1, dW2, db2, dg, dbeta]


def jmel_forward_cached(params: JmelParams, bundle: FeatureBundle):
    """Forward pass returning (J, cache) for use by the backward pass."""
    config = params.config
    inputs = _branch_inputs(config, bundle)
    outs = []
    caches = {}
    for name in config.active:
        out, cache = _branch_forward(params.branches[name], inputs[name], config)
        outs.append(out)
        caches[name] = cache
    concat = np.concatenate(outs, axis=-1)
    joint = nn.dense_forward(params.final, concat)
    return joint, (caches, concat)


def jmel_forward(params: JmelParams, bundle: FeatureBundle) -> np.ndarray:
    """Joint vector for one bundle (or a batch of row bundles)."""
    joint, _ = jmel_forward_cached(params, bundle)
    return joint


def jmel_backward(params: JmelParams, cache, d_joint: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. all parameters, aligned with param_arrays()."""
    config = params.config
    caches, concat = cache
    dconcat, dWf, dbf = nn.dense_backward(params.final, concat, d_joint)
    grads: list[np.ndarray] = []
    offset = 0
    for name in config.active:
        width = config.d_branch
        dout = dconcat[..., offset : offset + width]
        offset += width
        _, branch_grads = _branch_backward(params.branches[name], caches[name], dout, config)
        grads.extend(branch_grads)
    grads += [dWf, dbf]
    return grads


def triplet_loss(
    j_m: np.ndarray, j_pos: np.ndarray, j_neg: np.ndarray, margin: float = 1.0
):
    """Hinge on L2 distances: max(0, margin + ||m-pos|| - ||m-neg||).

    Returns (loss, d_m, d_pos, d_neg). Supports single vectors or batches of
    rows (per-row losses). Distance gradients are guarded at zero distance.
    """
    eps = 1e-12
    diff_pos = j_m - j_pos
    diff_neg = j_m - j_neg
    d_pos = np.sqrt(np.maximum((diff_pos * diff_pos).sum(axis=-1), 0.0))
    d_neg = np.sqrt(np.maximum((diff_neg * diff_neg).sum(axis=-1), 0.0))
    loss = np.maximum(0.0, margin + d_pos - d_neg)
    active = (loss > 0.0).astype(np.float64)

    unit_pos = diff_pos / np.maximum(d_pos, eps)[..., None]
    unit_neg = diff_neg / np.maximum(d_neg, eps)[..., None]
    scale = active[..., None]
    g_m = scale * (unit_pos - unit_neg)
    g_pos = scale * -unit_pos
    g_neg = scale * unit_neg
    if j_m.ndim == 1:
        return float(loss), g_m, g_pos, g_neg
    return loss, g_m, g_pos, g_neg


def jmel_similarity(
    params: JmelParams, mention_bundle: FeatureBundle, entity_bundle: FeatureBundle
) -> float:
    """Cosine of the two joint vectors; zero-norm outputs give 0.0."""
    j_m = jmel_forward(params, mention_bundle)
    j_e = jmel_forward(params, entity_bundle)
    return joint_cosine(j_m, j_e)


def joint_cosine(j_m: np.ndarray, j_e: np.ndarray) -> float:
    global zero_norm_count
    nm = float(np.linalg.norm(j_m))
    ne = float(np.linalg.norm(j_e))
    if nm == 0.0 or ne == 0.0:
        zero_norm_count += 1
        return 0.0
    return float(j_m @ j_e) / (nm * ne)


def save_jmel(params: JmelParams, path) -> None:
    header = {"model": "jmel", "version": 1, "config": params.config.to_dict()}
    nn.save_checkpoint(path, header, params.param_arrays())


def load_jmel(path) -> JmelParams:
    header, arrays = nn.load_checkpoint(path)
    if header.get("model") != "jmel":
        raise ValueError(f"{path}: not a jmel checkpoint")
    config = JmelConfig.from_dict(header["config"])
    template = init_jmel(config, seed=0)
    return template.with_param_arrays(arrays)
