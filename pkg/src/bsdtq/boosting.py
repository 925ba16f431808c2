"""Gradient boosting of soft trees with a per-round learnable transform.

Training is stage-wise: each round fits a fresh soft tree to the current
residuals on the transformed features, then (for the BSDTQ variant) runs a
few gradient-descent steps on the transform against the new tree's loss,
and finally adds the shrunken stage prediction to the running ensemble.
The BSDT variant keeps the transform frozen at the identity throughout,
which is the classical boosted-soft-tree baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import TrainingError
from .transform import (
    LinearMap,
    Transform,
    TransformFitConfig,
    apply,
    fit_transform,
    transform_from_dict,
    transform_to_dict,
)
from .tree import (
    SoftTree,
    TreeFitConfig,
    _gates,
    _leaf_probs,
    _node_flow,
    fit,
    forward_batch,
)

__all__ = [
    "Variant",
    "BoostConfig",
    "Ensemble",
    "train",
    "predict",
    "staged_predict",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = "bsdtq-model-v1"


class Variant(str, Enum):
    """Which model to train: with or without the learnable transform."""

    BSDTQ = "bsdtq"
    BSDT = "bsdt"


@dataclass(frozen=True)
class BoostConfig:
    """Everything the boosting loop needs, fully seeded."""

    rounds: int = 20
    shrinkage: float = 0.1
    tree_depth: int = 3
    transform_dim: int | None = None  # None: square transform (d_out = d_in)
    tree: TreeFitConfig = field(default_factory=TreeFitConfig)
    transform: TransformFitConfig = field(default_factory=TransformFitConfig)
    joint_steps: int = 0  # extra steps updating tree and transform together
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.tree_depth < 1:
            raise ValueError(f"tree_depth must be >= 1, got {self.tree_depth}")
        if self.joint_steps < 0:
            raise ValueError(f"joint_steps must be >= 0, got {self.joint_steps}")


@dataclass(frozen=True)
class Ensemble:
    """An ordered sequence of (transform, tree) stages plus the shrinkage."""

    stages: tuple[tuple[Transform, SoftTree], ...]
    shrinkage: float
    variant: Variant

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        d_in = None
        for transform, tree in self.stages:
            if transform.d_out != tree.dim:
                raise ValueError(
                    f"stage transform produces {transform.d_out} dims but its "
                    f"tree expects {tree.dim}"
                )
            if d_in is None:
                d_in = transform.d_in
            elif transform.d_in != d_in:
                raise ValueError("stages disagree on the input dimension")

    @property
    def d_in(self) -> int | None:
        return self.stages[0][0].d_in if self.stages else None

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "variant": self.variant.value,
            "shrinkage": self.shrinkage,
            "stages": [
                {"transform": transform_to_dict(t), "tree": tree.to_dict()}
                for t, tree in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Ensemble":
        version = doc.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"unsupported model version {version!r}, "
                f"expected {MODEL_FORMAT_VERSION!r}"
            )
        stages = tuple(
            (transform_from_dict(s["transform"]), SoftTree.from_dict(s["tree"]))
            for s in doc["stages"]
        )
        return cls(stages=stages, shrinkage=float(doc["shrinkage"]),
                   variant=Variant(doc["variant"]))


def _joint_updates(tree: SoftTree, q: LinearMap, X: np.ndarray, y: np.ndarray,
                   steps: int, tree_lr: float, q_lr: float,
                   round_index: int) -> tuple[SoftTree, LinearMap]:
    """Optional fine-tune phase: descend tree and transform simultaneously.

    Each group keeps the update rule of its own fitting phase (mean-scaled
    gradient for the tree, summed gradient for the transform); both are
    evaluated at the same parameter state before either moves.
    """
    weights = tree.node_weights.copy()
    biases = tree.node_biases.copy()
    leaves = tree.leaf_values.copy()
    matrix = q.matrix.copy()
    n = X.shape[0]
    for step in range(steps):
        Z = X @ matrix.T
        gates = _gates(weights, biases, Z)
        leaf_p = _leaf_probs(tree.depth, gates)
        resid = leaf_p @ leaves - y
        if not np.isfinite(resid @ resid):
            raise TrainingError(
                f"joint fine-tune diverged at round {round_index}, step {step}",
                step=step, round_index=round_index,
            )
        flow = _node_flow(tree.depth, leaves, gates, leaf_p)
        grad_z = flow @ weights
        upstream = resid / n
        scaled = flow * upstream[:, None]
        matrix -= q_lr * ((grad_z * resid[:, None]).T @ X)
        weights -= tree_lr * (scaled.T @ Z)
        biases -= tree_lr * scaled.sum(axis=0)
        leaves -= tree_lr * (leaf_p.T @ upstream)
    return SoftTree(tree.depth, weights, biases, leaves), LinearMap(matrix)


def train(X, y, cfg: BoostConfig,
          variant: Variant = Variant.BSDTQ) -> tuple[Ensemble, np.ndarray]:
    """Train a boosted ensemble; returns it with the per-round training MSE.

    Round ``k`` fits a tree to the residual ``y - yhat`` on the transformed
    features, updates the transform (BSDTQ only), and accumulates
    ``shrinkage * tree(transform(X))``.  Deterministic given ``cfg.seed``:
    each round draws its tree initialization from an independent child
    stream, so earlier rounds do not change when ``rounds`` grows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"features must be a nonempty 2-D array, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError(f"targets must have shape ({X.shape[0]},), got {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training inputs must be finite")

    d_in = X.shape[1]
    d_out = d_in if (variant is Variant.BSDT or cfg.transform_dim is None) \
        else cfg.transform_dim
    identity = LinearMap.identity(d_in, d_out)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.rounds)

    q = identity
    yhat = np.zeros(X.shape[0])
    stages: list[tuple[Transform, SoftTree]] = []
    trace = np.empty(cfg.rounds)

    for k in range(cfg.rounds):
        rng = np.random.default_rng(seeds[k])
        residual = y - yhat
        try:
            start = SoftTree.random_init(cfg.tree_depth, d_out,
                                         cfg.tree.init_weight_scale, rng)
            tree, _ = fit(start, apply(q, X), residual, cfg.tree)
            if variant is Variant.BSDTQ and cfg.transform.steps > 0:
                q_start = q if cfg.transform.warm_start else identity
                q, _ = fit_transform(tree, q_start, X, residual, cfg.transform)
            if variant is Variant.BSDTQ and cfg.joint_steps > 0:
                tree, q = _joint_updates(tree, q, X, residual, cfg.joint_steps,
                                         cfg.tree.learning_rate,
                                         cfg.transform.learning_rate, k)
        except TrainingError as err:
            raise TrainingError(f"round {k}: {err}", step=err.step,
                                round_index=k) from err

        yhat = yhat + cfg.shrinkage * forward_batch(tree, apply(q, X))
        stages.append((q, tree))
        err = y - yhat
        mse = float(err @ err) / X.shape[0]
        trace[k] = mse
        if not np.isfinite(mse):
            raise TrainingError(f"training loss became non-finite at round {k}",
                                round_index=k)

    return Ensemble(tuple(stages), cfg.shrinkage, variant), trace


def predict(model: Ensemble, X) -> np.ndarray:
    """Ensemble prediction: the shrunken sum of every stage's tree output."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {X.shape}")
    if not model.stages:
        return np.zeros(X.shape[0])
    if X.shape[1] != model.d_in:
        raise ValueError(
            f"model expects {model.d_in} features, got {X.shape[1]}"
        )
    out = np.zeros(X.shape[0])
    for transform, tree in model.stages:
        out += model.shrinkage * forward_batch(tree, apply(transform, X))
    return out


def staged_predict(model: Ensemble, X) -> np.ndarray:
    """Cumulative predictions after each stage, shape (n, K)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {X.shape}")
    if not model.stages:
        return np.zeros((X.shape[0], 0))
    if X.shape[1] != model.d_in:
        raise ValueError(f"model expects {model.d_in} features, got {X.shape[1]}")
    out = np.empty((X.shape[0], len(model.stages)))
    running = np.zeros(X.shape[0])
    for k, (transform, tree) in enumerate(model.stages):
        running += model.shrinkage * forward_batch(tree, apply(transform, X))
        out[:, k] = running
    return out


def save_model(model: Ensemble, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, indent=2))


def load_model(path) -> Ensemble:
    return Ensemble.from_dict(json.loads(Path(path).read_text()))
