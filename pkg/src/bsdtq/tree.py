"""Differentiable soft decision trees.

A soft tree of depth ``D`` is a perfect binary tree with ``2**D - 1``
internal gating nodes and ``2**D`` leaves, stored in level order (heap
layout: the children of node ``m`` are ``2m+1`` and ``2m+2``).  Each node
``m`` emits a logistic gate probability

    p_m(z) = sigmoid(w_m . z + b_m)

which is the probability of routing *right* (child ``2m+2``).  The mass
reaching leaf ``l`` is the product of the gate terms along the root-to-leaf
path, and the tree output is the probability-weighted sum of leaf values.

All gradients here are exact analytic expressions; the test suite checks
them against a central finite-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import TrainingError

__all__ = [
    "SoftTree",
    "TreeFitConfig",
    "TreeGradients",
    "leaf_path",
    "forward",
    "forward_batch",
    "leaf_probabilities",
    "grad_input",
    "grad_input_batch",
    "grad_params",
    "fit",
]


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class SoftTree:
    """Parameters of one soft decision tree.

    Attributes
    ----------
    depth : int
        Number of gating levels, ``>= 1``.
    node_weights : ndarray, shape (2**depth - 1, dim)
        Gate weight vectors, one row per internal node in level order.
    node_biases : ndarray, shape (2**depth - 1,)
        Gate biases.
    leaf_values : ndarray, shape (2**depth,)
        Leaf outputs, leaves numbered left to right.
    """

    depth: int
    node_weights: np.ndarray
    node_biases: np.ndarray
    leaf_values: np.ndarray

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        w = _as_float_array(self.node_weights, "node_weights")
        b = _as_float_array(self.node_biases, "node_biases")
        g = _as_float_array(self.leaf_values, "leaf_values")
        n_nodes = 2**self.depth - 1
        if w.ndim != 2 or w.shape[0] != n_nodes:
            raise ValueError(
                f"node_weights must have shape ({n_nodes}, dim), got {w.shape}"
            )
        if b.shape != (n_nodes,):
            raise ValueError(f"node_biases must have shape ({n_nodes},), got {b.shape}")
        if g.shape != (2**self.depth,):
            raise ValueError(
                f"leaf_values must have shape ({2**self.depth},), got {g.shape}"
            )
        object.__setattr__(self, "node_weights", w)
        object.__setattr__(self, "node_biases", b)
        object.__setattr__(self, "leaf_values", g)

    @property
    def dim(self) -> int:
        """Input dimension expected by the gates."""
        return self.node_weights.shape[1]

    @property
    def n_nodes(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    @classmethod
    def random_init(cls, depth: int, dim: int, weight_scale: float,
                    rng: np.random.Generator) -> "SoftTree":
        """Fresh tree: gate weights ~ N(0, weight_scale^2), biases and leaves zero."""
        n_nodes = 2**depth - 1
        return cls(
            depth=depth,
            node_weights=weight_scale * rng.standard_normal((n_nodes, dim)),
            node_biases=np.zeros(n_nodes),
            leaf_values=np.zeros(2**depth),
        )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "node_weights": self.node_weights.ravel().tolist(),
            "node_biases": self.node_biases.tolist(),
            "leaf_values": self.leaf_values.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SoftTree":
        depth = int(doc["depth"])
        n_nodes = 2**depth - 1
        flat = np.asarray(doc["node_weights"], dtype=np.float64)
        if flat.size % n_nodes != 0:
            raise ValueError(
                f"node_weights length {flat.size} is not a multiple of {n_nodes}"
            )
        return cls(
            depth=depth,
            node_weights=flat.reshape(n_nodes, flat.size // n_nodes),
            node_biases=np.asarray(doc["node_biases"], dtype=np.float64),
            leaf_values=np.asarray(doc["leaf_values"], dtype=np.float64),
        )


@dataclass(frozen=True)
class TreeFitConfig:
    """Full-batch gradient-descent settings for fitting one tree."""

    steps: int = 150
    learning_rate: float = 0.5
    init_weight_scale: float = 0.3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.init_weight_scale < 0:
            raise ValueError(
                f"init_weight_scale must be >= 0, got {self.init_weight_scale}"
            )


@dataclass(frozen=True)
class TreeGradients:
    """Gradients of the tree output with respect to its parameters."""

    node_weights: np.ndarray
    node_biases: np.ndarray
    leaf_values: np.ndarray


def leaf_path(depth: int, leaf: int) -> list[tuple[int, int]]:
    """Root-to-leaf path as (node index, direction) pairs.

    Direction 1 means "go right" (child ``2m+2``), 0 means "go left".
    Leaves are numbered left to right, so the direction bits are the binary
    digits of ``leaf``, most significant first.
    """
    if not 0 <= leaf < 2**depth:
        raise ValueError(f"leaf index {leaf} out of range for depth {depth}")
    path = []
    node = 0
    for level in range(depth - 1, -1, -1):
        direction = (leaf >> level) & 1
        path.append((node, direction))
        node = 2 * node + 1 + direction
    return path


@lru_cache(maxsize=None)
def _leaf_spans(depth: int):
    """Per-node leaf ranges: node m covers leaves [lo, hi), right half [mid, hi)."""
    n_nodes = 2**depth - 1
    n_leaves = 2**depth
    lo = np.empty(n_nodes, dtype=np.intp)
    mid = np.empty(n_nodes, dtype=np.intp)
    hi = np.empty(n_nodes, dtype=np.intp)
    for m in range(n_nodes):
        level = (m + 1).bit_length() - 1
        width = n_leaves >> level
        start = (m - (2**level - 1)) * width
        lo[m] = start
        mid[m] = start + width // 2
        hi[m] = start + width
    return lo, mid, hi


# Internal kernels work on raw parameter arrays so that the fit loop can
# update in place without re-validating a SoftTree every step.

def _gates(weights: np.ndarray, biases: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Right-routing probability of every node, shape (n, 2**D - 1)."""
    return expit(Z @ weights.T + biases)


def _leaf_probs(depth: int, gates: np.ndarray) -> np.ndarray:
    """Leaf arrival probabilities from the gate matrix, shape (n, 2**D)."""
    n_nodes = 2**depth - 1
    full = np.empty((gates.shape[0], 2 ** (depth + 1) - 1))
    full[:, 0] = 1.0
    for m in range(n_nodes):
        p = gates[:, m]
        full[:, 2 * m + 1] = full[:, m] * (1.0 - p)
        full[:, 2 * m + 2] = full[:, m] * p
    return full[:, n_nodes:]


def _node_flow(depth: int, leaf_values: np.ndarray, gates: np.ndarray,
               leaf_p: np.ndarray) -> np.ndarray:
    """B[i, m] = sum over leaves l under node m of gamma_l p*_l(z_i) (v_{m,l} - p_m(z_i)).

    Shared core of every analytic gradient: the input gradient is
    ``B @ node_weights`` and the per-node parameter gradients are ``B``
    (bias) and ``B * z_k`` (weight).  Leaves under a node form a contiguous
    span in the heap layout, so the inner sums collapse to prefix-sum
    differences.
    """
    weighted = leaf_p * leaf_values
    prefix = np.zeros((weighted.shape[0], weighted.shape[1] + 1))
    np.cumsum(weighted, axis=1, out=prefix[:, 1:])
    lo, mid, hi = _leaf_spans(depth)
    subtree = prefix[:, hi] - prefix[:, lo]
    right = prefix[:, hi] - prefix[:, mid]
    return right - gates * subtree


def _check_batch(tree: SoftTree, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != tree.dim:
        raise ValueError(f"input must have shape (n, {tree.dim}), got {Z.shape}")
    return Z


def _check_vector(tree: SoftTree, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (tree.dim,):
        raise ValueError(f"input must have shape ({tree.dim},), got {z.shape}")
    return z


def forward_batch(tree: SoftTree, Z) -> np.ndarray:
    """Tree output for every row of ``Z``."""
    Z = _check_batch(tree, Z)
    gates = _gates(tree.node_weights, tree.node_biases, Z)
    return _leaf_probs(tree.depth, gates) @ tree.leaf_values


def forward(tree: SoftTree, z) -> float:
    """Tree output for a single input vector."""
    z = _check_vector(tree, z)
    return float(forward_batch(tree, z[None, :])[0])


def leaf_probabilities(tree: SoftTree, z) -> np.ndarray:
    """Arrival probability of every leaf; entries sum to 1."""
    z = _check_vector(tree, z)
    gates = _gates(tree.node_weights, tree.node_biases, z[None, :])
    return _leaf_probs(tree.depth, gates)[0]


def grad_input_batch(tree: SoftTree, Z) -> np.ndarray:
    """d f / d z for every row of ``Z``, shape (n, dim)."""
    Z = _check_batch(tree, Z)
    gates = _gates(tree.node_weights, tree.node_biases, Z)
    leaf_p = _leaf_probs(tree.depth, gates)
    return _node_flow(tree.depth, tree.leaf_values, gates, leaf_p) @ tree.node_weights


def grad_input(tree: SoftTree, z) -> np.ndarray:
    """Exact gradient of the tree output with respect to the input vector."""
    z = _check_vector(tree, z)
    return grad_input_batch(tree, z[None, :])[0]


def grad_params(tree: SoftTree, z, upstream: float = 1.0) -> TreeGradients:
    """Gradients of ``upstream * f(z)`` with respect to all tree parameters.

    ``upstream`` is the loss derivative at this sample; results from separate
    samples add up to the full-batch gradient.
    """
    z = _check_vector(tree, z)
    gates = _gates(tree.node_weights, tree.node_biases, z[None, :])
    leaf_p = _leaf_probs(tree.depth, gates)
    flow = _node_flow(tree.depth, tree.leaf_values, gates, leaf_p)[0]
    return TreeGradients(
        node_weights=upstream * np.outer(flow, z),
        node_biases=upstream * flow,
        leaf_values=upstream * leaf_p[0],
    )


def fit(tree: SoftTree, Z, r, cfg: TreeFitConfig) -> tuple[SoftTree, np.ndarray]:
    """Fit the tree to targets ``r`` by full-batch gradient descent.

    Minimizes the half mean squared error ``sum((f(z_i) - r_i)^2) / (2n)``
    over all tree parameters, starting from the given tree's parameters.
    Returns the fitted tree and the loss trace (initial loss plus one entry
    per step, length ``cfg.steps + 1``).
    """
    Z = _check_batch(tree, Z)
    r = np.asarray(r, dtype=np.float64)
    if Z.shape[0] == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    if r.shape != (Z.shape[0],):
        raise ValueError(f"targets must have shape ({Z.shape[0]},), got {r.shape}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(r))):
        raise ValueError("fit inputs must be finite")

    depth = tree.depth
    weights = tree.node_weights.copy()
    biases = tree.node_biases.copy()
    leaves = tree.leaf_values.copy()
    n = Z.shape[0]
    lr = cfg.learning_rate
    trace = np.empty(cfg.steps + 1)

    for step in range(cfg.steps + 1):
        gates = _gates(weights, biases, Z)
        leaf_p = _leaf_probs(depth, gates)
        resid = leaf_p @ leaves - r
        loss = 0.5 * float(resid @ resid) / n
        trace[step] = loss
        if not np.isfinite(loss):
            raise TrainingError(f"tree fit diverged at step {step}", step=step)
        if step == cfg.steps:
            break

        upstream = resid / n
        flow = _node_flow(depth, leaves, gates, leaf_p)
        scaled = flow * upstream[:, None]
        weights -= lr * (scaled.T @ Z)
        biases -= lr * scaled.sum(axis=0)
        leaves -= lr * (leaf_p.T @ upstream)

    return SoftTree(depth, weights, biases, leaves), trace
