"""Learnable input transforms for soft trees.

A transform maps raw features ``x`` (dimension ``d_in``) to the tree input
``z`` (dimension ``d_out``).  The workhorse is the linear map ``z = Q x``;
a one-hidden-layer perceptron is provided as the nonlinear alternative.
Because the tree output is differentiable in its input, the chain rule

    d f(Q x) / d Q[r, c] = (d f / d z_r) * x_c

gives an exact gradient for descent on ``Q`` while the tree is held fixed,
and the same inner gradient drives standard backpropagation through the
perceptron's layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import TrainingError
from .tree import SoftTree, _gates, _leaf_probs, _node_flow
from .tree import _as_float_array

__all__ = [
    "LinearMap",
    "MlpTransform",
    "MlpGradients",
    "Transform",
    "TransformFitConfig",
    "apply",
    "grad_linear",
    "grad_loss_linear",
    "grad_mlp",
    "fit_transform",
    "transform_to_dict",
    "transform_from_dict",
]


@dataclass(frozen=True)
class LinearMap:
    """The transform matrix, shape (d_out, d_in)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_float_array(self.matrix, "matrix")
        if m.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def d_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def d_out(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d_in: int, d_out: int | None = None) -> "LinearMap":
        """Square identity, or the first ``d_out`` rows of [I | 0] if rectangular."""
        if d_out is None:
            d_out = d_in
        if not 1 <= d_out <= d_in:
            raise ValueError(f"need 1 <= d_out <= d_in, got d_out={d_out}, d_in={d_in}")
        return cls(np.eye(d_out, d_in))

    def to_dict(self) -> dict:
        return {
            "rows": self.d_out,
            "cols": self.d_in,
            "data": self.matrix.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearMap":
        rows, cols = int(doc["rows"]), int(doc["cols"])
        data = np.asarray(doc["data"], dtype=np.float64)
        if data.size != rows * cols:
            raise ValueError(f"expected {rows * cols} entries, got {data.size}")
        return cls(data.reshape(rows, cols))


@dataclass(frozen=True)
class MlpTransform:
    """One-hidden-layer perceptron: logistic hidden layer, linear output."""

    layer1_weights: np.ndarray  # (hidden, d_in)
    layer1_biases: np.ndarray   # (hidden,)
    layer2_weights: np.ndarray  # (d_out, hidden)
    layer2_biases: np.ndarray   # (d_out,)

    def __post_init__(self):
        w1 = _as_float_array(self.layer1_weights, "layer1_weights")
        b1 = _as_float_array(self.layer1_biases, "layer1_biases")
        w2 = _as_float_array(self.layer2_weights, "layer2_weights")
        b2 = _as_float_array(self.layer2_biases, "layer2_biases")
        if w1.ndim != 2 or w2.ndim != 2:
            raise ValueError("layer weights must be 2-D")
        h = w1.shape[0]
        if b1.shape != (h,) or w2.shape[1] != h or b2.shape != (w2.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: {w1.shape}, {b1.shape}, "
                f"{w2.shape}, {b2.shape}"
            )
        for name, arr in (("layer1_weights", w1), ("layer1_biases", b1),
                          ("layer2_weights", w2), ("layer2_biases", b2)):
            object.__setattr__(self, name, arr)

    @property
    def d_in(self) -> int:
        return self.layer1_weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.layer2_weights.shape[0]

    @property
    def hidden(self) -> int:
        return self.layer1_weights.shape[0]

    @classmethod
    def random_init(cls, d_in: int, hidden: int, d_out: int, scale: float,
                    rng: np.random.Generator) -> "MlpTransform":
        return cls(
            layer1_weights=scale * rng.standard_normal((hidden, d_in)),
            layer1_biases=np.zeros(hidden),
            layer2_weights=scale * rng.standard_normal((d_out, hidden)),
            layer2_biases=np.zeros(d_out),
        )

    def to_dict(self) -> dict:
        return {
            "layer1_weights": {"rows": self.hidden, "cols": self.d_in,
                               "data": self.layer1_weights.ravel().tolist()},
            "layer1_biases": self.layer1_biases.tolist(),
            "layer2_weights": {"rows": self.d_out, "cols": self.hidden,
                               "data": self.layer2_weights.ravel().tolist()},
            "layer2_biases": self.layer2_biases.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpTransform":
        def unpack(block):
            data = np.asarray(block["data"], dtype=np.float64)
            return data.reshape(int(block["rows"]), int(block["cols"]))

        return cls(
            layer1_weights=unpack(doc["layer1_weights"]),
            layer1_biases=np.asarray(doc["layer1_biases"], dtype=np.float64),
            layer2_weights=unpack(doc["layer2_weights"]),
            layer2_biases=np.asarray(doc["layer2_biases"], dtype=np.float64),
        )


Transform = Union[LinearMap, MlpTransform]


@dataclass(frozen=True)
class MlpGradients:
    """Gradients for every perceptron parameter, same shapes as the transform."""

    layer1_weights: np.ndarray
    layer1_biases: np.ndarray
    layer2_weights: np.ndarray
    layer2_biases: np.ndarray


@dataclass(frozen=True)
class TransformFitConfig:
    """Gradient-descent settings for the per-round transform update."""

    steps: int = 20
    learning_rate: float = 1e-4
    warm_start: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def _check_rows(transform: Transform, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != transform.d_in:
        raise ValueError(
            f"input must have shape (n, {transform.d_in}), got {X.shape}"
        )
    return X


def apply(transform: Transform, X) -> np.ndarray:
    """Transform every row of ``X``; result has shape (n, d_out)."""
    X = _check_rows(transform, X)
    if isinstance(transform, LinearMap):
        return X @ transform.matrix.T
    hidden = expit(X @ transform.layer1_weights.T + transform.layer1_biases)
    return hidden @ transform.layer2_weights.T + transform.layer2_biases


def _tree_input_grads(tree: SoftTree, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tree outputs and d f / d z for a batch of transformed inputs."""
    gates = _gates(tree.node_weights, tree.node_biases, Z)
    leaf_p = _leaf_probs(tree.depth, gates)
    flow = _node_flow(tree.depth, tree.leaf_values, gates, leaf_p)
    return leaf_p @ tree.leaf_values, flow @ tree.node_weights


def grad_linear(tree: SoftTree, q: LinearMap, x) -> np.ndarray:
    """d f(Q x) / d Q: the outer product of the tree's input gradient with x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (q.d_in,):
        raise ValueError(f"input must have shape ({q.d_in},), got {x.shape}")
    if tree.dim != q.d_out:
        raise ValueError(
            f"tree expects dimension {tree.dim}, transform produces {q.d_out}"
        )
    z = q.matrix @ x
    _, g = _tree_input_grads(tree, z[None, :])
    return np.outer(g[0], x)


def grad_loss_linear(tree: SoftTree, q: LinearMap, X, y) -> np.ndarray:
    """Gradient of the summed half squared loss sum_i (f(Q x_i) - y_i)^2 / 2 in Q."""
    X = _check_rows(q, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"targets must have shape ({X.shape[0]},), got {y.shape}")
    if tree.dim != q.d_out:
        raise ValueError(
            f"tree expects dimension {tree.dim}, transform produces {q.d_out}"
        )
    preds, g = _tree_input_grads(tree, X @ q.matrix.T)
    return (g * (preds - y)[:, None]).T @ X


def grad_mlp(tree: SoftTree, mlp: MlpTransform, x) -> MlpGradients:
    """d f(phi(x)) / d theta for every perceptron parameter theta.

    Composes the tree's input gradient with one step of backpropagation:
    for the linear output layer the deltas are the input gradient itself,
    and the hidden deltas pick up the logistic derivative.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (mlp.d_in,):
        raise ValueError(f"input must have shape ({mlp.d_in},), got {x.shape}")
    if tree.dim != mlp.d_out:
        raise ValueError(
            f"tree expects dimension {tree.dim}, transform produces {mlp.d_out}"
        )
    hidden = expit(mlp.layer1_weights @ x + mlp.layer1_biases)
    z = mlp.layer2_weights @ hidden + mlp.layer2_biases
    _, g = _tree_input_grads(tree, z[None, :])
    delta_out = g[0]
    delta_hidden = (mlp.layer2_weights.T @ delta_out) * hidden * (1.0 - hidden)
    return MlpGradients(
        layer1_weights=np.outer(delta_hidden, x),
        layer1_biases=delta_hidden,
        layer2_weights=np.outer(delta_out, hidden),
        layer2_biases=delta_out,
    )


def _loss_and_grads_mlp(tree: SoftTree, mlp: MlpTransform, X: np.ndarray,
                        y: np.ndarray) -> tuple[float, MlpGradients]:
    """Summed half squared loss and its batch gradient for the perceptron."""
    hidden = expit(X @ mlp.layer1_weights.T + mlp.layer1_biases)
    Z = hidden @ mlp.layer2_weights.T + mlp.layer2_biases
    preds, g = _tree_input_grads(tree, Z)
    resid = preds - y
    loss = 0.5 * float(resid @ resid)
    delta_out = g * resid[:, None]
    delta_hidden = (delta_out @ mlp.layer2_weights) * hidden * (1.0 - hidden)
    grads = MlpGradients(
        layer1_weights=delta_hidden.T @ X,
        layer1_biases=delta_hidden.sum(axis=0),
        layer2_weights=delta_out.T @ hidden,
        layer2_biases=delta_out.sum(axis=0),
    )
    return loss, grads


def fit_transform(tree: SoftTree, transform: Transform, X, y,
                  cfg: TransformFitConfig) -> tuple[Transform, np.ndarray]:
    """Descend the transform on the tree's loss, tree parameters held fixed.

    Runs ``cfg.steps`` plain gradient-descent updates on the summed half
    squared loss.  Returns the updated transform and the loss trace (initial
    loss plus one entry per step).  With ``steps == 0`` the transform is
    returned untouched.
    """
    X = _check_rows(transform, X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"targets must have shape ({X.shape[0]},), got {y.shape}")
    if tree.dim != transform.d_out:
        raise ValueError(
            f"tree expects dimension {tree.dim}, transform produces {transform.d_out}"
        )

    lr = cfg.learning_rate
    trace = np.empty(cfg.steps + 1)

    if isinstance(transform, LinearMap):
        matrix = transform.matrix.copy()
        for step in range(cfg.steps + 1):
            preds, g = _tree_input_grads(tree, X @ matrix.T)
            resid = preds - y
            loss = 0.5 * float(resid @ resid)
            trace[step] = loss
            if not np.isfinite(loss):
                raise TrainingError(
                    f"transform fit diverged at step {step}", step=step
                )
            if step == cfg.steps:
                break
            matrix -= lr * ((g * resid[:, None]).T @ X)
        if cfg.steps == 0:
            return transform, trace
        return LinearMap(matrix), trace

    mlp = transform
    for step in range(cfg.steps + 1):
        loss, grads = _loss_and_grads_mlp(tree, mlp, X, y)
        trace[step] = loss
        if not np.isfinite(loss):
            raise TrainingError(f"transform fit diverged at step {step}", step=step)
        if step == cfg.steps:
            break
        mlp = MlpTransform(
            layer1_weights=mlp.layer1_weights - lr * grads.layer1_weights,
            layer1_biases=mlp.layer1_biases - lr * grads.layer1_biases,
            layer2_weights=mlp.layer2_weights - lr * grads.layer2_weights,
            layer2_biases=mlp.layer2_biases - lr * grads.layer2_biases,
        )
    return mlp, trace


def transform_to_dict(transform: Transform) -> dict:
    doc = transform.to_dict()
    doc["kind"] = "linear" if isinstance(transform, LinearMap) else "mlp"
    return doc


def transform_from_dict(doc: dict) -> Transform:
    kind = doc.get("kind")
    if kind == "linear":
        return LinearMap.from_dict(doc)
    if kind == "mlp":
        return MlpTransform.from_dict(doc)
    raise ValueError(f"unknown transform kind: {kind!r}")
