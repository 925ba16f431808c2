"""Evaluation: error curves, the finite-difference oracle, weight recovery.

The per-step curve convention: for series ``i`` with test-window losses
``l_t = (y_t - yhat_t)^2``, ``mse_t`` averages ``l_t`` across series at each
``t`` and ``cmse_t`` is its running time average.  The finite-difference
gradient here is the independent check used against every analytic gradient
in the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import boosting, transform as tr, tree as tree_mod
from .data import SynthSpec, generate_synthetic
from .errors import OracleError, TrainingError

__all__ = [
    "EvalReport",
    "WeightRecoveryReport",
    "GradCheckResult",
    "mse_curves",
    "fd_gradient",
    "gradient_relative_error",
    "run_gradient_checks",
    "weight_recovery_experiment",
    "write_curves_csv",
]


@dataclass(frozen=True)
class EvalReport:
    """Per-step and aggregate squared-error summaries over a test window."""

    mse_t: np.ndarray
    cmse_t: np.ndarray
    aggregate_mse: float
    per_series_mse: dict[int, float]
    model_tag: str

    def to_dict(self) -> dict:
        return {
            "model_tag": self.model_tag,
            "aggregate_mse": self.aggregate_mse,
            "mse_t": self.mse_t.tolist(),
            "cmse_t": self.cmse_t.tolist(),
            "per_series_mse": {str(k): v for k, v in
                               sorted(self.per_series_mse.items())},
        }


def mse_curves(predictions: Mapping[int, np.ndarray],
               truths: Mapping[int, np.ndarray],
               model_tag: str = "model") -> EvalReport:
    """Build the error curves from aligned per-series predictions and truths."""
    if not predictions:
        raise ValueError("need at least one series")
    if set(predictions) != set(truths):
        raise ValueError("predictions and truths disagree on series ids")
    losses = []
    per_series = {}
    length = None
    for sid in sorted(predictions):
        pred = np.asarray(predictions[sid], dtype=np.float64)
        truth = np.asarray(truths[sid], dtype=np.float64)
        if pred.shape != truth.shape or pred.ndim != 1:
            raise ValueError(
                f"series {sid}: prediction shape {pred.shape} does not match "
                f"truth shape {truth.shape}"
            )
        if length is None:
            length = len(pred)
        elif len(pred) != length:
            raise ValueError(
                f"series {sid}: length {len(pred)} differs from {length}"
            )
        l_t = (truth - pred) ** 2
        losses.append(l_t)
        per_series[int(sid)] = float(l_t.mean())
    stacked = np.vstack(losses)
    mse_t = stacked.mean(axis=0)
    cmse_t = np.cumsum(mse_t) / np.arange(1, len(mse_t) + 1)
    return EvalReport(
        mse_t=mse_t,
        cmse_t=cmse_t,
        aggregate_mse=float(stacked.mean()),
        per_series_mse=per_series,
        model_tag=model_tag,
    )


def write_curves_csv(report: EvalReport, path) -> None:
    """Dump the curves as (t, mse, cmse) rows for external plotting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mse", "cmse"])
        for t, (m, c) in enumerate(zip(report.mse_t, report.cmse_t), start=1):
            writer.writerow([t, repr(float(m)), repr(float(c))])


def fd_gradient(function: Callable[[np.ndarray], float], point,
                h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError(f"step must be > 0, got {h}")
    point = np.array(point, dtype=np.float64)  # private copy, perturbed in place
    grad = np.empty(point.shape)
    flat = point.ravel()
    out = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        up = function(point)
        flat[j] = orig - h
        down = function(point)
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise OracleError(f"function not finite near coordinate {j}")
        out[j] = (up - down) / (2.0 * h)
    return grad


def gradient_relative_error(analytic, numeric) -> float:
    """Two-sided relative error |a - f| / (|a| + |f| + 1e-12) on flat vectors."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    f = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(f) + 1e-12
    return float(np.linalg.norm(a - f) / denom)


@dataclass(frozen=True)
class GradCheckResult:
    """Worst relative error per gradient kind over all random trials."""

    max_errors: dict[str, float]
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_errors.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "trials": self.trials,
            "max_errors": dict(sorted(self.max_errors.items())),
        }


def _random_tree(rng, depth, dim):
    n_nodes = 2**depth - 1
    return tree_mod.SoftTree(
        depth=depth,
        node_weights=rng.standard_normal((n_nodes, dim)),
        node_biases=rng.standard_normal(n_nodes),
        leaf_values=rng.standard_normal(2**depth),
    )


def _flatten_tree_params(g: tree_mod.TreeGradients) -> np.ndarray:
    return np.concatenate([g.node_weights.ravel(), g.node_biases, g.leaf_values])


def _flatten_mlp_params(g) -> np.ndarray:
    return np.concatenate([
        g.layer1_weights.ravel(), g.layer1_biases,
        g.layer2_weights.ravel(), g.layer2_biases,
    ])


def run_gradient_checks(trials: int = 100, depths=(1, 2, 3, 4),
                        max_d_in: int = 16, max_d_out: int = 8,
                        h: float = 1e-5, tolerance: float = 1e-6,
                        seed: int = 0, fault: str | None = None) -> GradCheckResult:
    """Compare every analytic gradient against finite differences.

    Each trial draws a random tree (depth from ``depths``, input dimension
    up to ``max_d_out``), a random linear map and perceptron, and random
    data, then checks the input, tree-parameter, transform and loss
    gradients.  ``fault="sign-flip"`` negates the analytic side, which must
    make the run fail; it exists to prove the oracle has teeth.
    """
    if fault not in (None, "sign-flip"):
        raise ValueError(f"unknown fault mode {fault!r}")
    sign = -1.0 if fault == "sign-flip" else 1.0
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in
             ("grad_input", "grad_params", "grad_linear",
              "grad_loss_linear", "grad_mlp")}

    for _ in range(trials):
        depth = int(rng.choice(depths))
        d_out = int(rng.integers(1, max_d_out + 1))
        d_in = int(rng.integers(d_out, max(max_d_in, d_out) + 1))
        tree = _random_tree(rng, depth, d_out)
        z = rng.standard_normal(d_out)

        analytic = sign * tree_mod.grad_input(tree, z)
        numeric = fd_gradient(lambda v: tree_mod.forward(tree, v), z.copy(), h)
        worst["grad_input"] = max(worst["grad_input"],
                                  gradient_relative_error(analytic, numeric))

        upstream = float(rng.standard_normal())
        grads = tree_mod.grad_params(tree, z, upstream)
        packed = _flatten_tree_params(grads)

        def tree_value(theta, _tree=tree, _z=z, _u=upstream):
            n_w = _tree.node_weights.size
            n_b = _tree.node_biases.size
            probe = tree_mod.SoftTree(
                depth=_tree.depth,
                node_weights=theta[:n_w].reshape(_tree.node_weights.shape),
                node_biases=theta[n_w:n_w + n_b],
                leaf_values=theta[n_w + n_b:],
            )
            return _u * tree_mod.forward(probe, _z)

        theta0 = np.concatenate([tree.node_weights.ravel(), tree.node_biases,
                                 tree.leaf_values])
        numeric = fd_gradient(tree_value, theta0, h)
        worst["grad_params"] = max(worst["grad_params"],
                                   gradient_relative_error(sign * packed, numeric))

        q = tr.LinearMap(rng.standard_normal((d_out, d_in)))
        x = rng.standard_normal(d_in)
        analytic = sign * tr.grad_linear(tree, q, x)

        def q_value(flat, _tree=tree, _x=x, _shape=q.matrix.shape):
            probe = tr.LinearMap(flat.reshape(_shape))
            return tree_mod.forward(_tree, probe.matrix @ _x)

        numeric = fd_gradient(q_value, q.matrix.ravel().copy(), h)
        worst["grad_linear"] = max(
            worst["grad_linear"],
            gradient_relative_error(analytic, numeric.reshape(q.matrix.shape)),
        )

        n = int(rng.integers(2, 9))
        X = rng.standard_normal((n, d_in))
        y = rng.standard_normal(n)
        analytic = sign * tr.grad_loss_linear(tree, q, X, y)

        def q_loss(flat, _tree=tree, _X=X, _y=y, _shape=q.matrix.shape):
            probe = tr.LinearMap(flat.reshape(_shape))
            resid = tree_mod.forward_batch(_tree, _X @ probe.matrix.T) - _y
            return 0.5 * float(resid @ resid)

        numeric = fd_gradient(q_loss, q.matrix.ravel().copy(), h)
        worst["grad_loss_linear"] = max(
            worst["grad_loss_linear"],
            gradient_relative_error(analytic, numeric.reshape(q.matrix.shape)),
        )

        hidden = int(rng.integers(1, 5))
        mlp = tr.MlpTransform(
            layer1_weights=rng.standard_normal((hidden, d_in)),
            layer1_biases=rng.standard_normal(hidden),
            layer2_weights=rng.standard_normal((d_out, hidden)),
            layer2_biases=rng.standard_normal(d_out),
        )
        analytic_mlp = sign * _flatten_mlp_params(tr.grad_mlp(tree, mlp, x))

        def mlp_value(theta, _tree=tree, _mlp=mlp, _x=x):
            s1 = _mlp.layer1_weights.size
            s2 = s1 + _mlp.layer1_biases.size
            s3 = s2 + _mlp.layer2_weights.size
            probe = tr.MlpTransform(
                layer1_weights=theta[:s1].reshape(_mlp.layer1_weights.shape),
                layer1_biases=theta[s1:s2],
                layer2_weights=theta[s2:s3].reshape(_mlp.layer2_weights.shape),
                layer2_biases=theta[s3:],
            )
            return tree_mod.forward(_tree, tr.apply(probe, _x[None, :])[0])

        theta0 = _flatten_mlp_params(mlp)
        numeric = fd_gradient(mlp_value, theta0, h)
        worst["grad_mlp"] = max(worst["grad_mlp"],
                                gradient_relative_error(analytic_mlp, numeric))

    return GradCheckResult(max_errors=worst, tolerance=tolerance, trials=trials)


@dataclass(frozen=True)
class WeightRecoveryReport:
    """Mean/std of the learned transform row across repeated trainings."""

    runs: int
    mean_weights: np.ndarray
    std_weights: np.ndarray
    true_weights_normalized: np.ndarray

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "mean_weights": self.mean_weights.tolist(),
            "std_weights": self.std_weights.tolist(),
            "true_weights_normalized": self.true_weights_normalized.tolist(),
        }


def normalize_weight_vector(q: np.ndarray) -> np.ndarray:
    """Unit L1 norm, sign fixed so the largest-magnitude entry is positive."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.abs(q).sum()
    if norm == 0:
        raise ValueError("cannot normalize an all-zero weight vector")
    q = q / norm
    if q[np.argmax(np.abs(q))] < 0:
        q = -q
    return q


def weight_recovery_experiment(spec: SynthSpec, runs: int,
                               cfg: boosting.BoostConfig) -> WeightRecoveryReport:
    """Repeatedly train BSDTQ on one fixed dataset and aggregate the learned row.

    The dataset (including its ground-truth weights) is generated once from
    ``spec``; only the training seed varies across runs, so the spread of the
    learned weights isolates initialization sensitivity.  Each run's final
    transform row is L1-normalized (sign-fixed) before averaging.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if cfg.transform_dim != 1:
        raise ValueError("weight recovery requires transform_dim == 1")
    ds, true_w = generate_synthetic(spec)
    d = ds.n_features
    true_norm = np.zeros(d)
    true_norm[: len(true_w)] = true_w
    true_norm = normalize_weight_vector(true_norm)

    run_seeds = np.random.default_rng(cfg.seed).integers(0, 2**63, size=runs)
    rows = np.empty((runs, d))
    for i in range(runs):
        run_cfg = replace(cfg, seed=int(run_seeds[i]))
        try:
            model, _ = boosting.train(ds.features, ds.target, run_cfg,
                                      boosting.Variant.BSDTQ)
        except TrainingError as err:
            raise TrainingError(f"run {i}: {err}", step=err.step,
                                round_index=err.round_index) from err
        final_transform = model.stages[-1][0]
        rows[i] = normalize_weight_vector(final_transform.matrix[0])

    return WeightRecoveryReport(
        runs=runs,
        mean_weights=rows.mean(axis=0),
        std_weights=rows.std(axis=0, ddof=0),
        true_weights_normalized=true_norm,
    )
