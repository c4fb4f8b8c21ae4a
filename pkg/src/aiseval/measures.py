"""Performance measures expressed as loss-vector / mapping / Jacobian triples.

A measure here is a target quantity G = g(R) where R = E[l(X, Y)] is a
vector-valued expected loss over the pool and g is a differentiable map.
Writing familiar metrics this way (accuracy, F-scores, MCC, PR curves, ...)
lets one estimator machinery serve all of them: estimate R by importance
sampling, push the estimate through g, and use the Jacobian Dg for the
delta-method covariance and for proposal weighting.

Built-ins store their per-item losses as a small table indexed by a
"loss group" (items sharing a predicted label, or a threshold-grid cell,
share a row), which keeps per-stage proposal updates O(M) with tiny
constants.  User-defined measures fall back to per-item callables.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "PredictionSource",
    "Measure",
    "UndefinedMeasureError",
    "make_binary_measure",
    "make_regression_measure",
    "make_pr_curve_measure",
    "custom_measure",
    "measure_from_spec",
    "eval_risk",
    "softmax_rows",
]

BINARY_KINDS = (
    "accuracy",
    "balanced_accuracy",
    "precision",
    "recall",
    "f_beta",
    "mcc",
    "fowlkes_mallows",
    "brier",
)
REGRESSION_KINDS = ("mae", "mse", "r2")


class UndefinedMeasureError(ValueError):
    """Raised when a measure cannot be constructed for the given inputs."""


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PredictionSource:
    """Classifier outputs over a fixed pool, in pool order.

    predicted : hard label f(x) per item (real-valued for regression).
    scores    : per-class scores s(y|x); rows sum to one (softmax-normalized
                at ingestion when they do not).  None for regression.
    raw       : scalar soft score per item, used for thresholding and
                stratification.
    """

    predicted: np.ndarray
    raw: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.scores is not None:
            sums = self.scores.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=1e-9):
                raise ValueError("score rows must sum to 1; normalize with softmax_rows first")

    @property
    def size(self) -> int:
        return self.predicted.shape[0]

    @property
    def n_classes(self) -> int:
        return 0 if self.scores is None else self.scores.shape[1]


@dataclass(frozen=True)
class Measure:
    """A (loss, map, Jacobian) triple over a fixed pool.

    Exactly one loss backend is populated: ``group_ids``/``loss_table`` for
    finite label spaces (table mode), or ``loss_fn`` for per-item evaluation
    (callable mode, used by the regression measures and custom losses).
    """

    name: str
    loss_dim: int
    out_dim: int
    loss_bound: float
    map_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]
    n_classes: int = 2
    group_ids: Optional[np.ndarray] = None          # (M,) int32
    loss_table: Optional[np.ndarray] = None         # (G, C, d)
    loss_fn: Optional[Callable[[int, float], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.loss_table is None) == (self.loss_fn is None):
            raise ValueError("exactly one of loss_table / loss_fn must be given")

    # -- losses -----------------------------------------------------------
    def loss(self, item: int, label) -> np.ndarray:
        if self.loss_table is not None:
            return self.loss_table[self.group_ids[item], int(label)]
        return np.asarray(self.loss_fn(item, label), dtype=np.float64)

    def loss_values(self, items: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Stacked l(x_i, y_i) for parallel arrays of items and labels."""
        items = np.asarray(items)
        if self.loss_table is not None:
            return self.loss_table[self.group_ids[items], np.asarray(labels, dtype=np.int64)]
        out = np.empty((len(items), self.loss_dim))
        for j, (i, y) in enumerate(zip(items, labels)):
            out[j] = self.loss_fn(int(i), y)
        return out

    # -- map and Jacobian --------------------------------------------------
    def map(self, R: np.ndarray) -> np.ndarray:
        """g(R); coordinates with zero denominators come back NaN (flagged
        undefined, never silently zero)."""
        R = np.asarray(R, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.atleast_1d(np.asarray(self.map_fn(R), dtype=np.float64))

    def jacobian(self, R: np.ndarray) -> np.ndarray:
        R = np.asarray(R, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            J = np.asarray(self.jacobian_fn(R), dtype=np.float64)
        return J.reshape(self.out_dim, self.loss_dim)

    def defined_at(self, R: np.ndarray) -> bool:
        return bool(np.isfinite(self.map(R)).all())

    def spec(self) -> dict:
        return {"kind": self.name, **self.params}


def eval_risk(measure: Measure, items, labels, weights=None) -> np.ndarray:
    """Weight-normalized mean of the loss over a labeled collection.

    This is the plain risk functional R = E[l]; the importance-sampling
    estimator (which divides by the draw count, not the weight total) lives
    in the sampler module.
    """
    items = np.asarray(items)
    if items.size == 0:
        raise ValueError("cannot evaluate a risk over an empty collection")
    L = measure.loss_values(items, labels)
    if weights is None:
        return L.mean(axis=0)
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive total mass")
    return (w[:, None] * L).sum(axis=0) / total


# ---------------------------------------------------------------------------
# Binary classification measures.
# ---------------------------------------------------------------------------

def _safe_div(num, den):
    den = np.asarray(den, dtype=np.float64)
    out = np.asarray(num, dtype=np.float64) / den
    return np.where(den == 0.0, np.nan, out)


def _binary_loss_table(kind: str, beta: float) -> np.ndarray:
    """Loss vectors indexed by (predicted f, true y) for the tabular kinds."""
    table = {
        # d=1: misclassification indicator
        "accuracy": lambda f, y: [float(y != f)],
        # d=3: [y*f, y, f]
        "balanced_accuracy": lambda f, y: [y * f, y, f],
        "mcc": lambda f, y: [y * f, y, f],
        "fowlkes_mallows": lambda f, y: [y * f, y, f],
        # d=2
        "precision": lambda f, y: [y * f, f],
        "recall": lambda f, y: [y * f, y],
        "f_beta": lambda f, y: [y * f, (beta**2 * y + f) / (1.0 + beta**2)],
    }[kind]
    out = np.array([[table(f, y) for y in (0, 1)] for f in (0, 1)], dtype=np.float64)
    return out  # (G=2, C=2, d)


def make_binary_measure(kind: str, predictions: PredictionSource, beta: float = 1.0) -> Measure:
    """Build one of the named binary measures over a prediction source."""
    if kind not in BINARY_KINDS:
        raise UndefinedMeasureError(f"unknown binary measure {kind!r}")
    if predictions.scores is None or predictions.n_classes != 2:
        raise UndefinedMeasureError(f"{kind} requires a binary (2-class) label space")
    if kind == "f_beta" and not beta > 0:
        raise UndefinedMeasureError("f_beta requires beta > 0")

    f = np.asarray(predictions.predicted, dtype=np.int32)
    params = {"beta": beta} if kind == "f_beta" else {}

    if kind == "brier":
        # l = 2*(s(1|x) - y)^2 depends on the continuous score: one group per item.
        s1 = predictions.scores[:, 1]
        table = np.stack([2.0 * s1**2, 2.0 * (s1 - 1.0) ** 2], axis=1)[:, :, None]
        return Measure(
            name="brier", loss_dim=1, out_dim=1,
            loss_bound=float(table.max()),
            map_fn=lambda R: R,
            jacobian_fn=lambda R: np.ones((1, 1)),
            group_ids=np.arange(predictions.size, dtype=np.int32),
            loss_table=table,
        )

    table = _binary_loss_table(kind, beta)
    gid = f.astype(np.int32)

    if kind == "accuracy":
        map_fn = lambda R: 1.0 - R
        jac_fn = lambda R: -np.ones((1, 1))
        d = 1
    elif kind in ("precision", "recall", "f_beta"):
        map_fn = lambda R: _safe_div(R[0], R[1])
        jac_fn = lambda R: np.array([[_safe_div(1.0, R[1]),
                                      _safe_div(-R[0], R[1] ** 2)]])
        d = 2
    elif kind == "balanced_accuracy":
        def map_fn(R):
            den = 2.0 * R[1] * (1.0 - R[1])
            return _safe_div(R[0] + R[1] * (1.0 - R[1] - R[2]), den)

        def jac_fn(R):
            num = R[0] + R[1] * (1.0 - R[1] - R[2])
            den = 2.0 * R[1] * (1.0 - R[1])
            dnum = np.array([1.0, 1.0 - 2.0 * R[1] - R[2], -R[1]])
            dden = np.array([0.0, 2.0 - 4.0 * R[1], 0.0])
            return ((dnum * den - num * dden) / den**2)[None, :]

        d = 3
    elif kind == "mcc":
        def map_fn(R):
            prod = R[1] * R[2] * (1.0 - R[1]) * (1.0 - R[2])
            return _safe_div(R[0] - R[1] * R[2], np.sqrt(prod))

        def jac_fn(R):
            num = R[0] - R[1] * R[2]
            prod = R[1] * R[2] * (1.0 - R[1]) * (1.0 - R[2])
            root = np.sqrt(prod)
            dp1 = R[2] * (1.0 - R[2]) * (1.0 - 2.0 * R[1])
            dp2 = R[1] * (1.0 - R[1]) * (1.0 - 2.0 * R[2])
            return np.array([[
                _safe_div(1.0, root),
                _safe_div(-R[2], root) - num * dp1 / (2.0 * prod * root),
                _safe_div(-R[1], root) - num * dp2 / (2.0 * prod * root),
            ]])

        d = 3
    else:  # fowlkes_mallows
        def map_fn(R):
            return _safe_div(R[0], np.sqrt(R[1] * R[2]))

        def jac_fn(R):
            root = np.sqrt(R[1] * R[2])
            return np.array([[
                _safe_div(1.0, root),
                _safe_div(-R[0], 2.0 * R[1] * root),
                _safe_div(-R[0], 2.0 * R[2] * root),
            ]])

        d = 3

    return Measure(
        name=kind, loss_dim=d, out_dim=1,
        loss_bound=float(np.abs(table).max()),
        map_fn=map_fn, jacobian_fn=jac_fn,
        group_ids=gid, loss_table=table, params=params,
    )


# ---------------------------------------------------------------------------
# Regression measures (callable losses over a real label space).
# ---------------------------------------------------------------------------

def make_regression_measure(kind: str, predictions: PredictionSource,
                            label_bound: float = 1.0) -> Measure:
    """MAE / MSE / coefficient-of-determination over real-valued predictions.

    ``label_bound`` is a sup bound on |y| used only to report loss_bound;
    predictions carry f(x) in ``predicted``.
    """
    if kind not in REGRESSION_KINDS:
        raise UndefinedMeasureError(f"unknown regression measure {kind!r}")
    f = np.asarray(predictions.predicted, dtype=np.float64)
    fmax = float(np.abs(f).max()) if f.size else 0.0
    b = float(label_bound)

    if kind == "mae":
        return Measure(
            name="mae", loss_dim=1, out_dim=1, loss_bound=b + fmax,
            map_fn=lambda R: R, jacobian_fn=lambda R: np.ones((1, 1)),
            n_classes=0, loss_fn=lambda i, y: np.array([abs(y - f[i])]),
        )
    if kind == "mse":
        return Measure(
            name="mse", loss_dim=1, out_dim=1, loss_bound=(b + fmax) ** 2,
            map_fn=lambda R: R, jacobian_fn=lambda R: np.ones((1, 1)),
            n_classes=0, loss_fn=lambda i, y: np.array([(y - f[i]) ** 2]),
        )

    # r2: l = [y, y^2, f, f^2]; g = (R4 - 2 R1 R3 + R1^2) / (R2 - R1^2)
    def map_fn(R):
        return _safe_div(R[3] - 2.0 * R[0] * R[2] + R[0] ** 2, R[1] - R[0] ** 2)

    def jac_fn(R):
        num = R[3] - 2.0 * R[0] * R[2] + R[0] ** 2
        den = R[1] - R[0] ** 2
        dnum = np.array([-2.0 * R[2] + 2.0 * R[0], 0.0, -2.0 * R[0], 1.0])
        dden = np.array([-2.0 * R[0], 1.0, 0.0, 0.0])
        return ((dnum * den - num * dden) / den**2)[None, :]

    return Measure(
        name="r2", loss_dim=4, out_dim=1,
        loss_bound=max(b, b**2, fmax, fmax**2, 1.0),
        map_fn=map_fn, jacobian_fn=jac_fn,
        n_classes=0, loss_fn=lambda i, y: np.array([y, y**2, f[i], f[i] ** 2]),
    )


# ---------------------------------------------------------------------------
# Precision-recall curves over a threshold grid.
# ---------------------------------------------------------------------------

def make_pr_curve_measure(thresholds: Sequence[float], predictions: PredictionSource) -> Measure:
    """Precision and recall at each of L thresholds as one vector measure.

    Loss layout: [1{raw >= t_l}]_l, [y * 1{raw >= t_l}]_l, y  (length 2L+1).
    Output layout: L precisions then L recalls.
    """
    tau = np.asarray(thresholds, dtype=np.float64)
    L = tau.shape[0]
    if L == 0:
        raise UndefinedMeasureError("threshold grid is empty")
    if not np.all(np.diff(tau) > 0):
        raise UndefinedMeasureError("thresholds must be strictly ascending")
    if predictions.scores is None or predictions.n_classes != 2:
        raise UndefinedMeasureError("PR curves require a binary label space")

    # Group = how many thresholds the raw score clears; G = L+1 rows.
    gid = np.searchsorted(tau, predictions.raw, side="right").astype(np.int32)
    d = 2 * L + 1
    table = np.zeros((L + 1, 2, d))
    for g in range(L + 1):
        above = (np.arange(L) < g).astype(np.float64)  # 1{raw >= t_l}
        for y in (0, 1):
            table[g, y, :L] = above
            table[g, y, L:2 * L] = y * above
            table[g, y, 2 * L] = y

    def map_fn(R):
        prec = _safe_div(R[L:2 * L], R[:L])
        rec = _safe_div(R[L:2 * L], R[2 * L])
        return np.concatenate([prec, rec])

    def jac_fn(R):
        J = np.zeros((2 * L, d))
        for l in range(L):
            J[l, l] = _safe_div(-R[L + l], R[l] ** 2)
            J[l, L + l] = _safe_div(1.0, R[l])
            J[L + l, L + l] = _safe_div(1.0, R[2 * L])
            J[L + l, 2 * L] = _safe_div(-R[L + l], R[2 * L] ** 2)
        return J

    return Measure(
        name="pr_curve", loss_dim=d, out_dim=2 * L, loss_bound=1.0,
        map_fn=map_fn, jacobian_fn=jac_fn,
        group_ids=gid, loss_table=table,
        params={"thresholds": [float(t) for t in tau]},
    )


# ---------------------------------------------------------------------------
# Custom measures and config-file dispatch.
# ---------------------------------------------------------------------------

def custom_measure(name: str, loss_fn, map_fn, loss_dim: int, out_dim: int,
                   loss_bound: float, jacobian_fn=None, n_classes: int = 2) -> Measure:
    """Wrap user-supplied callables as a Measure.

    Without an analytic ``jacobian_fn`` a central finite-difference fallback
    is installed (and noted in the run log, since it is slower and less
    accurate than the analytic Jacobians of the built-ins).
    """
    if jacobian_fn is None:
        log.info("measure %s: using finite-difference Jacobian fallback", name)

        def jacobian_fn(R, _f=map_fn):
            R = np.asarray(R, dtype=np.float64)
            J = np.empty((out_dim, loss_dim))
            for j in range(loss_dim):
                h = 1e-6 * max(abs(R[j]), 1.0)
                up, dn = R.copy(), R.copy()
                up[j] += h
                dn[j] -= h
                J[:, j] = (np.atleast_1d(_f(up)) - np.atleast_1d(_f(dn))) / (2.0 * h)
            return J

    return Measure(
        name=name, loss_dim=loss_dim, out_dim=out_dim, loss_bound=loss_bound,
        map_fn=map_fn, jacobian_fn=jacobian_fn, n_classes=n_classes, loss_fn=loss_fn,
    )


def measure_from_spec(spec: dict, predictions: PredictionSource) -> Measure:
    """Build a measure from a config-file entry like {"kind": "f_beta", "beta": 0.5}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind in BINARY_KINDS:
        return make_binary_measure(kind, predictions, **spec)
    if kind in REGRESSION_KINDS:
        return make_regression_measure(kind, predictions, **spec)
    if kind == "pr_curve":
        return make_pr_curve_measure(spec.pop("thresholds"), predictions)
    raise UndefinedMeasureError(f"unknown measure kind {kind!r}")
