"""
Classifiers and their evaluation.

Two learners, both trained from scratch on the reduced (normalised and
selected) feature set:
    LR       L2-regularised logistic regression, full-batch gradient descent
             with Armijo backtracking from a zero start.
    SVM_RBF  soft-margin kernel SVM, dual solved by SMO with maximal
             violating pair selection.

Evaluation follows the bootstrap protocol: B_c models are trained on
resamples of the training set and scored on the fixed test set; the report
carries the mean and the 5th/95th percentiles of their ROC AUC. Stratified
k-fold confusion matrices support the comparison with the subspace baseline.

Depends on: core.py, feature_selection.py
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy.stats
from scipy.spatial.distance import cdist
from scipy.special import expit

from core import CLASS_LABELS, Dataset, InputError, SchemaMismatchError, first_difference
from feature_selection import (
    Measure,
    NormStats,
    SelectionConfig,
    SelectionResult,
    bootstrap_resample,
    bootstrap_select,
    zscore_fit_transform,
)

logger = logging.getLogger(__name__)


MODEL_FORMAT_VERSION = 1
ARMIJO_C = 1e-4
SVM_TAU = 1e-12          # floor for a non-positive curvature in the pair update


class ModelKind(str, enum.Enum):
    LR = "LR"
    SVM_RBF = "SVM_RBF"

    @classmethod
    def parse(cls, value) -> ModelKind:
        if isinstance(value, cls):
            return value
        text = str(value).strip().upper()
        if text in ("SVM", "RBF", "SVM-RBF"):
            text = "SVM_RBF"
        try:
            return cls(text)
        except ValueError:
            raise InputError(f"unknown model kind {value!r} (expected LR or SVM_RBF)") from None


@dataclass(frozen=True)
class LearnerConfig:
    lr_lambda: float = 1e-2
    lr_max_iters: int = 5000
    lr_tol: float = 1e-6
    svm_c: float = 1.0
    svm_gamma: float | str = "auto"
    svm_max_iters: int = 100_000
    svm_tol: float = 1e-3

    def __post_init__(self):
        if self.lr_lambda < 0:
            raise InputError(f"lr_lambda must be >= 0, got {self.lr_lambda}")
        if self.svm_c <= 0:
            raise InputError(f"svm_c must be positive, got {self.svm_c}")
        if self.svm_gamma != "auto" and not (isinstance(self.svm_gamma, (int, float))
                                             and self.svm_gamma > 0):
            raise InputError(f"svm_gamma must be 'auto' or positive, got {self.svm_gamma!r}")
        if min(self.lr_max_iters, self.svm_max_iters) < 1:
            raise InputError("iteration limits must be >= 1")
        if min(self.lr_tol, self.svm_tol) <= 0:
            raise InputError("tolerances must be positive")


# ---------------------------------------------------------------------------
# Trained model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainedModel:
    """A fitted classifier plus the preparation that feeds it.

    feature_names is the raw schema the model accepts; norm_stats (when
    present) z-scores that schema and selected_indices then picks the
    columns the classifier was trained on.

    LR: weights has one entry per selected feature.
    SVM_RBF: weights holds alpha_i * y_i for each support vector.
    Decision score is X @ w + b (LR) or sum_i w_i K(x_i, x) + b (SVM).
    """
    kind: ModelKind
    weights: np.ndarray
    bias: float
    feature_names: tuple[str, ...]
    selected_indices: tuple[int, ...]
    norm_stats: NormStats | None = None
    support_vectors: np.ndarray | None = None
    gamma: float | None = None
    converged: bool = True
    iterations: int = 0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "selected_indices", tuple(int(i) for i in self.selected_indices))
        if self.support_vectors is not None:
            object.__setattr__(self, "support_vectors",
                               np.atleast_2d(np.asarray(self.support_vectors, dtype=float)))
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise InputError("model parameters must be finite")
        if any(not 0 <= i < len(self.feature_names) for i in self.selected_indices):
            raise InputError("selected indices fall outside the model's feature schema")

    @property
    def selected_names(self) -> tuple[str, ...]:
        return tuple(self.feature_names[i] for i in self.selected_indices)

    def decision_function(self, X) -> np.ndarray:
        """Scores for rows that are already normalised and selected."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind is ModelKind.LR:
            return X @ self.weights + self.bias
        return rbf_kernel(X, self.support_vectors, self.gamma) @ self.weights + self.bias

    def prepare(self, data: Dataset) -> np.ndarray:
        """Normalise and select the raw rows of a dataset."""
        if data.feature_names != self.feature_names:
            column = first_difference(data.feature_names, self.feature_names)
            raise SchemaMismatchError(
                f"dataset does not match the model schema (column {column!r})", column=column
            )
        X = data.matrix
        if self.norm_stats is not None:
            X = self.norm_stats.transform(X)
        return X[:, list(self.selected_indices)]

    def decision_scores(self, data: Dataset) -> np.ndarray:
        return self.decision_function(self.prepare(data))

    def predict(self, data: Dataset, threshold: float = 0.5) -> np.ndarray:
        """Class labels; LR thresholds the probability, SVM the sign of the score."""
        scores = self.decision_scores(data)
        if self.kind is ModelKind.LR:
            return (expit(scores) >= threshold).astype(int)
        return (scores > 0).astype(int)

    def to_dict(self) -> dict[str, Any]:
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_names": list(self.feature_names),
            "selected_indices": list(self.selected_indices),
            "converged": self.converged,
            "iterations": self.iterations,
            "flags": list(self.flags),
            "gamma": self.gamma,
            "support_vectors": (None if self.support_vectors is None
                                else self.support_vectors.tolist()),
            "norm_stats": None,
        }
        if self.norm_stats is not None:
            payload["norm_stats"] = {
                "mean": self.norm_stats.mean.tolist(),
                "std": self.norm_stats.std.tolist(),
                "constant": list(self.norm_stats.constant),
            }
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> TrainedModel:
        version = payload.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise InputError(f"unsupported model format_version {version!r}")
        names = tuple(payload["feature_names"])
        stats = payload.get("norm_stats")
        return cls(
            kind=payload["kind"],
            weights=np.asarray(payload["weights"], dtype=float),
            bias=float(payload["bias"]),
            feature_names=names,
            selected_indices=tuple(payload["selected_indices"]),
            norm_stats=None if stats is None else NormStats(
                names, stats["mean"], stats["std"], tuple(stats.get("constant", ()))
            ),
            support_vectors=payload.get("support_vectors"),
            gamma=payload.get("gamma"),
            converged=bool(payload.get("converged", True)),
            iterations=int(payload.get("iterations", 0)),
            flags=tuple(payload.get("flags", ())),
        )


def _check_training_set(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    y = train.labels
    if len(train) == 0:
        raise InputError("empty training set")
    if set(np.unique(y).tolist()) != set(CLASS_LABELS):
        raise InputError("training set must contain both classes")
    return train.matrix, y


def _schema(train: Dataset, norm_stats: NormStats | None,
            selected_indices: Sequence[int] | None) -> tuple[tuple[str, ...], tuple[int, ...]]:
    if norm_stats is None and selected_indices is None:
        return train.feature_names, tuple(range(train.dimension))
    names = norm_stats.feature_names if norm_stats is not None else train.feature_names
    indices = tuple(selected_indices) if selected_indices is not None else tuple(range(len(names)))
    if len(indices) != train.dimension:
        raise InputError(f"{len(indices)} selected indices for {train.dimension} training columns")
    return names, indices


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def lr_loss_and_grad(params, X, y, l2_lambda: float) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood + (lambda/2)||w||^2 and its gradient.

    params is [w_1..w_d, b]; the bias is not regularised.
    """
    params = np.asarray(params, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w, b = params[:-1], params[-1]
    s = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, s) - y * s) + 0.5 * l2_lambda * (w @ w))
    residual = (expit(s) - y) / y.size
    grad = np.append(X.T @ residual + l2_lambda * w, residual.sum())
    return loss, grad


def train_lr(train: Dataset, l2_lambda: float = 1e-2, max_iters: int = 5000,
             tol: float = 1e-6, *, norm_stats: NormStats | None = None,
             selected_indices: Sequence[int] | None = None) -> TrainedModel:
    """Gradient descent with backtracking until ||grad|| <= tol or max_iters."""
    X, y = _check_training_set(train)
    names, indices = _schema(train, norm_stats, selected_indices)

    params = np.zeros(X.shape[1] + 1)
    loss, grad = lr_loss_and_grad(params, X, y, l2_lambda)
    step = 1.0
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        g2 = float(grad @ grad)
        if math.sqrt(g2) <= tol:
            converged = True
            break
        while True:
            candidate = params - step * grad
            cand_loss, cand_grad = lr_loss_and_grad(candidate, X, y, l2_lambda)
            if cand_loss <= loss - ARMIJO_C * step * g2 or step < 1e-12:
                break
            step *= 0.5
        params, loss, grad = candidate, cand_loss, cand_grad
        step = min(step * 2.0, 1e6)
    else:
        converged = math.sqrt(float(grad @ grad)) <= tol

    flags = ()
    if not converged:
        logger.warning("train_lr: gradient norm %.3g > tol %.3g after %d iterations",
                       float(np.linalg.norm(grad)), tol, max_iters)
        flags = ("not_converged",)
    return TrainedModel(
        kind=ModelKind.LR,
        weights=params[:-1],
        bias=float(params[-1]),
        feature_names=names,
        selected_indices=indices,
        norm_stats=norm_stats,
        converged=converged,
        iterations=iteration,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# RBF support vector machine
# ---------------------------------------------------------------------------

def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * ||A_i - B_j||^2)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


def auto_gamma(X) -> float:
    """1 / (d' * mean feature variance)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    var = float(np.mean(X.var(axis=0)))
    if var <= 0.0:
        return 1.0 / X.shape[1]
    return 1.0 / (X.shape[1] * var)


@dataclass(frozen=True)
class SMOResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool


def dual_objective(alpha, K, y_signed) -> float:
    """0.5 a^T Q a - sum(a) with Q_ij = y_i y_j K_ij."""
    a = np.asarray(alpha, dtype=float) * np.asarray(y_signed, dtype=float)
    return float(0.5 * a @ np.asarray(K) @ a - np.sum(alpha))


def _rho(alpha: np.ndarray, y: np.ndarray, G: np.ndarray, C: float) -> float:
    yG = y * G
    upper = alpha >= C
    lower = alpha <= 0.0
    free = ~(upper | lower)
    if free.any():
        return float(np.mean(yG[free]))
    ub_mask = (upper & (y < 0)) | (lower & (y > 0))
    lb_mask = (upper & (y > 0)) | (lower & (y < 0))
    ub = float(yG[ub_mask].min()) if ub_mask.any() else math.inf
    lb = float(yG[lb_mask].max()) if lb_mask.any() else -math.inf
    if math.isinf(ub) and math.isinf(lb):
        return 0.0
    if math.isinf(ub):
        return lb
    if math.isinf(lb):
        return ub
    return 0.5 * (ub + lb)


def smo_solve(K, y_signed, C: float, tol: float = 1e-3,
              max_iters: int = 100_000) -> SMOResult:
    """Solve min 0.5 a^T Q a - e^T a s.t. 0 <= a <= C, y^T a = 0.

    Works on the maximal violating pair each iteration and stops when the
    KKT gap m(a) - M(a) drops below tol.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y_signed, dtype=float)
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)

    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        minus_yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yG[up])])
        j = int(np.flatnonzero(low)[np.argmin(minus_yG[low])])
        if minus_yG[i] - minus_yG[j] < tol:
            converged = True
            break

        old_i, old_j = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = SVM_TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total

        G += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)

    return SMOResult(alpha=alpha, rho=_rho(alpha, y, G, C),
                     iterations=iteration, converged=converged)


def train_svm_rbf(train: Dataset, C: float = 1.0, gamma: float | str = "auto",
                  max_iters: int = 100_000, tol: float = 1e-3, *,
                  norm_stats: NormStats | None = None,
                  selected_indices: Sequence[int] | None = None) -> TrainedModel:
    """Soft-margin RBF SVM; class 1 is the positive side of the decision score."""
    X, labels = _check_training_set(train)
    names, indices = _schema(train, norm_stats, selected_indices)
    if C <= 0:
        raise InputError(f"C must be positive, got {C}")
    g = auto_gamma(X) if gamma == "auto" else float(gamma)

    y = np.where(labels == 1, 1.0, -1.0)
    result = smo_solve(rbf_kernel(X, X, g), y, C, tol, max_iters)
    support = result.alpha > 0.0

    flags = ()
    if not result.converged:
        logger.warning("train_svm_rbf: KKT gap above tol %.3g after %d iterations",
                       tol, max_iters)
        flags = ("not_converged",)
    return TrainedModel(
        kind=ModelKind.SVM_RBF,
        weights=result.alpha[support] * y[support],
        bias=-result.rho,
        feature_names=names,
        selected_indices=indices,
        norm_stats=norm_stats,
        support_vectors=X[support],
        gamma=g,
        converged=result.converged,
        iterations=result.iterations,
        flags=flags,
    )


def train_model(train: Dataset, kind: ModelKind | str, learner: LearnerConfig = LearnerConfig(),
                **preparation) -> TrainedModel:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.LR:
        return train_lr(train, learner.lr_lambda, learner.lr_max_iters, learner.lr_tol,
                        **preparation)
    return train_svm_rbf(train, learner.svm_c, learner.svm_gamma, learner.svm_max_iters,
                         learner.svm_tol, **preparation)


# ---------------------------------------------------------------------------
# ROC AUC and bootstrap evaluation
# ---------------------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant pairs + 0.5 * tied pairs) / (n0 * n1)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.size != y.size:
        raise InputError(f"{s.size} scores for {y.size} labels")
    n1 = int(np.count_nonzero(y == 1))
    n0 = int(np.count_nonzero(y == 0))
    if n0 == 0 or n1 == 0 or n0 + n1 != y.size:
        raise InputError("AUC needs 0/1 labels with both classes present")
    ranks = scipy.stats.rankdata(s)           # average ranks for ties
    u = float(np.sum(ranks[y == 1])) - n1 * (n1 + 1) / 2.0
    return u / (n0 * n1)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes (0 = line trip)."""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=int).reshape(2, 2)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def row_percentages(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(totals > 0, 100.0 * self.counts / totals, 0.0)
        return pct

    @property
    def accuracy(self) -> float:
        total = int(self.counts.sum())
        return float(np.trace(self.counts)) / total if total else 0.0

    @classmethod
    def from_predictions(cls, labels, predictions) -> ConfusionMatrix:
        counts = np.zeros((2, 2), dtype=int)
        np.add.at(counts, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)
        return cls(counts)

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class EvalReport:
    auc_mean: float
    auc_p5: float
    auc_p95: float
    per_bootstrap_auc: np.ndarray
    model_kind: ModelKind
    n_train: int
    n_test: int
    confusion: ConfusionMatrix | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        payload = {
            "auc_mean": self.auc_mean,
            "auc_p5": self.auc_p5,
            "auc_p95": self.auc_p95,
            "bootstraps": int(self.per_bootstrap_auc.size),
            "per_bootstrap_auc": self.per_bootstrap_auc.tolist(),
            "model_kind": self.model_kind.value,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "flags": list(self.flags),
        }
        if self.confusion is not None:
            payload["confusion"] = self.confusion.counts.tolist()
        return payload


def _fit_and_score(job) -> tuple[float, int, bool]:
    train, test, kind, learner, child = job
    rng = np.random.default_rng(child)
    idx, redraws = bootstrap_resample(train.labels, rng)
    model = train_model(train.take(idx), kind, learner)
    return roc_auc(model.decision_function(test.matrix), test.labels), redraws, model.converged


def auc_summary(aucs) -> tuple[float, float, float]:
    """(mean, p5, p95) of bootstrap AUCs; percentiles interpolate the sorted values."""
    ordered = np.sort(np.asarray(aucs, dtype=float))
    if ordered.size == 0:
        raise InputError("no bootstrap AUCs to summarise")
    p5, p95 = np.percentile(ordered, [5.0, 95.0], method="linear")
    return math.fsum(ordered) / ordered.size, float(p5), float(p95)


def bootstrap_evaluate(train: Dataset, test: Dataset, kind: ModelKind | str, B_c: int = 200,
                       seed: int = 0, learner: LearnerConfig = LearnerConfig(),
                       workers: int = 1) -> EvalReport:
    """Train B_c models on resamples of `train`, score each on `test`."""
    kind = ModelKind.parse(kind)
    if B_c < 1:
        raise InputError(f"B_c must be >= 1, got {B_c}")
    if train.feature_names != test.feature_names:
        column = first_difference(test.feature_names, train.feature_names)
        raise SchemaMismatchError(f"train and test schemas differ (column {column!r})",
                                  column=column)
    _check_training_set(train)
    if set(np.unique(test.labels).tolist()) != set(CLASS_LABELS):
        raise InputError("test set must contain both classes")

    jobs = [(train, test, kind, learner, child)
            for child in np.random.SeedSequence(seed).spawn(B_c)]
    if workers > 1 and B_c > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_and_score, jobs))
    else:
        results = [_fit_and_score(job) for job in jobs]

    aucs = np.array([auc for auc, _, _ in results])
    redraws = sum(r for _, r, _ in results)
    unconverged = sum(1 for *_, ok in results if not ok)
    flags = []
    if redraws:
        logger.warning("bootstrap evaluation: redrew %d class-degenerate resample(s)", redraws)
    if unconverged:
        flags.append(f"not_converged:{unconverged}")

    mean, p5, p95 = auc_summary(aucs)
    if not p5 <= mean <= p95:
        logger.warning("bootstrap AUC mean %.4f lies outside [p5, p95] = [%.4f, %.4f]",
                       mean, p5, p95)
        flags.append("mean_outside_percentiles")
    return EvalReport(
        auc_mean=mean,
        auc_p5=p5,
        auc_p95=p95,
        per_bootstrap_auc=aucs,
        model_kind=kind,
        n_train=len(train),
        n_test=len(test),
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Splits and the fit pipeline
# ---------------------------------------------------------------------------

def stratified_split(data: Dataset, test_fraction: float, seed: int = 0
                     ) -> tuple[Dataset, Dataset]:
    """Per-class shuffled split; both halves keep both classes and row order."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = data.labels
    rng = np.random.default_rng(seed)
    test_rows = []
    for label in CLASS_LABELS:
        rows = np.flatnonzero(labels == label)
        if rows.size < 2:
            raise InputError(f"class {label} has {rows.size} rows; a split needs >= 2")
        n_test = min(rows.size - 1, max(1, int(round(test_fraction * rows.size))))
        test_rows.extend(rng.permutation(rows)[:n_test].tolist())
    test_mask = np.zeros(len(data), dtype=bool)
    test_mask[test_rows] = True
    return data.take(np.flatnonzero(~test_mask)), data.take(np.flatnonzero(test_mask))


def stratified_folds(labels, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Fold id (0..folds-1) per row; every class is spread evenly over folds."""
    y = np.asarray(labels, dtype=int)
    if folds < 2:
        raise InputError(f"need at least 2 folds, got {folds}")
    assignment = np.empty(y.size, dtype=int)
    rng = np.random.default_rng(seed)
    for label in CLASS_LABELS:
        rows = np.flatnonzero(y == label)
        if rows.size < folds:
            raise InputError(f"class {label} has {rows.size} rows, fewer than {folds} folds")
        assignment[rng.permutation(rows)] = np.arange(rows.size) % folds
    return assignment


def fit_pipeline(raw_train: Dataset, kind: ModelKind | str,
                 selection: SelectionConfig | None = None,
                 learner: LearnerConfig = LearnerConfig()
                 ) -> tuple[TrainedModel, SelectionResult | None]:
    """Z-score, optionally bootstrap-select d' features, and train."""
    normalized, stats = zscore_fit_transform(raw_train)
    result = None
    indices = tuple(range(raw_train.dimension))
    if selection is not None:
        result = bootstrap_select(normalized, selection)
        indices = result.selected_indices
    model = train_model(normalized.select_features(indices), kind, learner,
                        norm_stats=stats, selected_indices=indices)
    return model, result


def kfold_confusion(data: Dataset, kind: ModelKind | str, folds: int = 5,
                    threshold: float = 0.5, seed: int = 0,
                    selection: SelectionConfig | None = None,
                    learner: LearnerConfig = LearnerConfig()) -> ConfusionMatrix:
    """Out-of-fold predictions pooled into one 2x2 confusion matrix.

    Normalisation and selection are refit inside every fold.
    """
    assignment = stratified_folds(data.labels, folds, seed)
    total = ConfusionMatrix(np.zeros((2, 2), dtype=int))
    for fold in range(folds):
        train = data.take(np.flatnonzero(assignment != fold))
        test = data.take(np.flatnonzero(assignment == fold))
        model, _ = fit_pipeline(train, kind, selection, learner)
        total = total + ConfusionMatrix.from_predictions(
            test.labels, model.predict(test, threshold)
        )
        logger.debug("fold %d/%d done", fold + 1, folds)
    return total


def sweep_feature_count(raw_train: Dataset, raw_test: Dataset, measures: Sequence[Measure | str],
                        d_primes: Sequence[int], kind: ModelKind | str,
                        selection: SelectionConfig = SelectionConfig(), B_c: int = 200,
                        seed: int = 0, learner: LearnerConfig = LearnerConfig(),
                        workers: int = 1) -> pd.DataFrame:
    """Mean / p5 / p95 test AUC against d' for each filter measure.

    Selection runs once per measure at the largest d'; smaller d' use the
    leading prefix of that ranking.
    """
    if not d_primes or min(d_primes) < 1:
        raise InputError("d_primes must be a non-empty list of positive integers")
    normalized, stats = zscore_fit_transform(raw_train)
    test = stats.apply(raw_test)

    rows = []
    for measure in measures:
        cfg = replace(selection, measure=Measure.parse(measure), d_prime=max(d_primes))
        ranking = bootstrap_select(normalized, cfg).selected_indices
        for d_prime in sorted(set(d_primes)):
            chosen = list(ranking[:d_prime])
            report = bootstrap_evaluate(normalized.select_features(chosen),
                                        test.select_features(chosen), kind, B_c, seed,
                                        learner, workers)
            rows.append({
                "measure": cfg.measure.value,
                "d_prime": d_prime,
                "auc_mean": report.auc_mean,
                "auc_p5": report.auc_p5,
                "auc_p95": report.auc_p95,
            })
    return pd.DataFrame(rows, columns=["measure", "d_prime", "auc_mean", "auc_p5", "auc_p95"])
