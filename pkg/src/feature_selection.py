"""
Feature normalisation and bootstrapped filter selection.

Three filter measures score each feature against the binary label on its
own: the one-way ANOVA F value ("F"), sure independence screening, i.e.
|Pearson r| ("S"), and a k-nearest-neighbour mutual information estimate for
a continuous feature and a discrete label ("M").

bootstrap_select scores every feature on B_s resamples of the training set
and keeps the d' features with the highest 95th percentile of their
bootstrap scores.

Depends on: core.py
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.stats
from scipy.spatial import cKDTree
from scipy.special import digamma

from core import CLASS_LABELS, Dataset, InputError, SchemaMismatchError, first_difference

logger = logging.getLogger(__name__)


F_CAP = 1e12            # reported instead of +inf (zero within-class variance)
CONSTANT_STD = 1e-12
MAX_REDRAWS = 100
JITTER_SCALE = 1e-10


class Measure(str, enum.Enum):
    F = "F"     # ANOVA F value
    S = "S"     # sure independence screening
    M = "M"     # k-NN mutual information

    @classmethod
    def parse(cls, value) -> Measure:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise InputError(f"unknown measure {value!r} (expected F, S or M)") from None


@dataclass(frozen=True)
class SelectionConfig:
    measure: Measure = Measure.M
    d_prime: int = 10
    bootstraps: int = 200
    percentile: float = 95.0
    knn_k: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "measure", Measure.parse(self.measure))
        if self.d_prime < 1:
            raise InputError(f"d_prime must be >= 1, got {self.d_prime}")
        if self.bootstraps < 1:
            raise InputError(f"bootstraps must be >= 1, got {self.bootstraps}")
        if not 0.0 < self.percentile <= 100.0:
            raise InputError(f"percentile must be in (0, 100], got {self.percentile}")
        if self.knn_k < 1:
            raise InputError(f"knn_k must be >= 1, got {self.knn_k}")


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Training-set mean and population std per feature.

    std is stored as 1 for constant features (std < 1e-12), which are listed
    in `constant`.
    """
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    constant: tuple[str, ...] = ()

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        std = np.array(self.std, dtype=float)
        if mean.shape != (len(self.feature_names),) or std.shape != mean.shape:
            raise InputError("norm stats do not match their feature names")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "constant", tuple(self.constant))

    def transform(self, matrix) -> np.ndarray:
        X = np.atleast_2d(np.asarray(matrix, dtype=float))
        if X.shape[1] != self.mean.size:
            raise InputError(f"{X.shape[1]} features, norm stats cover {self.mean.size}")
        return (X - self.mean) / self.std

    def apply(self, data: Dataset) -> Dataset:
        """Normalise a dataset that shares the training schema."""
        if data.feature_names != self.feature_names:
            column = first_difference(data.feature_names, self.feature_names)
            raise SchemaMismatchError(
                f"dataset does not match the training schema (column {column!r})",
                column=column,
            )
        return data.with_matrix(self.transform(data.matrix))


def zscore_fit_transform(train: Dataset) -> tuple[Dataset, NormStats]:
    """Z-score every feature with its (population) training mean and std."""
    if len(train) < 2:
        raise InputError(f"z-scoring needs at least 2 rows, got {len(train)}")
    X = train.matrix
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std < CONSTANT_STD
    std = np.where(constant, 1.0, std)
    names = [train.feature_names[i] for i in np.flatnonzero(constant)]
    if names:
        logger.warning("%d constant feature(s) left unscaled: %s", len(names),
                       ", ".join(names[:5]) + (" ..." if len(names) > 5 else ""))
    stats = NormStats(train.feature_names, mean, std, constant=tuple(names))
    return train.with_matrix((X - mean) / std), stats


# ---------------------------------------------------------------------------
# Filter measures
# ---------------------------------------------------------------------------

def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels).astype(int).ravel()
    present = set(np.unique(y).tolist())
    if not present <= set(CLASS_LABELS):
        raise InputError(f"labels must be 0/1, got {sorted(present)}")
    if len(present) < 2:
        raise InputError("both classes must be present")
    return y


def _as_columns(features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def _f_values(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with np.errstate(divide="ignore", invalid="ignore"):
            f = scipy.stats.f_oneway(X[y == 0], X[y == 1], axis=0).statistic
    f = np.atleast_1d(np.asarray(f, dtype=float))
    f = np.where(np.isnan(f), 0.0, f)
    return np.minimum(f, F_CAP)


def f_value(feature, labels) -> float:
    """One-way ANOVA F statistic over the two classes (capped at 1e12)."""
    y = _check_labels(labels)
    return float(_f_values(_as_columns(feature), y)[0])


def _sis_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    norms = np.linalg.norm(Xc, axis=0) * np.linalg.norm(yc)
    out = np.zeros(X.shape[1])
    ok = norms > CONSTANT_STD * max(1.0, np.sqrt(X.shape[0]))
    out[ok] = np.abs(yc @ Xc[:, ok]) / norms[ok]
    return np.minimum(out, 1.0)


def sis_score(feature, labels) -> float:
    """|Pearson r| between the feature and the 0/1 label (0 for a constant feature)."""
    y = _check_labels(labels)
    return float(_sis_scores(_as_columns(feature), y.astype(float))[0])


def _mi_column(x: np.ndarray, y: np.ndarray, k: int, noise: np.ndarray) -> float:
    scale = float(np.std(x))
    if scale < CONSTANT_STD:
        return 0.0
    x = (x + JITTER_SCALE * scale * noise).reshape(-1, 1)

    radius = np.empty(x.shape[0])
    class_sizes = np.empty(x.shape[0])
    for label in CLASS_LABELS:
        mask = y == label
        tree = cKDTree(x[mask])
        dist, _ = tree.query(x[mask], k=k + 1)        # first neighbour is the point itself
        radius[mask] = dist[:, -1]
        class_sizes[mask] = mask.sum()

    # strictly inside the k-th within-class distance, self included
    radius = np.nextafter(radius, 0.0)
    counts = cKDTree(x).query_ball_point(x, r=radius, p=np.inf, return_length=True)
    counts = np.maximum(np.asarray(counts, dtype=float), 1.0)

    mi = (digamma(x.shape[0]) + digamma(k)
          - np.mean(digamma(class_sizes)) - np.mean(digamma(counts)))
    return max(0.0, float(mi))


def _check_class_sizes(y: np.ndarray, k: int) -> None:
    for label in CLASS_LABELS:
        size = int(np.count_nonzero(y == label))
        if size <= k:
            raise InputError(f"class {label} has {size} samples; mutual information needs > k={k}")


def mutual_information(feature, labels, k: int = 3, seed: int = 0) -> float:
    """k-NN mutual information (nats) between a continuous feature and the label.

    Ties are broken with seeded jitter of 1e-10 times the feature's std, so
    the estimate is unchanged by affine rescaling of the feature.
    """
    y = _check_labels(labels)
    x = np.asarray(feature, dtype=float).ravel()
    if x.size != y.size:
        raise InputError(f"{x.size} feature values for {y.size} labels")
    _check_class_sizes(y, k)
    noise = np.random.default_rng(seed).standard_normal(x.size)
    return _mi_column(x, y, k, noise)


def score_features(X, labels, measure: Measure | str, k: int = 3, seed=0) -> np.ndarray:
    """Score every column of X against the label with one filter measure."""
    y = _check_labels(labels)
    X = _as_columns(X)
    if X.shape[0] != y.size:
        raise InputError(f"{X.shape[0]} rows for {y.size} labels")
    measure = Measure.parse(measure)
    if measure is Measure.F:
        return _f_values(X, y)
    if measure is Measure.S:
        return _sis_scores(X, y.astype(float))
    _check_class_sizes(y, k)
    # one shared draw keeps duplicated columns scored identically
    noise = np.random.default_rng(seed).standard_normal(X.shape[0])
    return np.array([_mi_column(X[:, j], y, k, noise) for j in range(X.shape[1])])


# ---------------------------------------------------------------------------
# Bootstrapped selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionResult:
    """Chosen features plus the bootstrap evidence behind the choice.

    selected_indices are ordered by descending percentile score;
    score_table is d x B_s.
    """
    selected_indices: tuple[int, ...]
    selected_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    score_table: np.ndarray
    mean_scores: np.ndarray
    percentile_scores: np.ndarray
    config: SelectionConfig
    redraws: int = 0
    flags: tuple[str, ...] = field(default_factory=tuple)


def _min_class_size(measure: Measure, k: int) -> int:
    return k + 1 if measure is Measure.M else 1


def bootstrap_resample(labels: np.ndarray, rng: np.random.Generator,
                       min_class_size: int = 1) -> tuple[np.ndarray, int]:
    """Row indices of one bootstrap draw in which every class keeps
    min_class_size members, plus the number of rejected draws."""
    n = labels.size
    for attempt in range(MAX_REDRAWS + 1):
        idx = rng.integers(0, n, size=n)
        drawn = labels[idx]
        if all(np.count_nonzero(drawn == c) >= min_class_size for c in CLASS_LABELS):
            return idx, attempt
    raise InputError(
        f"{MAX_REDRAWS} consecutive bootstrap resamples lost a class; "
        "training set is too small or too unbalanced"
    )


def bootstrap_select(train: Dataset, cfg: SelectionConfig) -> SelectionResult:
    """Top-d' features by the percentile of their bootstrap filter scores."""
    d = train.dimension
    if cfg.d_prime > d:
        raise InputError(f"d_prime={cfg.d_prime} exceeds the {d} available features")
    X = train.matrix
    y = _check_labels(train.labels)
    need = _min_class_size(cfg.measure, cfg.knn_k)
    if cfg.measure is Measure.M:
        _check_class_sizes(y, cfg.knn_k)

    table = np.empty((d, cfg.bootstraps))
    redraws = 0
    for b, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.bootstraps)):
        rng = np.random.default_rng(child)
        idx, rejected = bootstrap_resample(y, rng, need)
        redraws += rejected
        table[:, b] = score_features(X[idx], y[idx], cfg.measure, cfg.knn_k,
                                     seed=rng.integers(2 ** 32))
    if redraws:
        logger.warning("bootstrap selection: redrew %d class-degenerate resample(s)", redraws)

    pct = np.percentile(table, cfg.percentile, axis=1, method="linear")
    order = np.argsort(-pct, kind="stable")[: cfg.d_prime]
    indices = tuple(int(i) for i in order)

    flags = ()
    constant = np.flatnonzero(X.std(axis=0) < CONSTANT_STD)
    if constant.size:
        flags = tuple(f"constant:{train.feature_names[i]}" for i in constant)

    logger.info("selected %d of %d features by %s", len(indices), d, cfg.measure.value)
    return SelectionResult(
        selected_indices=indices,
        selected_names=tuple(train.feature_names[i] for i in indices),
        feature_names=train.feature_names,
        score_table=table,
        mean_scores=table.mean(axis=1),
        percentile_scores=pct,
        config=cfg,
        redraws=redraws,
        flags=flags,
    )
