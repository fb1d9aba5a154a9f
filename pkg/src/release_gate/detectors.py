"""Unsupervised outlier scorers over release feature matrices.

All scorers share the convention that larger scores are more anomalous. LOF is
the primary detector; k-nearest-neighbour distance, Mahalanobis distance and an
isolation forest serve as comparison baselines for the ensemble.

Each detector has a small fitted model class (``fit`` on the training matrix,
``score`` for arbitrary query points) and a functional wrapper that fits and
scores the training rows in one call. Query scoring is what the decision
boundary grids use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoVarianceError

STD_EPS = 1e-12
LRD_DELTA = 1e-12
EULER_GAMMA = 0.5772156649015329

DETECTORS: tuple[str, ...] = ("lof", "knn", "mahalanobis", "iforest")


@dataclass(frozen=True)
class FeatureMatrix:
    """Observations in rows, features in columns, aligned with release ids."""

    values: np.ndarray
    row_ids: tuple[int, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature matrix contains NaN or infinite values")
        n, d = values.shape
        row_ids = tuple(int(i) for i in self.row_ids) if len(self.row_ids) else tuple(range(n))
        if len(row_ids) != n:
            raise ValueError(f"{len(row_ids)} row ids for {n} rows")
        names = tuple(self.feature_names) if self.feature_names else tuple(
            f"x{j}" for j in range(d)
        )
        if len(names) != d:
            raise ValueError(f"{len(names)} feature names for {d} columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, feature_names: Sequence[str] | None = None):
        return FeatureMatrix(values, self.row_ids, tuple(feature_names or self.feature_names))


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    stds: np.ndarray
    kept_features: tuple[int, ...]

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Apply the fitted z-score map to raw rows, keeping only retained columns."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        kept = list(self.kept_features)
        return (values[:, kept] - self.means[kept]) / self.stds[kept]


@dataclass(frozen=True)
class DetectorConfig:
    """Detector hyperparameters.

    Attributes:
        k_neighbors: Neighbourhood size for LOF and kNN; clamped to n-1 at fit time.
        anomaly_threshold: LOF score above which a release is anomalous.
        review_threshold: LOF score above which a release needs review.
        tree_count: Number of isolation trees.
        subsample_size: Rows drawn per isolation tree (capped at n).
        rng_seed: Seed for the isolation forest.
        covariance_ridge: Diagonal regularizer added to the Mahalanobis covariance.
        contamination: Fraction of points the baselines treat as anomalous.
        standardize: Z-score features before scoring.
    """

    k_neighbors: int = 20
    anomaly_threshold: float = 1.5
    review_threshold: float = 1.2
    tree_count: int = 100
    subsample_size: int = 256
    rng_seed: int = 42
    covariance_ridge: float = 1e-6
    contamination: float = 0.1
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.review_threshold < self.anomaly_threshold:
            raise ConfigError("review_threshold must be below anomaly_threshold")
        if self.tree_count < 1:
            raise ConfigError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.subsample_size < 2:
            raise ConfigError(f"subsample_size must be >= 2, got {self.subsample_size}")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be unsigned")
        if not self.covariance_ridge > 0:
            raise ConfigError("covariance_ridge must be positive")
        if not 0 < self.contamination < 1:
            raise ConfigError("contamination must lie in (0, 1)")

    def effective_k(self, n: int) -> int:
        return max(1, min(self.k_neighbors, n - 1))


@dataclass(frozen=True)
class ScoreVector:
    detector_name: str
    scores: np.ndarray
    row_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(scores)):
            raise ValueError(f"{self.detector_name} produced non-finite scores")
        object.__setattr__(self, "scores", scores)
        if not self.row_ids:
            object.__setattr__(self, "row_ids", tuple(range(len(scores))))

    def as_dict(self) -> dict[int, float]:
        return {rid: float(s) for rid, s in zip(self.row_ids, self.scores)}

    def ranking(self) -> list[int]:
        """Row ids ordered from most to least anomalous (stable on ties)."""
        order = np.argsort(-self.scores, kind="stable")
        return [self.row_ids[i] for i in order]


def _as_matrix(matrix) -> FeatureMatrix:
    return matrix if isinstance(matrix, FeatureMatrix) else FeatureMatrix(matrix)


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_k(k: int, n: int) -> None:
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= n - 1:
        raise ConfigError(f"k must lie in [1, {n - 1}] for {n} rows, got {k}")


def standardize(matrix) -> tuple[FeatureMatrix, StandardizationParams]:
    """Z-score every column with population std, dropping constant columns."""
    m = _as_matrix(matrix)
    if m.n < 2:
        raise ValueError("standardize needs at least 2 rows")
    means = m.values.mean(axis=0)
    stds = m.values.std(axis=0)
    kept = tuple(int(j) for j in np.flatnonzero(stds > STD_EPS))
    if not kept:
        raise NoVarianceError("all feature columns are constant")
    params = StandardizationParams(means, stds, kept)
    names = [m.feature_names[j] for j in kept]
    return m.with_values(params.transform(m.values), names), params


def k_distance_neighbors(matrix, i: int, k: int) -> tuple[float, set[int]]:
    """Distance to the k-th nearest other row and every row within that distance."""
    m = _as_matrix(matrix)
    _check_k(k, m.n)
    d = _pairwise(m.values[i : i + 1], m.values)[0]
    d[i] = np.inf
    k_dist = float(np.partition(d, k - 1)[k - 1])
    return k_dist, {int(j) for j in np.flatnonzero(d <= k_dist)}


class LOFModel:
    """Local outlier factor with tie-inclusive k-neighbourhoods.

    Coincident points are kept finite by adding ``LRD_DELTA`` to the mean
    reachability distance before inverting it.
    """

    name = "lof"

    def __init__(self, k: int) -> None:
        self.k = k

    def fit(self, X: np.ndarray) -> LOFModel:
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        _check_k(self.k, n)
        dist = _pairwise(X, X)
        np.fill_diagonal(dist, np.inf)
        k_dist = np.partition(dist, self.k - 1, axis=1)[:, self.k - 1]
        mask = dist <= k_dist[:, None]
        reach = np.maximum(dist, k_dist[None, :])
        lrd = 1.0 / (np.where(mask, reach, 0.0).sum(axis=1) / mask.sum(axis=1) + LRD_DELTA)
        self.X_ = X
        self.k_dist_ = k_dist
        self.lrd_ = lrd
        self.scores_ = (np.where(mask, lrd[None, :], 0.0).sum(axis=1) / mask.sum(axis=1)) / lrd
        return self

    def score(self, Q: np.ndarray) -> np.ndarray:
        """LOF of query points against the fitted data (queries are not neighbours of each other)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        dist = _pairwise(Q, self.X_)
        q_kdist = np.partition(dist, self.k - 1, axis=1)[:, self.k - 1]
        mask = dist <= q_kdist[:, None]
        reach = np.maximum(dist, self.k_dist_[None, :])
        counts = mask.sum(axis=1)
        q_lrd = 1.0 / (np.where(mask, reach, 0.0).sum(axis=1) / counts + LRD_DELTA)
        return (np.where(mask, self.lrd_[None, :], 0.0).sum(axis=1) / counts) / q_lrd


class KNNModel:
    """Mean distance to the k nearest neighbours."""

    name = "knn"

    def __init__(self, k: int) -> None:
        self.k = k

    def fit(self, X: np.ndarray) -> KNNModel:
        X = np.asarray(X, dtype=float)
        _check_k(self.k, X.shape[0])
        dist = _pairwise(X, X)
        np.fill_diagonal(dist, np.inf)
        self.X_ = X
        self.scores_ = np.sort(dist, axis=1)[:, : self.k].mean(axis=1)
        return self

    def score(self, Q: np.ndarray) -> np.ndarray:
        dist = _pairwise(np.atleast_2d(np.asarray(Q, dtype=float)), self.X_)
        return np.sort(dist, axis=1)[:, : self.k].mean(axis=1)


class MahalanobisModel:
    name = "mahalanobis"

    def __init__(self, ridge: float = 1e-6) -> None:
        if not ridge > 0:
            raise ConfigError("ridge must be positive")
        self.ridge = ridge

    def fit(self, X: np.ndarray) -> MahalanobisModel:
        X = np.asarray(X, dtype=float)
        if X.shape[0] < 2:
            raise ValueError("Mahalanobis needs at least 2 rows")
        self.mean_ = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
        self.precision_ = np.linalg.inv(cov + self.ridge * np.eye(X.shape[1]))
        self.scores_ = self.score(X)
        return self

    def score(self, Q: np.ndarray) -> np.ndarray:
        centered = np.atleast_2d(np.asarray(Q, dtype=float)) - self.mean_
        sq = np.einsum("ij,jk,ik->i", centered, self.precision_, centered)
        return np.sqrt(np.maximum(sq, 0.0))


def average_path_length(m: int | np.ndarray) -> np.ndarray:
    """Expected path length of an unsuccessful BST search over ``m`` points."""
    m = np.asarray(m, dtype=float)
    out = np.zeros_like(m)
    out[m == 2] = 1.0
    big = m > 2
    mb = m[big]
    out[big] = 2.0 * (np.log(mb - 1.0) + EULER_GAMMA) - 2.0 * (mb - 1.0) / mb
    return out


def _row_key(seed: int, tree: int, row_id: int) -> int:
    seq = np.random.SeedSequence(seed, spawn_key=(tree, row_id & 0xFFFFFFFFFFFFFFFF))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "size")

    def __init__(self, size: int, feature: int = -1, threshold: float = 0.0, left=None, right=None):
        self.size = size
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


class IsolationForestModel:
    """Isolation forest with subsamples keyed by row id.

    Each tree ranks rows by a counter-based hash of ``(seed, tree, row_id)`` and
    takes the smallest ``m``; the selected rows are then processed in id order.
    The forest therefore does not depend on the row order of the input, and the
    hash is the same on every platform.
    """

    name = "iforest"

    def __init__(self, tree_count: int = 100, subsample_size: int = 256, seed: int = 0) -> None:
        if subsample_size < 2:
            raise ConfigError("subsample_size must be >= 2")
        self.tree_count = tree_count
        self.subsample_size = subsample_size
        self.seed = seed

    def fit(self, X: np.ndarray, row_ids: Sequence[int] | None = None) -> IsolationForestModel:
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        ids = list(range(n)) if row_ids is None else [int(r) for r in row_ids]
        m = min(self.subsample_size, n)
        self.m_ = m
        self.height_limit_ = math.ceil(math.log2(max(m, 2)))
        self.trees_: list[_Node] = []
        for t in range(self.tree_count):
            keyed = sorted((_row_key(self.seed, t, rid), rid, pos) for pos, rid in enumerate(ids))
            chosen = sorted(keyed[:m], key=lambda item: item[1])
            sample = X[[pos for _, _, pos in chosen]]
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(t,)))
            self.trees_.append(self._grow(sample, rng, 0))
        self.scores_ = self.score(X)
        return self

    def _grow(self, data: np.ndarray, rng: np.random.Generator, depth: int) -> _Node:
        size = data.shape[0]
        if depth >= self.height_limit_ or size <= 1:
            return _Node(size)
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if varying.size == 0:
            return _Node(size)
        feature = int(varying[rng.integers(varying.size)])
        threshold = float(rng.uniform(lo[feature], hi[feature]))
        go_left = data[:, feature] < threshold
        return _Node(
            size,
            feature,
            threshold,
            self._grow(data[go_left], rng, depth + 1),
            self._grow(data[~go_left], rng, depth + 1),
        )

    def _path_lengths(self, node: _Node, Q: np.ndarray, idx: np.ndarray, depth: int, out: np.ndarray):
        if idx.size == 0:
            return
        if node.left is None:
            out[idx] += depth + average_path_length(np.array([node.size]))[0]
            return
        left = Q[idx, node.feature] < node.threshold
        self._path_lengths(node.left, Q, idx[left], depth + 1, out)
        self._path_lengths(node.right, Q, idx[~left], depth + 1, out)

    def score(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        total = np.zeros(Q.shape[0])
        idx = np.arange(Q.shape[0])
        for tree in self.trees_:
            self._path_lengths(tree, Q, idx, 0, total)
        mean_path = total / len(self.trees_)
        norm = average_path_length(np.array([self.m_]))[0]
        return 2.0 ** (-mean_path / norm)


def lof_scores(matrix, k: int) -> ScoreVector:
    m = _as_matrix(matrix)
    if m.n < 3:
        raise ConfigError("LOF needs at least 3 rows")
    model = LOFModel(k).fit(m.values)
    return ScoreVector("lof", model.scores_, m.row_ids)


def knn_outlier_scores(matrix, k: int) -> ScoreVector:
    m = _as_matrix(matrix)
    return ScoreVector("knn", KNNModel(k).fit(m.values).scores_, m.row_ids)


def mahalanobis_scores(matrix, ridge: float) -> ScoreVector:
    m = _as_matrix(matrix)
    return ScoreVector("mahalanobis", MahalanobisModel(ridge).fit(m.values).scores_, m.row_ids)


def isolation_forest_scores(
    matrix, tree_count: int, subsample_size: int, seed: int
) -> ScoreVector:
    m = _as_matrix(matrix)
    model = IsolationForestModel(tree_count, subsample_size, seed).fit(m.values, m.row_ids)
    return ScoreVector("iforest", model.scores_, m.row_ids)


def build_model(detector: str, n: int, config: DetectorConfig):
    """Unfitted model for ``detector`` sized for a training set of ``n`` rows."""
    k = config.effective_k(n)
    if detector == "lof":
        return LOFModel(k)
    if detector == "knn":
        return KNNModel(k)
    if detector == "mahalanobis":
        return MahalanobisModel(config.covariance_ridge)
    if detector == "iforest":
        return IsolationForestModel(config.tree_count, config.subsample_size, config.rng_seed)
    raise ConfigError(f"unknown detector {detector!r}; expected one of {', '.join(DETECTORS)}")


def prepare(matrix, config: DetectorConfig) -> tuple[FeatureMatrix, StandardizationParams | None]:
    m = _as_matrix(matrix)
    if config.standardize:
        return standardize(m)
    return m, None


def score_all(
    matrix, config: DetectorConfig, detectors: Sequence[str] = DETECTORS
) -> dict[str, ScoreVector]:
    """Fit every requested detector on ``matrix`` and score its rows."""
    prepared, _ = prepare(matrix, config)
    out: dict[str, ScoreVector] = {}
    for name in detectors:
        model = build_model(name, prepared.n, config)
        if name == "iforest":
            model.fit(prepared.values, prepared.row_ids)
        else:
            model.fit(prepared.values)
        out[name] = ScoreVector(name, model.scores_, prepared.row_ids)
    return out


def classify(scores, config: DetectorConfig) -> list[str]:
    """Map scores to ``ok`` / ``review`` / ``anomaly`` using the LOF thresholds."""
    values = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=float)
    if not config.review_threshold < config.anomaly_threshold:
        raise ConfigError("review_threshold must be below anomaly_threshold")
    verdicts = []
    for s in np.atleast_1d(values):
        if s > config.anomaly_threshold:
            verdicts.append("anomaly")
        elif s > config.review_threshold:
            verdicts.append("review")
        else:
            verdicts.append("ok")
    return verdicts


def contamination_threshold(scores, contamination: float) -> float:
    """Score quantile above which the top ``contamination`` fraction lies."""
    values = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=float)
    return float(np.quantile(values, 1.0 - contamination))


@dataclass(frozen=True)
class BoundaryGrid:
    detector: str
    feature_x: int
    feature_y: int
    xs: np.ndarray
    ys: np.ndarray
    scores: np.ndarray  # scores[iy, ix]

    def cells(self):
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                yield float(x), float(y), float(self.scores[iy, ix])


def decision_boundary_grid(
    detector: str,
    matrix,
    feature_x: int,
    feature_y: int,
    resolution: int,
    config: DetectorConfig,
) -> BoundaryGrid:
    """Score a regular grid over two raw features with the detector fit on ``matrix``.

    The grid spans each chosen feature's range widened by 10% on both sides;
    the remaining features are pinned to their column medians.
    """
    m = _as_matrix(matrix)
    for j in (feature_x, feature_y):
        if isinstance(j, bool) or not 0 <= j < m.d:
            raise ConfigError(f"feature index {j} outside [0, {m.d - 1}]")
    if feature_x == feature_y:
        raise ConfigError("feature_x and feature_y must differ")
    if resolution < 2:
        raise ConfigError("resolution must be >= 2")

    prepared, params = prepare(m, config)
    model = build_model(detector, prepared.n, config)
    if detector == "iforest":
        model.fit(prepared.values, prepared.row_ids)
    else:
        model.fit(prepared.values)

    def axis(j: int) -> np.ndarray:
        lo, hi = float(m.values[:, j].min()), float(m.values[:, j].max())
        pad = 0.1 * (hi - lo)
        return np.linspace(lo - pad, hi + pad, resolution)

    xs, ys = axis(feature_x), axis(feature_y)
    gx, gy = np.meshgrid(xs, ys)
    queries = np.tile(np.median(m.values, axis=0), (gx.size, 1))
    queries[:, feature_x] = gx.ravel()
    queries[:, feature_y] = gy.ravel()
    if params is not None:
        queries = params.transform(queries)
    scores = model.score(queries).reshape(resolution, resolution)
    return BoundaryGrid(detector, feature_x, feature_y, xs, ys, scores)
