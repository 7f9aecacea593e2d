"""Per-feature kernels and centered low-rank (Nystrom) feature maps.

Each feature gets a one-dimensional positive-definite kernel. A feature
map is built by selecting landmark points from the background sample,
whitening the landmark Gram matrix, and centering the resulting columns
so they have zero mean under the background measure. Centered columns
are orthogonal to constants by construction, which is what the
decomposition downstream relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

KERNEL_KINDS = ("rbf", "laplace", "poly")

# Pairwise-distance cap for the bandwidth heuristic.
MEDIAN_SUBSAMPLE = 2000
# Whitening eigenvalue floor, relative to max(largest eigenvalue, 1).
EIG_FLOOR_SCALE = 1e-10
# Centered columns below this magnitude mark the feature as degenerate.
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """One-dimensional base kernel.

    ``bandwidth`` may be left as None, meaning "resolve with the median
    heuristic against the fit column". ``degree`` and ``offset`` apply
    to the polynomial kernel only.
    """

    kind: str = "rbf"
    bandwidth: float | None = None
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ConfigError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError(f"kernel bandwidth must be > 0, got {self.bandwidth}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigError(f"polynomial degree must be an integer >= 1, got {self.degree}")
        if not self.offset >= 0:
            raise ConfigError(f"polynomial offset must be >= 0, got {self.offset}")

    def resolved(self, column: np.ndarray, seed: int = 0) -> "KernelSpec":
        """Return a copy with a concrete bandwidth for the given column."""
        if self.kind == "poly" or self.bandwidth is not None:
            return self
        return replace(self, bandwidth=median_bandwidth(column, seed=seed))


@dataclass(frozen=True)
class Landmarks:
    """Anchor points for one feature's low-rank map."""

    feature_index: int
    points: np.ndarray
    seed: int


@dataclass
class FeatureMap:
    """Centered low-rank kernel representation of one feature.

    ``values`` is the centered map on the background sample; it is only
    populated at build time (a reloaded model does not carry it).
    ``column_means`` are the background means subtracted during
    centering; out-of-sample evaluation reuses them unchanged.
    """

    feature_index: int
    landmarks: Landmarks
    whitening: np.ndarray
    column_means: np.ndarray
    values: np.ndarray | None
    degenerate: bool = False

    @property
    def rank(self) -> int:
        return self.landmarks.points.shape[0]


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite value in {what}")
    return arr


def kernel_matrix(spec: KernelSpec, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cross-kernel matrix k(x_a, t_b) for two 1-D value arrays."""
    x = _check_finite(np.atleast_1d(x), "kernel input x")
    t = _check_finite(np.atleast_1d(t), "kernel input t")
    if spec.kind == "poly":
        return (np.outer(x, t) + spec.offset) ** spec.degree
    if spec.bandwidth is None:
        raise ConfigError("kernel bandwidth unresolved; call KernelSpec.resolved() first")
    diff = x[:, None] - t[None, :]
    if spec.kind == "rbf":
        return np.exp(-(diff**2) / (2.0 * spec.bandwidth**2))
    return np.exp(-np.abs(diff) / spec.bandwidth)


def eval_kernel(spec: KernelSpec, x: float, t: float) -> float:
    """Scalar kernel evaluation k(x, t)."""
    return float(kernel_matrix(spec, np.array([x]), np.array([t]))[0, 0])


def median_bandwidth(column: np.ndarray, seed: int = 0) -> float:
    """Median pairwise absolute difference of a column.

    Columns longer than MEDIAN_SUBSAMPLE are subsampled (seeded) before
    the O(n^2) distance computation. A constant column falls back to 1.
    """
    column = _check_finite(column, "bandwidth column").ravel()
    n = column.shape[0]
    if n < 2:
        raise ConfigError(f"median_bandwidth needs at least 2 values, got {n}")
    if n > MEDIAN_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        column = column[np.sort(rng.choice(n, size=MEDIAN_SUBSAMPLE, replace=False))]
        n = MEDIAN_SUBSAMPLE
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.abs(column[:, None] - column[None, :])[iu]))
    return med if med > 0 else 1.0


def select_landmarks(column: np.ndarray, rank: int, seed: int, feature_index: int = 0) -> Landmarks:
    """Uniform-without-replacement landmark selection, seeded per feature."""
    column = np.asarray(column, dtype=np.float64).ravel()
    n = column.shape[0]
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    if rank > n:
        raise ConfigError(f"rank {rank} exceeds background size {n}")
    rng = np.random.default_rng(seed + feature_index)
    idx = np.sort(rng.choice(n, size=rank, replace=False))
    return Landmarks(feature_index=feature_index, points=column[idx].copy(), seed=seed)


def _inverse_sqrt(gram: np.ndarray) -> np.ndarray:
    """Symmetric PSD inverse square root with an eigenvalue floor.

    Directions below the floor are dropped rather than inflated:
    flooring would turn rounding-level eigenvector noise into O(1e4)
    amplification and pollute the map with junk columns.
    """
    gram = 0.5 * (gram + gram.T)
    eigvals, eigvecs = np.linalg.eigh(gram)
    floor = EIG_FLOOR_SCALE * max(float(eigvals[-1]), 1.0)
    inv = np.where(eigvals >= floor, 1.0 / np.sqrt(np.maximum(eigvals, floor)), 0.0)
    return (eigvecs * inv) @ eigvecs.T


def build_feature_map(
    column: np.ndarray,
    spec: KernelSpec,
    rank: int,
    seed: int,
    feature_index: int = 0,
    weights: np.ndarray | None = None,
) -> FeatureMap:
    """Build the centered whitened map of one feature over the background.

    ``weights`` (normalized to sum 1 when given) define the background
    measure used for centering; the default is the uniform empirical
    measure.
    """
    column = _check_finite(column, f"feature column {feature_index}").ravel()
    landmarks = select_landmarks(column, rank, seed, feature_index)
    cross = kernel_matrix(spec, column, landmarks.points)
    gram = kernel_matrix(spec, landmarks.points, landmarks.points)
    whitening = _inverse_sqrt(gram)
    raw = cross @ whitening
    if weights is None:
        column_means = raw.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        column_means = (w / w.sum()) @ raw
    values = raw - column_means[None, :]
    degenerate = bool(np.max(np.abs(values), initial=0.0) <= DEGENERATE_TOL)
    if degenerate:
        # Exact zeros, so degenerate blocks and their products vanish
        # identically instead of carrying rounding residue.
        values = np.zeros_like(values)
    return FeatureMap(
        feature_index=feature_index,
        landmarks=landmarks,
        whitening=whitening,
        column_means=column_means,
        values=values,
        degenerate=degenerate,
    )


def apply_feature_map(fmap: FeatureMap, spec: KernelSpec, new_column: np.ndarray) -> np.ndarray:
    """Evaluate a fitted map out of sample.

    Uses the stored landmarks, whitening, and background column means;
    nothing is re-estimated on the new sample.
    """
    new_column = _check_finite(new_column, f"feature column {fmap.feature_index}").ravel()
    if fmap.degenerate:
        # A constant background column fits the zero function; do not
        # fabricate variation off the background.
        return np.zeros((new_column.shape[0], fmap.rank))
    cross = kernel_matrix(spec, new_column, fmap.landmarks.points)
    return cross @ fmap.whitening - fmap.column_means[None, :]
