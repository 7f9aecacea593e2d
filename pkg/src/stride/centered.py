"""Exact dense construction of centered subset kernels (small d).

This is the verification path, not the production path. Product kernels
over feature subsets are centered by alternating-sign sums over the
subset lattice, yielding matrices whose partial means vanish in every
constituent dimension and whose columns are mutually orthogonal across
distinct subsets under the background product measure.

Two empirical choices make those identities exact in finite samples:

* each one-dimensional base kernel is rescaled by a symmetric Sinkhorn
  pass against the sample marginal, so that its mean against the
  marginal equals 1 in *both* arguments (a one-sided row normalization
  leaves O(n^-1/2) residuals that would swamp the tolerances);
* inner products and partial means are taken under the product of the
  per-column empirical marginals, evaluated exactly by factorizing
  across dimensions. Under the joint (row-wise) empirical measure the
  same quantities pick up sampling noise even for independent columns;
  ``empirical_cross_orthogonality`` reports that joint-measure residual
  for diagnostic use, and is never asserted against.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import chain, combinations

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .kernels import KernelSpec, kernel_matrix

DENSE_MAX_SUBSET = 4
DENSE_MAX_SAMPLE = 2000
_SINKHORN_TOL = 1e-14
_SINKHORN_MAX_ITER = 2000

_SUBSET_RE = re.compile(r"^\{(\s*\d+\s*(,\s*\d+\s*)*)?\}$")


@dataclass(frozen=True, order=True)
class SubsetId:
    """Canonical feature subset: unique indices, ascending."""

    members: tuple[int, ...] = ()

    def __post_init__(self):
        mem = tuple(int(i) for i in self.members)
        if any(i < 0 for i in mem):
            raise ConfigError(f"negative feature index in subset {mem}")
        if len(set(mem)) != len(mem) or tuple(sorted(mem)) != mem:
            raise ConfigError(f"subset members must be unique and ascending, got {mem}")
        object.__setattr__(self, "members", mem)

    @classmethod
    def of(cls, items) -> "SubsetId":
        return cls(tuple(sorted({int(i) for i in items})))

    @classmethod
    def parse(cls, text: str) -> "SubsetId":
        text = text.strip()
        if not _SUBSET_RE.match(text):
            raise ConfigError(f"cannot parse subset id {text!r}; expected e.g. '{{1,3}}'")
        inner = text[1:-1].strip()
        return cls.of(int(p) for p in inner.split(",")) if inner else cls()

    def __str__(self) -> str:
        return "{" + ",".join(str(i) for i in self.members) + "}"

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, item) -> bool:
        return item in self.members


def subsets_of(subset: SubsetId, strict: bool = False):
    """All subsets of ``subset`` (proper only when ``strict``)."""
    upper = len(subset) if strict else len(subset) + 1
    return [SubsetId(c) for c in chain.from_iterable(combinations(subset.members, r) for r in range(upper))]


@dataclass
class CenteredKernelMatrix:
    """Centered subset kernel evaluated on sample rows x anchor rows.

    Carries the scaled per-feature factor matrices so that partial-mean
    and orthogonality checks can factorize exactly across dimensions.
    """

    subset: SubsetId
    anchors: np.ndarray
    values: np.ndarray
    factors: dict = field(repr=False, default_factory=dict)
    factor_marginal_means: dict = field(repr=False, default_factory=dict)
    sample: np.ndarray = field(repr=False, default=None)


def _sinkhorn_scaling(gram: np.ndarray) -> np.ndarray:
    """Symmetric scaling d with mean_v d_u K[u,v] d_v = 1 for every u."""
    if np.any(gram < 0):
        raise NumericalError("dense-path normalization requires a positive kernel (use rbf or laplace)")
    gram = np.maximum(gram, 1e-300)
    n = gram.shape[0]
    d = np.full(n, 1.0 / np.sqrt(gram.mean()))
    for _ in range(_SINKHORN_MAX_ITER):
        row = d * (gram @ d) / n
        if np.max(np.abs(row - 1.0)) <= _SINKHORN_TOL:
            return d
        d /= np.sqrt(row)
    raise NumericalError("kernel scaling did not converge; kernel matrix is too ill-conditioned")


class _DenseSystem:
    """Shared per-feature scaled kernels for one (sample, anchors) pair."""

    def __init__(self, sample: np.ndarray, anchors: np.ndarray, specs):
        sample = np.asarray(sample, dtype=np.float64)
        anchors = np.asarray(anchors, dtype=np.float64)
        if sample.ndim != 2 or anchors.ndim != 2:
            raise ConfigError("sample and anchors must be 2-D arrays")
        if sample.shape[1] != anchors.shape[1]:
            raise ConfigError("sample and anchors disagree on feature count")
        if sample.shape[0] > DENSE_MAX_SAMPLE:
            raise ConfigError(f"dense path capped at {DENSE_MAX_SAMPLE} sample rows, got {sample.shape[0]}")
        self.sample = sample
        self.anchors = anchors
        self.specs = list(specs)
        if len(self.specs) != sample.shape[1]:
            raise ConfigError("need one KernelSpec per feature column")
        self._features: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def feature(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Scaled cross matrix (n x n_t) and its sample-marginal row means."""
        if i not in self._features:
            if i < 0 or i >= self.sample.shape[1]:
                raise ConfigError(f"subset references missing feature {i}")
            spec = self.specs[i].resolved(self.sample[:, i])
            col = self.sample[:, i]
            gram = kernel_matrix(spec, col, col)
            d = _sinkhorn_scaling(gram)
            cross = kernel_matrix(spec, col, self.anchors[:, i])
            anchor_mean = (d @ np.maximum(cross, 1e-300)) / col.shape[0]
            if np.any(anchor_mean <= 0):
                raise NumericalError(f"feature {i}: anchor normalization collapsed to zero")
            scaled = (d[:, None] * cross) / anchor_mean[None, :]
            marginal_means = d * (np.maximum(gram, 1e-300) @ d) / col.shape[0]
            self._features[i] = (scaled, marginal_means)
        return self._features[i]

    def product(self, subset: SubsetId) -> np.ndarray:
        out = np.ones((self.sample.shape[0], self.anchors.shape[0]))
        for i in subset:
            out = out * self.feature(i)[0]
        return out

    def centered(self, subset: SubsetId) -> CenteredKernelMatrix:
        if len(subset) > DENSE_MAX_SUBSET:
            raise ConfigError(
                f"dense centering is capped at |S| <= {DENSE_MAX_SUBSET}; "
                f"got {len(subset)} (use the low-rank engine instead)"
            )
        values = np.zeros((self.sample.shape[0], self.anchors.shape[0]))
        for sub in subsets_of(subset):
            sign = (-1.0) ** (len(subset) - len(sub))
            values += sign * self.product(sub)
        factors = {i: self.feature(i)[0] for i in subset}
        means = {i: self.feature(i)[1] for i in subset}
        return CenteredKernelMatrix(
            subset=subset,
            anchors=self.anchors,
            values=values,
            factors=factors,
            factor_marginal_means=means,
            sample=self.sample,
        )


def product_kernel_matrix(sample, anchors, subset: SubsetId, specs) -> np.ndarray:
    """Entrywise product of the scaled base kernels over a non-empty subset."""
    if len(subset) == 0:
        raise ConfigError("product kernel is defined for non-empty subsets; the empty subset is all-ones")
    return _DenseSystem(sample, anchors, specs).product(subset)


def centered_kernel_matrix(sample, anchors, subset: SubsetId, specs) -> CenteredKernelMatrix:
    """Alternating-sign sum of product kernels over the subset lattice."""
    return _DenseSystem(sample, anchors, specs).centered(subset)


def _signed_partial_mean(matrix: CenteredKernelMatrix, dim: int, signed: bool) -> float:
    n_t = matrix.anchors.shape[0]
    n = matrix.sample.shape[0]
    total = np.zeros((n, n_t))
    subs = subsets_of(matrix.subset) if signed else [matrix.subset]
    mu = matrix.factor_marginal_means[dim][:, None]
    for sub in subs:
        term = np.ones((n, n_t))
        for j in sub:
            if j != dim:
                term = term * matrix.factors[j]
        if dim in sub:
            term = term * mu
        sign = (-1.0) ** (len(matrix.subset) - len(sub)) if signed else 1.0
        total += sign * term
    return float(np.max(np.abs(total)))


def partial_mean_check(matrix: CenteredKernelMatrix, dim: int, sample) -> float:
    """Max |mean of the centered kernel over the sample's dim-marginal|.

    The dim coordinate is averaged against the sample's empirical
    marginal with all other coordinates held fixed; the max runs over
    anchors and the remaining coordinates.
    """
    if len(matrix.subset) == 0 or dim not in matrix.subset:
        raise DomainError(f"dimension {dim} is not in subset {matrix.subset}")
    if not np.array_equal(matrix.sample, np.asarray(sample, dtype=np.float64)):
        raise ConfigError("sample does not match the one the matrix was built on")
    return _signed_partial_mean(matrix, dim, signed=True)


def partial_mean_product(sample, anchors, subset: SubsetId, specs, dim: int) -> float:
    """Same marginal average applied to the *uncentered* product kernel."""
    if dim not in subset:
        raise DomainError(f"dimension {dim} is not in subset {subset}")
    system = _DenseSystem(sample, anchors, specs)
    matrix = system.centered(subset)
    return _signed_partial_mean(matrix, dim, signed=False)


def _product_measure_gram(matA: CenteredKernelMatrix, matB: CenteredKernelMatrix) -> np.ndarray:
    """Anchor-by-anchor inner products under the product of marginals."""
    n = matA.sample.shape[0]
    n_a = matA.anchors.shape[0]
    n_b = matB.anchors.shape[0]
    shared = [i for i in matA.subset if i in matB.subset]
    moments = {i: matA.factors[i].T @ matB.factors[i] / n for i in shared}
    means_a = {i: matA.factors[i].mean(axis=0) for i in matA.subset}
    means_b = {j: matB.factors[j].mean(axis=0) for j in matB.subset}
    gram = np.zeros((n_a, n_b))
    for sub_a in subsets_of(matA.subset):
        sign_a = (-1.0) ** (len(matA.subset) - len(sub_a))
        for sub_b in subsets_of(matB.subset):
            sign_b = (-1.0) ** (len(matB.subset) - len(sub_b))
            row = np.ones(n_a)
            colv = np.ones(n_b)
            term = None
            for i in sub_a:
                if i in sub_b:
                    term = moments[i] if term is None else term * moments[i]
                else:
                    row = row * means_a[i]
            for j in sub_b:
                if j not in sub_a:
                    colv = colv * means_b[j]
            outer = np.outer(row, colv)
            gram += sign_a * sign_b * (outer if term is None else term * outer)
    return gram


def cross_orthogonality(matA: CenteredKernelMatrix, matB: CenteredKernelMatrix, sample) -> float:
    """Max normalized inner product between columns of two centered kernels.

    Inner products are taken in L2 of the product of the sample's
    per-column marginals; distinct subsets come out orthogonal up to
    the scaling tolerance. Normalization is by column norms, with
    0/0 -> 0.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if not (np.array_equal(matA.sample, sample) and np.array_equal(matB.sample, sample)):
        raise ConfigError("centered matrices were built on different samples")
    cross = _product_measure_gram(matA, matB)
    norm_a = np.sqrt(np.maximum(np.diag(_product_measure_gram(matA, matA)), 0.0))
    norm_b = np.sqrt(np.maximum(np.diag(_product_measure_gram(matB, matB)), 0.0))
    denom = np.outer(norm_a, norm_b)
    ratio = np.zeros_like(cross)
    np.divide(np.abs(cross), denom, out=ratio, where=denom > 1e-150)
    return float(np.max(ratio))


def empirical_cross_orthogonality(matA: CenteredKernelMatrix, matB: CenteredKernelMatrix) -> float:
    """Joint-measure (row-wise) version of ``cross_orthogonality``.

    Reported as a diagnostic for dependent columns; carries O(n^-1/2)
    sampling noise even for independent data, so it is never asserted.
    """
    n = matA.values.shape[0]
    cross = matA.values.T @ matB.values / n
    norm_a = np.sqrt(np.maximum(np.einsum("ij,ij->j", matA.values, matA.values) / n, 0.0))
    norm_b = np.sqrt(np.maximum(np.einsum("ij,ij->j", matB.values, matB.values) / n, 0.0))
    denom = np.outer(norm_a, norm_b)
    ratio = np.zeros_like(cross)
    np.divide(np.abs(cross), denom, out=ratio, where=denom > 1e-150)
    return float(np.max(ratio))
