"""Derived analyses over a fitted decomposition.

Attributions split each component's value equally among its members, so
per-instance attributions sum to the reconstruction minus the baseline.
Synergy correlates each pair component with the sum of its parent mains,
surgery measures the R^2 cost of deleting one component, and what-if
re-evaluates components under feature edits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .centered import SubsetId
from .decomposition import DecompositionModel, EvaluationResult, evaluate
from .errors import DomainError, NumericalError, SchemaError


@dataclass
class AttributionVector:
    """Per-feature attributions for one instance."""

    instance_id: int
    values: np.ndarray
    baseline: float
    reconstruction: float


@dataclass
class SynergyMatrix:
    """Symmetric pair-synergy scores in [-1, 1]; zero when unmodeled."""

    matrix: np.ndarray
    feature_names: list[str] | None = None


@dataclass
class SurgeryReport:
    removed_subset: SubsetId
    r2_full: float
    r2_ablated: float
    delta_r2: float
    target_kind: str


@dataclass
class WhatIfReport:
    instance_before: np.ndarray
    instance_after: np.ndarray
    edits: list[tuple[int, float]]
    component_deltas: dict
    attribution_before: AttributionVector
    attribution_after: AttributionVector
    attribution_deltas: np.ndarray
    component_before: dict
    component_after: dict


def _attributions_from_values(values: dict, d: int) -> np.ndarray:
    """Rows of per-feature attributions from per-subset value vectors."""
    some = next(iter(values.values()))
    phi = np.zeros((some.shape[0], d))
    for subset, vals in values.items():
        k = len(subset)
        if k == 0:
            continue
        share = vals / k
        for i in subset:
            phi[:, i] += share
    return phi


def shapley_batch(model: DecompositionModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Attribution matrix (n x d) and reconstruction vector for many rows."""
    result = evaluate(model, X)
    phi = _attributions_from_values(result.values, model.n_features)
    return phi, result.reconstruction


def shapley_aggregate(model: DecompositionModel, instance, instance_id: int = 0) -> AttributionVector:
    """Attributions of one instance; efficiency holds by construction."""
    instance = np.asarray(instance, dtype=np.float64).ravel()
    phi, recon = shapley_batch(model, instance[None, :])
    return AttributionVector(
        instance_id=instance_id,
        values=phi[0],
        baseline=model.baseline,
        reconstruction=float(recon[0]),
    )


def fidelity_r2(y_ref, y_hat, weights=None) -> float:
    """Weighted coefficient of determination of y_hat against y_ref."""
    y_ref = np.asarray(y_ref, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y_ref.shape[0] != y_hat.shape[0]:
        raise SchemaError("fidelity inputs differ in length")
    if y_ref.shape[0] < 2:
        raise NumericalError("fidelity needs at least 2 values")
    if weights is None:
        w = np.full(y_ref.shape[0], 1.0 / y_ref.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        w = w / w.sum()
    mean = float(w @ y_ref)
    tss = float(w @ (y_ref - mean) ** 2)
    if tss <= 0:
        raise NumericalError("fidelity undefined: reference values have zero variance")
    sse = float(w @ (y_ref - y_hat) ** 2)
    return 1.0 - sse / tss


def spearman_rank_agreement(a, b) -> float:
    """Spearman rho: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape[0] != b.shape[0]:
        raise SchemaError("rank agreement inputs differ in length")
    if a.shape[0] < 2:
        raise NumericalError("rank agreement needs at least 2 values")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise NumericalError("rank agreement undefined for a constant vector")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))


def _weighted_corr(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    mu = float(w @ u)
    mv = float(w @ v)
    du = u - mu
    dv = v - mv
    vu = float(w @ du**2)
    vv = float(w @ dv**2)
    if vu <= 1e-300 or vv <= 1e-300:
        return 0.0
    return float((w @ (du * dv)) / np.sqrt(vu * vv))


def synergy_matrix(model: DecompositionModel, X_eval, weights=None) -> SynergyMatrix:
    """Correlation of each pair component with the sum of its parent mains.

    Negative scores mean the interaction offsets the mains (redundancy);
    positive scores mean it amplifies them (synergy).
    """
    d = model.n_features
    out = np.zeros((d, d))
    if not model.pair_list:
        return SynergyMatrix(matrix=out, feature_names=model.feature_names)
    result = evaluate(model, X_eval)
    n = result.reconstruction.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        w = w / w.sum()
    for i, j in model.pair_list:
        pair_vals = result.values[SubsetId.of([i, j])]
        main_sum = result.values[SubsetId.of([i])] + result.values[SubsetId.of([j])]
        score = np.clip(_weighted_corr(pair_vals, main_sum, w), -1.0, 1.0)
        out[i, j] = score
        out[j, i] = score
    return SynergyMatrix(matrix=out, feature_names=model.feature_names)


def _require_component(model: DecompositionModel, subset: SubsetId):
    if len(subset) == 0:
        raise DomainError("cannot remove the baseline component")
    try:
        return model.component(subset)
    except KeyError:
        raise DomainError(f"subset {subset} is not a modeled component")


def component_surgery(
    model: DecompositionModel,
    X_test,
    target,
    subset: SubsetId,
    target_kind: str = "model_output",
    weights=None,
) -> SurgeryReport:
    """R^2 before and after deleting one component from the reconstruction."""
    if target_kind not in ("model_output", "true_labels"):
        raise DomainError(f"unknown target kind {target_kind!r}")
    _require_component(model, subset)
    target = np.asarray(target, dtype=np.float64).ravel()
    result = evaluate(model, X_test)
    r2_full = fidelity_r2(target, result.reconstruction, weights)
    ablated = result.reconstruction - result.values[subset]
    r2_ablated = fidelity_r2(target, ablated, weights)
    return SurgeryReport(
        removed_subset=subset,
        r2_full=r2_full,
        r2_ablated=r2_ablated,
        delta_r2=r2_full - r2_ablated,
        target_kind=target_kind,
    )


def most_impactful_pair(model: DecompositionModel, X_test, weights=None) -> SubsetId:
    """The modeled pair with the largest weighted norm on the split."""
    if not model.pair_list:
        raise DomainError("model has no pairwise components")
    result = evaluate(model, X_test)
    n = result.reconstruction.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        w = w / w.sum()
    best, best_norm = None, -1.0
    for i, j in model.pair_list:
        vals = result.values[SubsetId.of([i, j])]
        norm = float(np.sqrt(max(vals @ (w * vals), 0.0)))
        if norm > best_norm:
            best, best_norm = SubsetId.of([i, j]), norm
    return best


def what_if(model: DecompositionModel, instance, edits) -> WhatIfReport:
    """Component and attribution deltas for a feature edit.

    Components whose subset contains no edited feature are evaluated on
    identical inputs, so their deltas are exactly zero.
    """
    before = np.asarray(instance, dtype=np.float64).ravel()
    if before.shape[0] != model.n_features:
        raise SchemaError(f"instance has {before.shape[0]} features, model expects {model.n_features}")
    after = before.copy()
    clean_edits: list[tuple[int, float]] = []
    for feature, value in edits:
        feature = int(feature)
        if not 0 <= feature < model.n_features:
            raise SchemaError(f"edit references unknown feature index {feature}")
        after[feature] = float(value)
        clean_edits.append((feature, float(value)))

    res_before = evaluate(model, before[None, :])
    res_after = evaluate(model, after[None, :])
    comp_before = {s: float(v[0]) for s, v in res_before.values.items()}
    comp_after = {s: float(v[0]) for s, v in res_after.values.items()}
    deltas = {s: comp_after[s] - comp_before[s] for s in comp_before}

    phi_before = _attributions_from_values(res_before.values, model.n_features)[0]
    phi_after = _attributions_from_values(res_after.values, model.n_features)[0]
    return WhatIfReport(
        instance_before=before,
        instance_after=after,
        edits=clean_edits,
        component_deltas=deltas,
        attribution_before=AttributionVector(0, phi_before, model.baseline, float(res_before.reconstruction[0])),
        attribution_after=AttributionVector(0, phi_after, model.baseline, float(res_after.reconstruction[0])),
        attribution_deltas=phi_after - phi_before,
        component_before=comp_before,
        component_after=comp_after,
    )
