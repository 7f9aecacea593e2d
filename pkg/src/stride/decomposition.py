"""Production decomposition pipeline.

Fitting proceeds in three stages: build centered low-rank maps per
feature, select promising interaction pairs against the main-effect
residual, then solve one ridge system jointly over all main and
orthogonalized pair blocks. The fitted object exposes per-subset
component functions whose sum reproduces the ridge fit exactly.

All weighted quantities use the fit weights normalized to unit mass, so
the ridge parameter and every tolerance are sample-size invariant.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .centered import SubsetId
from .errors import ConfigError, DataError, ModelVersionError, NumericalError, SchemaError
from .kernels import FeatureMap, KernelSpec, Landmarks, apply_feature_map, build_feature_map

FORMAT_VERSION = "stride-model/1"

# Ridge used inside pair scoring, relative to the block Gram scale;
# distinct from the user-facing ridge_lambda.
_RESIDUALIZE_RIDGE = 1e-10
# Relative singular-value cutoff for block residualization. Whitened-map
# spectra bottom out around 1e-8 of sigma_max; anything below this is
# rounding junk whose inclusion would corrupt the projection.
_LSTSQ_RCOND = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of one fit.

    ``max_pairs=None`` resolves to min(2d, d(d-1)/2). ``weights`` are
    per-row non-negative reals (any scale; normalized internally).
    ``forced_pairs`` bypasses pair selection, which keeps the whole
    pipeline linear in y for fixed structure.
    """

    kernel: KernelSpec = KernelSpec()
    rank_main: int = 32
    rank_pair: int = 16
    ridge_lambda: float = 1e-6
    max_pairs: int | None = None
    seed: int = 11
    weights: np.ndarray | None = field(default=None, compare=False)
    forced_pairs: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.rank_main < 1 or self.rank_pair < 1:
            raise ConfigError("rank_main and rank_pair must be >= 1")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")
        if self.max_pairs is not None and self.max_pairs < 0:
            raise ConfigError("max_pairs must be >= 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise ConfigError("weights must be finite, non-negative, with positive sum")
            object.__setattr__(self, "weights", w)
        if self.forced_pairs is not None:
            pairs = tuple((int(i), int(j)) for i, j in self.forced_pairs)
            if any(i >= j for i, j in pairs) or len(set(pairs)) != len(pairs):
                raise ConfigError("forced_pairs must be unique (i, j) with i < j")
            object.__setattr__(self, "forced_pairs", pairs)

    def resolved_max_pairs(self, d: int) -> int:
        if self.max_pairs is not None:
            return self.max_pairs
        return min(2 * d, d * (d - 1) // 2)


@dataclass
class Component:
    """One fitted component f_S with its slice of the solution."""

    subset: SubsetId
    coefficients: np.ndarray
    train_values: np.ndarray | None = None
    l2_norm: float | None = None


@dataclass
class PairOrthogonalizer:
    """Frozen residualization of one pair block.

    ``column_pairs`` lists which products of parent map columns form the
    raw block; ``gamma`` projects [1, map_i, map_j] out of it. Both are
    background statistics reused verbatim out of sample.
    """

    pair: tuple[int, int]
    column_pairs: np.ndarray  # (p, 2) indices into the parent maps
    gamma: np.ndarray  # (1 + r_i + r_j, p)


@dataclass
class DecompositionModel:
    """Frozen fit artifact; everything evaluate() needs and nothing else."""

    config: FitConfig
    baseline: float
    feature_specs: list[KernelSpec]
    feature_maps: list[FeatureMap]
    pair_list: list[tuple[int, int]]
    pair_orthogonalizers: list[PairOrthogonalizer]
    components: list[Component]
    diagnostics: dict
    feature_names: list[str] | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_maps)

    @property
    def modeled_subsets(self) -> list[SubsetId]:
        return [c.subset for c in self.components]

    def component(self, subset: SubsetId) -> Component:
        for c in self.components:
            if c.subset == subset:
                return c
        raise KeyError(str(subset))


@dataclass
class EvaluationResult:
    values: dict  # SubsetId -> (n,) array
    reconstruction: np.ndarray


def _normalized_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise ConfigError(f"weights length {w.shape[0]} does not match sample size {n}")
    return w / w.sum()


def _max_workers() -> int:
    raw = os.environ.get("STRIDE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"STRIDE_THREADS must be an integer, got {raw!r}")


def _map_features(fn, items):
    workers = _max_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _solve_ridge(gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    """Solve (gram + ridge I) beta = rhs, SPD first, eigh fallback."""
    a = gram + ridge * np.eye(gram.shape[0])
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(a, lower=True), rhs)
    except scipy.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(a)
        floor = 1e-14 * max(float(eigvals[-1]), 1.0)
        eigvals = np.maximum(eigvals, floor)
        return eigvecs @ ((eigvecs.T @ rhs) / eigvals)


def _product_column_pairs(rank_i: int, rank_j: int, cap: int, seed: int, i: int, j: int) -> np.ndarray:
    """Deterministic choice of which map-column products form a pair block."""
    total = rank_i * rank_j
    if total <= cap:
        flat = np.arange(total)
    else:
        rng = np.random.default_rng([seed, i, j, 0x5EED])
        flat = np.sort(rng.choice(total, size=cap, replace=False))
    return np.stack([flat // rank_j, flat % rank_j], axis=1)


def _raw_pair_block(map_i: np.ndarray, map_j: np.ndarray, column_pairs: np.ndarray) -> np.ndarray:
    return map_i[:, column_pairs[:, 0]] * map_j[:, column_pairs[:, 1]]


def _residualize(block: np.ndarray, basis: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project ``basis`` out of ``block`` in the weighted inner product.

    The basis is routinely rank-deficient (constant column plus centered
    maps), so this goes through an SVD least-squares on the square-root
    weighted matrices: normal equations would square the condition
    number and a ridge floor would leave near-null directions
    unprojected. A second refinement pass mops up rounding leakage.
    """
    sq = np.sqrt(w)[:, None]
    basis_s = basis * sq
    gamma = np.zeros((basis.shape[1], block.shape[1]))
    residual = block
    for _ in range(2):
        step, *_ = np.linalg.lstsq(basis_s, residual * sq, rcond=_LSTSQ_RCOND)
        gamma = gamma + step
        residual = block - basis @ gamma
    return residual, gamma


def select_pairs(main_maps: list[FeatureMap], residual: np.ndarray, config: FitConfig, weights=None) -> list[tuple[int, int]]:
    """Rank candidate pairs by how much residual their product map absorbs."""
    d = len(main_maps)
    max_pairs = config.resolved_max_pairs(d)
    if max_pairs == 0:
        return []
    n = residual.shape[0]
    w = _normalized_weights(weights if weights is not None else config.weights, n)
    scored = []
    for i in range(d):
        if main_maps[i].degenerate:
            continue
        for j in range(i + 1, d):
            if main_maps[j].degenerate:
                continue
            cols = _product_column_pairs(main_maps[i].rank, main_maps[j].rank, config.rank_pair, config.seed, i, j)
            block = _raw_pair_block(main_maps[i].values, main_maps[j].values, cols)
            bw = block * w[:, None]
            gram = block.T @ bw
            ridge = _RESIDUALIZE_RIDGE * max(float(np.max(np.diag(gram))), 1.0)
            rhs = bw.T @ residual
            score = float(rhs @ _solve_ridge(gram, rhs, ridge))
            scored.append((-score, (i, j)))
    scored.sort()
    return [pair for _, pair in scored[:max_pairs]]


def assemble_design(
    main_maps: list[FeatureMap],
    pairs: list[tuple[int, int]],
    config: FitConfig,
    weights=None,
) -> tuple[np.ndarray, list[tuple[SubsetId, int, int]], list[PairOrthogonalizer]]:
    """Concatenate main blocks and orthogonalized pair blocks.

    Returns the design matrix, per-subset (subset, start, stop) block
    boundaries, and the stored pair orthogonalizers.
    """
    n = main_maps[0].values.shape[0]
    w = _normalized_weights(weights if weights is not None else config.weights, n)
    blocks: list[np.ndarray] = []
    bounds: list[tuple[SubsetId, int, int]] = []
    offset = 0
    for fmap in main_maps:
        blocks.append(fmap.values)
        bounds.append((SubsetId.of([fmap.feature_index]), offset, offset + fmap.rank))
        offset += fmap.rank

    def build_pair(pair):
        i, j = pair
        cols = _product_column_pairs(main_maps[i].rank, main_maps[j].rank, config.rank_pair, config.seed, i, j)
        raw = _raw_pair_block(main_maps[i].values, main_maps[j].values, cols)
        basis = np.hstack([np.ones((n, 1)), main_maps[i].values, main_maps[j].values])
        block, gamma = _residualize(raw, basis, w)
        return block, PairOrthogonalizer(pair=(i, j), column_pairs=cols, gamma=gamma)

    orthos: list[PairOrthogonalizer] = []
    for block, ortho in _map_features(build_pair, list(pairs)):
        blocks.append(block)
        bounds.append((SubsetId.of(ortho.pair), offset, offset + block.shape[1]))
        offset += block.shape[1]
        orthos.append(ortho)
    return np.hstack(blocks) if blocks else np.zeros((n, 0)), bounds, orthos


def _orthogonality_diagnostics(
    design: np.ndarray,
    bounds: list[tuple[SubsetId, int, int]],
    w: np.ndarray,
) -> float:
    """Max normalized weighted inner product over the enforced relations.

    Enforced: every column against the constant, and each pair block
    against its two parent main blocks. Main-vs-main and pair-vs-pair
    angles are not enforced by the algorithm and are reported separately.
    """
    norms = np.sqrt(np.maximum(np.einsum("ij,i,ij->j", design, w, design), 0.0))
    worst = 0.0
    if design.shape[1]:
        const_ip = np.abs(w @ design)
        ok = norms > 1e-150
        worst = float(np.max(const_ip[ok] / norms[ok], initial=0.0))
    by_subset = {subset: (start, stop) for subset, start, stop in bounds}
    for subset, (start, stop) in by_subset.items():
        if len(subset) != 2:
            continue
        pair_block = design[:, start:stop]
        pair_norms = norms[start:stop]
        for parent in subset:
            p_start, p_stop = by_subset[SubsetId.of([parent])]
            cross = np.abs(design[:, p_start:p_stop].T @ (pair_block * w[:, None]))
            denom = np.outer(norms[p_start:p_stop], pair_norms)
            ratio = np.zeros_like(cross)
            np.divide(cross, denom, out=ratio, where=denom > 1e-150)
            worst = max(worst, float(np.max(ratio, initial=0.0)))
    return worst


def _cross_component_residual(values: dict, w: np.ndarray) -> float:
    """Report-only: max normalized angle between fitted component vectors."""
    subsets = [s for s in values if len(s) > 0]
    worst = 0.0
    for a in range(len(subsets)):
        va = values[subsets[a]]
        na = float(np.sqrt(max(va @ (w * va), 0.0)))
        for b in range(a + 1, len(subsets)):
            vb = values[subsets[b]]
            nb = float(np.sqrt(max(vb @ (w * vb), 0.0)))
            if na > 1e-150 and nb > 1e-150:
                worst = max(worst, abs(float(va @ (w * vb))) / (na * nb))
    return worst


def fit(X, y, config: FitConfig = FitConfig(), feature_names: list[str] | None = None) -> DecompositionModel:
    """Fit the decomposition of ingested outputs y over inputs X."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    n, d = X.shape
    if n < 5:
        raise ConfigError(f"need at least 5 rows to fit, got {n}")
    if y.shape[0] != n:
        raise DataError(f"y length {y.shape[0]} does not match X rows {n}")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    if not np.all(np.isfinite(y)):
        raise DataError("y contains non-finite values")
    if feature_names is not None and len(feature_names) != d:
        raise ConfigError("feature_names length does not match X columns")

    w = _normalized_weights(config.weights, n)
    baseline = float(w @ y)
    yc = y - baseline
    rank = min(config.rank_main, n)

    def build(j):
        spec = config.kernel.resolved(X[:, j], seed=config.seed + j)
        return spec, build_feature_map(X[:, j], spec, rank, config.seed, feature_index=j, weights=w)

    built = _map_features(build, list(range(d)))
    feature_specs = [spec for spec, _ in built]
    main_maps = [fmap for _, fmap in built]

    if config.forced_pairs is not None:
        for i, j in config.forced_pairs:
            if j >= d:
                raise ConfigError(f"forced pair ({i},{j}) references a missing feature")
        pairs = list(config.forced_pairs)
    else:
        main_design = np.hstack([m.values for m in main_maps])
        gram = main_design.T @ (main_design * w[:, None])
        beta1 = _solve_ridge(gram, main_design.T @ (w * yc), config.ridge_lambda)
        residual = yc - main_design @ beta1
        pairs = select_pairs(main_maps, residual, config, weights=w)

    design, bounds, orthos = assemble_design(main_maps, pairs, config, weights=w)
    gram = design.T @ (design * w[:, None])
    beta = _solve_ridge(gram, design.T @ (w * yc), config.ridge_lambda)

    components = [Component(subset=SubsetId(), coefficients=np.zeros(0), train_values=np.full(n, baseline), l2_norm=abs(baseline))]
    values_by_subset: dict[SubsetId, np.ndarray] = {}
    for subset, start, stop in bounds:
        coef = beta[start:stop]
        vals = design[:, start:stop] @ coef
        values_by_subset[subset] = vals
        components.append(
            Component(
                subset=subset,
                coefficients=coef,
                train_values=vals,
                l2_norm=float(np.sqrt(max(vals @ (w * vals), 0.0))),
            )
        )

    fitted = design @ beta
    diagnostics = {
        "orthogonality_residual": _orthogonality_diagnostics(design, bounds, w),
        "cross_component_residual": _cross_component_residual(values_by_subset, w),
        "fit_residual_norm": float(np.sqrt(max((yc - fitted) @ (w * (yc - fitted)), 0.0))),
        "n_rows": n,
    }
    return DecompositionModel(
        config=config,
        baseline=baseline,
        feature_specs=feature_specs,
        feature_maps=main_maps,
        pair_list=list(pairs),
        pair_orthogonalizers=orthos,
        components=components,
        diagnostics=diagnostics,
        feature_names=list(feature_names) if feature_names is not None else None,
    )


def evaluate(model: DecompositionModel, X_new) -> EvaluationResult:
    """Evaluate every fitted component and the reconstruction on new rows."""
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim == 1:
        X_new = X_new[None, :]
    if X_new.ndim != 2 or X_new.shape[1] != model.n_features:
        raise SchemaError(
            f"expected {model.n_features} feature columns, got {X_new.shape[1] if X_new.ndim == 2 else 'non-matrix'}"
        )
    if not np.all(np.isfinite(X_new)):
        raise DataError("X_new contains non-finite values")
    n = X_new.shape[0]
    maps_new = [
        apply_feature_map(fmap, spec, X_new[:, j])
        for j, (fmap, spec) in enumerate(zip(model.feature_maps, model.feature_specs))
    ]
    values: dict[SubsetId, np.ndarray] = {}
    recon = np.full(n, model.baseline)
    for comp in model.components:
        if len(comp.subset) == 0:
            values[comp.subset] = np.full(n, model.baseline)
        elif len(comp.subset) == 1:
            j = comp.subset.members[0]
            vals = maps_new[j] @ comp.coefficients
            values[comp.subset] = vals
            recon = recon + vals
        else:
            i, j = comp.subset.members
            ortho = next(o for o in model.pair_orthogonalizers if o.pair == (i, j))
            raw = _raw_pair_block(maps_new[i], maps_new[j], ortho.column_pairs)
            basis = np.hstack([np.ones((n, 1)), maps_new[i], maps_new[j]])
            block = raw - basis @ ortho.gamma
            vals = block @ comp.coefficients
            values[comp.subset] = vals
            recon = recon + vals
    return EvaluationResult(values=values, reconstruction=recon)


# --- model archive -----------------------------------------------------


def _spec_to_json(spec: KernelSpec) -> dict:
    return {"kind": spec.kind, "bandwidth": spec.bandwidth, "degree": spec.degree, "offset": spec.offset}


def _spec_from_json(obj: dict) -> KernelSpec:
    return KernelSpec(kind=obj["kind"], bandwidth=obj["bandwidth"], degree=obj["degree"], offset=obj["offset"])


def _config_to_json(config: FitConfig) -> dict:
    return {
        "kernel": _spec_to_json(config.kernel),
        "rank_main": config.rank_main,
        "rank_pair": config.rank_pair,
        "ridge_lambda": config.ridge_lambda,
        "max_pairs": config.max_pairs,
        "seed": config.seed,
        "weights": None if config.weights is None else np.asarray(config.weights).tolist(),
        "forced_pairs": None if config.forced_pairs is None else [list(p) for p in config.forced_pairs],
    }


def _config_from_json(obj: dict) -> FitConfig:
    return FitConfig(
        kernel=_spec_from_json(obj["kernel"]),
        rank_main=obj["rank_main"],
        rank_pair=obj["rank_pair"],
        ridge_lambda=obj["ridge_lambda"],
        max_pairs=obj["max_pairs"],
        seed=obj["seed"],
        weights=None if obj["weights"] is None else np.asarray(obj["weights"], dtype=np.float64),
        forced_pairs=None if obj["forced_pairs"] is None else tuple(tuple(p) for p in obj["forced_pairs"]),
    )


def model_to_json(model: DecompositionModel) -> dict:
    """Archive form of a fitted model; floats keep exact round-trip reprs."""
    return {
        "format_version": FORMAT_VERSION,
        "config": _config_to_json(model.config),
        "baseline": model.baseline,
        "feature_names": model.feature_names,
        "features": [
            {
                "kernel": _spec_to_json(spec),
                "landmarks": {
                    "feature_index": fmap.landmarks.feature_index,
                    "points": fmap.landmarks.points.tolist(),
                    "seed": fmap.landmarks.seed,
                },
                "whitening": fmap.whitening.tolist(),
                "column_means": fmap.column_means.tolist(),
                "degenerate": fmap.degenerate,
            }
            for spec, fmap in zip(model.feature_specs, model.feature_maps)
        ],
        "pair_list": [list(p) for p in model.pair_list],
        "pair_orthogonalizers": [
            {"pair": list(o.pair), "column_pairs": o.column_pairs.tolist(), "gamma": o.gamma.tolist()}
            for o in model.pair_orthogonalizers
        ],
        "components": [
            {"subset": str(c.subset), "coefficients": c.coefficients.tolist()} for c in model.components
        ],
        "diagnostics": model.diagnostics,
    }


def model_from_json(obj: dict) -> DecompositionModel:
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format {version!r}; this build reads {FORMAT_VERSION!r}")
    required = ("config", "baseline", "features", "pair_list", "pair_orthogonalizers", "components", "diagnostics")
    for key in required:
        if key not in obj:
            raise DataError(f"model archive is missing the {key!r} section")
    feature_specs = []
    feature_maps = []
    for j, feat in enumerate(obj["features"]):
        spec = _spec_from_json(feat["kernel"])
        lm = feat["landmarks"]
        feature_specs.append(spec)
        feature_maps.append(
            FeatureMap(
                feature_index=lm["feature_index"],
                landmarks=Landmarks(
                    feature_index=lm["feature_index"],
                    points=np.asarray(lm["points"], dtype=np.float64),
                    seed=lm["seed"],
                ),
                whitening=np.asarray(feat["whitening"], dtype=np.float64),
                column_means=np.asarray(feat["column_means"], dtype=np.float64),
                values=None,
                degenerate=feat["degenerate"],
            )
        )
    components = [
        Component(subset=SubsetId.parse(c["subset"]), coefficients=np.asarray(c["coefficients"], dtype=np.float64))
        for c in obj["components"]
    ]
    return DecompositionModel(
        config=_config_from_json(obj["config"]),
        baseline=obj["baseline"],
        feature_specs=feature_specs,
        feature_maps=feature_maps,
        pair_list=[tuple(p) for p in obj["pair_list"]],
        pair_orthogonalizers=[
            PairOrthogonalizer(
                pair=tuple(o["pair"]),
                column_pairs=np.asarray(o["column_pairs"], dtype=np.int64),
                gamma=np.asarray(o["gamma"], dtype=np.float64),
            )
            for o in obj["pair_orthogonalizers"]
        ],
        components=components,
        diagnostics=obj["diagnostics"],
        feature_names=obj.get("feature_names"),
    )


def save_model(model: DecompositionModel, path) -> None:
    text = json.dumps(model_to_json(model), sort_keys=True, indent=1, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def load_model(path) -> DecompositionModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"model archive not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"model archive is corrupt or truncated: {exc}") from exc
    return model_from_json(obj)
