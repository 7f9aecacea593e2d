"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or in the
captured output of a failing run). The two California Housing tests pull
the dataset through scikit-learn's fetcher and skip, loudly, when the
sandbox has no route to it; the synthetic desk-scale test exercises the
same machinery at the same size unconditionally.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from stride.analysis import (
    component_surgery,
    fidelity_r2,
    shapley_batch,
)
from stride.anova import DiscreteGridFunction, compare_to_engine
from stride.centered import (
    SubsetId,
    centered_kernel_matrix,
    cross_orthogonality,
    partial_mean_check,
    product_kernel_matrix,
    subsets_of,
)
from stride.decomposition import FitConfig, evaluate, fit, model_to_json, save_model
from stride.kernels import KernelSpec

PAPER_SEEDS = (11, 13, 23, 29, 37, 43, 53, 59, 71, 83)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}")
        raise
    print(f"ACCEPTANCE PASS: {name}")


def _shuffled_uniforms(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, size=(n, d))
    for j in range(d):
        rng.shuffle(x[:, j])
    return x


def _centered_family(x, specs):
    full = SubsetId.of(range(x.shape[1]))
    return {s: centered_kernel_matrix(x, x, s, specs) for s in subsets_of(full)}


def test_mobius_identity():
    with criterion("Mobius identity: sum of centered kernels reconstructs the product kernel (1e-10)"):
        start = time.perf_counter()
        x = _shuffled_uniforms(200, 4, seed=11)
        specs = [KernelSpec() for _ in range(4)]
        mats = _centered_family(x, specs)
        worst = 0.0
        for subset in mats:
            if len(subset) == 0:
                continue
            total = np.zeros((200, 200))
            for sub in subsets_of(subset):
                total += mats[sub].values
            target = product_kernel_matrix(x, x, subset, specs)
            worst = max(worst, float(np.max(np.abs(total - target))))
        elapsed = time.perf_counter() - start
        print(f"  mobius worst residual {worst:.3e}, {elapsed:.2f}s")
        assert worst <= 1e-10
        assert elapsed < 5.0


def test_partial_zero_mean():
    with criterion("Partial zero-mean: centered kernels average to zero in every member dim (1e-10)"):
        x = _shuffled_uniforms(200, 4, seed=13)
        specs = [KernelSpec() for _ in range(4)]
        mats = _centered_family(x, specs)
        worst = 0.0
        for subset, mat in mats.items():
            for dim in subset:
                worst = max(worst, partial_mean_check(mat, dim, x))
        print(f"  partial-mean worst residual {worst:.3e}")
        assert worst <= 1e-10


def test_orthogonality():
    with criterion("Orthogonality: distinct centered subsets (1e-8) and fit diagnostic (1e-6)"):
        x = _shuffled_uniforms(200, 4, seed=23)
        specs = [KernelSpec() for _ in range(4)]
        mats = _centered_family(x, specs)
        keys = list(mats)
        worst = 0.0
        for a in range(len(keys)):
            for b in range(a + 1, len(keys)):
                worst = max(worst, cross_orthogonality(mats[keys[a]], mats[keys[b]], x))
        print(f"  cross-orthogonality worst {worst:.3e}")
        assert worst <= 1e-8

        xp = _shuffled_uniforms(2000, 4, seed=29)
        rng = np.random.default_rng(29)
        y = np.sin(xp[:, 0]) + xp[:, 1] * xp[:, 2] + 0.5 * xp[:, 3] ** 2
        model = fit(xp, y, FitConfig(seed=11))
        resid = model.diagnostics["orthogonality_residual"]
        print(f"  fit orthogonality diagnostic {resid:.3e}")
        assert resid <= 1e-6


def _shapley_setup(seed=11):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(2000, 4))
    x[:, 3] = 0.25  # dummy feature: constant column
    y = np.sin(1.5 * x[:, 0]) + x[:, 1] * x[:, 2]
    return x, y


def test_shapley_axioms():
    with criterion("Shapley axioms: efficiency (1e-8 rel), dummy (exact 0), linearity (1e-6)"):
        x, y = _shapley_setup()
        model = fit(x, y, FitConfig(seed=11, rank_pair=32))
        rng = np.random.default_rng(7)
        probe = rng.uniform(-1.0, 1.0, size=(1000, 4))
        phi, recon = shapley_batch(model, probe)
        gap = np.abs(phi.sum(axis=1) - (recon - model.baseline))
        eff = float(np.max(gap / np.maximum(1.0, np.abs(recon))))
        print(f"  efficiency worst relative gap {eff:.3e}")
        assert eff <= 1e-8

        assert np.all(phi[:, 3] == 0.0), "dummy feature must receive exactly zero"

        cfg = FitConfig(seed=11, rank_pair=32, forced_pairs=((1, 2),))
        y2 = x[:, 0] ** 2 - 0.7 * x[:, 2]
        alpha, beta = 2.0, -3.0
        m1, m2, m3 = fit(x, y, cfg), fit(x, y2, cfg), fit(x, alpha * y + beta * y2, cfg)
        phi1, _ = shapley_batch(m1, probe)
        phi2, _ = shapley_batch(m2, probe)
        phi3, _ = shapley_batch(m3, probe)
        lin = float(np.max(np.abs(phi3 - (alpha * phi1 + beta * phi2))))
        print(f"  linearity worst gap {lin:.3e}")
        assert lin <= 1e-6


def _random_grid(rng):
    d = int(rng.integers(2, 4))
    counts = [int(rng.integers(2, 5)) for _ in range(d)]
    levels = tuple(tuple(np.sort(rng.normal(size=k) * 2.0).tolist()) for k in counts)
    probs = []
    for k in counts:
        p = rng.uniform(0.15, 1.0, size=k)
        probs.append(tuple((p / p.sum()).tolist()))
    return DiscreteGridFunction(levels=levels, probs=tuple(probs), table=rng.normal(size=tuple(counts)))


def test_oracle_equivalence():
    with criterion("Oracle equivalence: engine matches brute-force decomposition on 10 grids (1e-6)"):
        start = time.perf_counter()
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(10):
            fn = _random_grid(rng)
            worst = max(worst, compare_to_engine(fn, seed=11, ridge=1e-10))
        elapsed = time.perf_counter() - start
        print(f"  oracle worst discrepancy {worst:.3e}, {elapsed:.2f}s")
        assert worst <= 1e-6
        assert elapsed < 10.0


def test_additive_recovery():
    with criterion("Additive recovery: R2 >= 0.98 and pair norms <= 5% of max main norm"):
        for seed in (11, 13, 23):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-2.0, 2.0, size=(2000, 3))
            y = np.sin(x[:, 0]) + x[:, 1] ** 2
            model = fit(x, y, FitConfig(seed=seed))
            recon = evaluate(model, x).reconstruction
            r2 = fidelity_r2(y, recon)
            mains = [c.l2_norm for c in model.components if len(c.subset) == 1]
            pairs = [c.l2_norm for c in model.components if len(c.subset) == 2]
            worst_pair = max(pairs) if pairs else 0.0
            print(f"  seed {seed}: R2={r2:.5f} max pair/main = {worst_pair / max(mains):.4f}")
            assert r2 >= 0.98
            assert worst_pair <= 0.05 * max(mains)


def test_interaction_necessity():
    with criterion("Interaction necessity: removing the pair drops R2 by >= 0.8; null removal is exact 0"):
        rng = np.random.default_rng(11)
        x = np.hstack([rng.uniform(-1.0, 1.0, size=(2000, 2)), np.zeros((2000, 1))])
        y = x[:, 0] * x[:, 1]
        model = fit(x, y, FitConfig(seed=11, rank_pair=64, max_pairs=1))
        rep = component_surgery(model, x, y, SubsetId.of([0, 1]), target_kind="true_labels")
        print(f"  pair removal delta R2 = {rep.delta_r2:.4f}")
        assert rep.delta_r2 >= 0.8
        null = component_surgery(model, x, y, SubsetId.of([2]), target_kind="true_labels")
        assert null.delta_r2 == 0.0


def _engine_over_seeds(x, yhat, seeds):
    fidelities, seconds = [], []
    for seed in seeds:
        t0 = time.perf_counter()
        model = fit(x, yhat, FitConfig(seed=seed))
        phi, recon = shapley_batch(model, x)
        seconds.append(time.perf_counter() - t0)
        fidelities.append(fidelity_r2(yhat, recon))
    return np.array(fidelities), np.array(seconds)


def _forest_predictions(x, y, seed):
    sklearn_ensemble = pytest.importorskip("sklearn.ensemble")
    rng = np.random.default_rng(seed)
    train = rng.choice(x.shape[0], size=int(0.75 * x.shape[0]), replace=False)
    forest = sklearn_ensemble.RandomForestRegressor(
        n_estimators=200, max_depth=6, random_state=seed, n_jobs=-1
    )
    forest.fit(x[train], y[train])
    return forest.predict(x)


def _california():
    try:
        from sklearn.datasets import fetch_california_housing

        data = fetch_california_housing()
    except Exception as exc:  # no network route and no local cache
        pytest.skip(
            "California Housing unavailable in this environment "
            f"(no dataset cache, fetch failed: {type(exc).__name__}); "
            "test runs automatically where the dataset can be loaded"
        )
    return data.data, data.target, list(data.feature_names)


def test_desk_scale_fidelity_california():
    with criterion("Desk-scale fidelity: California Housing R2 >= 0.88, fit+explain <= 10 s"):
        x, y, _ = _california()
        fidelities, seconds = [], []
        for seed in PAPER_SEEDS:
            yhat = _forest_predictions(x, y, seed)
            f, s = _engine_over_seeds(x, yhat, [seed])
            fidelities.append(f[0])
            seconds.append(s[0])
        mean_r2 = float(np.mean(fidelities))
        mean_s = float(np.mean(seconds))
        print(f"  California: mean R2 {mean_r2:.4f} +- {np.std(fidelities):.4f}, "
              f"mean fit+explain {mean_s:.2f}s")
        assert mean_r2 >= 0.88
        assert mean_s <= 10.0


def test_desk_scale_fidelity_synthetic():
    # Same size, dimension, forest protocol, and bounds as the California
    # criterion, on generated data; runs in every environment.
    with criterion("Desk-scale fidelity (synthetic stand-in): R2 >= 0.88, fit+explain <= 10 s"):
        rng = np.random.default_rng(0)
        n = 20640
        x = np.column_stack([
            rng.uniform(0.5, 15.0, n),
            rng.uniform(1.0, 52.0, n),
            rng.normal(5.4, 2.0, n),
            rng.normal(1.1, 0.4, n),
            np.sqrt(rng.uniform(3.0, 35000.0, n)),
            rng.normal(3.0, 10.0, n),
            rng.uniform(32.5, 42.0, n),
            rng.uniform(-124.3, -114.3, n),
        ])
        y = (
            2.0 * np.sin(0.4 * x[:, 0]) + 0.3 * x[:, 0]
            + 0.02 * x[:, 1] + 0.1 * x[:, 2] - 0.2 * x[:, 3] + 0.004 * x[:, 4]
            - 0.15 * np.abs(x[:, 6] - 37.0) * np.abs(x[:, 7] + 119.0)
            + 0.05 * x[:, 0] * (x[:, 6] - 37.0)
            + 0.3 * rng.normal(size=n)
        )
        yhat = _forest_predictions(x, y, seed=11)
        fidelities, seconds = _engine_over_seeds(x, yhat, PAPER_SEEDS)
        print(f"  synthetic: mean R2 {fidelities.mean():.4f} +- {fidelities.std():.4f}, "
              f"mean fit+explain {seconds.mean():.2f}s")
        assert float(fidelities.mean()) >= 0.88
        assert float(seconds.mean()) <= 10.0


def test_determinism_byte_identical_archives(tmp_path):
    with criterion("Determinism: identical config and seed give byte-identical archives"):
        rng = np.random.default_rng(11)
        x = rng.uniform(-2.0, 2.0, size=(2000, 4))
        y = np.sin(x[:, 0]) + x[:, 1] * x[:, 2]
        cfg = FitConfig(seed=11)
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_model(fit(x, y, cfg), p1)
        save_model(fit(x, y, cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert model_to_json(fit(x, y, cfg)) == model_to_json(fit(x, y, cfg))
