"""Command-line interface.

Subcommands: fit, explain, synergy, whatif, surgery, validate, bench.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import analysis
from .anova import DiscreteGridFunction, compare_to_engine, component_on_rows, exact_anova
from .centered import (
    SubsetId,
    centered_kernel_matrix,
    cross_orthogonality,
    empirical_cross_orthogonality,
    partial_mean_check,
    product_kernel_matrix,
    subsets_of,
)
from .data import Dataset, load_csv, load_prediction_file
from .decomposition import FitConfig, evaluate, fit, load_model, save_model
from .errors import ConfigError, DataError, StrideError
from .kernels import KernelSpec


def _engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rank-main", type=int, default=32)
    parser.add_argument("--rank-pair", type=int, default=16)
    parser.add_argument("--lambda", dest="ridge_lambda", type=float, default=1e-6)
    parser.add_argument("--max-pairs", type=int, default=None)
    parser.add_argument("--kernel", choices=("rbf", "laplace", "poly"), default="rbf")
    parser.add_argument("--bandwidth", type=float, default=None, help="fixed kernel bandwidth (default: median heuristic)")
    parser.add_argument("--degree", type=int, default=2)
    parser.add_argument("--offset", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=11)


def _config_from_args(args) -> FitConfig:
    return FitConfig(
        kernel=KernelSpec(kind=args.kernel, bandwidth=args.bandwidth, degree=args.degree, offset=args.offset),
        rank_main=args.rank_main,
        rank_pair=args.rank_pair,
        ridge_lambda=args.ridge_lambda,
        max_pairs=args.max_pairs,
        seed=args.seed,
    )


def _data_flags(parser: argparse.ArgumentParser, pred: bool = True) -> None:
    parser.add_argument("--data", required=True, help="feature CSV (header row required)")
    parser.add_argument("--target-col", default=None, help="label column inside --data, excluded from features")
    if pred:
        parser.add_argument("--pred", default=None, help="CSV file with one prediction column")
        parser.add_argument("--pred-col", default=None, help="prediction column inside --data")


def _load_dataset(args, need_pred: bool = False) -> Dataset:
    target_col = getattr(args, "target_col", None)
    pred_col = getattr(args, "pred_col", None)
    ds = load_csv(args.data, target_col=target_col, pred_col=pred_col)
    pred_file = getattr(args, "pred", None)
    if pred_file is not None:
        if ds.predictions is not None:
            raise ConfigError("give either --pred or --pred-col, not both")
        preds = load_prediction_file(pred_file)
        if preds.shape[0] != ds.n_rows:
            raise DataError(f"{pred_file} has {preds.shape[0]} predictions for {ds.n_rows} rows")
        ds.predictions = preds
        ds.prediction_name = pred_file
    if need_pred and ds.predictions is None:
        raise ConfigError("this command needs predictions: pass --pred or --pred-col")
    return ds


def _write_json(path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _new_report() -> dict:
    return {
        "fidelity": None,
        "attributions": None,
        "mean_abs_attributions": None,
        "synergy": None,
        "surgery": None,
        "whatif": None,
        "timings": {},
    }


def _check_schema(model, ds: Dataset) -> None:
    if model.n_features != ds.n_features:
        raise DataError(f"model expects {model.n_features} features, data has {ds.n_features}")
    if model.feature_names is not None and model.feature_names != ds.feature_names:
        raise DataError("feature names in the data do not match the fitted model")


def cmd_fit(args) -> int:
    ds = _load_dataset(args, need_pred=True)
    config = _config_from_args(args)
    t0 = time.perf_counter()
    model = fit(ds.matrix, ds.predictions, config, feature_names=ds.feature_names)
    elapsed = time.perf_counter() - t0
    save_model(model, args.out)
    recon = evaluate(model, ds.matrix).reconstruction
    r2 = analysis.fidelity_r2(ds.predictions, recon)
    print(f"fit: n={ds.n_rows} d={ds.n_features} pairs={len(model.pair_list)} "
          f"fidelity={r2:.4f} seconds={elapsed:.3f} -> {args.out}")
    return 0


def _parse_instances(text: str | None, n: int) -> list[int]:
    if text is None:
        return list(range(n))
    try:
        idx = [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise ConfigError(f"--instances expects comma-separated integers, got {text!r}")
    for i in idx:
        if not 0 <= i < n:
            raise ConfigError(f"instance index {i} out of range 0..{n - 1}")
    return idx


def cmd_explain(args) -> int:
    model = load_model(args.model)
    ds = _load_dataset(args)
    _check_schema(model, ds)
    rows = _parse_instances(args.instances, ds.n_rows)
    t0 = time.perf_counter()
    phi, recon = analysis.shapley_batch(model, ds.matrix[rows])
    elapsed = time.perf_counter() - t0
    report = _new_report()
    report["attributions"] = [
        {"instance": int(i), "values": phi[k].tolist(), "reconstruction": float(recon[k]),
         "baseline": model.baseline}
        for k, i in enumerate(rows)
    ]
    report["mean_abs_attributions"] = np.mean(np.abs(phi), axis=0).tolist()
    report["feature_names"] = ds.feature_names
    if ds.predictions is not None:
        report["fidelity"] = analysis.fidelity_r2(ds.predictions[rows], recon)
    report["timings"]["explain_seconds"] = elapsed
    _write_json(args.out, report)
    print(f"explain: {len(rows)} instances seconds={elapsed:.3f} -> {args.out}")
    return 0


def cmd_synergy(args) -> int:
    model = load_model(args.model)
    ds = _load_dataset(args, need_pred=False)
    _check_schema(model, ds)
    t0 = time.perf_counter()
    syn = analysis.synergy_matrix(model, ds.matrix)
    elapsed = time.perf_counter() - t0
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\t".join(ds.feature_names) + "\n")
        for row in syn.matrix:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    if args.report:
        report = _new_report()
        report["synergy"] = {"matrix": syn.matrix.tolist(), "feature_names": ds.feature_names}
        report["timings"]["synergy_seconds"] = elapsed
        _write_json(args.report, report)
    print(f"synergy: {len(model.pair_list)} modeled pairs -> {args.out}")
    return 0


def _parse_edits(pairs: list[str], ds: Dataset) -> list[tuple[int, float]]:
    edits = []
    for text in pairs:
        if "=" not in text:
            raise ConfigError(f"--set expects NAME=VALUE, got {text!r}")
        name, _, raw = text.partition("=")
        if name not in ds.feature_names:
            raise DataError(f"unknown feature {name!r}")
        try:
            edits.append((ds.feature_names.index(name), float(raw)))
        except ValueError:
            raise ConfigError(f"--set value for {name!r} is not a number: {raw!r}")
    return edits


def cmd_whatif(args) -> int:
    model = load_model(args.model)
    ds = _load_dataset(args)
    _check_schema(model, ds)
    if not 0 <= args.instance < ds.n_rows:
        raise ConfigError(f"--instance {args.instance} out of range 0..{ds.n_rows - 1}")
    edits = _parse_edits(args.set or [], ds)
    rep = analysis.what_if(model, ds.matrix[args.instance], edits)
    report = _new_report()
    report["whatif"] = [{
        "instance": args.instance,
        "edits": [[ds.feature_names[i], v] for i, v in rep.edits],
        "component_deltas": {str(s): v for s, v in rep.component_deltas.items()},
        "component_before": {str(s): v for s, v in rep.component_before.items()},
        "component_after": {str(s): v for s, v in rep.component_after.items()},
        "attribution_deltas": rep.attribution_deltas.tolist(),
        "attributions_before": rep.attribution_before.values.tolist(),
        "attributions_after": rep.attribution_after.values.tolist(),
        "reconstruction_before": rep.attribution_before.reconstruction,
        "reconstruction_after": rep.attribution_after.reconstruction,
        "feature_names": ds.feature_names,
    }]
    _write_json(args.out, report)
    print(f"whatif: instance {args.instance}, {len(edits)} edit(s) -> {args.out}")
    return 0


def cmd_surgery(args) -> int:
    model = load_model(args.model)
    ds = _load_dataset(args, need_pred=False)
    _check_schema(model, ds)
    if args.target_col is not None:
        target, kind = ds.target, "true_labels"
    else:
        if args.pred is None and args.pred_col is None:
            raise ConfigError("surgery needs a target: --target-col or --pred/--pred-col")
        target, kind = ds.predictions, "model_output"
    if args.most_impactful:
        subset = analysis.most_impactful_pair(model, ds.matrix)
    elif args.subset:
        text = args.subset.strip()
        subset = SubsetId.parse(text) if text.startswith("{") else SubsetId.of(int(p) for p in text.split(","))
    else:
        raise ConfigError("surgery needs --subset or --most-impactful")
    rep = analysis.component_surgery(model, ds.matrix, target, subset, target_kind=kind)
    report = _new_report()
    report["surgery"] = [{
        "removed_subset": str(rep.removed_subset),
        "r2_full": rep.r2_full,
        "r2_ablated": rep.r2_ablated,
        "delta_r2": rep.delta_r2,
        "target_kind": rep.target_kind,
    }]
    _write_json(args.out, report)
    print(f"surgery: removed {rep.removed_subset} delta_r2={rep.delta_r2:+.5f} -> {args.out}")
    return 0


def _validate_checks(x: np.ndarray, seed: int) -> list[dict]:
    """Dense-path theorem checks plus an engine/oracle round on a grid."""
    rng = np.random.default_rng(seed)
    n, d = x.shape
    d = min(d, 4)
    x = x[:, :d]
    if n > 300:
        x = x[np.sort(rng.choice(n, size=300, replace=False))]
    shuffled = x.copy()
    for j in range(shuffled.shape[1]):
        rng.shuffle(shuffled[:, j])
    specs = [KernelSpec(kind="rbf") for _ in range(d)]
    checks: list[dict] = []

    full = SubsetId.of(range(d))
    mats = {}
    worst_mobius = 0.0
    for subset in subsets_of(full):
        mats[subset] = centered_kernel_matrix(shuffled, shuffled, subset, specs)
        if len(subset) > 0:
            total = np.zeros_like(mats[subset].values)
            for sub in subsets_of(subset):
                total += mats[sub].values
            target = product_kernel_matrix(shuffled, shuffled, subset, specs)
            worst_mobius = max(worst_mobius, float(np.max(np.abs(total - target))))
    checks.append({"name": "mobius_identity", "value": worst_mobius, "threshold": 1e-10})

    worst_partial = 0.0
    for subset, mat in mats.items():
        for dim in subset:
            worst_partial = max(worst_partial, partial_mean_check(mat, dim, shuffled))
    checks.append({"name": "partial_zero_mean", "value": worst_partial, "threshold": 1e-10})

    keys = list(mats)
    worst_orth = 0.0
    worst_emp = 0.0
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            worst_orth = max(worst_orth, cross_orthogonality(mats[keys[a]], mats[keys[b]], shuffled))
            worst_emp = max(worst_emp, empirical_cross_orthogonality(mats[keys[a]], mats[keys[b]]))
    checks.append({"name": "orthogonality_product_measure", "value": worst_orth, "threshold": 1e-8})
    checks.append({"name": "orthogonality_joint_rows", "value": worst_emp, "threshold": None})

    y = shuffled @ rng.normal(size=d) + np.sin(shuffled[:, 0])
    model = fit(shuffled, y, FitConfig(seed=seed, rank_main=16, max_pairs=min(2, d * (d - 1) // 2)))
    checks.append({
        "name": "fit_orthogonality_diagnostic",
        "value": model.diagnostics["orthogonality_residual"],
        "threshold": 1e-6,
    })

    levels = (tuple(float(v) for v in range(3)), tuple(float(v) for v in range(3)))
    probs = (tuple(float(p) for p in (0.2, 0.5, 0.3)), tuple(float(p) for p in (0.4, 0.2, 0.4)))
    grid = DiscreteGridFunction(levels=levels, probs=probs, table=rng.normal(size=(3, 3)))
    comps = exact_anova(grid)
    rows, w, vals = grid.grid_rows()
    total = np.zeros_like(vals)
    for subset in comps:
        total += component_on_rows(grid, comps, subset)
    checks.append({"name": "oracle_completeness", "value": float(np.max(np.abs(total - vals))), "threshold": 1e-12})
    checks.append({"name": "engine_vs_oracle", "value": compare_to_engine(grid, seed=seed), "threshold": 1e-6})
    return checks


def cmd_validate(args) -> int:
    if args.data:
        ds = _load_dataset(args, need_pred=False)
        x = ds.matrix
    else:
        rng = np.random.default_rng(args.seed)
        x = rng.uniform(-1.5, 1.5, size=(args.rows, args.dims))
    checks = _validate_checks(x, args.seed)
    failed = False
    for check in checks:
        if check["threshold"] is None:
            print(f"REPORT {check['name']}: {check['value']:.3e}")
            continue
        ok = check["value"] <= check["threshold"]
        failed = failed or not ok
        print(f"{'PASS' if ok else 'FAIL'} {check['name']}: {check['value']:.3e} (threshold {check['threshold']:.0e})")
    if args.out:
        _write_json(args.out, {"checks": checks})
    return 0 if not failed else 4


def cmd_bench(args) -> int:
    ds = _load_dataset(args, need_pred=True)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {args.seeds!r}")
    if not seeds:
        raise ConfigError("bench needs at least one seed")
    base = _config_from_args(args)
    rows = []
    for seed in seeds:
        config = FitConfig(
            kernel=base.kernel, rank_main=base.rank_main, rank_pair=base.rank_pair,
            ridge_lambda=base.ridge_lambda, max_pairs=base.max_pairs, seed=seed,
        )
        t0 = time.perf_counter()
        model = fit(ds.matrix, ds.predictions, config, feature_names=ds.feature_names)
        t1 = time.perf_counter()
        phi, recon = analysis.shapley_batch(model, ds.matrix)
        t2 = time.perf_counter()
        rows.append({
            "seed": seed,
            "fit_seconds": t1 - t0,
            "explain_seconds": t2 - t1,
            "total_seconds": t2 - t0,
            "fidelity_r2": analysis.fidelity_r2(ds.predictions, recon),
            "mean_abs_attributions": np.mean(np.abs(phi), axis=0).tolist(),
        })
    def agg(key):
        vals = np.array([r[key] for r in rows])
        return {"mean": float(vals.mean()), "std": float(vals.std())}
    summary = {k: agg(k) for k in ("fit_seconds", "explain_seconds", "total_seconds", "fidelity_r2")}
    payload = {"rows": rows, "summary": summary, "seeds": seeds, "feature_names": ds.feature_names}
    if args.out:
        _write_json(args.out, payload)
    print(f"{'seed':>6} {'fit_s':>9} {'explain_s':>9} {'total_s':>9} {'R2':>8}")
    for r in rows:
        print(f"{r['seed']:>6} {r['fit_seconds']:>9.3f} {r['explain_seconds']:>9.3f} "
              f"{r['total_seconds']:>9.3f} {r['fidelity_r2']:>8.4f}")
    print(f"  mean {summary['fit_seconds']['mean']:>9.3f} {summary['explain_seconds']['mean']:>9.3f} "
          f"{summary['total_seconds']['mean']:>9.3f} {summary['fidelity_r2']['mean']:>8.4f}")
    print(f"   std {summary['fit_seconds']['std']:>9.3f} {summary['explain_seconds']['std']:>9.3f} "
          f"{summary['total_seconds']['std']:>9.3f} {summary['fidelity_r2']['std']:>8.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stride", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a decomposition of ingested predictions")
    _data_flags(p)
    _engine_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("explain", help="attributions for instances")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--instances", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synergy", help="pairwise synergy matrix")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--out", required=True, help="TSV output path")
    p.add_argument("--report", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_synergy)

    p = sub.add_parser("whatif", help="re-evaluate components under feature edits")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--set", action="append", metavar="NAME=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("surgery", help="remove one component and measure the R^2 cost")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--subset", default=None, help="component to remove, e.g. 0,3")
    p.add_argument("--most-impactful", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surgery)

    p = sub.add_parser("validate", help="run the theorem-level diagnostic suite")
    p.add_argument("--data", default=None)
    p.add_argument("--rows", type=int, default=200)
    p.add_argument("--dims", type=int, default=3)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="seeded timing and fidelity table")
    _data_flags(p)
    _engine_flags(p)
    p.add_argument("--seeds", default="11", help="comma-separated seed list")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StrideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
