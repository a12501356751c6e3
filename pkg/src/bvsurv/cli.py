"""Command-line entry point: ``bvsurv {select,tune,simulate,evaluate,predict}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import SurvivalDataset, ingest_dataset
from .evaluate import cross_validated_auc, predict_survival
from .exceptions import DataValidationError, NumericalError
from .hyperparam import select_tau
from .posterior import ScoredModel
from .priors import DEFAULT_R, DEFAULT_TAU, PIMOM, PMOM, PriorSpec
from .search import SearchConfig, SearchSummary, run_search, summaries
from .simulate import CASES, ReplicateSettings, aggregate, run_replicates, simulate_dataset

logger = logging.getLogger("bvsurv")

THREADS_ENV = "BVSURV_THREADS"


# -- argument helpers ---------------------------------------------------------------

def parse_range(text: str) -> tuple[float, ...]:
    """``"a:b:n"`` as ``n`` evenly spaced values, or a comma list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return tuple(float(v) for v in np.linspace(float(a), float(b), int(n)))
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad range {text!r}: {exc}") from None


def _split(text: str | None) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _d_value(text: str):
    if text == "auto":
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("d must be an integer or 'auto'") from None


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p):
    p.add_argument("data", help="CSV or TSV file with a header row")
    p.add_argument("--time-col", default="time")
    p.add_argument("--status-col", default="status")
    p.add_argument("--fixed-cols", default=None, help="comma-separated always-included columns")
    p.add_argument("--categorical-cols", default=None,
                   help="fixed columns to expand into indicators")
    p.add_argument("--standardize", action="store_true", help="scale non-fixed columns")


def _add_prior(p):
    p.add_argument("--prior", choices=(PIMOM, PMOM), default=PIMOM)
    p.add_argument("--tau", type=float, default=None,
                   help=f"prior scale; skips tuning (the usual default is {DEFAULT_TAU})")
    p.add_argument("--r", type=float, default=DEFAULT_R)
    p.add_argument("--alpha", type=float, default=0.8, help="tuning cap: tau <= alpha^2")
    p.add_argument("--tune-reps", type=int, default=200)
    p.add_argument("--a", type=float, default=1.0, help="beta-binomial a")
    p.add_argument("--b", type=float, default=None, help="beta-binomial b (default p - a)")


def _add_search(p):
    p.add_argument("--chains", type=int, default=8)
    p.add_argument("--temps", type=parse_range, default=parse_range("3:1:10"))
    p.add_argument("--iters", type=int, default=30, help="iterations per temperature")
    p.add_argument("--d", type=_d_value, default=None, help="screening size or 'auto'")
    p.add_argument("--occam", type=float, default=0.01, help="Occam's window ratio")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvsurv", description="Bayesian variable selection for Cox models")
    parser.add_argument("--version", action="version", version=f"bvsurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="search models and report posterior summaries")
    _add_data(p); _add_prior(p); _add_search(p); _add_common(p)
    p.add_argument("--top", type=int, default=50)
    p.add_argument("--omit-timing", action="store_true",
                   help="leave wall time out so reruns are byte-identical")

    p = sub.add_parser("tune", help="choose tau from null-model MLEs")
    _add_data(p); _add_common(p)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--r", type=float, default=DEFAULT_R)
    p.add_argument("--reps", type=int, default=200)

    p = sub.add_parser("simulate", help="replicate a simulation design")
    _add_common(p)
    p.add_argument("--case", choices=sorted(CASES), default="2")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--save-datasets", action="store_true")
    _add_prior(p); _add_search(p)

    p = sub.add_parser("evaluate", help="cross-validated time-dependent AUC")
    _add_data(p); _add_prior(p); _add_search(p); _add_common(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--t-grid", type=parse_range, required=True)
    p.add_argument("--mode", choices=("hppm", "bma"), default="bma")
    p.add_argument("--weighting", choices=("survival", "censoring"), default="survival",
                   help="Kaplan-Meier curve used for case weights")

    p = sub.add_parser("predict", help="survival curves for new subjects")
    _add_data(p); _add_prior(p); _add_search(p); _add_common(p)
    p.add_argument("--subjects", required=True, help="CSV of covariates for new subjects")
    p.add_argument("--times", type=parse_range, default=None,
                   help="evaluation times (default: distinct training event times)")
    p.add_argument("--mode", choices=("hppm", "bma"), default="hppm")
    p.add_argument("--report", default=None, help="reuse a JSON report written by select")
    return parser


# -- output helpers ---------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def config_hash(config: dict) -> str:
    blob = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _meta(seed, config):
    return {"version": __version__, "seed": seed, "config_hash": config_hash(config)}


def _header(seed, config) -> str:
    return f"# bvsurv {__version__} seed={seed} config={config_hash(config)}\n"


def _write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _write_json(payload: dict, out: str | None) -> None:
    _write_text(json.dumps(_clean(payload), indent=2) + "\n", out)


def _write_csv(frame: pd.DataFrame, path: Path, seed, config) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(seed, config))
        frame.to_csv(fh, index=False, float_format="%.10g")


# -- shared steps ---------------------------------------------------------------

def _load(args) -> SurvivalDataset:
    if not os.path.isfile(args.data):
        raise DataValidationError(f"no such file: {args.data}")
    data = ingest_dataset(args.data, args.time_col, args.status_col, _split(args.fixed_cols),
                          _split(args.categorical_cols), scale=args.standardize)
    logger.info("loaded n=%d p=%d (%d fixed), censored %.1f%%", data.n, data.p,
                len(data.fixed_columns), 100 * data.censoring_fraction)
    return data


def _prior_config(args) -> dict:
    return {"family": args.prior, "r": args.r, "tau": args.tau, "alpha": args.alpha,
            "tune_reps": args.tune_reps, "a": args.a, "b": args.b}


def _search_config(args, seed=None) -> SearchConfig:
    return SearchConfig(temperatures=args.temps, iters_per_temp=args.iters, d=args.d,
                        chains=args.chains, seed=args.seed if seed is None else seed,
                        threads=args.threads)


def _search_echo(config: SearchConfig) -> dict:
    # threads is left out: results do not depend on it
    echo = asdict(config)
    echo.pop("threads")
    return echo


def _resolve_prior(args, data: SurvivalDataset):
    base = PriorSpec(family=args.prior, r=args.r, tau=args.tau or DEFAULT_TAU, a=args.a, b=args.b)
    if args.tau is not None:
        return base, None
    sel = select_tau(data, args.alpha, r=args.r, reps=args.tune_reps, seed=args.seed)
    return base.with_tau(sel.tau), sel


def _model_entry(data, scored: ScoredModel, prob=None) -> dict:
    entry = {"model": [data.column_names[j] for j in scored.model],
             "indices": list(scored.model), "log_score": scored.log_score}
    if prob is not None:
        entry["probability"] = prob
    return entry


def _report(data, summ: SearchSummary, prior: PriorSpec, top: int) -> dict:
    names = data.column_names
    hppm = summ.hppm
    return {
        "hppm": {**_model_entry(data, hppm),
                 "coefficients": dict(zip((names[j] for j in hppm.model), hppm.beta_map))},
        "mpm": [names[j] for j in summ.mpm],
        "inclusion": dict(zip(names, summ.inclusion)),
        "top_models": [_model_entry(data, m, p) for m, p in summ.top(top)],
        "occam": [{**_model_entry(data, m), "weight": w,
                   "coefficients": list(m.beta_map)}
                  for m, w in zip(summ.occam_models, summ.occam_weights)],
        "tau": prior.tau,
    }


# -- subcommands -------------------------------------------------------------------

def cmd_select(args) -> int:
    start = time.perf_counter()
    data = _load(args)
    prior, sel = _resolve_prior(args, data)
    config = _search_config(args)
    echo = {"command": "select", "data": os.path.basename(args.data), "prior": _prior_config(args),
            "search": _search_echo(config), "occam": args.occam,
            "fixed": [data.column_names[j] for j in data.fixed_columns]}
    pool = run_search(data, prior, config)
    summ = summaries(pool, data.p, args.occam, data.fixed_columns)
    payload = {"_meta": _meta(args.seed, echo), **_report(data, summ, prior, args.top),
               "tuning": None if sel is None else {"tau1": sel.tau1, "null_mean": sel.null_mean,
                                                   "null_sd": sel.null_sd},
               "pool_size": len(pool), "stalls": pool.stalls, "config": echo}
    if not args.omit_timing:
        payload["wall_seconds"] = round(time.perf_counter() - start, 3)
    _write_json(payload, args.out)
    return 0


def cmd_tune(args) -> int:
    data = _load(args)
    sel = select_tau(data, args.alpha, r=args.r, reps=args.reps, seed=args.seed)
    echo = {"command": "tune", "data": os.path.basename(args.data), "alpha": args.alpha,
            "r": args.r, "reps": args.reps}
    _write_json({"_meta": _meta(args.seed, echo), "tau": sel.tau, "tau1": sel.tau1,
                 "threshold": sel.threshold, "null_mean": sel.null_mean,
                 "null_sd": sel.null_sd, "dropped_fits": sel.dropped,
                 "grid": sel.grid, "overlap": sel.overlaps, "config": echo}, args.out)
    return 0


def cmd_simulate(args) -> int:
    case = CASES[args.case]
    n, p = args.n or case.n, args.p or case.p
    prior = PriorSpec(family=args.prior, r=args.r, tau=args.tau or DEFAULT_TAU, a=args.a, b=args.b)
    search = _search_config(args, seed=args.seed)
    settings = ReplicateSettings(case, n, p, args.seed, prior, tune=args.tau is None,
                                 alpha=args.alpha, tune_reps=args.tune_reps, search=search)
    echo = {"command": "simulate", "case": args.case, "n": n, "p": p, "reps": args.reps,
            "prior": _prior_config(args), "search": _search_echo(search)}
    out = Path(args.out or ".")
    results = run_replicates(settings, args.reps, threads=args.threads)
    rows = [{"replicate": r.replicate, "tau": r.tau, "TP": r.metrics.tp, "FP": r.metrics.fp,
             "size": r.metrics.size, "l1": r.metrics.l1, "sq_error": r.metrics.sq_error,
             "exact": int(r.metrics.exact), "censoring": r.censoring,
             "selected": " ".join(f"X{j + 1}" for j in r.selected)} for r in results]
    agg = aggregate(r.metrics for r in results)
    rows.append({"replicate": "aggregate", "TP": agg["MTP"], "FP": agg["MFP"],
                 "size": agg["MMS"], "l1": agg["mean_l1"], "sq_error": agg["MSE"],
                 "exact": agg["TMP"],
                 "censoring": float(np.mean([r.censoring for r in results]))})
    _write_csv(pd.DataFrame(rows), out / "metrics.csv", args.seed, echo)
    _write_json({"_meta": _meta(args.seed, echo), "aggregate": agg, "config": echo},
                str(out / "aggregate.json"))
    if args.save_datasets:
        for i in range(args.reps):
            data, _ = simulate_dataset(case, n, p, args.seed, i)
            frame = pd.DataFrame(data.design, columns=list(data.column_names))
            frame.insert(0, "status", data.status.astype(int))
            frame.insert(0, "time", data.times)
            _write_csv(frame, out / f"replicate_{i:03d}.csv", args.seed, echo)
    return 0


def cmd_evaluate(args) -> int:
    data = _load(args)
    config = _search_config(args)
    base = PriorSpec(family=args.prior, r=args.r, tau=args.tau or DEFAULT_TAU, a=args.a, b=args.b)
    tuner = None
    if args.tau is None:
        def tuner(train):
            return base.with_tau(select_tau(train, args.alpha, r=args.r,
                                            reps=args.tune_reps, seed=args.seed).tau)
    res = cross_validated_auc(data, base, config, args.t_grid, args.folds, args.mode,
                              args.seed, args.weighting, args.occam, tuner)
    echo = {"command": "evaluate", "data": os.path.basename(args.data), "folds": args.folds,
            "t_grid": list(args.t_grid), "mode": args.mode, "weighting": args.weighting,
            "prior": _prior_config(args), "search": _search_echo(config)}
    frame = pd.DataFrame({"t": res.t_grid})
    for f in range(args.folds):
        frame[f"fold_{f + 1}"] = res.auc[f]
    frame["mean"] = res.mean
    out = Path(args.out or ".")
    _write_csv(frame, out / "auc.csv", args.seed, echo)
    curves = [pd.DataFrame(c, columns=[f"t={t:g}" for t in res.t_grid])
              .assign(row=rows, fold=f + 1)
              for f, (c, rows) in enumerate(zip(res.curves, res.test_rows))]
    frame = pd.concat(curves, ignore_index=True)
    frame.insert(0, "fold", frame.pop("fold"))
    frame.insert(0, "row", data.order[frame.pop("row")])
    _write_csv(frame.sort_values("row", kind="stable"), out / "survival_curves.csv",
               args.seed, echo)
    return 0


def _summary_from_report(report: dict, data: SurvivalDataset) -> SearchSummary:
    index = {name: j for j, name in enumerate(data.column_names)}

    def scored(names, beta):
        ids = tuple(index[nm] for nm in names)
        return ScoredModel(ids, np.asarray(beta, dtype=float), np.nan, np.nan, 0.0, True, np.nan)

    h = report["hppm"]
    hppm = scored(h["model"], [h["coefficients"][nm] for nm in h["model"]])
    occam = [scored(o["model"], o["coefficients"]) for o in report["occam"]]
    weights = np.array([o["weight"] for o in report["occam"]], dtype=float)
    return SearchSummary([hppm], np.ones(1), hppm, (), np.zeros(data.p), occam, weights)


def cmd_predict(args) -> int:
    data = _load(args)
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
        try:
            summ = _summary_from_report(report, data)
        except KeyError as exc:
            raise DataValidationError(f"report does not match the data: {exc}") from None
        source = {"report": os.path.basename(args.report)}
    else:
        prior, _ = _resolve_prior(args, data)
        config = _search_config(args)
        summ = summaries(run_search(data, prior, config), data.p, args.occam, data.fixed_columns)
        source = {"prior": _prior_config(args), "search": _search_echo(config)}
    if not os.path.isfile(args.subjects):
        raise DataValidationError(f"no such file: {args.subjects}")
    subjects = pd.read_csv(args.subjects, comment="#")
    missing = [c for c in data.column_names if c not in subjects.columns]
    if missing:
        raise DataValidationError(f"subject file lacks columns: {missing[:5]}")
    design = subjects[list(data.column_names)].to_numpy(dtype=float)
    if data.center is not None:
        design = (design - data.center) / data.scale
    times = (np.asarray(args.times) if args.times is not None
             else np.unique(data.times[data.status > 0]))
    curves = predict_survival(data, summ, design, times, args.mode)
    echo = {"command": "predict", "data": os.path.basename(args.data), "mode": args.mode,
            "subjects": os.path.basename(args.subjects), **source}
    frame = pd.DataFrame(curves, columns=[f"t={t:g}" for t in times])
    frame.insert(0, "subject", np.arange(len(frame)))
    out = Path(args.out) if args.out else None
    if out is None:
        sys.stdout.write(_header(args.seed, echo))
        frame.to_csv(sys.stdout, index=False, float_format="%.10g")
    else:
        _write_csv(frame, out, args.seed, echo)
    return 0


COMMANDS = {"select": cmd_select, "tune": cmd_tune, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate, "predict": cmd_predict}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataValidationError, OSError, ValueError) as exc:
        code, kind = 2, "validation"
        err = exc
    except (NumericalError, ArithmeticError) as exc:
        code, kind = 3, "numerical"
        err = exc
    sys.stderr.write(json.dumps({"error": kind, "type": type(err).__name__,
                                 "message": str(err)}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
