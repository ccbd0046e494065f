"""Command-line surface.

Every verb emits a RunArtifact JSON document (to stdout or --out) carrying
the spec and seed that produced it, so runs are replayable. ``simulate``
writes the dataset CSV instead.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .bayes_engine.model import MODEL_IDS, ModelSpec
from .bayes_engine.sampler import fit_mcmc, posterior_summary
from .data import PairDataset
from .decision import eligibility_probability, misclassification_table
from .errors import RetestKitError
from .freq import bootstrap, fit_strata, naive_sigma_meas_sq, theoretical_naive_bias
from .io import (
    RunArtifact,
    draws_to_artifact_dict,
    ingest,
    load_fit_file,
    write_csv,
)
from .model_select import compare_models, cross_validate
from .simulate import (
    DEFAULT_CUTOFFS,
    GeneratorSpec,
    RetestPolicy,
    simulate_dgp,
    simulate_pairs,
)
from .stats_core import MeasurementDensity
from . import server as server_mod


def _emit(artifact: RunArtifact, out: str | None) -> None:
    text = artifact.to_json()
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _artifact(command: str, spec: dict, seed, results: dict,
              started: float) -> RunArtifact:
    return RunArtifact(command=command, spec=spec, seed=seed, results=results,
                       runtime_s=time.perf_counter() - started)


def _load_data(path: str, retain: bool = False) -> PairDataset:
    data, report = ingest(path, retain_above_cutoff=retain)
    if report.n_excluded_above_cutoff:
        print(f"note: excluded {report.n_excluded_above_cutoff} rows with x2 "
              f"present but x1 >= cutoff", file=sys.stderr)
    return data


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.dgp:
        data = simulate_dgp(args.dgp, args.n, args.seed, rate=args.rate)
    else:
        spec = GeneratorSpec(
            population=MeasurementDensity(
                args.pop_family, location=args.mu, scale=args.sigma_pop,
                scale2=args.pop_scale2, weight=args.pop_weight,
                df=args.pop_df, shape=args.pop_shape),
            measurement=MeasurementDensity(
                args.meas_family, location=0.0, scale=args.sigma_meas,
                scale2=args.meas_scale2, weight=args.meas_weight,
                df=args.meas_df),
            policy=RetestPolicy(cutoff=args.cutoff, rate=args.rate),
            n=args.n, seed=args.seed, stratum=args.stratum)
        data = simulate_pairs(spec)
    if args.out:
        write_csv(data, args.out)
        print(f"wrote {len(data)} records to {args.out} "
              f"({time.perf_counter() - started:.2f}s)", file=sys.stderr)
    else:
        write_csv(data, sys.stdout)
    return 0


def cmd_fit_freq(args) -> int:
    started = time.perf_counter()
    data = _load_data(args.data, args.retain_above_cutoff)
    results: dict = {"estimates": {}, "bootstrap": {}}
    for stratum, est in fit_strata(data, args.method).items():
        results["estimates"][stratum] = est.as_dict()
    if args.bootstrap:
        for stratum in data.stratum_labels():
            summary = bootstrap(data.for_stratum(stratum), args.method,
                                B=args.bootstrap, seed=args.seed)
            results["bootstrap"][stratum] = summary.as_dict()
    spec = {"data": args.data, "method": args.method, "bootstrap": args.bootstrap}
    _emit(_artifact("fit-freq", spec, args.seed, results, started), args.out)
    return 0


def cmd_fit_bayes(args) -> int:
    started = time.perf_counter()
    data = _load_data(args.data, args.retain_above_cutoff)
    strata = tuple(data.stratum_labels())
    model = ModelSpec(args.model, strata=strata)
    fit = fit_mcmc(model, data, chains=args.chains, warmup=args.warmup,
                   iters=args.iters, seed=args.seed, quad_order=args.quad_order)
    results = {
        "summary": posterior_summary(fit),
        "fit": draws_to_artifact_dict(fit, data.stratum_cutoffs()),
    }
    spec = {"data": args.data, "model": args.model, "chains": args.chains,
            "warmup": args.warmup, "iters": args.iters,
            "quad_order": args.quad_order}
    _emit(_artifact("fit-bayes", spec, args.seed, results, started), args.out)
    return 0


def cmd_cv(args) -> int:
    started = time.perf_counter()
    data = _load_data(args.data, args.retain_above_cutoff)
    model_ids = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in model_ids:
        if m not in MODEL_IDS:
            raise RetestKitError(f"unknown model id {m!r}")
    report = cross_validate(data, model_ids, K=args.k, seed=args.seed,
                            chains=args.chains, warmup=args.warmup,
                            iters=args.iters, S=args.S, method=args.inner,
                            R=args.R)
    reference = args.reference or max(report.total, key=report.total.get)
    results = {"cv": report.as_dict(),
               "comparison_vs_" + reference: compare_models(report, reference)}
    spec = {"data": args.data, "k": args.k, "models": model_ids,
            "warmup": args.warmup, "iters": args.iters, "S": args.S,
            "inner": args.inner}
    _emit(_artifact("cv", spec, args.seed, results, started), args.out)
    return 0


def cmd_decide(args) -> int:
    started = time.perf_counter()
    fit, cutoffs = load_fit_file(args.params)
    cutoff = args.cutoff if args.cutoff is not None else cutoffs.get(args.stratum)
    if cutoff is None:
        raise RetestKitError(f"no cutoff given and none stored for stratum "
                             f"{args.stratum!r}")
    report = eligibility_probability(args.x1, args.x2, cutoff, fit,
                                     args.stratum, n_draws=args.n_draws)
    spec = {"params": args.params, "stratum": args.stratum, "x1": args.x1,
            "x2": args.x2, "cutoff": cutoff, "n_draws": args.n_draws}
    _emit(_artifact("decide", spec, args.seed,
                    report.as_dict(include_grid=not args.no_grid), started),
          args.out)
    return 0


def cmd_bias_curve(args) -> int:
    started = time.perf_counter()
    lo, hi, num = args.cutoffs
    cut_grid = np.linspace(lo, hi, int(num))
    rng_seeds = np.random.SeedSequence(args.seed).spawn(len(cut_grid))
    rows = []
    for c, ss in zip(cut_grid, rng_seeds):
        theory = theoretical_naive_bias(args.mu, args.sigma_pop,
                                        args.sigma_meas, float(c))
        sims = []
        rep_seeds = ss.spawn(args.reps)
        for rs in rep_seeds:
            spec = GeneratorSpec(
                population=MeasurementDensity("normal", location=args.mu,
                                              scale=args.sigma_pop),
                measurement=MeasurementDensity("normal", scale=args.sigma_meas),
                policy=RetestPolicy(cutoff=float(c)), n=args.n,
                seed=int(rs.generate_state(1)[0]))
            data = simulate_pairs(spec)
            if data.n_pairs >= 2:
                sims.append(args.sigma_meas ** 2 - naive_sigma_meas_sq(data))
        row = {"cutoff": float(c), "theoretical_bias": theory,
               "n_sims": len(sims)}
        if sims:
            sims_arr = np.asarray(sims)
            row.update(simulated_bias_mean=float(sims_arr.mean()),
                       simulated_bias_q2_5=float(np.percentile(sims_arr, 2.5)),
                       simulated_bias_q97_5=float(np.percentile(sims_arr, 97.5)))
        rows.append(row)
    spec = {"mu": args.mu, "sigma_pop": args.sigma_pop,
            "sigma_meas": args.sigma_meas, "cutoffs": list(args.cutoffs),
            "n": args.n, "reps": args.reps}
    _emit(_artifact("bias-curve", spec, args.seed, {"curve": rows}, started),
          args.out)
    return 0


def cmd_recheck_study(args) -> int:
    started = time.perf_counter()
    rates = [float(r) for r in args.rates.split(",")]
    from .freq import estimate_rho_ce, estimate_rho_mle
    rows = []
    seeds = np.random.SeedSequence(args.seed).spawn(len(rates))
    for rate, ss in zip(rates, seeds):
        ce_b, mle_b = [], []
        for rs in ss.spawn(args.reps):
            spec = GeneratorSpec(
                population=MeasurementDensity("normal", location=args.mu,
                                              scale=args.sigma_pop),
                measurement=MeasurementDensity("normal", scale=args.sigma_meas),
                policy=RetestPolicy(cutoff=args.cutoff, rate=rate),
                n=args.n, seed=int(rs.generate_state(1)[0]))
            data = simulate_pairs(spec)
            try:
                ce = estimate_rho_ce(data, args.cutoff)
                mle = estimate_rho_mle(data)
            except RetestKitError:
                continue
            ce_b.append(np.sqrt(ce.sigma_meas_sq_hat) - args.sigma_meas)
            mle_b.append(np.sqrt(mle.sigma_meas_sq_hat) - args.sigma_meas)
        def _summ(v):
            arr = np.asarray(v)
            half = 1.96 * arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
            return {"mean_bias": float(arr.mean()), "ci95_half_width": float(half),
                    "n": len(arr)}
        rows.append({"rate": rate, "ce": _summ(ce_b), "mle": _summ(mle_b)})
    spec = {"mu": args.mu, "sigma_pop": args.sigma_pop,
            "sigma_meas": args.sigma_meas, "cutoff": args.cutoff,
            "rates": rates, "n": args.n, "reps": args.reps}
    _emit(_artifact("recheck-study", spec, args.seed, {"rates": rows}, started),
          args.out)
    return 0


def cmd_misclass(args) -> int:
    started = time.perf_counter()
    fit, cutoffs = load_fit_file(args.params)
    if args.cutoff:
        for spec_pair in args.cutoff:
            stratum, value = spec_pair.split("=", 1)
            cutoffs[stratum] = float(value)
    if not cutoffs:
        cutoffs = dict(DEFAULT_CUTOFFS)
    policies = {s: RetestPolicy(cutoff=c, rate=args.rate)
                for s, c in cutoffs.items()}
    rows = misclassification_table(fit, policies, args.strategy,
                                   n_sim=args.n_sim, seed=args.seed)
    spec = {"params": args.params, "strategy": args.strategy,
            "n_sim": args.n_sim, "rate": args.rate,
            "cutoffs": cutoffs}
    _emit(_artifact("misclass", spec, args.seed,
                    {"rows": [r.as_dict() for r in rows]}, started), args.out)
    return 0


def cmd_serve(args) -> int:
    server_mod.serve(args.params, port=args.port, host=args.host,
                     n_draws=args.n_draws)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="retestkit",
        description="Variance decomposition and retest decisions for "
                    "conditionally repeated biomarker measurements.")
    sub = p.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    sim.add_argument("--n", type=int, required=True,
                     help="records (per stratum when --dgp is used)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--dgp", choices=MODEL_IDS,
                     help="use one of the stratified generation processes a-d")
    sim.add_argument("--stratum", default="all")
    sim.add_argument("--mu", type=float, default=15.0)
    sim.add_argument("--sigma-pop", type=float, default=1.0)
    sim.add_argument("--sigma-meas", type=float, default=0.8)
    sim.add_argument("--cutoff", type=float, default=13.0)
    sim.add_argument("--rate", type=float, default=0.0,
                     help="recheck decay rate; 0 = hard cutoff")
    sim.add_argument("--pop-family", default="normal")
    sim.add_argument("--pop-scale2", type=float)
    sim.add_argument("--pop-weight", type=float)
    sim.add_argument("--pop-df", type=float)
    sim.add_argument("--pop-shape", type=float)
    sim.add_argument("--meas-family", default="normal")
    sim.add_argument("--meas-scale2", type=float)
    sim.add_argument("--meas-weight", type=float)
    sim.add_argument("--meas-df", type=float)
    sim.add_argument("--out", help="CSV path (default stdout)")
    sim.set_defaults(func=cmd_simulate)

    ff = sub.add_parser("fit-freq", help="frequentist variance decomposition")
    ff.add_argument("--data", required=True)
    ff.add_argument("--method", choices=["ce", "mle", "naive"], required=True)
    ff.add_argument("--bootstrap", type=int, default=0, metavar="B")
    ff.add_argument("--seed", type=int, default=0)
    ff.add_argument("--retain-above-cutoff", action="store_true")
    ff.add_argument("--out")
    ff.set_defaults(func=cmd_fit_freq)

    fb = sub.add_parser("fit-bayes", help="hierarchical Bayesian fit (MCMC)")
    fb.add_argument("--data", required=True)
    fb.add_argument("--model", choices=MODEL_IDS, required=True)
    fb.add_argument("--chains", type=int, default=2)
    fb.add_argument("--warmup", type=int, default=500)
    fb.add_argument("--iters", type=int, default=500)
    fb.add_argument("--quad-order", type=int, default=32)
    fb.add_argument("--seed", type=int, default=0)
    fb.add_argument("--retain-above-cutoff", action="store_true")
    fb.add_argument("--out")
    fb.set_defaults(func=cmd_fit_bayes)

    cv = sub.add_parser("cv", help="K-fold cLPPD model comparison")
    cv.add_argument("--data", required=True)
    cv.add_argument("--k", type=int, default=5)
    cv.add_argument("--models", default="a,b,c,d")
    cv.add_argument("--reference", choices=MODEL_IDS)
    cv.add_argument("--chains", type=int, default=2)
    cv.add_argument("--warmup", type=int, default=300)
    cv.add_argument("--iters", type=int, default=300)
    cv.add_argument("--S", type=int, default=300,
                    help="posterior draws per held-out evaluation")
    cv.add_argument("--inner", choices=["quadrature", "mc"], default="quadrature",
                    help="inner integral over the latent level")
    cv.add_argument("--R", type=int, default=1000,
                    help="latent draws per record when --inner mc")
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--retain-above-cutoff", action="store_true")
    cv.add_argument("--out")
    cv.set_defaults(func=cmd_cv)

    de = sub.add_parser("decide", help="eligibility probability for one person")
    de.add_argument("--x1", type=float, required=True)
    de.add_argument("--x2", type=float)
    de.add_argument("--cutoff", type=float)
    de.add_argument("--stratum", required=True)
    de.add_argument("--params", required=True,
                    help="fit file (fit-bayes artifact or point-params JSON)")
    de.add_argument("--seed", type=int, default=None,
                    help="recorded in the artifact; decide is deterministic")
    de.add_argument("--n-draws", type=int, default=500)
    de.add_argument("--no-grid", action="store_true",
                    help="omit the density grid from the output")
    de.add_argument("--out")
    de.set_defaults(func=cmd_decide)

    bc = sub.add_parser("bias-curve",
                        help="naive-estimator bias vs cutoff (theory + sims)")
    bc.add_argument("--mu", type=float, default=15.0)
    bc.add_argument("--sigma-pop", type=float, default=1.0)
    bc.add_argument("--sigma-meas", type=float, default=0.8)
    bc.add_argument("--cutoffs", type=float, nargs=3, default=[12.0, 15.0, 13],
                    metavar=("LO", "HI", "NUM"))
    bc.add_argument("--n", type=int, default=10_000)
    bc.add_argument("--reps", type=int, default=50)
    bc.add_argument("--seed", type=int, default=0)
    bc.add_argument("--out")
    bc.set_defaults(func=cmd_bias_curve)

    rs = sub.add_parser("recheck-study",
                        help="estimator bias under probabilistic rechecking")
    rs.add_argument("--rates", default="0,0.5,1,2,4")
    rs.add_argument("--mu", type=float, default=15.0)
    rs.add_argument("--sigma-pop", type=float, default=1.0)
    rs.add_argument("--sigma-meas", type=float, default=0.8)
    rs.add_argument("--cutoff", type=float, default=13.0)
    rs.add_argument("--n", type=int, default=10_000)
    rs.add_argument("--reps", type=int, default=100)
    rs.add_argument("--seed", type=int, default=0)
    rs.add_argument("--out")
    rs.set_defaults(func=cmd_recheck_study)

    mc = sub.add_parser("misclass", help="misclassification table by strategy")
    mc.add_argument("--params", required=True)
    mc.add_argument("--strategy", choices=["single", "repeat"], required=True)
    mc.add_argument("--n-sim", type=int, default=1_000_000)
    mc.add_argument("--rate", type=float, default=0.0)
    mc.add_argument("--cutoff", action="append", metavar="STRATUM=VALUE",
                    help="override a stratum cutoff (repeatable)")
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--out")
    mc.set_defaults(func=cmd_misclass)

    sv = sub.add_parser("serve", help="HTTP decision endpoint")
    sv.add_argument("--params", required=True)
    sv.add_argument("--port", type=int, default=server_mod.DEFAULT_PORT)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--n-draws", type=int, default=500)
    sv.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RetestKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
