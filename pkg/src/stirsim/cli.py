"""Operator command line.

Every experiment key mirrors a flag; a flat JSON config file can supply any
subset and flags override it.  Exit codes: 0 success, 1 quantitative
criterion failure, 2 usage error.  CSV bodies are byte-identical across
reruns with the same config and seed; timestamps appear only in JSON
summaries.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import acceptance, estimators, kernels, oracle, theory, tracer
from .dynamics import write_paths_csv
from .experiments import (
    DEFAULT_SEED,
    ExperimentConfig,
    covariance_report,
    resolve_outdir,
    run_occupation_paths,
    scaling_report,
    write_covariance_csv,
    write_json,
)
from .lattice import Torus
from .state import ModelParams, project, sample_stationary, write_counts


class UsageError(Exception):
    pass


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _add_config_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=str, help="flat JSON config file; flags override")
    sp.add_argument("--d", type=int)
    sp.add_argument("--L", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--p", type=str, help="comma-separated species densities")
    sp.add_argument("--N", type=float, help="time-scale parameter")
    sp.add_argument("--T", type=float, help="scaled path horizon")
    sp.add_argument("--grid", type=str, help="comma-separated scaled checkpoints in (0, T]")
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, help="worker cap for replica batches")
    sp.add_argument("--record-events", action="store_true", default=None)
    sp.add_argument("--record-snapshots", action="store_true", default=None)
    sp.add_argument("--outdir", type=str)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            data.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
    overrides = {
        "d": args.d,
        "L": args.L,
        "k": args.k,
        "p": _parse_floats(args.p) if args.p else None,
        "N": args.N,
        "T": args.T,
        "grid": _parse_floats(args.grid) if args.grid else None,
        "replicas": args.replicas,
        "seed": args.seed,
        "jobs": args.jobs,
        "record_events": args.record_events,
        "record_snapshots": args.record_snapshots,
        "outdir": args.outdir,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.from_dict(data)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _cmd_sample_stationary(args) -> int:
    cfg = _config_from_args(args)
    torus, params = cfg.torus(), cfg.params()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed])))
    labels = sample_stationary(params, torus, rng)
    counts = project(labels, params.n_labels)
    outdir = resolve_outdir(cfg.outdir)
    out = outdir / "stationary_counts.txt"
    with out.open("w") as fh:
        write_counts(fh, counts)
    print(f"wrote {out} ({torus.site_count} sites, k={params.k}, l={params.l})")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    paths = run_occupation_paths(cfg)
    outdir = resolve_outdir(cfg.outdir)
    out = outdir / "occupation_paths.csv"
    with out.open("w") as fh:
        write_paths_csv(fh, paths)
    print(f"wrote {out} ({cfg.replicas} replicas, horizon {cfg.horizon:g})")
    return 0


def _cmd_occupation_experiment(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    paths = run_occupation_paths(cfg)
    stats = estimators.ensemble_covariance(paths)
    cov = covariance_report(cfg, stats)
    scale = scaling_report(cfg, stats)
    outdir = resolve_outdir(cfg.outdir)
    with (outdir / "covariances.csv").open("w") as fh:
        write_covariance_csv(fh, cfg, stats)
    passed = cov["max_abs_z"] < 3.0
    summary = {
        "config": cfg.to_dict(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "elapsed_s": time.time() - t0,
        "covariance_check": {"max_abs_z": cov["max_abs_z"], "passed": passed},
        "scaling": scale,
    }
    write_json(outdir / "experiment_summary.json", summary)
    print(f"max |z| vs exact torus covariance: {cov['max_abs_z']:.2f} -> "
          f"{'PASS' if passed else 'FAIL'}")
    if cfg.d == 1 and "hurst" in scale:
        for fit in scale["hurst"]:
            print(f"species {fit['j']}: Hurst-fit slope {fit['slope']:.3f}")
    print(f"wrote {outdir / 'covariances.csv'} and {outdir / 'experiment_summary.json'}")
    return 0 if passed else 1


def _cmd_tracer_check(args) -> int:
    cfg = _config_from_args(args)
    torus, params = cfg.torus(), cfg.params()
    t = args.t
    check = tracer.tracer_marginal_check(
        torus, params, t, (0, 0), n_replicas=cfg.replicas, seed=cfg.seed
    )
    outdir = resolve_outdir(cfg.outdir)
    payload = {
        "tv_spatial": check.tv_spatial,
        "slot_probs": check.slot_probs.tolist(),
        "n_replicas": check.n_replicas,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    write_json(outdir / "tracer_check.json", payload)
    print(f"spatial TV vs exact kernel: {check.tv_spatial:.4f} ({cfg.replicas} replicas)")
    return 0


def _cmd_kernel_eval(args) -> int:
    d, k, t = args.d or 1, args.k or 1, args.t
    x = tuple(int(v) for v in args.x.split(",")) if args.x else (0,) * d
    print("# schema=v1")
    print("quantity,value")
    print(f"kernel,{kernels.kernel(d, t, x):.17g}")
    print(f"scaled_kernel,{kernels.scaled_kernel(d, k, t, x):.17g}")
    if args.L:
        print(f"torus_kernel,{kernels.torus_kernel(d, args.L, k, t, x):.17g}")
        print(f"torus_integrated_kernel,{kernels.torus_integrated_kernel(d, args.L, k, t, x):.17g}")
    else:
        print(f"integrated_kernel,{kernels.integrated_kernel(d, k, t, x):.17g}")
    if d >= 3:
        print(f"green_constant,{kernels.green_constant(d):.17g}")
    return 0


def _cmd_theory_constants(args) -> int:
    cfg = _config_from_args(args)
    A = theory.species_covariance(cfg.p)
    payload = {
        "d": cfg.d,
        "k": cfg.k,
        "p": list(cfg.p),
        "species_covariance": A.tolist(),
        "species_covariance_sqrt": theory.psd_sqrt(A).tolist(),
        "prefactor": theory.limit_prefactor(cfg.d, cfg.k),
        "scaling": {1: "t^(3/4)", 2: "sqrt(t log t)"}.get(cfg.d, "sqrt(t)"),
    }
    if cfg.d >= 3:
        payload["green_constant"] = kernels.green_constant(cfg.d)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_oracle_compare(args) -> int:
    cfg = _config_from_args(args)
    torus = Torus(1, 3)
    report = []
    ok = True
    for k, p in [(1, (0.4,)), (2, (0.4,)), (1, (0.3, 0.2)), (2, (0.3, 0.2))]:
        params = ModelParams(k=k, densities=p)
        Q, space = oracle.build_generator(torus, params)
        pi = space.stationary()
        A = theory.species_covariance(p)
        worst = 0.0
        for r in (0.5, 1.0):
            for j in range(1, len(p) + 1):
                got = oracle.two_time_correlation(space, Q, pi, j, j, r)
                want = k * A[j - 1, j - 1] * kernels.torus_kernel(1, 3, k, r, (0,))
                worst = max(worst, abs(got - want))
        cov_oracle = oracle.exact_occupation_cov_small(space, Q, pi, 0.5, 1.0, 1, 1)
        cov_theory = theory.occupation_covariance(1, k, p, 0.5, 1.0, 1, 1, L=3)
        entry = {
            "k": k,
            "l": len(p),
            "states": space.size,
            "two_time_max_err": worst,
            "occupation_cov_gap": abs(cov_oracle - cov_theory),
            "passed": worst <= 1e-8 and abs(cov_oracle - cov_theory) <= 1e-6,
        }
        ok &= entry["passed"]
        report.append(entry)
    outdir = resolve_outdir(cfg.outdir)
    write_json(outdir / "oracle_compare.json", {"systems": report, "passed": ok})
    for entry in report:
        print(
            f"k={entry['k']} l={entry['l']} ({entry['states']} states): "
            f"two-time err {entry['two_time_max_err']:.2e}, "
            f"occupation gap {entry['occupation_cov_gap']:.2e} -> "
            f"{'PASS' if entry['passed'] else 'FAIL'}"
        )
    return 0 if ok else 1


def _cmd_acceptance(args) -> int:
    names = tuple(args.only.split(",")) if args.only else ()
    results = acceptance.run_suite(quick=args.quick, names=names)
    outdir = resolve_outdir(args.outdir)
    payload = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "results": [
            {"name": r.name, "passed": r.passed, "details": r.details, "elapsed_s": r.elapsed}
            for r in results
        ],
        "passed": all(r.passed for r in results),
    }
    write_json(outdir / "acceptance.json", payload)
    return 0 if payload["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stirsim",
        description="Multi-species stirring process simulator and verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [
        ("sample-stationary", _cmd_sample_stationary),
        ("simulate", _cmd_simulate),
        ("occupation-experiment", _cmd_occupation_experiment),
        ("theory-constants", _cmd_theory_constants),
        ("oracle-compare", _cmd_oracle_compare),
    ]:
        sp = sub.add_parser(name)
        _add_config_args(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("tracer-check")
    _add_config_args(sp)
    sp.add_argument("--t", type=float, default=1.0, help="trace-back time")
    sp.set_defaults(fn=_cmd_tracer_check)

    sp = sub.add_parser("kernel-eval")
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--x", type=str, help="comma-separated displacement")
    sp.add_argument("--L", type=int, help="evaluate torus kernels of this side length")
    sp.set_defaults(fn=_cmd_kernel_eval)

    sp = sub.add_parser("acceptance")
    sp.add_argument("--quick", action="store_true", help="fast criteria only (< 5 min)")
    sp.add_argument("--only", type=str, help="comma-separated criterion names, e.g. A1,A10")
    sp.add_argument("--outdir", type=str)
    sp.set_defaults(fn=_cmd_acceptance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
