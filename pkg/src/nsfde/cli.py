"""Command line entry point: ``nsfde {simulate,certify,gen-noise,self-test}``.

Exit codes: 0 success, 1 configuration error, 2 hypothesis failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_experiment, load_config
from .errors import ConfigError, FactorizationError, HypothesisError, InsufficientDataError, SolverError
from .fractional_noise import ScalarFbmPath, TimeGrid, write_ensemble_csv
from .mild_solver import monte_carlo_moments, picard_iterate, sample_noise, sample_noise_batch, solve_path
from .selftest import oracle_rows, run_self_test
from .stability import certify, fit_decay_rate, initial_decay_check

EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC = 1, 2, 3


def _meta(cfg, seed):
    return {"tool": "nsfde", "version": __version__, "config_sha256": cfg.digest(), "seed": seed}


def _comments(meta):
    return [f"{k}={v}" for k, v in meta.items()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _simulate(exp, out: Path, threads: int) -> int:
    cfg = exp.config
    seed = cfg.monte_carlo.seed
    meta = _meta(cfg, seed)
    table = monte_carlo_moments(
        exp.model, exp.Q, exp.cset, exp.phi, exp.solver, cfg.monte_carlo.n_paths, seed,
        hurst=exp.hurst, marks=exp.marks, threads=threads,
    )
    with open(out / "moments.csv", "w") as fh:
        table.write_csv(fh, _comments(meta))

    noise = sample_noise(exp.Q, exp.hurst, exp.marks, exp.solver.grid, seed, 0)
    if exp.solver.scheme == "picard":
        path, _ = picard_iterate(exp.model, exp.Q, exp.cset, exp.phi, noise, exp.solver)
    else:
        path = solve_path(exp.model, exp.Q, exp.cset, exp.phi, noise, exp.solver)
    with open(out / "path_0.csv", "w") as fh:
        path.write_csv(fh, _comments(meta))

    report = {"meta": meta, "hypotheses": exp.hypotheses}
    try:
        report["fit"] = fit_decay_rate(table).to_dict()
    except InsufficientDataError as exc:
        report["fit"] = None
        report["fit_error"] = str(exc)
    if cfg.oracle is not None:
        rows = oracle_rows(cfg.oracle, table, exp.solver.step)
        report["oracle_check"] = {"description": cfg.oracle.description, "rows": rows, "passes": all(r["ok"] for r in rows)}
    _write_json(out / "decay_fit.json", report)
    print(f"wrote {out / 'moments.csv'}, {out / 'path_0.csv'}, {out / 'decay_fit.json'}")
    return 0


def _certify(exp, out: Path) -> int:
    init = exp.config.initial
    cert = certify(exp.model, exp.cset, exp.marks, phi_decay=init.a)
    report = cert.to_dict()
    report["meta"] = _meta(exp.config, exp.config.monte_carlo.seed)
    report["hypotheses"] = exp.hypotheses
    if init.M0 is not None and init.a is not None:
        report["initial_decay"] = {
            "M0": init.M0,
            "a": init.a,
            "holds": initial_decay_check(exp.phi, init.M0, init.a, exp.cset.tau),
        }
    _write_json(out / "certificate.json", report)
    print(f"theta={cert.theta:.6g} passes={cert.passes} -> {out / 'certificate.json'}")
    return 0


def _gen_noise(exp, out: Path, chunk: int = 500) -> int:
    cfg = exp.config
    seed, n_paths = cfg.monte_carlo.seed, cfg.monte_carlo.n_paths
    grid: TimeGrid = exp.solver.grid
    meta = _meta(cfg, seed)
    batches = [
        sample_noise_batch(exp.Q, exp.hurst, exp.marks, grid, seed, min(chunk, n_paths - start), start)
        for start in range(0, n_paths, chunk)
    ]
    for n in range(exp.Q.n_modes):
        paths = []
        for start, batch in zip(range(0, n_paths, chunk), batches):
            values = np.zeros((len(batch), grid.n_nodes))
            np.cumsum(batch.qfbm[:, n, :], axis=1, out=values[:, 1:])
            paths += [ScalarFbmPath(grid, v, seed, start + i) for i, v in enumerate(values)]
        with open(out / f"qfbm_mode_{n}.csv", "w") as fh:
            write_ensemble_csv(paths, fh, _comments(meta))
    with open(out / "jumps.csv", "w") as fh:
        for line in _comments(meta):
            fh.write(f"# {line}\n")
        fh.write("path_id,t,mark\n")
        trains = (tr for batch in batches for tr in batch.trains)
        for p, tr in enumerate(trains):
            for t, z in zip(tr.times.tolist(), tr.marks.tolist()):
                fh.write(f"{p},{t:.17g},{z:.17g}\n")
    print(f"wrote {exp.Q.n_modes} mode file(s) and jumps.csv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsfde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nsfde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "certify", "gen-noise", "self-test"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "self-test", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides outputs.directory)")
        p.add_argument("--seed", type=int, help="override monte_carlo.seed")
        p.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "self-test" and not args.config:
        return 0 if run_self_test() else EXIT_NUMERIC
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = cfg.model_copy(update={"monte_carlo": cfg.monte_carlo.model_copy(update={"seed": args.seed})})
        exp = build_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS

    if args.command == "self-test":
        return 0 if run_self_test() else EXIT_NUMERIC
    out = Path(args.out or cfg.outputs.directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "simulate":
            return _simulate(exp, out, args.threads)
        if args.command == "certify":
            return _certify(exp, out)
        return _gen_noise(exp, out)
    except HypothesisError as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (SolverError, FactorizationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
