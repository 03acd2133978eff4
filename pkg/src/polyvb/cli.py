"""Batch command-line interface.

Subcommands: ``simulate``, ``fit``, ``gibbs``, ``compare``, ``replicate`` and
``bench``. Every run writes its outputs plus a ``manifest.json`` into
``--out-dir``.

Exit codes: 0 ok, 2 invalid input, 3 non-convergence, 4 VB/Gibbs
disagreement beyond the compare thresholds.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attributes import enumerate_profiles
from .gibbs import ChainConfig, gibbs_fit
from .io import (InputError, atomic_write_text, draws_csv, effects_csv, fit_report_dict,
                 gibbs_report_dict, gmatrix_csv, parse_fit_config, pi_table_csv, read_json,
                 read_qmatrix, read_responses, theta_table_csv, write_json, write_qmatrix,
                 write_responses, _profile_label, _rows_to_csv)
from .simulate import DESIGNS, SimConfig, config_qmatrix, simulate, substream, true_mixing_proportions
from .study import available_cores, bench, compare_fits, run_replications
from .vb import FitConfig, fit

logger = logging.getLogger("polyvb")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_DISAGREE = 0, 2, 3, 4
PRIOR_NAMES = {"weak": "weakly_informative", "flat": "noninformative"}
RHAT_LIMIT = 1.05


class _Run:
    """Collects what goes into the manifest."""

    def __init__(self, command: str, argv, out_dir: Path):
        self.command = command
        self.argv = list(argv)
        self.out_dir = out_dir
        self.config: dict = {}
        self.seeds: dict = {}
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.notes: list[str] = []
        self.t0 = time.perf_counter()

    def write(self, name: str, text: str) -> None:
        path = self.out_dir / name
        atomic_write_text(path, text)
        self.outputs.append(str(path))

    def write_json(self, name: str, obj) -> None:
        path = self.out_dir / name
        write_json(path, obj)
        self.outputs.append(str(path))

    def warn(self, msg: str) -> None:
        logger.warning(msg)
        self.notes.append(msg)

    def manifest(self, exit_code: int) -> None:
        write_json(self.out_dir / "manifest.json", {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "warnings": self.notes,
            "version": __version__,
            "exit_code": exit_code,
            "wall_time": time.perf_counter() - self.t0,
        })


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _fit_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("variational fit")
    g.add_argument("--flavor", choices=("collapsed", "reduced"))
    g.add_argument("--prior", choices=tuple(PRIOR_NAMES))
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--cores", type=int)
    g.add_argument("--init-seed", type=int, help="random Dirichlet start instead of uniform")
    g.add_argument("--config", help="fit config JSON; explicit flags take precedence")


def _data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--responses", required=True)
    p.add_argument("--qmatrix", required=True)
    p.add_argument("--levels", help="levels JSON; default: levels.json next to the Q-matrix")


def _chain_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("Gibbs sampler")
    g.add_argument("--chains", type=int, default=3)
    g.add_argument("--iter", type=int, default=5000)
    g.add_argument("--burn-in", type=int, default=2000)
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)


def _sim_options(p: argparse.ArgumentParser, reps: bool = False) -> None:
    g = p.add_argument_group("simulation design")
    g.add_argument("--design", choices=DESIGNS)
    g.add_argument("--n", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--n-levels", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--truth-mc-draws", type=int)
    if not reps:
        g.add_argument("--flavor", choices=("collapsed", "reduced"))
        g.add_argument("--config", help="simulation config JSON; explicit flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyvb", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--format", choices=("csv", "json"), default="json")
        return p

    p = add("simulate", "generate a synthetic dataset")
    _sim_options(p)

    p = add("fit", "variational Bayes fit")
    _data_options(p)
    _fit_options(p)
    p.add_argument("--dump-gmatrix", action="store_true", help="write one G-matrix CSV per item")

    p = add("gibbs", "Gibbs sampler fit")
    _data_options(p)
    p.add_argument("--flavor", choices=("collapsed", "reduced"), default="collapsed")
    p.add_argument("--prior", choices=tuple(PRIOR_NAMES), default="weak")
    _chain_options(p)
    p.add_argument("--serial-chains", action="store_true")
    p.add_argument("--dump-draws", action="store_true", help="write all post-burn-in draws")

    p = add("compare", "VB against the Gibbs sampler on the same data")
    _data_options(p)
    _fit_options(p)
    _chain_options(p)
    p.add_argument("--theta-threshold", type=float, default=0.03,
                   help="largest tolerated |EAP theta| difference")
    p.add_argument("--pi-threshold", type=float, default=0.005,
                   help="largest tolerated |EAP pi| difference")

    p = add("replicate", "simulation study: simulate and fit many replications")
    _sim_options(p, reps=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--flavor", choices=("collapsed", "reduced"), default="collapsed")
    p.add_argument("--prior", choices=("weak", "flat", "both"), default="weak")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--cores", type=int, default=8)
    p.add_argument("--workers", type=int, help="parallel replications (default: available cores)")
    p.add_argument("--oversubscribe", action="store_true",
                   help="keep --cores inside each fit even when replications run in parallel")

    p = add("bench", "wall time of one fit across core counts")
    _sim_options(p, reps=True)
    p.add_argument("--cores-list", default="1,2,4,8")
    p.add_argument("--dry-run", action="store_true", help="one iteration per core count")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=2000)
    return parser


def _resolve_fit(args) -> tuple[FitConfig, str, str]:
    data = read_json(args.config) if getattr(args, "config", None) else {}
    if not isinstance(data, dict):
        raise InputError("fit config must be a JSON object")
    if args.tol is not None:
        data["tol"] = args.tol
    if args.max_iter is not None:
        data["max_iter"] = args.max_iter
    if args.cores is not None:
        data["cores"] = args.cores
    if args.init_seed is not None:
        data["init"] = {"dirichlet_seed": args.init_seed}
    if args.flavor is not None:
        data["flavor"] = args.flavor
    if args.prior is not None:
        data["prior_scheme"] = PRIOR_NAMES[args.prior]
    cfg, flavor, scheme = parse_fit_config(data)
    if flavor not in ("collapsed", "reduced"):
        raise InputError(f"unknown flavor {flavor!r}")
    if scheme not in PRIOR_NAMES.values():
        raise InputError(f"unknown prior scheme {scheme!r}")
    return cfg, flavor, scheme


def _sim_config(args, base: dict | None = None) -> SimConfig:
    data = dict(base or {})
    for key in ("design", "n", "rho", "n_levels", "seed", "truth_mc_draws", "flavor"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    for key in ("p_low_range", "p_high_range"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return SimConfig(**data)
    except TypeError as exc:
        raise InputError(f"bad simulation config: {exc}") from exc


def _load_data(args, run: _Run):
    qmatrix = read_qmatrix(args.qmatrix, args.levels)
    X, ids = read_responses(args.responses)
    if X.shape[1] != qmatrix.n_items:
        raise InputError(f"responses have {X.shape[1]} items, Q-matrix has {qmatrix.n_items}")
    if X.shape[0] == 0:
        raise InputError("response file has no examinees")
    run.inputs += [str(args.responses), str(args.qmatrix)] + ([str(args.levels)] if args.levels else [])
    return X, ids, qmatrix


def _write_fit(run: _Run, report, ids, fmt: str, prefix: str = "") -> None:
    space = report.space
    if fmt == "json":
        run.write_json(f"{prefix}fit_report.json", fit_report_dict(report))
    else:
        run.write(f"{prefix}theta.csv", theta_table_csv(report.gmatrices, report.eap_theta, report.sd_theta))
        run.write(f"{prefix}pi.csv", pi_table_csv(space, report.eap_pi, report.sd_pi))
        run.write(f"{prefix}vlb_trace.csv",
                  _rows_to_csv(["iteration", "vlb"], enumerate(map(repr, report.state.vlb_trace), 1)))
    run.write(f"{prefix}map_profiles.csv", _profiles_csv(report.map_attribute_profiles, ids))
    if all(g.flavor == "collapsed" for g in report.gmatrices):
        run.write(f"{prefix}effects.csv", effects_csv(report.gmatrices, report.eap_theta))


def _profiles_csv(profiles, ids) -> str:
    ids = ids if ids is not None else [str(i + 1) for i in range(len(profiles))]
    header = ["id"] + [f"a{k + 1}" for k in range(profiles.shape[1])] + ["profile"]
    return _rows_to_csv(header, ([i] + list(p) + [_profile_label(p)] for i, p in zip(ids, profiles.tolist())))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, run: _Run) -> int:
    base = read_json(args.config) if args.config else {}
    cfg = _sim_config(args, base)
    run.config = asdict(cfg)
    run.seeds = {"master": cfg.seed}
    X, truth = simulate(cfg, 0)
    write_qmatrix(run.out_dir / "qmatrix.csv", truth.qmatrix, run.out_dir / "levels.json")
    run.outputs += [str(run.out_dir / "qmatrix.csv"), str(run.out_dir / "levels.json")]
    write_responses(run.out_dir / "responses.csv", X)
    run.outputs.append(str(run.out_dir / "responses.csv"))
    space = enumerate_profiles(truth.qmatrix.levels)
    run.write_json("truth.json", {
        "flavor": truth.flavor,
        "theta": [t.tolist() for t in truth.theta],
        "pi": truth.pi.tolist(),
        "profiles_order": [_profile_label(p) for p in space.profiles],
        "profiles": truth.profiles.tolist(),
        **truth.meta,
    })
    return EXIT_OK


def cmd_fit(args, run: _Run) -> int:
    cfg, flavor, scheme = _resolve_fit(args)
    run.config = {**asdict(cfg), "flavor": flavor, "prior_scheme": scheme}
    run.seeds = {"init": cfg.seed}
    X, ids, qmatrix = _load_data(args, run)
    report = fit(X, qmatrix, flavor, config=cfg, prior_scheme=scheme)
    _write_fit(run, report, ids, args.format)
    if args.dump_gmatrix:
        for g in report.gmatrices:
            run.write(f"gmatrix/item{g.item + 1:03d}.csv", gmatrix_csv(g, report.space))
    if not report.converged:
        run.warn(f"VB did not converge within {cfg.max_iter} iterations")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _chain_config(args) -> ChainConfig:
    return ChainConfig(n_chains=args.chains, n_iter=args.iter, burn_in=args.burn_in,
                       seed=args.seed, thin=args.thin, parallel=not getattr(args, "serial_chains", False))


def _write_gibbs(run: _Run, summary, ids, fmt: str, prefix: str = "") -> None:
    if fmt == "json":
        run.write_json(f"{prefix}gibbs_report.json", gibbs_report_dict(summary))
    else:
        run.write(f"{prefix}theta.csv", theta_table_csv(summary.gmatrices, summary.eap_theta, summary.sd_theta))
        run.write(f"{prefix}pi.csv", pi_table_csv(summary.space, summary.eap_pi, summary.sd_pi))
    run.write(f"{prefix}map_profiles.csv", _profiles_csv(summary.map_attribute_profiles, ids))


def cmd_gibbs(args, run: _Run) -> int:
    chains = _chain_config(args)
    scheme = PRIOR_NAMES[args.prior]
    run.config = {**asdict(chains), "flavor": args.flavor, "prior_scheme": scheme}
    run.seeds = {"chains": chains.seed}
    X, ids, qmatrix = _load_data(args, run)
    summary = gibbs_fit(X, qmatrix, args.flavor, chain_config=chains, prior_scheme=scheme,
                        keep_draws=args.dump_draws)
    _write_gibbs(run, summary, ids, args.format)
    if args.dump_draws:
        names = [f"theta_{j + 1}_{_profile_label(p)}" for j, g in enumerate(summary.gmatrices)
                 for p in g.patterns]
        cols = [summary.theta_draws[:, :, j, : g.n_patterns] for j, g in enumerate(summary.gmatrices)]
        run.write("theta_draws.csv", draws_csv(np.concatenate(cols, axis=2), names))
        run.write("pi_draws.csv", draws_csv(summary.pi_draws,
                                            [f"pi_{_profile_label(p)}" for p in summary.space.profiles]))
    if summary.max_rhat >= RHAT_LIMIT:
        run.warn(f"max R-hat {summary.max_rhat:.4f} >= {RHAT_LIMIT}")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_compare(args, run: _Run) -> int:
    cfg, flavor, scheme = _resolve_fit(args)
    chains = _chain_config(args)
    run.config = {"vb": {**asdict(cfg), "flavor": flavor, "prior_scheme": scheme},
                  "gibbs": asdict(chains),
                  "thresholds": {"theta": args.theta_threshold, "pi": args.pi_threshold}}
    run.seeds = {"init": cfg.seed, "chains": chains.seed}
    X, ids, qmatrix = _load_data(args, run)
    report = fit(X, qmatrix, flavor, config=cfg, prior_scheme=scheme)
    summary = gibbs_fit(X, qmatrix, flavor, chain_config=chains, prior_scheme=scheme)
    cmp = compare_fits(report, summary, RHAT_LIMIT)
    _write_fit(run, report, ids, args.format, prefix="vb_")
    _write_gibbs(run, summary, ids, args.format, prefix="gibbs_")
    if not cmp["rhat_ok"]:
        run.warn(f"Gibbs chains not converged: max R-hat {cmp['max_rhat']:.4f} >= {RHAT_LIMIT}")
    cmp["warnings"] = list(run.notes)
    if args.format == "json":
        run.write_json("comparison.json", cmp)
    else:
        rows = [[k, v] for k, v in cmp.items() if not isinstance(v, (dict, list))]
        rows += [[f"element_agreement_a{k + 1}", v] for k, v in enumerate(cmp["element_agreement"])]
        run.write("comparison.csv", _rows_to_csv(["quantity", "value"], rows))
    if not report.converged:
        run.warn("VB did not converge")
        return EXIT_NONCONVERGED
    if cmp["max_abs_eap_theta_diff"] > args.theta_threshold or cmp["max_abs_eap_pi_diff"] > args.pi_threshold:
        run.warn("VB and Gibbs estimates disagree beyond the thresholds")
        return EXIT_DISAGREE
    return EXIT_OK


def _recovery_tables(reports: dict) -> dict[str, str]:
    schemes = list(reports)
    buckets = sorted({b.n_attributes for r in reports.values() for b in r.theta})
    theta_rows = []
    for k in buckets:
        row = [k]
        for s in schemes:
            stats = reports[s].theta_table().get(k, (float("nan"), float("nan")))
            row += [f"{stats[0]:.5f}", f"{stats[1]:.5f}"]
        theta_rows.append(row)
    theta_header = ["n_attributes"] + [f"{s}_{m}" for s in schemes for m in ("bias", "rmse")]
    pi_header = ["prior", "bias_max", "bias_min", "rmse_max", "rmse_min"]
    pi_rows = [[s, *(f"{getattr(reports[s], f'pi_{m}'):.5f}" for m in ("bias_max", "bias_min", "rmse_max", "rmse_min"))]
               for s in schemes]
    n_attr = max(len(r.eacr) for r in reports.values())
    cls_header = ["prior"] + [f"a{k + 1}" for k in range(n_attr)] + ["pacr"]
    cls_rows = [[s, *(f"{v:.4f}" for v in reports[s].eacr), f"{reports[s].pacr:.4f}"] for s in schemes]
    conv_rows = [[s, f"{reports[s].convergence_rate:.3f}", f"{reports[s].mean_wall_time:.3f}",
                  reports[s].extra.get("failures", 0)] for s in schemes]
    return {
        "theta_recovery.csv": _rows_to_csv(theta_header, theta_rows),
        "pi_recovery.csv": _rows_to_csv(pi_header, pi_rows),
        "classification.csv": _rows_to_csv(cls_header, cls_rows),
        "convergence.csv": _rows_to_csv(["prior", "convergence_rate", "mean_wall_time", "failures"], conv_rows),
    }


def cmd_replicate(args, run: _Run) -> int:
    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    sim = _sim_config(args, {"flavor": args.flavor})
    schemes = tuple(PRIOR_NAMES.values()) if args.prior == "both" else (PRIOR_NAMES[args.prior],)
    workers = args.workers or min(available_cores(), args.reps)
    cfg = FitConfig(tol=args.tol, max_iter=args.max_iter, cores=args.cores)
    if workers > 1 and not args.oversubscribe:
        cfg = replace(cfg, cores=1)
    run.config = {"simulation": asdict(sim), "reps": args.reps, "schemes": list(schemes),
                  "workers": workers, "fit": asdict(cfg)}
    run.seeds = {"master": sim.seed}
    pi_true = None
    if sim.design != "K3J34":
        pi_true = true_mixing_proportions(config_qmatrix(sim).levels, sim.rho, sim.truth_mc_draws,
                                          substream(sim.seed, "truth-pi"))
    reports, raw = run_replications(sim, args.reps, cfg, schemes, workers, pi_true,
                                    exclusive=not args.oversubscribe)
    if args.format == "json":
        run.write_json("recovery.json", {s: r.to_dict() for s, r in reports.items()})
    else:
        for name, text in _recovery_tables(reports).items():
            run.write(name, text)
    failures = [f for f in raw["fits"] if f.error]
    for f in failures:
        run.warn(f"replication {f.replication} ({f.scheme}) failed: {f.error}")
    if any(r.convergence_rate < 1.0 for r in reports.values()):
        run.warn("not every replication converged")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bench(args, run: _Run) -> int:
    try:
        cores = [int(c) for c in args.cores_list.split(",") if c.strip()]
    except ValueError as exc:
        raise InputError(f"bad --cores-list: {exc}") from exc
    if not cores or min(cores) < 1:
        raise InputError("--cores-list needs positive integers")
    sim = _sim_config(args)
    run.config = {"simulation": asdict(sim), "cores": cores, "dry_run": args.dry_run,
                  "available_cores": available_cores()}
    run.seeds = {"master": sim.seed}
    if max(cores) > available_cores():
        run.warn(f"only {available_cores()} cores available; speedups beyond that are not meaningful")
    X, truth = simulate(sim, 0, with_pi=False)
    rows = bench(truth.qmatrix, X, cores, FitConfig(tol=args.tol, max_iter=args.max_iter), args.dry_run)
    if args.format == "json":
        run.write_json("bench.json", rows)
    else:
        keys = ["cores", "wall_time", "iterations", "per_iteration", "speedup", "converged"]
        run.write("bench.csv", _rows_to_csv(keys, ([r[k] for k in keys] for r in rows)))
    for r in rows:
        print(f"cores={r['cores']:>3}  wall={r['wall_time']:8.3f}s  iters={r['iterations']:>5}  "
              f"speedup={r['speedup']:.2f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "gibbs": cmd_gibbs, "compare": cmd_compare,
            "replicate": cmd_replicate, "bench": cmd_bench}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args.command, argv, Path(args.out_dir))
    try:
        code = COMMANDS[args.command](args, run)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    run.manifest(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
