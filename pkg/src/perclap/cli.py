"""
Command-line front end: ``perclap {ids,walk,spectrum,mechanism,verify}``.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import asymptotics as asy
from .config import (MECHANISM_CHECKS, PRESETS, SEED_ENV, ConfigError, geometry_of, load_file,
                     parse_grid_flag, resolve)
from .ids import estimate_ids
from .lattice import sample_configuration, split_seed
from .operators import assemble_laplacian
from .spectral import DENSE_CAP, count_below_many, full_spectrum
from .verify import linearization_batch, monotonicity_batch, run_suite, sample_configs
from .walk import annealed_return

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2


def _dump(obj) -> str:
    return json.dumps(asy._plain(obj), indent=2, sort_keys=True) + "\n"


def _emit(cfg, csv_text: str | None, record: dict, out=None):
    """Write ``<output_path>.csv`` / ``.json`` per ``format``; without an
    output path the preferred form goes to stdout."""
    fmt, path = cfg["format"], cfg.get("output_path")
    json_text = _dump(record)
    if path is None:
        out = sys.stdout if out is None else out
        out.write(csv_text if (fmt != "json" and csv_text is not None) else json_text)
        return
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    if fmt in ("csv", "both") and csv_text is not None:
        base.with_suffix(".csv").write_text(csv_text, encoding="utf-8", newline="\n")
    if fmt in ("json", "both") or csv_text is None:
        base.with_suffix(".json").write_text(json_text, encoding="utf-8", newline="\n")


def _fit_or_note(fn, *args):
    try:
        return fn(*args).__dict__
    except ValueError as exc:
        return {"skipped": str(exc)}


def cmd_ids(cfg: dict, jobs: int = 1) -> int:
    g = geometry_of(cfg)
    curve = estimate_ids(cfg["bc"], cfg["scheme"], g, cfg["p"], cfg["energy_grid"],
                         cfg["samples"], cfg["master_seed"], jobs=jobs)
    record = {"command": "ids", "config": cfg, "curve": json.loads(curve.to_json())}
    window = cfg.get("fit_window")
    if window is not None:
        if cfg["bc"] == "N":
            record["van_hove_fit"] = _fit_or_note(asy.fit_van_hove, curve, window)
        else:
            record["lifshits_fit"] = _fit_or_note(asy.fit_lifshits, curve, window)
    _emit(cfg, curve.to_csv(), record)
    return EXIT_OK


def cmd_walk(cfg: dict, jobs: int = 1) -> int:
    g = geometry_of(cfg)
    curve = annealed_return(g, cfg["p"], cfg["t_grid"], cfg["samples"], cfg["walks"],
                            cfg["master_seed"], start=cfg["start"], jobs=jobs)
    record = {"command": "walk", "config": cfg, "curve": json.loads(curve.to_json())}
    if cfg.get("fit_window") is not None:
        record["heat_decay_fit"] = _fit_or_note(asy.fit_heat_decay, curve, cfg["fit_window"])
    _emit(cfg, curve.to_csv(), record)
    return EXIT_OK


def cmd_spectrum(cfg: dict, jobs: int = 1) -> int:
    """One configuration (seed ``split_seed(master_seed, 0)``): dense spectrum,
    or counts on ``energy_grid`` when given."""
    g = geometry_of(cfg)
    seed = split_seed(cfg["master_seed"], 0)
    op = assemble_laplacian(sample_configuration(g, cfg["p"], seed), cfg["bc"], cfg["scheme"])
    record = {"command": "spectrum", "config": cfg, "sample_seed": seed}
    if cfg.get("energy_grid") is not None:
        counts = count_below_many(op, cfg["energy_grid"])
        lines = ["# perclap eigenvalue-counts v1", "E,count"]
        lines += [f"{e!r},{int(c)}" for e, c in zip(cfg["energy_grid"], counts)]
        record["counts"] = counts
    else:
        if op.n > DENSE_CAP:
            raise ConfigError(f"{op.n} vertices exceed the dense cap {DENSE_CAP}; "
                              "give an energy_grid to count instead")
        eig = full_spectrum(op).eigenvalues
        lines = ["# perclap spectrum v1", "eigenvalue"] + [f"{x!r}" for x in eig.tolist()]
        record["eigenvalues"] = eig
    _emit(cfg, "\n".join(lines) + "\n", record)
    return EXIT_OK


def _mechanism_report(cfg: dict, jobs: int):
    check, seed, n = cfg["check"], cfg["master_seed"], cfg["samples"]
    if check == "tauberian":
        return asy.tauberian_check(float(cfg.get("delta", 1.0)), float(cfg.get("t0", 1.0)))
    if check == "heaviside":
        return asy.heaviside_inequality_check(n, seed)
    if check == "dirichlet_cube_scaling":
        sides = cfg.get("side_list", [4, 8, 16, 32])
        fit = asy.dirichlet_cube_scaling(cfg["d"], sides)
        return asy._report("dirichlet_cube_scaling", abs(fit.slope + 2.0), 0.1,
                           {"d": cfg["d"], "sides": sides}, {"fit": fit.__dict__})
    g = geometry_of(cfg)
    if check == "monotonicity":
        t_grid = cfg.get("t_grid")
        configs = sample_configs(g, cfg["p"], n, seed)
        if t_grid is None:
            return monotonicity_batch(configs)
        reports = [asy.monotonicity_check(c, t_grid) for c in configs]
        return asy._report("monotonicity", max(r.violation for r in reports), 1e-10,
                           {"configs": n}, {})
    if check == "linearization":
        return linearization_batch(sample_configs(g, cfg["p"], n, seed))
    if check == "slope_large_deviation":
        sides = cfg.get("side_list", [4, 6, 8, 10])
        return asy.slope_large_deviation(g, cfg["p"], float(cfg.get("alpha", 0.3)), n, seed,
                                         sides)
    if check == "finite_cluster_tail":
        grid = cfg.get("energy_grid", [0.01, 0.05, 0.1])
        return asy.finite_cluster_tail_check(g, cfg["p"], grid, n, seed, jobs=jobs)
    if check == "implication":
        configs = sample_configs(g, cfg["p"], n, seed)
        beta = max(asy.linearization_check(c).details["beta_hat"]
                   for c in configs[:min(20, n)])
        return asy.implication_check(configs, float(cfg.get("alpha", 0.2)), beta)
    raise ConfigError(f"unknown check {check!r}")


def cmd_mechanism(cfg: dict, jobs: int = 1) -> int:
    try:
        report = _mechanism_report(cfg, jobs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    record = {"command": "mechanism", "config": cfg, "report": report.__dict__}
    _emit({**cfg, "format": "json"}, None, record)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_verify(cfg: dict, jobs: int = 1, assembler=assemble_laplacian) -> int:
    result = run_suite(cfg["suite"], cfg["master_seed"], assembler=assembler, jobs=jobs)
    record = {"command": "verify", "config": cfg, **result}
    _emit({**cfg, "format": "json"}, None, record)
    for c in result["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}", file=sys.stderr)
    return EXIT_OK if result["passed"] else EXIT_CHECK


COMMAND_FUNCS = {"ids": cmd_ids, "walk": cmd_walk, "spectrum": cmd_spectrum,
                 "mechanism": cmd_mechanism, "verify": cmd_verify}


def _window(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo,hi") from None
    return [lo, hi]


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perclap",
        description="Spectra, densities of states and random walks on percolation clusters.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", dest="master_seed", type=int,
                        help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--output", dest="output_path",
                        help="output stem; writes <stem>.csv and/or <stem>.json")
    common.add_argument("--format", choices=("csv", "json", "both"))
    common.add_argument("--jobs", type=int, default=1,
                        help="worker processes (0 = all cores); never changes results")

    geo = argparse.ArgumentParser(add_help=False)
    geo.add_argument("--preset", choices=sorted(PRESETS))
    geo.add_argument("--d", type=int)
    geo.add_argument("--L", type=int)
    geo.add_argument("--topology", choices=("free", "periodic"))
    geo.add_argument("--p", type=float)

    ops = argparse.ArgumentParser(add_help=False)
    ops.add_argument("--bc", help="N, Dtilde or D")
    ops.add_argument("--scheme", choices=("graph_restriction", "neumann_boundary"))

    p = sub.add_parser("ids", parents=[common, geo, ops], help="integrated density of states")
    p.add_argument("--energy-grid", dest="energy_grid", type=parse_grid_flag,
                   help='"0,0.1,0.2" or "kind:start:stop:num"')
    p.add_argument("--samples", type=int)
    p.add_argument("--fit-window", dest="fit_window", type=_window)

    p = sub.add_parser("walk", parents=[common, geo], help="annealed return probability")
    p.add_argument("--t-grid", dest="t_grid", type=parse_grid_flag)
    p.add_argument("--samples", type=int, help="configurations")
    p.add_argument("--walks", type=int, help="walks per configuration")
    p.add_argument("--start", choices=("origin", "uniform"))
    p.add_argument("--fit-window", dest="fit_window", type=_window)

    p = sub.add_parser("spectrum", parents=[common, geo, ops], help="spectrum of one sample")
    p.add_argument("--energy-grid", dest="energy_grid", type=parse_grid_flag)

    p = sub.add_parser("mechanism", parents=[common, geo], help="run one mechanism check")
    p.add_argument("--check", choices=MECHANISM_CHECKS)
    p.add_argument("--samples", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--side-list", dest="side_list", type=_int_list)
    p.add_argument("--t-grid", dest="t_grid", type=parse_grid_flag)
    p.add_argument("--energy-grid", dest="energy_grid", type=parse_grid_flag)

    p = sub.add_parser("verify", parents=[common], help="run the verification suite")
    p.add_argument("--suite", choices=("quick", "full"))
    return parser


_RUNTIME = {"command", "config", "jobs"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    overrides = {k: v for k, v in vars(args).items() if k not in _RUNTIME}
    try:
        file_cfg = load_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_cfg, overrides)
        if args.jobs < 0:
            raise ConfigError("--jobs must be >= 0")
        return COMMAND_FUNCS[args.command](cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"perclap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
