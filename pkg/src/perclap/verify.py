"""
Invariant checks and the quick/full verification suites.

Every check returns a ``MechanismReport``.  The operator assembler is a
parameter so that a deliberately broken assembly can be substituted.
"""
from __future__ import annotations

import math
import time

import numpy as np
import scipy.linalg as sla

from . import asymptotics as asy
from .ids import estimate_ids
from .lattice import BoxGeometry, cluster_decomposition, sample_configuration, split_seed
from .operators import assemble_laplacian, slope_at_zero
from .spectral import heat_kernel_diag, spectral_gap
from .walk import return_probability

KERNEL_TOL = 1e-8
_VARIANTS = (("N", "graph_restriction"), ("Dtilde", "graph_restriction"),
             ("D", "graph_restriction"), ("Dtilde", "neumann_boundary"))


def sample_configs(geometry: BoxGeometry, p: float, count: int, master_seed: int):
    return [sample_configuration(geometry, p, split_seed(master_seed, i)) for i in range(count)]


def _eigs(op):
    return sla.eigvalsh(op.toarray())


def duality_check(configs, assembler=assemble_laplacian, tolerance: float = 1e-9):
    """Sorted spectra: ``D`` mirrors ``N`` and ``Dtilde`` mirrors itself about ``2d``."""
    worst_nd = worst_tt = 0.0
    for c in configs:
        top = 4.0 * c.geometry.d
        n_ = _eigs(assembler(c, "N", "graph_restriction"))
        dt = _eigs(assembler(c, "Dtilde", "graph_restriction"))
        dd = _eigs(assembler(c, "D", "graph_restriction"))
        worst_nd = max(worst_nd, float(np.max(np.abs(dd - (top - n_[::-1])))))
        worst_tt = max(worst_tt, float(np.max(np.abs(dt - (top - dt[::-1])))))
    return asy._report("involution_duality", max(worst_nd, worst_tt), tolerance,
                       {"configs": len(configs)},
                       {"dirichlet_vs_neumann": worst_nd, "pseudo_dirichlet_self": worst_tt})


def spectrum_range_check(configs, assembler=assemble_laplacian, tolerance: float = 1e-9):
    worst = 0.0
    for c in configs:
        top = 4.0 * c.geometry.d
        for bc, scheme in _VARIANTS:
            w = _eigs(assembler(c, bc, scheme))
            worst = max(worst, float(-w[0]), float(w[-1] - top))
    return asy._report("spectrum_range", max(worst, 0.0), tolerance,
                       {"configs": len(configs)}, {})


def kernel_components_check(configs, assembler=assemble_laplacian):
    mismatches = []
    for i, c in enumerate(configs):
        kernel = int(np.count_nonzero(np.abs(_eigs(assembler(c, "N", "graph_restriction")))
                                      < KERNEL_TOL))
        comps = cluster_decomposition(c).component_count
        if kernel != comps:
            mismatches.append((i, kernel, comps))
    return asy._report("kernel_components", len(mismatches), 0,
                       {"configs": len(configs)}, {"mismatches": mismatches})


def ordering_check(configs, vectors: int = 1000, seed: int = 0, tolerance: float = 1e-12,
                   assembler=assemble_laplacian):
    """Quadratic forms ``N <= Dtilde <= D`` on random unit vectors."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in configs:
        phi = rng.standard_normal((c.geometry.n_vertices, vectors))
        phi /= np.linalg.norm(phi, axis=0)
        forms = []
        for bc in ("N", "Dtilde", "D"):
            m = assembler(c, bc, "graph_restriction").tocsr()
            forms.append(np.einsum("ij,ij->j", phi, m @ phi))
        worst = max(worst, float(np.max(forms[0] - forms[1])),
                    float(np.max(forms[1] - forms[2])))
    return asy._report("operator_ordering", max(worst, 0.0), tolerance,
                       {"configs": len(configs), "vectors": vectors, "seed": seed}, {})


def walk_semigroup_check(config, x: int, times, n_walks: int, seed: int,
                         sigmas: float = 4.0, assembler=assemble_laplacian):
    """Monte Carlo return frequency against the heat-kernel diagonal.

    Violation is the largest deviation in binomial standard deviations.
    """
    op = assembler(config, "N", "graph_restriction")
    z, exact, mc = [], [], []
    for k, t in enumerate(times):
        pk = heat_kernel_diag(op, x, t)
        est = return_probability(config, x, t, n_walks, split_seed(seed, k))
        sd = math.sqrt(max(pk * (1 - pk), 0.0) / n_walks)
        z.append(abs(est.probability - pk) / sd if sd > 0 else
                 (0.0 if est.probability == pk else math.inf))
        exact.append(pk)
        mc.append(est.probability)
    return asy._report("walk_semigroup", max(z), sigmas,
                       {"x": x, "times": list(times), "n_walks": n_walks, "seed": seed},
                       {"heat_kernel": exact, "monte_carlo": mc, "z_scores": z})


def free_lattice_ids_check(side: int = 16, d: int = 2, tolerance: float = 1e-12):
    """All-open torus: counting function against the plane-wave spectrum."""
    g = BoxGeometry(d, side, "periodic")
    k = 2.0 * np.pi * np.arange(side) / side
    one = 2.0 - 2.0 * np.cos(k)
    lam = one
    for _ in range(d - 1):
        lam = np.add.outer(lam, one).ravel()
    lam = np.sort(lam)
    grid = np.linspace(0.0, 4.0 * d, 4 * side + 1) + 1e-3 / side
    grid = grid[grid <= 4.0 * d]
    curve = estimate_ids("N", "graph_restriction", g, 1.0, grid, 1, 0)
    exact = np.searchsorted(lam, grid, side="right") / g.n_vertices
    return asy._report("free_lattice_ids", float(np.max(np.abs(curve.values - exact))),
                       tolerance, {"d": d, "L": side}, {})


def slope_closed_form_check(configs, h: float = 1e-5, tolerance: float = 1e-3):
    """Closed-form slope in integer arithmetic, then against central differences."""
    worst, mismatches = 0.0, 0
    for c in configs:
        closed = c.geometry.n_edges - int(np.count_nonzero(c.occupation))
        s = slope_at_zero(c)
        if s != 2 * closed / c.geometry.n_vertices:
            mismatches += 1
        fd = asy.slope_finite_difference(c, h)
        rel = abs(fd - s) / s if s > 0 else abs(fd)
        worst = max(worst, rel)
    violation = worst if mismatches == 0 else math.inf
    if not math.isfinite(violation):
        violation = 1e300
    return asy._report("slope_closed_form", violation, tolerance,
                       {"configs": len(configs), "h": h}, {"closed_form_mismatches": mismatches})


def spectral_gap_check(d: int = 2, sides=(4, 8, 12, 16, 24, 32), tolerance: float = 1e-9):
    gaps = np.array([spectral_gap(BoxGeometry(d, s)) for s in sides])
    closed = 2.0 - 2.0 * np.cos(np.pi / np.asarray(sides, float))
    fit = asy.fit_power_law(np.asarray(sides, float), gaps, label="cube gap")
    return asy._report("spectral_gap", float(np.max(np.abs(gaps - closed))), tolerance,
                       {"d": d, "sides": list(sides)},
                       {"gaps": gaps, "fitted_exponent": fit.slope})


def monotonicity_batch(configs, tolerance: float = 1e-10):
    reports = [asy.monotonicity_check(c, tolerance=tolerance) for c in configs]
    worst = max(r.violation for r in reports)
    return asy._report("monotonicity", worst, tolerance, {"configs": len(configs)},
                       {"failures": sum(not r.passed for r in reports)})


def linearization_batch(configs, required_fraction: float = 0.95):
    reports = [asy.linearization_check(c) for c in configs]
    passed = sum(r.passed for r in reports)
    failing = 1.0 - passed / len(reports)
    return asy._report("linearization", failing, 1.0 - required_fraction,
                       {"configs": len(configs)},
                       {"passed": passed,
                        "orders": [r.details.get("order") for r in reports],
                        "beta_hat_max": max(r.details["beta_hat"] for r in reports)})


def _cube_scaling_report(d, sides, target=-2.0, tolerance=0.1):
    fit = asy.dirichlet_cube_scaling(d, sides)
    return asy._report("dirichlet_cube_scaling", abs(fit.slope - target), tolerance,
                       {"d": d, "sides": list(sides)}, {"slope": fit.slope})


def _van_hove_report(preset_geometry, p, grid, samples, seed, window, band, jobs):
    curve = estimate_ids("N", "graph_restriction", preset_geometry, p, grid, samples, seed,
                         jobs=jobs)
    fit = asy.fit_van_hove(curve, window)
    lo, hi = band
    return asy._report("van_hove_d%d" % preset_geometry.d,
                       max(lo - fit.slope, fit.slope - hi, 0.0), 0.0,
                       {**preset_geometry.to_dict(), "p": p, "samples": samples,
                        "window": list(window)},
                       {"slope": fit.slope, "r_squared": fit.r_squared})


def twenty_vertex_cluster(seed_start: int = 0, target: int = 20):
    """First ``d=2``, ``L=10`` free configuration at ``p=0.5`` with a cluster of
    exactly ``target`` vertices, and a vertex of that cluster."""
    g = BoxGeometry(2, 10)
    for s in range(seed_start, seed_start + 10_000):
        c = sample_configuration(g, 0.5, s)
        decomp = cluster_decomposition(c)
        hits = np.flatnonzero(decomp.sizes == target)
        if hits.size:
            return c, int(decomp.members(int(hits[0]))[0])
    raise RuntimeError("no cluster of the requested size found")


def suite_checks(suite: str, master_seed: int, assembler=assemble_laplacian, jobs: int = 1):
    """Named thunks making up a suite."""
    if suite not in ("quick", "full"):
        raise ValueError("suite must be 'quick' or 'full'")
    full = suite == "full"
    n_cfg = 100 if full else 10
    ms = master_seed
    g8f, g8p = BoxGeometry(2, 8), BoxGeometry(2, 8, "periodic")
    g6 = BoxGeometry(2, 6)

    def duality():
        cfgs = (sample_configs(g8f, 0.5, n_cfg // 2, split_seed(ms, 1))
                + sample_configs(g8p, 0.5, n_cfg // 2, split_seed(ms, 2)))
        return duality_check(cfgs, assembler)

    def spectrum_range():
        cfgs = (sample_configs(g8f, 0.5, n_cfg // 2, split_seed(ms, 1))
                + sample_configs(g8p, 0.5, n_cfg // 2, split_seed(ms, 2)))
        return spectrum_range_check(cfgs, assembler)

    def walk_semigroup():
        config, x = twenty_vertex_cluster(ms % 1000)
        return walk_semigroup_check(config, x, (1.0, 3.0, 10.0), 100_000 if full else 20_000,
                                    split_seed(ms, 9), assembler=assembler)

    def implication():
        g = BoxGeometry(2, 8)
        cfgs = sample_configs(g, 0.97, 200 if full else 60, split_seed(ms, 12))
        beta = max(asy.linearization_check(c).details["beta_hat"] for c in cfgs[:20])
        return asy.implication_check(cfgs, 0.2, beta)

    def tauberian():
        reports = [asy.tauberian_check(delta, 1.0) for delta in (0.5, 1.0, 1.5)]
        return asy._report("tauberian", max(r.violation for r in reports), 0.0,
                           {"deltas": [0.5, 1.0, 1.5]},
                           {"per_delta": [r.details for r in reports]})

    def finite_tail():
        side = 128 if full else 32
        return asy.finite_cluster_tail_check(BoxGeometry(2, side, "periodic"), 0.7,
                                             [0.01, 0.05, 0.1], 50 if full else 5,
                                             split_seed(ms, 13), jobs=jobs)

    def large_deviation():
        return asy.slope_large_deviation(BoxGeometry(2, 4), 0.9, 0.3,
                                         100_000 if full else 20_000, split_seed(ms, 14),
                                         [4, 6, 8, 10])

    checks = [
        ("involution_duality", duality),
        ("spectrum_range", spectrum_range),
        ("kernel_components", lambda: kernel_components_check(
            sample_configs(BoxGeometry(2, 10), 0.5, n_cfg, split_seed(ms, 3)), assembler)),
        ("operator_ordering", lambda: ordering_check(
            sample_configs(g8f, 0.5, n_cfg, split_seed(ms, 4)), 1000, split_seed(ms, 5),
            assembler=assembler)),
        ("walk_semigroup", walk_semigroup),
        ("free_lattice_ids", lambda: free_lattice_ids_check(16, 2)),
        ("monotonicity", lambda: monotonicity_batch(
            sample_configs(g6, 0.5, n_cfg, split_seed(ms, 6)))),
        ("linearization", lambda: linearization_batch(
            sample_configs(g6, 0.5, n_cfg, split_seed(ms, 7)))),
        ("slope_closed_form", lambda: slope_closed_form_check(
            sample_configs(g6, 0.5, n_cfg, split_seed(ms, 8)))),
        ("slope_large_deviation", large_deviation),
        ("dirichlet_cube_scaling", lambda: _cube_scaling_report(
            2, range(4, 33, 4) if full else (4, 8, 16, 32))),
        ("spectral_gap", lambda: spectral_gap_check(2)),
        ("tauberian", tauberian),
        ("heaviside_inequality", lambda: asy.heaviside_inequality_check(10_000, ms)),
        ("finite_cluster_tail", finite_tail),
        ("implication", implication),
    ]
    if full:
        checks += [
            ("free_lattice_ids_d3", lambda: free_lattice_ids_check(8, 3)),
            ("spectral_gap_d3", lambda: spectral_gap_check(3, (4, 6, 8, 10))),
            ("van_hove_d2", lambda: _van_hove_report(
                BoxGeometry(2, 128, "periodic"), 0.7, [0.0] + np.geomspace(0.02, 0.2, 13).tolist(),
                50, split_seed(ms, 20), (0.02, 0.2), (0.7, 1.3), jobs)),
            ("van_hove_d3", lambda: _van_hove_report(
                BoxGeometry(3, 24, "periodic"), 0.35, [0.0] + np.geomspace(0.05, 0.5, 9).tolist(),
                10, split_seed(ms, 21), (0.05, 0.5), (0.9, 2.1), jobs)),
            ("monotonicity_d3", lambda: monotonicity_batch(
                sample_configs(BoxGeometry(3, 4), 0.5, 20, split_seed(ms, 22)))),
        ]
    return checks


def run_suite(suite: str = "quick", master_seed: int = 0, assembler=assemble_laplacian,
              jobs: int = 1, only=None) -> dict:
    """Run a suite; a check that raises is recorded as failed with its error."""
    results = []
    for name, thunk in suite_checks(suite, master_seed, assembler, jobs):
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        try:
            rep = thunk()
            entry = {"name": name, "passed": rep.passed, "violation": rep.violation,
                     "tolerance": rep.tolerance, "parameters": rep.parameters,
                     "details": rep.details}
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            entry = {"name": name, "passed": False, "violation": None, "tolerance": None,
                     "error": f"{type(exc).__name__}: {exc}"}
        entry["seconds"] = round(time.perf_counter() - start, 3)
        results.append(entry)
    return {"suite": suite, "master_seed": master_seed,
            "passed": all(r["passed"] for r in results), "checks": results}
