"""
Monte Carlo integrated density of states.

A sample is one configuration drawn with seed ``split_seed(master_seed, i)``;
its counting function is ``#{eigenvalues <= E} / |box|``.  Curves are the
ordered mean over samples with 95% half-widths.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._ensemble import ordered_map
from .lattice import (BoxGeometry, cluster_decomposition, cluster_statistics,
                      percolating_proxy, sample_configuration, split_seed)
from .operators import BoundaryCondition, RestrictionScheme, assemble_laplacian
from .spectral import SpectralCounter, full_spectrum

Z95 = 1.959963984540054
LEFT_LIMIT_OFFSET = 1e-9
CSV_SCHEMA_IDS = "# perclap ids-curve v1"
CSV_SCHEMA_LAPLACE = "# perclap laplace-curve v1"


def _wilson_half_width(value: float, n: int) -> float:
    """Largest one-sided distance from ``value`` to its Wilson interval ends."""
    z2 = Z95 * Z95
    denom = 1.0 + z2 / n
    centre = (value + z2 / (2 * n)) / denom
    spread = Z95 / denom * math.sqrt(max(value * (1 - value), 0.0) / n + z2 / (4 * n * n))
    return max(centre + spread - value, value - (centre - spread))


def mean_and_half_width(sample_values: np.ndarray, degenerate: bool = False,
                        pooled_trials: int | None = None):
    """Column means and 95% half-widths of a ``(samples, points)`` array.

    Normal approximation ``1.96 s / sqrt(n)``.  For proportions
    (``pooled_trials`` given) a mean below ``5/n`` or above ``1 - 5/n`` also
    gets the Wilson half-width over ``pooled_trials`` trials, whichever is
    larger.  ``degenerate`` marks a deterministic ensemble (half-widths 0).
    """
    sample_values = np.asarray(sample_values, dtype=float)
    n = sample_values.shape[0]
    mean = sample_values.mean(axis=0)
    if degenerate:
        return mean, np.zeros_like(mean)
    sd = sample_values.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    hw = Z95 * sd / math.sqrt(n)
    if pooled_trials:
        edge = (mean < 5.0 / n) | (mean > 1.0 - 5.0 / n)
        for k in np.flatnonzero(edge):
            if 0.0 <= mean[k] <= 1.0:
                hw[k] = max(hw[k], _wilson_half_width(float(mean[k]), pooled_trials))
    return mean, hw


@dataclass(eq=False)
class IdsCurve:
    """Ensemble estimate of an eigenvalue counting function per volume.

    ``part`` is ``total`` for the full operator, ``infinite`` for the
    percolating-cluster proxy block and ``finite`` for the rest.
    ``sample_values`` keeps the per-sample curves (rows in sample order).
    """

    bc: BoundaryCondition
    scheme: RestrictionScheme
    geometry: BoxGeometry
    p: float
    energy_grid: np.ndarray
    values: np.ndarray
    half_widths: np.ndarray
    samples: int
    master_seed: int
    part: str = "total"
    excluded: int = 0
    sample_values: np.ndarray | None = field(default=None, repr=False)
    spectra: list | None = field(default=None, repr=False)

    def value_at(self, E: float) -> float:
        """Right-continuous step interpolation of the curve."""
        k = int(np.searchsorted(self.energy_grid, E, side="right")) - 1
        if k < 0:
            raise ValueError(f"E={E} lies below the curve's grid")
        return float(self.values[k])

    def metadata(self) -> dict:
        meta = {
            "bc": self.bc.value,
            "scheme": self.scheme.value,
            **self.geometry.to_dict(),
            "p": self.p,
            "samples": self.samples,
            "master_seed": self.master_seed,
            "part": self.part,
            "excluded": self.excluded,
            "sample_seeds": [split_seed(self.master_seed, i) for i in range(self.samples)],
        }
        if self.part != "total":
            meta["proxy"] = "largest spanning (free) or wrapping (periodic) cluster"
        return meta

    def to_csv(self) -> str:
        return _csv(CSV_SCHEMA_IDS, "E", self.energy_grid, self.values, self.half_widths)

    def to_json(self) -> str:
        return json.dumps({
            "schema": CSV_SCHEMA_IDS[2:],
            "metadata": self.metadata(),
            "energy_grid": self.energy_grid.tolist(),
            "values": self.values.tolist(),
            "half_widths": self.half_widths.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "IdsCurve":
        data = json.loads(text)
        m = data["metadata"]
        return cls(BoundaryCondition.parse(m["bc"]), RestrictionScheme.parse(m["scheme"]),
                   BoxGeometry(m["d"], m["L"], m["topology"]), m["p"],
                   np.array(data["energy_grid"]), np.array(data["values"]),
                   np.array(data["half_widths"]), m["samples"], m["master_seed"],
                   part=m["part"], excluded=m["excluded"])


def synthetic_curve(energy_grid, values, d: int = 1, half_widths=None) -> IdsCurve:
    """Wrap given values as a curve, e.g. to exercise fits and transforms."""
    grid = np.asarray(energy_grid, dtype=float)
    vals = np.asarray(values, dtype=float)
    hw = np.zeros_like(vals) if half_widths is None else np.asarray(half_widths, dtype=float)
    return IdsCurve(BoundaryCondition.NEUMANN, RestrictionScheme.GRAPH_RESTRICTION,
                    BoxGeometry(d, 1), float("nan"), grid, vals, hw, 1, 0, part="synthetic")


@dataclass(eq=False)
class LaplaceCurve:
    t_grid: np.ndarray
    values: np.ndarray
    half_widths: np.ndarray
    provenance: str
    method: str = ""
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return _csv(CSV_SCHEMA_LAPLACE, "t", self.t_grid, self.values, self.half_widths)

    def to_json(self) -> str:
        return json.dumps({
            "schema": CSV_SCHEMA_LAPLACE[2:],
            "provenance": self.provenance,
            "method": self.method,
            "metadata": self.metadata,
            "t_grid": self.t_grid.tolist(),
            "values": self.values.tolist(),
            "half_widths": self.half_widths.tolist(),
        }, indent=2)


def _csv(schema, xname, x, values, half_widths) -> str:
    lines = [schema, f"{xname},value,half_width"]
    lines += [f"{a!r},{b!r},{c!r}" for a, b, c in
              zip(np.asarray(x, float).tolist(), np.asarray(values, float).tolist(),
                  np.asarray(half_widths, float).tolist())]
    return "\n".join(lines) + "\n"


def read_csv(text: str) -> tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    """Parse either curve CSV; returns ``(schema, x, values, half_widths)``."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# perclap"):
        raise ValueError("missing perclap schema header")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln],
                    dtype=float).reshape(-1, 3)
    return lines[0], rows[:, 0], rows[:, 1], rows[:, 2]


# --- ensembles ---------------------------------------------------------------

def _check_grid(grid, d):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("energy grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("energy grid must be strictly increasing")
    if grid[0] < -LEFT_LIMIT_OFFSET or grid[-1] > 4 * d:
        raise ValueError(f"energy grid must lie within [0, {4 * d}]")
    return grid


def _sample_counts(index, *, geometry, p, master_seed, bc, scheme, grid, parts):
    """Counting functions of one sample; ``parts`` picks total/infinite/finite."""
    config = sample_configuration(geometry, p, split_seed(master_seed, index))
    op = assemble_laplacian(config, bc, scheme)
    out = {}
    if "total" in parts:
        out["total"] = SpectralCounter(op).count_many(grid)
    if "spectrum" in parts:
        out["spectrum"] = full_spectrum(op).eigenvalues
    if "infinite" in parts or "finite" in parts or "stats" in parts:
        decomp = cluster_decomposition(config)
        proxy = percolating_proxy(decomp, strict=True)
        out["has_proxy"] = proxy is not None
        inside = decomp.labels == proxy if proxy is not None else np.zeros(op.n, bool)
        if "infinite" in parts:
            out["infinite"] = (SpectralCounter(op, vertices=np.flatnonzero(inside)).count_many(grid)
                               if proxy is not None else np.zeros(grid.size, np.int64))
        if "finite" in parts:
            out["finite"] = SpectralCounter(op, vertices=np.flatnonzero(~inside)).count_many(grid)
        if "stats" in parts:
            out["stats"] = cluster_statistics(decomp)
            finite_sizes = np.delete(decomp.sizes, proxy) if proxy is not None else decomp.sizes
            out["finite_sizes"] = finite_sizes
    return out


def _run(geometry, p, master_seed, bc, scheme, grid, samples, parts, jobs):
    if samples < 1:
        raise ValueError("samples must be >= 1")
    worker = functools.partial(_sample_counts, geometry=geometry, p=float(p),
                               master_seed=int(master_seed), bc=bc, scheme=scheme,
                               grid=grid, parts=tuple(parts))
    return ordered_map(worker, range(samples), jobs)


def _curve(rows, key, *, bc, scheme, geometry, p, grid, samples, master_seed, part,
           excluded=0):
    vals = np.array([r[key] for r in rows], dtype=float) / geometry.n_vertices
    mean, hw = mean_and_half_width(vals, degenerate=p in (0.0, 1.0),
                                   pooled_trials=samples * geometry.n_vertices)
    return IdsCurve(bc, scheme, geometry, float(p), grid, mean, hw, samples, int(master_seed),
                    part=part, excluded=excluded, sample_values=vals)


def estimate_ids(bc, scheme, geometry: BoxGeometry, p: float, energy_grid, samples: int,
                 master_seed: int, jobs: int = 1, keep_spectra: bool = False) -> IdsCurve:
    """Ensemble mean of the normalized eigenvalue counting function.

    ``keep_spectra`` also stores every sample's dense spectrum (small boxes
    only), which lets ``laplace_transform`` sum exactly over eigenvalues.

    Examples
    --------
    >>> g = BoxGeometry(2, 4, "periodic")
    >>> estimate_ids("N", "graph_restriction", g, 0.0, [0.0, 1.0], 2, 1).values.tolist()
    [1.0, 1.0]
    """
    bc = BoundaryCondition.parse(bc)
    scheme = RestrictionScheme.parse(scheme)
    grid = _check_grid(energy_grid, geometry.d)
    parts = ("total", "spectrum") if keep_spectra else ("total",)
    rows = _run(geometry, p, master_seed, bc, scheme, grid, samples, parts, jobs)
    curve = _curve(rows, "total", bc=bc, scheme=scheme, geometry=geometry, p=p, grid=grid,
                   samples=samples, master_seed=master_seed, part="total")
    if keep_spectra:
        curve.spectra = [r["spectrum"] for r in rows]
    return curve


def ids_decomposition(geometry: BoxGeometry, p: float, energy_grid, samples: int,
                      master_seed: int, jobs: int = 1) -> dict[str, IdsCurve]:
    """Neumann total, percolating-cluster and finite-cluster curves on one ensemble.

    Samples without a spanning/wrapping cluster count as excluded: their
    percolating part is 0 and everything is finite.
    """
    bc, scheme = BoundaryCondition.NEUMANN, RestrictionScheme.GRAPH_RESTRICTION
    grid = _check_grid(energy_grid, geometry.d)
    rows = _run(geometry, p, master_seed, bc, scheme, grid, samples,
                ("total", "infinite", "finite"), jobs)
    excluded = sum(not r["has_proxy"] for r in rows)
    common = dict(bc=bc, scheme=scheme, geometry=geometry, p=p, grid=grid, samples=samples,
                  master_seed=master_seed, excluded=excluded)
    return {part: _curve(rows, part, part=part, **common)
            for part in ("total", "infinite", "finite")}


def ids_infinite_part(geometry: BoxGeometry, p: float, energy_grid, samples: int,
                      master_seed: int, jobs: int = 1) -> IdsCurve:
    """Counting function restricted to the percolating-cluster proxy block."""
    bc, scheme = BoundaryCondition.NEUMANN, RestrictionScheme.GRAPH_RESTRICTION
    grid = _check_grid(energy_grid, geometry.d)
    rows = _run(geometry, p, master_seed, bc, scheme, grid, samples, ("infinite",), jobs)
    excluded = sum(not r["has_proxy"] for r in rows)
    return _curve(rows, "infinite", bc=bc, scheme=scheme, geometry=geometry, p=p, grid=grid,
                  samples=samples, master_seed=master_seed, part="infinite", excluded=excluded)


def ids_finite_part(geometry: BoxGeometry, p: float, energy_grid, samples: int,
                    master_seed: int, jobs: int = 1) -> IdsCurve:
    bc, scheme = BoundaryCondition.NEUMANN, RestrictionScheme.GRAPH_RESTRICTION
    grid = _check_grid(energy_grid, geometry.d)
    rows = _run(geometry, p, master_seed, bc, scheme, grid, samples, ("finite",), jobs)
    excluded = sum(not r["has_proxy"] for r in rows)
    return _curve(rows, "finite", bc=bc, scheme=scheme, geometry=geometry, p=p, grid=grid,
                  samples=samples, master_seed=master_seed, part="finite", excluded=excluded)


def zero_mode_density(geometry: BoxGeometry, p: float, samples: int, master_seed: int,
                      jobs: int = 1) -> dict:
    """Kernel dimension of the Neumann Laplacian per volume, with cluster densities.

    Two readings of the cluster-density formula are reported next to the
    measured value: counting every cluster (singletons included) plus the
    isolated-vertex density, and counting only clusters of size >= 2 plus the
    isolated-vertex density.
    """
    bc, scheme = BoundaryCondition.NEUMANN, RestrictionScheme.GRAPH_RESTRICTION
    grid = np.array([0.0])
    rows = _run(geometry, p, master_seed, bc, scheme, grid, samples, ("total", "stats"), jobs)
    n = geometry.n_vertices
    kernel = np.array([r["total"][0] for r in rows], dtype=float) / n
    comp = np.array([r["stats"]["component_density"] for r in rows])
    iso = np.array([r["stats"]["isolated_density"] for r in rows])
    isolated_law = (1.0 - p) ** (2 * geometry.d)
    return {
        "nn_at_zero": float(kernel.mean()),
        "component_density": float(comp.mean()),
        "isolated_density": float(iso.mean()),
        "isolated_closed_form": isolated_law,
        "formula_all_clusters": float(comp.mean()) + isolated_law,
        "formula_nonsingleton_clusters": float(comp.mean() - iso.mean()) + isolated_law,
        "kernel_equals_components_per_sample": bool(np.array_equal(kernel * n, comp * n)),
        "samples": samples,
        "master_seed": master_seed,
        "per_sample_kernel": kernel,
        "per_sample_component_density": comp,
    }


# --- transforms and symmetry -------------------------------------------------

def _step_transform(grid, vals, t_grid):
    """``int exp(-E t) dN(E)`` of one step curve.

    The value at the first grid point is an atom there; each interval's
    increment is spread uniformly over the interval, which is exact for a
    piecewise-constant density.
    """
    t = np.asarray(t_grid, dtype=float)[:, None]
    lo, width = grid[:-1], np.diff(grid)
    x = t * width
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0)
    kernel = np.exp(-t * lo) * avg
    return np.exp(-t[:, 0] * grid[0]) * vals[0] + kernel @ np.diff(vals)


def laplace_transform(curve: IdsCurve, t_grid) -> LaplaceCurve:
    """Laplace-Stieltjes transform of the curve's step measure.

    Uses the per-sample eigenvalues when the curve carries them ("exact"),
    else the grid increments spread uniformly over their intervals
    ("interval_uniform").  Half-widths come from the spread of per-sample
    transforms.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t grid must be non-negative and strictly increasing")
    if np.any(np.diff(curve.values) < 0):
        raise ValueError("curve must be non-decreasing")
    meta = {"source": curve.metadata() if curve.part != "synthetic" else {"part": "synthetic"}}
    if curve.spectra is not None:
        n = curve.geometry.n_vertices
        per = np.array([np.exp(-np.outer(t_grid, np.asarray(w))).sum(axis=1) / n
                        for w in curve.spectra])
        mean, hw = mean_and_half_width(per, degenerate=curve.p in (0.0, 1.0))
        return LaplaceCurve(t_grid, mean, hw, "from_ids", "exact", meta)
    rows = curve.sample_values if curve.sample_values is not None else curve.values[None, :]
    per = np.array([_step_transform(curve.energy_grid, r, t_grid) for r in rows])
    if per.shape[0] > 1:
        mean, hw = mean_and_half_width(per, degenerate=curve.p in (0.0, 1.0))
    else:
        mean, hw = per[0], np.zeros(t_grid.size)
    return LaplaceCurve(t_grid, mean, hw, "from_ids", "interval_uniform", meta)


def mirror_grid(energy_grid, d: int) -> np.ndarray:
    """Grid on which a dual curve must be sampled for ``symmetry_residual``:
    ``4d - E - 1e-9`` for each ``E``, in increasing order."""
    grid = np.asarray(energy_grid, dtype=float)
    return (4.0 * d - grid - LEFT_LIMIT_OFFSET)[::-1]


def symmetry_residual(curve_a: IdsCurve, curve_b: IdsCurve) -> float:
    """``max_E |a(E) + b((4d - E)^-) - 1|``.

    ``curve_b`` must be sampled on ``mirror_grid(curve_a.energy_grid, d)``; its
    value at ``4d - E - 1e-9`` stands for the left limit at ``4d - E``.
    """
    d = curve_a.geometry.d
    if curve_b.geometry.d != d:
        raise ValueError("curves live in different dimensions")
    for c in (curve_a, curve_b):
        if c.part != "synthetic" and c.scheme is not RestrictionScheme.GRAPH_RESTRICTION:
            raise ValueError("the duality holds for the graph_restriction scheme only")
    expected = mirror_grid(curve_a.energy_grid, d)
    if curve_b.energy_grid.shape != expected.shape or not np.allclose(
            curve_b.energy_grid, expected, rtol=0, atol=1e-12):
        raise ValueError("grid mismatch: curve_b must be sampled on mirror_grid(curve_a grid)")
    mirrored = curve_b.values[::-1]
    return float(np.max(np.abs(curve_a.values + mirrored - 1.0)))
