"""
Exponent fits and checks of the low-energy mechanisms.

Fits regress on explicit windows only.  Mechanism checks return a
``MechanismReport`` whose ``passed`` flag is ``violation <= tolerance``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.integrate as integrate
import scipy.linalg as sla
import scipy.special as special
import scipy.stats as stats

from .ids import IdsCurve, LaplaceCurve
from .lattice import (BoxGeometry, Configuration, full_configuration,
                      split_seed)
from .operators import (assemble_laplacian, perturbation_family, perturbation_matrices,
                        slope_at_zero)
from .spectral import smallest_eigenvalue


@dataclass
class FitReport:
    slope: float
    intercept: float
    window: tuple[float, float]
    r_squared: float
    n_points: int
    slope_stderr: float = float("nan")
    dropped: list = field(default_factory=list)
    label: str = ""

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)))


@dataclass
class MechanismReport:
    name: str
    passed: bool
    violation: float
    tolerance: float
    parameters: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _report(name, violation, tolerance, parameters, details) -> MechanismReport:
    violation = float(violation)
    if not math.isfinite(violation):
        raise ValueError(f"{name}: violation is not finite")
    return MechanismReport(name, bool(violation <= tolerance), violation, float(tolerance),
                           parameters, details)


# --- regressions -------------------------------------------------------------

def _regress(x, y, keep, window, label) -> FitReport:
    x, y = np.asarray(x, float), np.asarray(y, float)
    dropped = x[~keep].tolist()
    x, y = x[keep], y[keep]
    if x.size < 3:
        raise ValueError(f"{label}: only {x.size} usable points in window {window}; need 3")
    res = stats.linregress(np.log(x), y)
    return FitReport(float(res.slope), float(res.intercept), (float(window[0]), float(window[1])),
                     float(res.rvalue ** 2), int(x.size), float(res.stderr), dropped, label)


def _in_window(x, window):
    lo, hi = window
    if not lo < hi:
        raise ValueError(f"empty window {window}")
    x = np.asarray(x, float)
    return (x >= lo) & (x <= hi)


def fit_van_hove(curve: IdsCurve, window, zero_value: float | None = None) -> FitReport:
    """Slope of ``ln(N(E) - N(0))`` against ``ln E`` over ``window``.

    ``zero_value`` defaults to the curve's own value at ``E = 0``.
    """
    E = curve.energy_grid
    if zero_value is None:
        if E[0] != 0.0:
            raise ValueError("curve grid lacks E = 0; pass zero_value")
        zero_value = float(curve.values[0])
    sel = _in_window(E, window) & (E > 0)
    diff = curve.values[sel] - zero_value
    keep = diff > 0
    with np.errstate(divide="ignore"):
        y = np.log(np.where(keep, diff, 1.0))
    return _regress(E[sel], y, keep, window, "van Hove")


def fit_lifshits(curve: IdsCurve, window) -> FitReport:
    """Slope of ``ln|ln N(E)|`` against ``ln E``; needs ``0 < N < 1``."""
    E = curve.energy_grid
    sel = _in_window(E, window) & (E > 0)
    v = curve.values[sel]
    keep = (v > 0) & (v < 1)
    y = np.log(np.abs(np.log(np.where(keep, v, 0.5))))
    return _regress(E[sel], y, keep, window, "Lifshits")


def fit_heat_decay(curve: LaplaceCurve, window) -> FitReport:
    """Slope of ``ln value`` against ``ln t``."""
    t = curve.t_grid
    sel = _in_window(t, window) & (t > 0)
    v = curve.values[sel]
    keep = v > 0
    y = np.log(np.where(keep, v, 1.0))
    return _regress(t[sel], y, keep, window, "heat decay")


def fit_power_law(x, y, window=None, label="power law") -> FitReport:
    """Log-log slope of positive data."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    window = (x.min(), x.max()) if window is None else window
    sel = _in_window(x, window) & (x > 0)
    keep = y[sel] > 0
    return _regress(x[sel], np.log(np.where(keep, y[sel], 1.0)), keep, window, label)


# --- cube mechanisms ---------------------------------------------------------

def dirichlet_ground_energy(d: int, side: int) -> float:
    """Lowest Dirichlet eigenvalue of the all-open free cube."""
    op = assemble_laplacian(full_configuration(BoxGeometry(d, side)), "D")
    if op.n <= 2048:
        return float(sla.eigvalsh(op.toarray(), subset_by_index=[0, 0])[0])
    return smallest_eigenvalue(op)[0].value


def dirichlet_cube_scaling(d: int, side_list) -> FitReport:
    sides = np.asarray(sorted(side_list), dtype=float)
    if sides.size < 3 or sides[0] < 2:
        raise ValueError("need at least three sides, all >= 2")
    energies = np.array([dirichlet_ground_energy(d, int(s)) for s in sides])
    rep = fit_power_law(sides, energies, label="Dirichlet cube ground energy")
    rep.dropped = []
    rep.label += f" values={energies.tolist()}"
    return rep


def ground_energy(op) -> float:
    if op.n <= 1024:
        return float(sla.eigvalsh(op.toarray(), subset_by_index=[0, 0])[0])
    return smallest_eigenvalue(op)[0].value


def _ground_energy_dense(h0, w, t) -> float:
    return float(sla.eigvalsh(h0 + t * w, subset_by_index=[0, 0])[0])


def monotonicity_check(config: Configuration, t_grid=None, tolerance: float = 1e-10) -> MechanismReport:
    """Bottom eigenvalue of the interpolating family must not decrease in t."""
    t_grid = np.linspace(0.0, 1.0, 21) if t_grid is None else np.asarray(t_grid, float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t grid must be strictly increasing")
    energies = np.array([ground_energy(perturbation_family(config, float(t))) for t in t_grid])
    drops = energies[:-1] - energies[1:]
    violation = max(0.0, float(drops.max())) if drops.size else 0.0
    return _report("monotonicity", violation, tolerance,
                   {"t_grid": t_grid, **config.geometry.to_dict(), "seed": config.seed},
                   {"energies": energies})


def linearization_check(config: Configuration, t_values=None, order_window=(1.8, 2.2),
                        degenerate_floor: float = 1e-14) -> MechanismReport:
    """Order of ``E(t) - t E'(0)`` at small ``t`` and the implied constant.

    Violation is the distance of the fitted log-log order from
    ``order_window``; ``beta_hat = max residual / (t^2 |box|^(2/d))``.
    """
    geometry = config.geometry
    t_values = np.geomspace(1e-4, 1e-2, 9) if t_values is None else np.asarray(t_values, float)
    slope0 = slope_at_zero(config)
    h0, w = perturbation_matrices(config)
    energies = np.array([_ground_energy_dense(h0, w, t) for t in t_values])
    residual = np.abs(energies - t_values * slope0)
    vol = geometry.n_vertices ** (2.0 / geometry.d)
    beta_hat = float(np.max(residual / (t_values ** 2 * vol)))
    params = {"t_values": t_values, **geometry.to_dict(), "seed": config.seed}
    if residual.max() < degenerate_floor:
        return _report("linearization", 0.0, 0.0, params,
                       {"trivial": True, "beta_hat": beta_hat, "residual": residual,
                        "slope_at_zero": slope0})
    order = stats.linregress(np.log(t_values), np.log(np.maximum(residual, 1e-300))).slope
    lo, hi = order_window
    violation = max(lo - order, order - hi, 0.0)
    return _report("linearization", violation, 0.0, params,
                   {"trivial": False, "order": float(order), "beta_hat": beta_hat,
                    "residual": residual, "slope_at_zero": slope0})


def slope_finite_difference(config: Configuration, h: float = 1e-5) -> float:
    """Central difference of the bottom eigenvalue of ``H0 + t W`` at ``t = 0``.

    ``t = -h`` lies outside the physical family; the affine matrix is formed
    directly.
    """
    h0, w = perturbation_matrices(config)
    return (_ground_energy_dense(h0, w, h) - _ground_energy_dense(h0, w, -h)) / (2 * h)


def slope_large_deviation(geometry: BoxGeometry, p: float, alpha: float, samples: int,
                          master_seed: int, side_list) -> MechanismReport:
    """Frequency of ``{slope at zero <= alpha}`` for growing free cubes.

    The slope is ``2 (#closed edges) / |box|``, evaluated on ``samples``
    Bernoulli configurations per side.  Passes iff ``ln frequency`` does not
    increase with the volume among sides with a nonzero frequency.
    """
    if not 0.0 <= alpha:
        raise ValueError("alpha must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    d = geometry.d
    sides = sorted(int(s) for s in side_list)
    freq, exact, volumes = [], [], []
    for side in sides:
        g = BoxGeometry(d, side)
        rng = np.random.default_rng(split_seed(master_seed, side))
        hits = 0
        remaining = samples
        while remaining:
            batch = min(remaining, max(1, 2_000_000 // max(g.n_edges, 1)))
            closed = (rng.random((batch, g.n_edges)) >= p).sum(axis=1)
            hits += int(np.count_nonzero(2.0 * closed / g.n_vertices <= alpha))
            remaining -= batch
        kmax = math.floor(alpha * g.n_vertices / 2.0 + 1e-12)
        freq.append(hits / samples)
        exact.append(float(stats.binom.cdf(kmax, g.n_edges, 1.0 - p)))
        volumes.append(g.n_vertices)
    freq = np.array(freq)
    nz = freq > 0
    logs = np.log(freq[nz])
    increases = np.diff(logs)
    violation = max(0.0, float(increases.max())) if increases.size else 0.0
    return _report("slope_large_deviation", violation, 0.0,
                   {"d": d, "p": p, "alpha": alpha, "samples": samples,
                    "master_seed": master_seed, "sides": sides},
                   {"volumes": volumes, "frequency": freq, "exact_probability": exact,
                    "vacuous": bool(nz.sum() <= 1), "nonzero_sides": int(nz.sum())})


def implication_check(configs, alpha: float, beta_hat: float) -> MechanismReport:
    """Premise ``E(t_E) <= E`` must force ``slope at zero <= alpha``.

    For a cube of side ``l``: ``E = alpha^2 / (4 beta_hat l^2)`` and
    ``t_E = alpha / (2 beta_hat l^2)``, so the side equals the upper end of
    the admissible range.  Any configuration distribution is admissible
    since the implication is deterministic.
    """
    if alpha <= 0 or beta_hat <= 0:
        raise ValueError("alpha and beta_hat must be positive")
    premise = violations = trivial = 0
    worst = 0.0
    side = None
    for config in configs:
        g = config.geometry
        side = g.side
        scale = g.n_vertices ** (2.0 / g.d)
        E = alpha ** 2 / (4.0 * beta_hat * scale)
        t_E = alpha / (2.0 * beta_hat * scale)
        if not 0 < t_E <= 1:
            raise ValueError(f"t_E = {t_E} outside ]0, 1]; beta_hat too small")
        energy = ground_energy(perturbation_family(config, t_E))
        if energy <= E:
            premise += 1
            slope = slope_at_zero(config)
            trivial += config.n_open == g.n_edges
            if slope > alpha:
                violations += 1
                worst = max(worst, slope - alpha)
    return _report("implication", worst, 0.0,
                   {"alpha": alpha, "beta_hat": beta_hat, "side": side},
                   {"premise_hits": premise, "trivial_hits": int(trivial),
                    "violating_configs": violations})


# --- Tauberian machinery -----------------------------------------------------

def power_measure_transform(delta: float, t: float) -> float:
    """``int_0^inf exp(-E t) dmu(E)`` for ``mu([0, E]) = E^delta``, by quadrature
    of ``t int exp(-E t) E^delta dE``."""
    val, _ = integrate.quad(lambda E: math.exp(-E * t) * E ** delta, 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return t * val


def heaviside_inequality_check(n: int = 10_000, seed: int = 0,
                               tolerance: float = 1e-15) -> MechanismReport:
    """``exp(-tau x) - exp(-(tau-1)) exp(-x) <= Theta(1-x) <= exp(1-x)``
    for ``x >= 0``, ``tau >= 1``, with ``Theta(0) = 1``."""
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.exponential(2.0, n - 3), [0.0, 1.0, 1.0 - 1e-12]])
    tau = np.concatenate([1.0 + rng.exponential(5.0, n - 3), [1.0, 3.0, 7.0]])
    theta = (x <= 1.0).astype(float)
    lower = np.exp(-tau * x) - np.exp(-(tau - 1.0)) * np.exp(-x)
    upper = np.exp(1.0 - x)
    viol = np.maximum(lower - theta, theta - upper)
    count = int(np.count_nonzero(viol > tolerance))
    return _report("heaviside_inequality", float(count), 0.0,
                   {"n": n, "seed": seed, "tolerance": tolerance},
                   {"max_excess": float(viol.max())})


def tauberian_check(delta: float, t0: float, n_t: int = 60, n_E: int = 200,
                    span: float = 1e4) -> MechanismReport:
    """Transfer of two-sided Laplace bounds to the distribution function.

    For ``mu([0, E]) = E^delta``: measure ``c_l, c_u`` from
    ``mu~(t) t^delta`` on ``[t0, span t0]``, form ``C_u = e c_u`` and
    ``C_l = max_{tau >= 1} (c_l tau^-delta - exp(1 - tau) c_u)`` and check
    ``C_l E^delta <= mu([0, E]) <= C_u E^delta`` for ``E`` in
    ``[1/(span t0), 1/t0]``.
    The violation is the largest relative breach; also returned are the
    Gamma-function error of the transform and its fitted exponent.
    """
    if delta <= 0 or t0 <= 0:
        raise ValueError("delta and t0 must be positive")
    ts = np.geomspace(t0, span * t0, n_t)
    mt = np.array([power_measure_transform(delta, t) for t in ts])
    gamma_err = float(np.max(np.abs(mt * ts ** delta / special.gamma(delta + 1.0) - 1.0)))
    scaled = mt * ts ** delta
    c_l, c_u = float(scaled.min()), float(scaled.max())
    C_u = math.e * c_u
    taus = 1.0 + np.linspace(0.0, 50.0, 50001)
    C_l = float(np.max(c_l * taus ** (-delta) - np.exp(1.0 - taus) * c_u))
    Es = np.geomspace(1.0 / (span * t0), 1.0 / t0, n_E)
    mu = Es ** delta
    breach = np.maximum(C_l * Es ** delta - mu, mu - C_u * Es ** delta) / mu
    fit = stats.linregress(np.log(ts), np.log(mt))
    violation = max(0.0, float(breach.max()))
    if C_l <= 0:
        violation = max(violation, -C_l + 1.0)
    return _report("tauberian", violation, 0.0,
                   {"delta": delta, "t0": t0},
                   {"c_l": c_l, "c_u": c_u, "C_l": C_l, "C_u": C_u,
                    "gamma_relative_error": gamma_err, "transform_exponent": float(fit.slope)})


# --- finite clusters ---------------------------------------------------------

def finite_cluster_tail_check(geometry: BoxGeometry, p: float, E_grid, samples: int,
                              master_seed: int, jobs: int = 1) -> MechanismReport:
    """Finite-cluster IDS increment versus the large-finite-cluster fraction.

    Per sample and energy: ``N_fin(E) - N_fin(0)`` must not exceed the
    fraction of vertices in non-percolating clusters of size
    ``>= (d E)^(-1/2)``.
    """
    from .ids import _run  # shares the per-sample worker
    from .operators import BoundaryCondition, RestrictionScheme

    E_grid = np.asarray(E_grid, dtype=float)
    if np.any(E_grid <= 0):
        raise ValueError("energies must be positive")
    grid = np.concatenate([[0.0], E_grid])
    rows = _run(geometry, p, master_seed, BoundaryCondition.NEUMANN,
                RestrictionScheme.GRAPH_RESTRICTION, grid, samples, ("finite", "stats"), jobs)
    n = geometry.n_vertices
    thresholds = (geometry.d * E_grid) ** -0.5
    lhs = np.array([(r["finite"][1:] - r["finite"][0]) / n for r in rows])
    rhs = np.array([[r["finite_sizes"][r["finite_sizes"] >= th].sum() / n for th in thresholds]
                    for r in rows])
    margin = rhs - lhs
    violation = max(0.0, float(-margin.min()))
    return _report("finite_cluster_tail", violation, 0.0,
                   {**geometry.to_dict(), "p": p, "E_grid": E_grid, "samples": samples,
                    "master_seed": master_seed},
                   {"worst_margin": float(margin.min()),
                    "violations": int(np.count_nonzero(margin < 0)),
                    "excluded": int(sum(not r["has_proxy"] for r in rows)),
                    "mean_lhs": lhs.mean(axis=0), "mean_rhs": rhs.mean(axis=0)})
