"""
Eigenvalue machinery for the finite-volume operators.

``count_below`` is the workhorse for large volumes: the number of
eigenvalues ``<= E`` equals the number of negative pivots of a symmetric
LDL^T-type factorization of ``M - E`` (Sylvester's law of inertia).  The
factorization is SuperLU with a symmetric fill-reducing ordering and
diagonal pivoting only, so ``M - E = P^T L U P`` with ``U``'s diagonal
carrying the inertia.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .lattice import BoxGeometry
from .operators import SparseSymmetricOperator, full_cube_operator

DENSE_CAP = 4096
DENSE_BLOCK = 256
DENSE_FALLBACK = 1024
HEAT_DENSE_MAX = 512
SHIFT_REL = 1e-12
BACKWARD_FACTOR = 8.0
EXACT_SHIFT = 1e-10
MAX_SHIFT_RETRIES = 8
_GOLDEN = 0.5 * (1.0 + 5.0 ** 0.5)


class FactorizationError(RuntimeError):
    """Inertia factorization kept failing; ``shifts`` lists the attempts."""

    def __init__(self, message, shifts):
        super().__init__(f"{message}; attempted shifts {shifts}")
        self.shifts = list(shifts)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message}; last residual {residual:.3e}")
        self.residual = residual


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray | None
    method: str
    tolerance: float

    def to_csv(self) -> str:
        if self.eigenvalues is None:
            raise ValueError("counted spectra carry no eigenvalue list")
        return "".join(f"{x!r}\n" for x in self.eigenvalues.tolist())


@dataclass
class ExtremalPair:
    value: float
    vector: np.ndarray
    residual: float


def full_spectrum(op: SparseSymmetricOperator, dense_cap: int = DENSE_CAP) -> SpectrumResult:
    if op.n > dense_cap:
        raise ValueError(
            f"dimension {op.n} exceeds the dense cap {dense_cap}; use count_below")
    if op.n == 0:
        return SpectrumResult(np.empty(0), "dense", 0.0)
    w = sla.eigvalsh(op.toarray())
    return SpectrumResult(np.sort(w), "dense", 1e-10 * max(op.norm_bound(), 1.0))


# --- counting ----------------------------------------------------------------

def _components(op: SparseSymmetricOperator):
    if op.rows.size == 0:
        return op.n, np.arange(op.n)
    graph = sp.coo_matrix((np.ones(op.rows.size), (op.rows, op.cols)), shape=(op.n, op.n))
    return csgraph.connected_components(graph, directed=False)


def _block_csc(op: SparseSymmetricOperator, verts: np.ndarray):
    return op.restrict(verts).tocsr().tocsc()


def _negative_pivots(a_csc: sp.csc_matrix, shift: float, scale: float):
    """Negative-pivot count of ``a - shift``, or ``None`` if it cannot be trusted.

    Without off-diagonal pivoting the factors may grow.  The computed inertia
    is exact for ``a - shift + F`` with ``|F| <~ eps |L||U|``; the count is
    accepted only when that bound is well inside the distance to the
    unshifted threshold, so an eigenvalue at the threshold cannot cross.
    """
    n = a_csc.shape[0]
    m = (a_csc - shift * sp.identity(n, format="csc")).tocsc()
    try:
        lu = spla.splu(m, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True, Equil=False))
    except RuntimeError:
        return None, np.inf
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None, np.inf
    piv = lu.U.diagonal()
    if not np.all(np.isfinite(piv)) or np.min(np.abs(piv)) == 0.0:
        return None, np.inf
    absL, absU = abs(lu.L), abs(lu.U)
    ones = np.ones(n)
    row = absL @ (absU @ ones)
    col = absU.T @ (absL.T @ ones)
    err = BACKWARD_FACTOR * np.finfo(float).eps * math.sqrt(row.max() * col.max())
    return int((piv < 0).sum()), err


def _count_sparse_block(a_csc, E, scale):
    """Certified negative-pivot count near ``E``; returns ``(count, shift)``."""
    # a fixed irrational multiple of the base step keeps integer thresholds
    # off exactly singular leading sub-blocks
    delta = _GOLDEN * SHIFT_REL * max(scale, abs(E), 1.0)
    shifts = []
    for _ in range(MAX_SHIFT_RETRIES):
        shifts.append(E + delta)
        count, err = _negative_pivots(a_csc, E + delta, scale)
        if count is not None and err <= 0.5 * delta:
            return count, delta
        grow = min(4.0 * err, 1e3 * delta) if math.isfinite(err) else 0.0
        delta = max(10.0 * delta, grow)
    raise FactorizationError("inertia factorization could not be certified", shifts)


class SpectralCounter:
    """Eigenvalue counting on one operator for many thresholds.

    Small connected blocks are diagonalized once; large blocks are counted
    by inertia for each threshold.  An eigenvalue exactly at ``E`` counts
    as ``<= E``.  ``vertices`` restricts to a union of connected blocks.
    """

    def __init__(self, op: SparseSymmetricOperator, dense_block: int = DENSE_BLOCK,
                 vertices=None, dense_cap: int = DENSE_FALLBACK):
        # tolerances scale with the whole operator so that counts on a vertex
        # subset add up exactly to counts on the full operator
        self.scale = max(op.norm_bound(), 1.0)
        if vertices is not None:
            op = op.restrict(vertices)
        self.n = op.n
        self.dense_cap = dense_cap
        self._dense: dict[int, np.ndarray] = {}
        ncomp, labels = _components(op)
        order = np.argsort(labels, kind="stable")
        bounds = np.flatnonzero(np.diff(labels[order])) + 1
        groups = np.split(order, bounds) if op.n else []
        small_eigs = []
        self.large = []
        by_size: dict[int, list[np.ndarray]] = {}
        for g in groups:
            if g.size <= dense_block:
                by_size.setdefault(g.size, []).append(g)
            else:
                self.large.append(_block_csc(op, g))
        dense = op.tocsr()
        for size, gs in by_size.items():
            if size == 1:
                small_eigs.append(op.diagonal[np.concatenate(gs)])
                continue
            idx = np.stack(gs)
            stack = np.stack([dense[g][:, g].toarray() for g in idx])
            small_eigs.append(np.linalg.eigvalsh(stack).ravel())
        self.small = np.sort(np.concatenate(small_eigs)) if small_eigs else np.empty(0)

    def count(self, E: float) -> int:
        if not math.isfinite(E):
            raise ValueError(f"threshold must be finite, got {E}")
        tol = SHIFT_REL * max(self.scale, abs(E), 1.0)
        total = int(np.searchsorted(self.small, E + tol, side="right"))
        for i, blk in enumerate(self.large):
            eigs = self._dense.get(i)
            if eigs is None:
                small_enough = blk.shape[0] <= self.dense_cap
                try:
                    count, delta = _count_sparse_block(blk, E, self.scale)
                except FactorizationError:
                    if not small_enough:
                        raise
                    count, delta = None, np.inf
                if delta <= EXACT_SHIFT * self.scale or not small_enough:
                    total += count
                    continue
                # certified only with a wide shift: diagonalize this block once
                eigs = self._dense[i] = sla.eigvalsh(blk.toarray())
            total += int(np.searchsorted(eigs, E + tol, side="right"))
        return total

    def count_many(self, energies) -> np.ndarray:
        return np.array([self.count(float(E)) for E in energies], dtype=np.int64)


def count_below(op: SparseSymmetricOperator, E: float, dense_block: int = DENSE_BLOCK) -> int:
    """Number of eigenvalues ``<= E`` via inertia of ``op - E``.

    The factorization is taken at ``E + delta``, starting from
    ``delta ~ 1e-12 * max(|op|, |E|, 1)``.  A factorization whose backward
    error bound is not below ``delta / 2`` is rejected and ``delta`` grows
    (at least tenfold), up to ``MAX_SHIFT_RETRIES`` attempts; blocks that
    never certify fall back to a dense solve when small enough.  Eigenvalues
    in ``]E, E + delta]`` may therefore be counted.
    """
    return SpectralCounter(op, dense_block).count(E)


def count_below_many(op: SparseSymmetricOperator, energies,
                     dense_block: int = DENSE_BLOCK) -> np.ndarray:
    return SpectralCounter(op, dense_block).count_many(energies)


# --- extremal eigenpairs -----------------------------------------------------

def _gershgorin_lower(op: SparseSymmetricOperator) -> float:
    if op.n == 0:
        return 0.0
    radius = np.zeros(op.n)
    np.add.at(radius, op.rows, np.abs(op.values))
    np.add.at(radius, op.cols, np.abs(op.values))
    return float(np.min(op.diagonal - radius))


def smallest_eigenvalue(op: SparseSymmetricOperator, k: int = 1, tol: float = 1e-8,
                        max_iter: int = 500) -> list[ExtremalPair]:
    """Lowest ``k`` (1 or 2) eigenpairs by shift-invert iteration.

    The shift sits just below the Gershgorin lower bound so ``op - sigma`` is
    positive definite.  Starts from the constant vector; the second pair is
    sought in the orthogonal complement of the first.  Full
    re-orthogonalized Lanczos on ``(op - sigma)^{-1}``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    n = op.n
    if n < k:
        raise ValueError(f"operator of dimension {n} has fewer than {k} eigenvalues")
    m = op.tocsr()
    if n <= 64:
        w, v = np.linalg.eigh(op.toarray())
        out = []
        for i in range(k):
            vec = v[:, i] * (1.0 if v[:, i].sum() >= 0 else -1.0)
            out.append(ExtremalPair(float(w[i]), vec, float(np.linalg.norm(m @ vec - w[i] * vec))))
        return out

    scale = max(op.norm_bound(), 1.0)
    sigma = _gershgorin_lower(op) - 1e-3 * scale
    lu = spla.splu((m - sigma * sp.identity(n, format="csr")).tocsc())
    rng = np.random.default_rng(0x5EED)
    pairs: list[ExtremalPair] = []
    for which in range(k):
        start = np.ones(n) if which == 0 else rng.standard_normal(n)
        pair = _lanczos_lowest(m, lu.solve, sigma, start, [p.vector for p in pairs],
                               tol, max_iter)
        pairs.append(pair)
    return pairs


def _lanczos_lowest(m, solve, sigma, start, deflate, tol, max_iter):
    n = start.size

    def project(x):
        for u in deflate:
            x = x - (u @ x) * u
        return x

    q = project(start.astype(float))
    q /= np.linalg.norm(q)
    basis = [q]
    alpha, beta = [], []
    residual = np.inf
    for it in range(min(max_iter, n)):
        w = project(solve(basis[-1]))
        a = basis[-1] @ w
        alpha.append(a)
        Q = np.array(basis)
        w = w - Q.T @ (Q @ w)
        w = w - Q.T @ (Q @ w)
        b = np.linalg.norm(w)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        theta, s = np.linalg.eigh(T)
        y = Q.T @ s[:, -1]
        lam = sigma + 1.0 / theta[-1]
        y /= np.linalg.norm(y)
        residual = float(np.linalg.norm(m @ y - lam * y))
        if residual <= tol * (1.0 + abs(lam)) or b < 1e-14:
            # Rayleigh quotient sharpens the value once the vector has settled
            lam = float(y @ (m @ y))
            residual = float(np.linalg.norm(m @ y - lam * y))
            if residual <= tol * (1.0 + abs(lam)):
                if y.sum() < 0:
                    y = -y
                return ExtremalPair(lam, y, residual)
            if b < 1e-14:
                break
        beta.append(b)
        basis.append(w / b)
    raise ConvergenceError("shift-invert Lanczos did not converge", residual)


def spectral_gap(geometry: BoxGeometry) -> float:
    """Second-lowest eigenvalue of the all-open Neumann cube operator."""
    if geometry.periodic:
        raise ValueError("the cube gap is defined on free boxes only")
    if geometry.n_vertices < 2:
        raise ValueError("a single vertex has no gap")
    op = full_cube_operator(geometry)
    if op.n <= DENSE_FALLBACK:
        return float(full_spectrum(op).eigenvalues[1])
    return smallest_eigenvalue(op, 2)[1].value


# --- heat kernel -------------------------------------------------------------

def _component_of(op: SparseSymmetricOperator, x: int) -> np.ndarray:
    _, labels = _components(op)
    return np.flatnonzero(labels == labels[x])


def _lanczos_expm_apply(m, v, tau, tol=1e-10, max_dim=600):
    """``exp(-tau m) v`` by Lanczos with full re-orthogonalization.

    Stops when the standard a-posteriori estimate
    ``|v| beta_j |e_j^T exp(-tau T_j) e_1|`` drops below ``tol``.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return np.zeros_like(v)
    Q = [v / beta0]
    alpha, beta = [], []
    for _ in range(min(max_dim, v.size)):
        w = m @ Q[-1]
        alpha.append(Q[-1] @ w)
        B = np.array(Q)
        w = w - B.T @ (B @ w)
        w = w - B.T @ (B @ w)
        b = np.linalg.norm(w)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        th, s = np.linalg.eigh(T)
        coef = s @ (np.exp(-tau * th) * s[0, :])
        if b < 1e-12 or beta0 * b * abs(coef[-1]) <= tol:
            return beta0 * (B.T @ coef)
        beta.append(b)
        Q.append(w / b)
    raise ConvergenceError("Lanczos exponential did not converge", beta0 * b * abs(coef[-1]))


def heat_kernel(op: SparseSymmetricOperator, x: int, t: float) -> np.ndarray:
    """Column ``exp(-t op/(2d)) delta_x`` as a full vector."""
    if t < 0:
        raise ValueError("time must be non-negative")
    if not 0 <= x < op.n:
        raise ValueError(f"vertex {x} outside operator of dimension {op.n}")
    out = np.zeros(op.n)
    if t == 0:
        out[x] = 1.0
        return out
    tau = t / (2.0 * op.d)
    comp = _component_of(op, x)
    sub = op.restrict(comp)
    local = int(np.searchsorted(comp, x))
    if sub.n <= HEAT_DENSE_MAX:
        w, v = np.linalg.eigh(sub.toarray())
        col = v @ (np.exp(-tau * w) * v[local, :])
    else:
        e = np.zeros(sub.n)
        e[local] = 1.0
        # sub-steps keep tau * |op| moderate, where the Lanczos error estimate
        # is reliable
        m = sub.tocsr()
        steps = max(1, math.ceil(tau * sub.norm_bound() / 10.0))
        col = e
        for _ in range(steps):
            col = _lanczos_expm_apply(m, col, tau / steps, tol=1e-11 / steps)
    out[comp] = col
    return out


def heat_kernel_diag(op: SparseSymmetricOperator, x: int, t: float) -> float:
    """``<delta_x, exp(-t op/(2d)) delta_x>``."""
    return float(heat_kernel(op, x, t)[x])
