"""
Finite-volume Laplacians on percolation configurations.

Three boundary conditions at non-fully-connected vertices:

* Neumann          ``D - A``
* pseudo-Dirichlet ``2d - A``
* Dirichlet        ``D - A + 2 (2d - D) = 4d - D - A``

``D`` is the in-box open degree and ``A`` the in-box open adjacency.  The
``neumann_boundary`` scheme replaces the pseudo-Dirichlet diagonal by
``2d - b(x)``, with ``b(x)`` the number of lattice edges leaving the box at
``x``, which puts Neumann conditions on the box surface instead.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lattice import BoxGeometry, Configuration, edge_arrays, full_configuration


class BoundaryCondition(str, enum.Enum):
    NEUMANN = "N"
    PSEUDO_DIRICHLET = "Dtilde"
    DIRICHLET = "D"

    @classmethod
    def parse(cls, value) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "n": cls.NEUMANN, "neumann": cls.NEUMANN,
            "dtilde": cls.PSEUDO_DIRICHLET, "dt": cls.PSEUDO_DIRICHLET,
            "pseudo_dirichlet": cls.PSEUDO_DIRICHLET,
            "d": cls.DIRICHLET, "dirichlet": cls.DIRICHLET,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown boundary condition {value!r}") from None


class RestrictionScheme(str, enum.Enum):
    GRAPH_RESTRICTION = "graph_restriction"
    NEUMANN_BOUNDARY = "neumann_boundary"

    @classmethod
    def parse(cls, value) -> "RestrictionScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown restriction scheme {value!r}") from None


@dataclass(eq=False)
class SparseSymmetricOperator:
    """Real symmetric matrix stored as diagonal plus strict upper triangle.

    ``rows[k] < cols[k]`` and ``values[k]`` is the entry at both
    ``(rows[k], cols[k])`` and ``(cols[k], rows[k])``.  ``d`` is the lattice
    dimension the operator lives on; it fixes the ``1/(2d)`` walk time scale.
    Treated as immutable once built.
    """

    diagonal: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    d: int = 1
    label: str = ""
    _csr: sp.csr_matrix | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.diagonal = np.asarray(self.diagonal, dtype=float)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if self.rows.size and (np.any(self.rows >= self.cols) or self.cols.max() >= self.n
                               or self.rows.min() < 0):
            raise ValueError("off-diagonal entries must satisfy 0 <= i < j < n")
        if not (np.all(np.isfinite(self.diagonal)) and np.all(np.isfinite(self.values))):
            raise ValueError("operator entries must be finite")

    @property
    def n(self) -> int:
        return self.diagonal.size

    def tocsr(self) -> sp.csr_matrix:
        if self._csr is None:
            n = self.n
            r = np.concatenate([np.arange(n), self.rows, self.cols])
            c = np.concatenate([np.arange(n), self.cols, self.rows])
            v = np.concatenate([self.diagonal, self.values, self.values])
            m = sp.csr_matrix((v, (r, c)), shape=(n, n))
            m.sort_indices()
            self._csr = m
        return self._csr

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()

    def norm_bound(self) -> float:
        """Max absolute row sum, an upper bound on the spectral radius."""
        if self.n == 0:
            return 0.0
        m = self.tocsr()
        return float(np.abs(m).sum(axis=1).max())

    def restrict(self, vertices) -> "SparseSymmetricOperator":
        """Principal submatrix on ``vertices`` (sorted, re-indexed from 0)."""
        vertices = np.unique(np.asarray(vertices, dtype=np.int64))
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[vertices] = np.arange(vertices.size)
        keep = (pos[self.rows] >= 0) & (pos[self.cols] >= 0)
        return SparseSymmetricOperator(
            self.diagonal[vertices], pos[self.rows[keep]], pos[self.cols[keep]],
            self.values[keep], d=self.d, label=self.label)

    def to_triplets(self) -> str:
        """All nonzero entries, one ``i j value`` line each, 0-based, sorted."""
        m = self.tocsr().tocoo()
        keep = m.data != 0
        order = np.lexsort((m.col[keep], m.row[keep]))
        r, c, v = m.row[keep][order], m.col[keep][order], m.data[keep][order]
        return "".join(f"{i} {j} {x!r}\n" for i, j, x in zip(r.tolist(), c.tolist(), v.tolist()))

    @classmethod
    def from_triplets(cls, text: str, n: int, d: int = 1) -> "SparseSymmetricOperator":
        diag = np.zeros(n)
        upper = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            i, j, x = line.split()
            i, j, x = int(i), int(j), float(x)
            if i == j:
                diag[i] = x
            elif i < j:
                upper[(i, j)] = x
            elif upper.setdefault((j, i), x) != x:
                raise ValueError(f"entry ({i}, {j}) breaks symmetry")
        keys = sorted(upper)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        vals = np.array([upper[k] for k in keys], dtype=float)
        return cls(diag, rows, cols, vals, d=d)


def _sorted_pairs(u, v):
    return np.minimum(u, v), np.maximum(u, v)


def assemble_laplacian(config: Configuration, bc="N",
                       scheme="graph_restriction") -> SparseSymmetricOperator:
    """Assemble the finite-volume Laplacian of ``config``.

    Parameters
    ----------
    config : Configuration
    bc : BoundaryCondition or str
        ``"N"``, ``"Dtilde"`` or ``"D"``.
    scheme : RestrictionScheme or str
        ``graph_restriction`` uses in-box degrees for every ``bc``;
        ``neumann_boundary`` is only defined for the pseudo-Dirichlet case.
    """
    bc = BoundaryCondition.parse(bc)
    scheme = RestrictionScheme.parse(scheme)
    geometry = config.geometry
    d = geometry.d
    u, v = config.open_edges()
    rows, cols = _sorted_pairs(u, v)
    values = -np.ones(rows.size)

    if scheme is RestrictionScheme.NEUMANN_BOUNDARY:
        if bc is not BoundaryCondition.PSEUDO_DIRICHLET:
            raise ValueError(
                f"the neumann_boundary scheme applies only to the pseudo-Dirichlet "
                f"Laplacian, not to bc={bc.value!r}")
        diag = (2 * d - geometry.boundary_degree()).astype(float)
    else:
        deg = config.degrees().astype(float)
        if bc is BoundaryCondition.NEUMANN:
            diag = deg
        elif bc is BoundaryCondition.PSEUDO_DIRICHLET:
            diag = np.full(geometry.n_vertices, 2.0 * d)
        else:
            diag = 4.0 * d - deg
    return SparseSymmetricOperator(diag, rows, cols, values, d=d,
                                   label=f"{bc.value}/{scheme.value}")


def _require_free(geometry: BoxGeometry, what: str):
    if geometry.periodic:
        raise ValueError(f"{what} is defined on free boxes only")


def full_cube_operator(geometry: BoxGeometry) -> SparseSymmetricOperator:
    """Neumann Laplacian of the fully connected box (all edges open)."""
    _require_free(geometry, "the full-cube operator")
    return assemble_laplacian(full_configuration(geometry), "Dtilde", "neumann_boundary")


def perturbation_family(config: Configuration, t: float) -> SparseSymmetricOperator:
    """``H0 + t W`` with ``W = H - H0`` interpolating full cube -> ``config``.

    ``W`` has zero diagonal and ``+1`` on every closed in-box edge, so the
    closed edges carry ``-(1 - t)`` and open edges ``-1``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    geometry = config.geometry
    _require_free(geometry, "the perturbation family")
    u, v, _ = edge_arrays(geometry)
    rows, cols = _sorted_pairs(u, v)
    values = np.where(config.occupation, -1.0, -(1.0 - t))
    keep = values != 0.0
    diag = (2 * geometry.d - geometry.boundary_degree()).astype(float)
    return SparseSymmetricOperator(diag, rows[keep], cols[keep], values[keep],
                                   d=geometry.d, label=f"H(t={t!r})")


def perturbation_matrices(config: Configuration) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(H0, W)`` pair, convenient for small-volume eigenvalue scans."""
    _require_free(config.geometry, "the perturbation family")
    h0 = full_cube_operator(config.geometry).toarray()
    h1 = assemble_laplacian(config, "Dtilde", "neumann_boundary").toarray()
    return h0, h1 - h0


def slope_at_zero(config: Configuration) -> float:
    """Derivative at t=0 of the lowest eigenvalue of the perturbation family.

    The ground state of ``H0`` is the constant vector, so the derivative is
    its expectation of ``W``: twice the number of closed in-box edges per
    vertex.
    """
    _require_free(config.geometry, "the Feynman-Hellmann slope")
    closed = config.geometry.n_edges - config.n_open
    return 2.0 * closed / config.geometry.n_vertices


def apply(op: SparseSymmetricOperator, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != op.n:
        raise ValueError(f"vector of length {phi.shape[0]} does not match operator dimension {op.n}")
    return op.tocsr() @ phi


def staggered_sign(geometry: BoxGeometry) -> np.ndarray:
    """``(-1)^(x_0 + ... + x_{d-1})`` on every vertex."""
    return np.where(geometry.coords().sum(axis=1) % 2 == 0, 1.0, -1.0)


@functools.lru_cache(maxsize=8)
def _cached_sign(geometry: BoxGeometry) -> np.ndarray:
    return staggered_sign(geometry)


def involution(op: SparseSymmetricOperator, geometry: BoxGeometry) -> SparseSymmetricOperator:
    """``U op U`` with ``U`` the staggered-sign unitary; flips off-diagonal signs
    across edges joining opposite parities."""
    s = _cached_sign(geometry)
    return SparseSymmetricOperator(op.diagonal.copy(), op.rows, op.cols,
                                   op.values * s[op.rows] * s[op.cols], d=op.d)
