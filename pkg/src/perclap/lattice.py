"""
Boxes in Z^d, canonical edge indexing, Bernoulli bond sampling and clusters.

Vertices of a box of side ``L`` are numbered row-major: the tuple
``(x_0, ..., x_{d-1})`` maps to ``sum_k x_k * L**(d-1-k)``.  Edges are
enumerated axis-major, then by base vertex in row-major order, and each
unordered pair appears exactly once.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from numba import njit

TOPOLOGIES = ("free", "periodic")


@dataclass(frozen=True)
class BoxGeometry:
    """A box ``{0..L-1}^d`` with free or periodic (torus) boundaries."""

    d: int
    side: int
    topology: str = "free"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.side) != self.side or self.side < 1:
            raise ValueError(f"side must be an integer >= 1, got {self.side!r}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "side", int(self.side))

    @property
    def L(self) -> int:
        return self.side

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic"

    @property
    def n_vertices(self) -> int:
        return self.side ** self.d

    @property
    def n_edges(self) -> int:
        L, d = self.side, self.d
        if self.periodic and L >= 3:
            return d * L ** d
        return d * L ** (d - 1) * (L - 1)

    def strides(self) -> np.ndarray:
        return self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)

    def coords(self) -> np.ndarray:
        """Integer coordinates, shape ``(n_vertices, d)``."""
        idx = np.arange(self.n_vertices, dtype=np.int64)
        return (idx[:, None] // self.strides()[None, :]) % self.side

    def index(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.d,) or np.any(x < 0) or np.any(x >= self.side):
            raise ValueError(f"{x.tolist()} is not a vertex of {self}")
        return int(x @ self.strides())

    def boundary_degree(self) -> np.ndarray:
        """Number of lattice edges from each vertex that leave the box."""
        if self.periodic:
            return np.zeros(self.n_vertices, dtype=np.int64)
        c = self.coords()
        return (c == 0).sum(axis=1) + (c == self.side - 1).sum(axis=1)

    def origin(self) -> int:
        """Reference vertex: the centre of a free box, vertex 0 on a torus."""
        if self.periodic:
            return 0
        return self.index([self.side // 2] * self.d)

    def to_dict(self) -> dict:
        return {"d": self.d, "L": self.side, "topology": self.topology}


@functools.lru_cache(maxsize=32)
def _edge_arrays(geometry: BoxGeometry):
    L, d = geometry.side, geometry.d
    coords = geometry.coords()
    strides = geometry.strides()
    us, vs, axes = [], [], []
    for axis in range(d):
        x = coords[:, axis]
        if geometry.periodic and L >= 3:
            base = np.arange(geometry.n_vertices, dtype=np.int64)
            step = np.where(x == L - 1, -(L - 1), 1) * strides[axis]
        else:
            base = np.flatnonzero(x < L - 1).astype(np.int64)
            step = strides[axis]
        us.append(base)
        vs.append(base + (step if np.isscalar(step) else step[base]))
        axes.append(np.full(base.size, axis, dtype=np.int64))
    u = np.concatenate(us)
    v = np.concatenate(vs)
    a = np.concatenate(axes)
    for arr in (u, v, a):
        arr.setflags(write=False)
    return u, v, a


def edge_arrays(geometry: BoxGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical edges as arrays ``(u, v, axis)`` with ``v = u + e_axis`` (mod L)."""
    return _edge_arrays(geometry)


def enumerate_edges(geometry: BoxGeometry) -> list[tuple[int, int]]:
    u, v, _ = edge_arrays(geometry)
    return list(zip(u.tolist(), v.tolist()))


@functools.lru_cache(maxsize=32)
def _direction_tables(geometry: BoxGeometry):
    """Neighbour and edge-index tables, shape ``(n, 2d)``; -1 marks no edge.

    Direction ``2k`` is ``+e_k`` and ``2k+1`` is ``-e_k``.
    """
    n, d = geometry.n_vertices, geometry.d
    nbr = np.full((n, 2 * d), -1, dtype=np.int64)
    eid = np.full((n, 2 * d), -1, dtype=np.int64)
    u, v, a = edge_arrays(geometry)
    ids = np.arange(u.size, dtype=np.int64)
    nbr[u, 2 * a] = v
    eid[u, 2 * a] = ids
    nbr[v, 2 * a + 1] = u
    eid[v, 2 * a + 1] = ids
    for arr in (nbr, eid):
        arr.setflags(write=False)
    return nbr, eid


def direction_tables(geometry: BoxGeometry) -> tuple[np.ndarray, np.ndarray]:
    return _direction_tables(geometry)


# --- seeds ---------------------------------------------------------------

def split_seed(master_seed: int, index: int) -> int:
    """Counter-based sub-seed for ensemble member ``index``.

    Depends only on ``(master_seed, index)``, so an ensemble is the same
    whatever the number of workers or the order they finish in.
    """
    if master_seed < 0 or index < 0:
        raise ValueError("seeds and indices must be non-negative")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --- configurations --------------------------------------------------------

@dataclass(eq=False)
class Configuration:
    """One percolation realization: geometry plus per-edge occupation."""

    geometry: BoxGeometry
    occupation: np.ndarray
    p: float
    seed: int

    def __post_init__(self):
        occ = np.asarray(self.occupation, dtype=bool)
        if occ.shape != (self.geometry.n_edges,):
            raise ValueError(
                f"occupation has length {occ.size}, geometry has {self.geometry.n_edges} edges")
        self.occupation = occ

    @property
    def n_open(self) -> int:
        return int(self.occupation.sum())

    def open_edges(self) -> tuple[np.ndarray, np.ndarray]:
        u, v, _ = edge_arrays(self.geometry)
        return u[self.occupation], v[self.occupation]

    def degrees(self) -> np.ndarray:
        """In-box open degree of every vertex."""
        u, v = self.open_edges()
        n = self.geometry.n_vertices
        return np.bincount(u, minlength=n) + np.bincount(v, minlength=n)

    def to_json(self) -> dict:
        bits = np.packbits(self.occupation, bitorder="big")
        return {
            **self.geometry.to_dict(),
            "p": float(self.p),
            "seed": int(self.seed),
            "occupation": bits.tobytes().hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Configuration":
        geometry = BoxGeometry(data["d"], data["L"], data["topology"])
        raw = np.frombuffer(bytes.fromhex(data["occupation"]), dtype=np.uint8)
        occ = np.unpackbits(raw, bitorder="big", count=geometry.n_edges).astype(bool)
        return cls(geometry, occ, float(data["p"]), int(data["seed"]))


def sample_configuration(geometry: BoxGeometry, p: float, seed: int) -> Configuration:
    """Open every edge independently with probability ``p``.

    Edge ``k`` is open iff the ``k``-th uniform draw of the seeded stream is
    below ``p``, so configurations with a common seed are monotone in ``p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"bond probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(int(seed))
    occ = rng.random(geometry.n_edges) < p
    return Configuration(geometry, occ, float(p), int(seed))


def full_configuration(geometry: BoxGeometry, open_: bool = True) -> Configuration:
    occ = np.full(geometry.n_edges, bool(open_))
    return Configuration(geometry, occ, 1.0 if open_ else 0.0, 0)


def configuration_from_edges(geometry: BoxGeometry, pairs) -> Configuration:
    """Configuration whose open edges are exactly ``pairs`` (unordered)."""
    u, v, _ = edge_arrays(geometry)
    lookup = {}
    for k, (a, b) in enumerate(zip(u.tolist(), v.tolist())):
        lookup[(a, b)] = k
        lookup[(b, a)] = k
    occ = np.zeros(geometry.n_edges, dtype=bool)
    for a, b in pairs:
        try:
            occ[lookup[(int(a), int(b))]] = True
        except KeyError:
            raise ValueError(f"({a}, {b}) is not an edge of {geometry}") from None
    return Configuration(geometry, occ, float("nan"), 0)


# --- clusters --------------------------------------------------------------

@njit(cache=True)
def _find(parent, disp, x):
    # returns root; disp[x] becomes the displacement of x relative to root
    root = x
    while parent[root] != root:
        root = parent[root]
    # second pass: compress, accumulating displacements from the top down
    path_len = 0
    y = x
    while parent[y] != y:
        path_len += 1
        y = parent[y]
    stack = np.empty(path_len, dtype=np.int64)
    y = x
    for i in range(path_len):
        stack[i] = y
        y = parent[y]
    for i in range(path_len - 2, -1, -1):
        node = stack[i]
        up = parent[node]
        if up != root:
            disp[node] += disp[up]
        parent[node] = root
    return root


@njit(cache=True)
def _union_find(n, d, u, v, axis):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    disp = np.zeros((n, d), dtype=np.int64)
    wraps = np.zeros(n, dtype=np.bool_)
    for k in range(u.size):
        a, b, ax = u[k], v[k], axis[k]
        ra = _find(parent, disp, a)
        rb = _find(parent, disp, b)
        # position(b) - position(a) must equal +e_ax along this edge
        if ra == rb:
            for j in range(d):
                step = 1 if j == ax else 0
                if disp[a, j] + step - disp[b, j] != 0:
                    wraps[ra] = True
            continue
        if size[ra] < size[rb]:
            # attach ra below rb: pos(ra) - pos(rb) = disp[b] - e_ax - disp[a]
            for j in range(d):
                step = 1 if j == ax else 0
                disp[ra, j] = disp[b, j] - step - disp[a, j]
            parent[ra] = rb
            size[rb] += size[ra]
            wraps[rb] = wraps[rb] or wraps[ra]
        else:
            for j in range(d):
                step = 1 if j == ax else 0
                disp[rb, j] = disp[a, j] + step - disp[b, j]
            parent[rb] = ra
            size[ra] += size[rb]
            wraps[ra] = wraps[ra] or wraps[rb]
    roots = np.empty(n, dtype=np.int64)
    for x in range(n):
        roots[x] = _find(parent, disp, x)
    return roots, wraps


@dataclass(eq=False)
class ClusterDecomposition:
    """Connected components of the open-edge graph inside the box.

    Cluster ids are ``0..component_count-1`` ordered by smallest member
    vertex.  ``spanning_ids`` holds clusters touching two opposite faces
    (free box) or winding around the torus (periodic box).
    """

    labels: np.ndarray
    sizes: np.ndarray
    component_count: int
    isolated_count: int
    largest_id: int
    spanning_ids: frozenset
    geometry: BoxGeometry = field(repr=False)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)


def _canonical_labels(roots: np.ndarray) -> np.ndarray:
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


def cluster_decomposition(config: Configuration) -> ClusterDecomposition:
    geometry = config.geometry
    n = geometry.n_vertices
    u, v, a = edge_arrays(geometry)
    occ = config.occupation
    roots, wraps = _union_find(n, geometry.d, u[occ], v[occ], a[occ])
    labels = _canonical_labels(roots)
    sizes = np.bincount(labels)
    count = int(sizes.size)
    largest = int(np.argmax(sizes))  # ties: smallest id

    if geometry.periodic:
        spanning = set(np.unique(labels[wraps[roots] & (roots == np.arange(n))]).tolist())
    else:
        spanning = set()
        if geometry.side >= 2:
            c = geometry.coords()
            for axis in range(geometry.d):
                low = np.unique(labels[c[:, axis] == 0])
                high = np.unique(labels[c[:, axis] == geometry.side - 1])
                spanning.update(np.intersect1d(low, high).tolist())
    return ClusterDecomposition(
        labels=labels,
        sizes=sizes,
        component_count=count,
        isolated_count=int((sizes == 1).sum()),
        largest_id=largest,
        spanning_ids=frozenset(int(s) for s in spanning),
        geometry=geometry,
    )


def percolating_proxy(decomp: ClusterDecomposition, strict: bool = True) -> int | None:
    """Finite-box stand-in for the infinite cluster.

    The largest spanning (free) or wrapping (periodic) cluster.  Without
    one, ``strict`` returns ``None``; otherwise the largest cluster is used.
    """
    if decomp.spanning_ids:
        ids = sorted(decomp.spanning_ids)
        return max(ids, key=lambda i: (decomp.sizes[i], -i))
    return None if strict else decomp.largest_id


def cluster_statistics(decomp: ClusterDecomposition) -> dict:
    n = decomp.labels.size
    sizes, counts = np.unique(decomp.sizes, return_counts=True)
    return {
        "component_density": decomp.component_count / n,
        "isolated_density": decomp.isolated_count / n,
        "size_histogram": {int(s): int(c) for s, c in zip(sizes, counts)},
        "giant_fraction": float(decomp.sizes[decomp.largest_id]) / n,
    }
