"""
Continuous-time simple random walk on a percolation configuration.

At each vertex the walk waits an Exp(1) time, then proposes one of the
``2d`` lattice directions uniformly and moves iff that edge is open.  Off a
free box the proposal counts as a closed edge.  The generator is therefore
``Delta_N / (2d)`` of the in-box graph.

Each walk owns a splitmix64 counter stream keyed by ``(seed, walk index)``.
Draws are consumed in a fixed order (start vertex if drawn, then per event:
waiting time, direction), so results do not depend on how walks are batched
or scheduled.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._ensemble import ordered_map
from .ids import Z95, LaplaceCurve, mean_and_half_width
from .lattice import (BoxGeometry, Configuration, cluster_decomposition, direction_tables,
                      percolating_proxy, sample_configuration, split_seed)

CSV_SCHEMA_RETURN = "# perclap return-estimates v1"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _stream_start(seed, walk):
    return _mix(seed ^ _mix(np.uint64(walk) * _GAMMA + _GAMMA))


@njit(cache=True)
def _next_uniform(state):
    # returns (new state, u in [0, 1))
    state = state + _GAMMA
    return state, np.float64(_mix(state) >> _S11) * _TWO53


@njit(cache=True)
def _walk_kernel(nbr, open_dir, start, candidates, seed, first_walk, n_walks, times, out):
    two_d = nbr.shape[1]
    n_times = times.size
    for w in range(n_walks):
        state = _stream_start(seed, first_walk + w)
        if start >= 0:
            x = start
        else:
            state, u = _next_uniform(state)
            x = candidates[min(int(u * candidates.size), candidates.size - 1)]
        t = 0.0
        k = 0
        while k < n_times:
            state, u = _next_uniform(state)
            t += -np.log1p(-u)
            while k < n_times and times[k] < t:
                out[w, k] = x
                k += 1
            if k == n_times:
                break
            state, u = _next_uniform(state)
            direction = min(int(u * two_d), two_d - 1)
            if open_dir[x, direction]:
                x = nbr[x, direction]


@njit(cache=True)
def _trace_kernel(nbr, open_dir, start, candidates, seed, walk, t_max, buf_t, buf_x):
    two_d = nbr.shape[1]
    state = _stream_start(seed, walk)
    if start >= 0:
        x = start
    else:
        state, u = _next_uniform(state)
        x = candidates[min(int(u * candidates.size), candidates.size - 1)]
    buf_t[0] = 0.0
    buf_x[0] = x
    m = 1
    t = 0.0
    while True:
        state, u = _next_uniform(state)
        t += -np.log1p(-u)
        if not t_max >= t:
            break
        state, u = _next_uniform(state)
        direction = min(int(u * two_d), two_d - 1)
        if open_dir[x, direction]:
            x = nbr[x, direction]
            if m == buf_t.size:
                return -1
            buf_t[m] = t
            buf_x[m] = x
            m += 1
    return m


def _open_directions(config: Configuration):
    nbr, eid = direction_tables(config.geometry)
    open_dir = np.zeros(nbr.shape, dtype=np.bool_)
    has = eid >= 0
    open_dir[has] = config.occupation[eid[has]]
    return nbr, open_dir


def _check_walkable(geometry: BoxGeometry):
    if geometry.periodic and geometry.side < 3:
        raise ValueError("periodic walks need L >= 3; smaller tori have doubled edges")


@dataclass(frozen=True)
class WalkParams:
    t_max: float
    n_walks: int
    start: int
    seed: int

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.n_walks < 1:
            raise ValueError("n_walks must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class ReturnEstimate:
    t: float
    probability: float
    half_width: float
    n_walks: int
    excluded_samples: int = 0


def positions_at(config: Configuration, start: int, times, n_walks: int, seed: int,
                 candidates=None, first_walk: int = 0) -> np.ndarray:
    """Vertices occupied at each of ``times`` (sorted), shape ``(n_walks, len(times))``.

    ``start = -1`` draws each walk's start uniformly from ``candidates``.
    """
    geometry = config.geometry
    _check_walkable(geometry)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be non-negative and sorted")
    if start >= 0 and not start < geometry.n_vertices:
        raise ValueError(f"start vertex {start} outside the box")
    if start < 0:
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.size == 0:
            raise ValueError("uniform start needs a non-empty candidate set")
    else:
        candidates = np.zeros(1, dtype=np.int64)
    nbr, open_dir = _open_directions(config)
    out = np.empty((n_walks, times.size), dtype=np.int64)
    _walk_kernel(nbr, open_dir, int(start), candidates, np.uint64(seed), int(first_walk),
                 int(n_walks), times, out)
    return out


def simulate_walk(config: Configuration, params: WalkParams, trace: bool = False):
    """Final vertices of ``params.n_walks`` walks run to ``params.t_max``.

    With ``trace`` also returns, per walk, the jump times and visited
    vertices (starting with ``(0, start)``).
    """
    finals = positions_at(config, params.start, [params.t_max], params.n_walks,
                          params.seed)[:, 0]
    if not trace:
        return finals
    nbr, open_dir = _open_directions(config)
    traces = []
    cand = np.zeros(1, dtype=np.int64)
    for w in range(params.n_walks):
        size = int(4 * params.t_max + 64)
        while True:
            bt = np.empty(size)
            bx = np.empty(size, dtype=np.int64)
            m = _trace_kernel(nbr, open_dir, params.start, cand, np.uint64(params.seed), w,
                              float(params.t_max), bt, bx)
            if m >= 0:
                break
            size *= 4
        traces.append((bt[:m].copy(), bx[:m].copy()))
    return finals, traces


def landing_counts(config: Configuration, x: int, t: float, n_walks: int, seed: int) -> np.ndarray:
    """Number of walks from ``x`` found at each vertex at time ``t``."""
    finals = positions_at(config, x, [t], n_walks, seed)[:, 0]
    return np.bincount(finals, minlength=config.geometry.n_vertices)


def return_probability(config: Configuration, x: int, t: float, n_walks: int,
                       seed: int) -> ReturnEstimate:
    """Monte Carlo ``P_x(Z_t = x)`` with a binomial 95% half-width."""
    if t < 0:
        raise ValueError("time must be non-negative")
    finals = positions_at(config, x, [t], n_walks, seed)[:, 0]
    prob = float(np.mean(finals == x))
    hw = Z95 * float(np.sqrt(prob * (1.0 - prob) / n_walks))
    return ReturnEstimate(float(t), prob, hw, int(n_walks), 0)


def return_series_csv(estimates) -> str:
    lines = [CSV_SCHEMA_RETURN, "t,probability,half_width,n"]
    lines += [f"{e.t!r},{e.probability!r},{e.half_width!r},{e.n_walks}" for e in estimates]
    return "\n".join(lines) + "\n"


# --- annealed return ---------------------------------------------------------

def _config_returns(index, *, geometry, p, master_seed, walk_times, walks, start_mode):
    seed = split_seed(master_seed, index)
    config = sample_configuration(geometry, p, seed)
    decomp = cluster_decomposition(config)
    proxy = percolating_proxy(decomp, strict=True)
    zero = np.zeros(walk_times.size)
    walk_seed = split_seed(seed, 1)
    if start_mode == "origin":
        origin = geometry.origin()
        if proxy is None or decomp.labels[origin] != proxy:
            return zero, True
        pos = positions_at(config, origin, walk_times, walks, walk_seed)
        return (pos == origin).mean(axis=0), False
    if proxy is None:
        return zero, True
    members = decomp.members(proxy)
    pos = positions_at(config, -1, walk_times, walks, walk_seed, candidates=members)
    # a uniform start can't be read back from the positions; rerun the start draw
    starts = positions_at(config, -1, np.zeros(1), walks, walk_seed, candidates=members)[:, 0]
    frac = members.size / geometry.n_vertices
    return frac * (pos == starts[:, None]).mean(axis=0), False


def annealed_return(geometry: BoxGeometry, p: float, t_grid, configs: int,
                    walks_per_config: int, master_seed: int, start: str = "origin",
                    jobs: int = 1) -> LaplaceCurve:
    """Mean return probability at walk time ``2d t``, restricted to the
    percolating-cluster proxy.

    ``start="origin"`` walks from ``geometry.origin()`` and scores 0 when the
    origin is outside the proxy cluster.  ``start="uniform"`` (periodic boxes)
    starts uniformly in the proxy cluster and weights by its volume
    fraction; by translation invariance it has the same mean with less
    variance.  Configurations without a proxy score 0 and are counted as
    excluded.
    """
    if start not in ("origin", "uniform"):
        raise ValueError("start must be 'origin' or 'uniform'")
    if start == "uniform" and not geometry.periodic:
        raise ValueError("uniform starts rely on translation invariance; use a periodic box")
    _check_walkable(geometry)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t grid must be non-negative and strictly increasing")
    if configs < 1 or walks_per_config < 1:
        raise ValueError("configs and walks_per_config must be >= 1")
    walk_times = 2.0 * geometry.d * t_grid
    worker = functools.partial(_config_returns, geometry=geometry, p=float(p),
                               master_seed=int(master_seed), walk_times=walk_times,
                               walks=int(walks_per_config), start_mode=start)
    rows = ordered_map(worker, range(configs), jobs)
    per = np.array([r[0] for r in rows])
    excluded = int(sum(r[1] for r in rows))
    if configs > 1:
        mean, hw = mean_and_half_width(per)
    else:
        mean = per[0]
        hw = Z95 * np.sqrt(np.clip(mean * (1 - mean), 0, None) / walks_per_config)
    meta = {**geometry.to_dict(), "p": float(p), "configs": configs,
            "walks_per_config": walks_per_config, "master_seed": int(master_seed),
            "start": start, "excluded": excluded, "time_scaling": "walk time = 2d t",
            "proxy": "largest spanning (free) or wrapping (periodic) cluster"}
    return LaplaceCurve(t_grid, mean, hw, "from_walk", "walk", meta)
