import numpy as np
import pytest
import scipy.linalg as sla

from perclap.lattice import (BoxGeometry, cluster_decomposition, configuration_from_edges,
                             full_configuration, sample_configuration)
from perclap.operators import assemble_laplacian
from perclap.spectral import heat_kernel
from perclap.walk import (ReturnEstimate, WalkParams, annealed_return, landing_counts,
                          positions_at, return_probability, return_series_csv, simulate_walk)


def _dimer():
    return configuration_from_edges(BoxGeometry(2, 2), [(0, 1)])


def test_params_validation():
    for bad in (dict(t_max=0.0, n_walks=1, start=0, seed=0),
                dict(t_max=1.0, n_walks=0, start=0, seed=0),
                dict(t_max=1.0, n_walks=1, start=0, seed=-1)):
        with pytest.raises(ValueError):
            WalkParams(**bad)


def test_isolated_vertex_never_moves():
    c = full_configuration(BoxGeometry(2, 4), open_=False)
    finals = simulate_walk(c, WalkParams(50.0, 200, 5, 1))
    assert np.all(finals == 5)
    est = return_probability(c, 5, 50.0, 500, 2)
    assert est.probability == 1.0 and est.half_width == 0.0


def test_time_zero_returns_start():
    c = sample_configuration(BoxGeometry(2, 6), 0.7, 3)
    pos = positions_at(c, 7, [0.0], 100, 9)
    assert np.all(pos == 7)


def test_dimer_return_probability():
    est = return_probability(_dimer(), 0, 5.0, 1_000_000, 12)
    exact = (1 + np.exp(-2.5)) / 2
    sigma = np.sqrt(exact * (1 - exact) / est.n_walks)
    assert abs(est.probability - exact) <= 3 * sigma
    assert est.probability - est.half_width >= -1e-12 and est.probability + est.half_width <= 1 + 1e-12


def test_reproducible_and_batch_independent():
    c = sample_configuration(BoxGeometry(2, 10, "periodic"), 0.7, 5)
    x = int(cluster_decomposition(c).members(cluster_decomposition(c).largest_id)[0])
    a = positions_at(c, x, [1.0, 4.0], 1000, 77)
    b = positions_at(c, x, [1.0, 4.0], 1000, 77)
    assert np.array_equal(a, b)
    tail = positions_at(c, x, [1.0, 4.0], 400, 77, first_walk=600)
    assert np.array_equal(a[600:], tail)


def test_walk_stays_in_its_cluster_and_conserves_mass():
    c = sample_configuration(BoxGeometry(2, 12), 0.55, 8)
    decomp = cluster_decomposition(c)
    x = int(decomp.members(decomp.largest_id)[0])
    counts = landing_counts(c, x, 20.0, 5000, 4)
    assert counts.sum() == 5000
    assert np.all(decomp.labels[np.flatnonzero(counts)] == decomp.labels[x])


def test_trace_is_consistent_with_final_vertex():
    c = sample_configuration(BoxGeometry(2, 8, "periodic"), 0.8, 1)
    params = WalkParams(15.0, 20, 0, 3)
    finals, traces = simulate_walk(c, params, trace=True)
    u, v = c.open_edges()
    edges = set(zip(u.tolist(), v.tolist())) | set(zip(v.tolist(), u.tolist()))
    for final, (times, verts) in zip(finals, traces):
        assert times[0] == 0.0 and verts[0] == 0
        assert np.all(np.diff(times) > 0) and times[-1] <= 15.0
        assert verts[-1] == final
        assert all((a, b) in edges for a, b in zip(verts[:-1], verts[1:]))


def test_small_torus_rejected():
    with pytest.raises(ValueError, match="L >= 3"):
        positions_at(full_configuration(BoxGeometry(2, 2, "periodic")), 0, [1.0], 1, 0)


def test_semigroup_identity_on_a_small_cluster():
    rng = np.random.default_rng(0)
    c = sample_configuration(BoxGeometry(2, 8), 0.6, 21)
    decomp = cluster_decomposition(c)
    members = decomp.members(decomp.largest_id)
    assert members.size <= 512
    op = assemble_laplacian(c, "N")
    n_walks = 100_000
    for k in range(5):
        x, y = (int(v) for v in rng.choice(members, 2))
        t = float(rng.uniform(0.5, 10))
        exact = heat_kernel(op, x, t)[y]
        counts = landing_counts(c, x, t, n_walks, 100 + k)
        sigma = np.sqrt(exact * (1 - exact) / n_walks)
        assert abs(counts[y] / n_walks - exact) <= 4 * sigma


def test_long_time_return_tends_to_inverse_cluster_size():
    c = sample_configuration(BoxGeometry(2, 5), 0.6, 2)
    decomp = cluster_decomposition(c)
    k = decomp.largest_id
    x = int(decomp.members(k)[0])
    est = return_probability(c, x, 2000.0, 40_000, 3)
    m = decomp.sizes[k]
    assert abs(est.probability - 1 / m) <= 4 * np.sqrt((1 / m) * (1 - 1 / m) / 40_000)


def test_annealed_full_torus_fourier():
    g = BoxGeometry(2, 32, "periodic")
    k = 2 * np.pi * np.arange(32) / 32
    exact = np.exp(-4 * (2 - 2 * np.cos(k))).mean() ** 2
    for start in ("origin", "uniform"):
        curve = annealed_return(g, 1.0, [4.0], 10, 10_000, 6, start=start)
        assert curve.provenance == "from_walk"
        assert abs(curve.values[0] - exact) <= 3 * curve.half_widths[0] / 1.96


def test_annealed_time_scaling_uses_full_generator():
    # at parameter t the walk runs to 2d t, i.e. the kernel of exp(-t Delta_N)
    g = BoxGeometry(2, 4, "periodic")
    c = full_configuration(g)
    op = assemble_laplacian(c, "N").toarray()
    exact = sla.expm(-0.6 * op)[0, 0]
    curve = annealed_return(g, 1.0, [0.6], 1, 200_000, 3)
    assert abs(curve.values[0] - exact) <= curve.half_widths[0] * 4 / 1.96


def test_annealed_empty_configuration():
    curve = annealed_return(BoxGeometry(2, 6, "periodic"), 0.0, [1.0, 2.0], 3, 10, 0)
    assert np.all(curve.values == 0) and curve.metadata["excluded"] == 3


def test_annealed_validation():
    g = BoxGeometry(2, 6)
    with pytest.raises(ValueError):
        annealed_return(g, 0.5, [1.0], 2, 10, 0, start="uniform")
    with pytest.raises(ValueError):
        annealed_return(g, 0.5, [2.0, 1.0], 2, 10, 0)


def test_annealed_deterministic_over_jobs():
    g = BoxGeometry(2, 16, "periodic")
    a = annealed_return(g, 0.7, [1.0, 2.0], 4, 500, 11, jobs=1)
    b = annealed_return(g, 0.7, [1.0, 2.0], 4, 500, 11, jobs=2)
    assert a.to_csv() == b.to_csv()


def test_return_series_csv():
    text = return_series_csv([ReturnEstimate(1.0, 0.5, 0.01, 100)])
    assert text.splitlines()[1] == "t,probability,half_width,n"
    assert text.splitlines()[2] == "1.0,0.5,0.01,100"
