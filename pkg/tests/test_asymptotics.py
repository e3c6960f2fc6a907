import json
import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.special as special
from hypothesis import given, settings
from hypothesis import strategies as st

from perclap import asymptotics as asy
from perclap.ids import LaplaceCurve, synthetic_curve
from perclap.lattice import (BoxGeometry, configuration_from_edges, full_configuration,
                             sample_configuration, split_seed)


def test_van_hove_fit_exact_power():
    E = np.concatenate([[0.0], np.geomspace(1e-3, 1e-1, 25)])
    rep = asy.fit_van_hove(synthetic_curve(E, 0.2 + E), (1e-3, 1e-1))
    assert rep.slope == pytest.approx(1.0, abs=1e-6) and rep.n_points == 25


def test_van_hove_drops_nonpositive_differences():
    E = np.array([0.0, 0.01, 0.02, 0.03, 0.04, 0.05])
    vals = np.array([0.2, 0.2, 0.2 + 0.02 ** 1.5, 0.2 + 0.03 ** 1.5, 0.2 + 0.04 ** 1.5,
                     0.2 + 0.05 ** 1.5])
    rep = asy.fit_van_hove(synthetic_curve(E, vals), (0.005, 0.05))
    assert rep.dropped == [0.01] and rep.n_points == 4
    assert rep.slope == pytest.approx(1.5, abs=1e-9)


def test_van_hove_needs_zero_value():
    c = synthetic_curve(np.geomspace(0.01, 0.1, 5), np.linspace(0.1, 0.2, 5))
    with pytest.raises(ValueError, match="zero_value"):
        asy.fit_van_hove(c, (0.01, 0.1))
    assert asy.fit_van_hove(c, (0.01, 0.1), zero_value=0.0).n_points == 5


def test_lifshits_fit_exact_forms():
    E = np.geomspace(1e-3, 1e-1, 30)
    rep = asy.fit_lifshits(synthetic_curve(E, np.exp(-1 / E)), (1e-3, 1e-1))
    assert rep.slope == pytest.approx(-1.0, abs=1e-6)
    # exp(-2 E^-1.5) underflows below E ~ 0.019; the fit uses what is representable
    E2 = np.geomspace(0.02, 1e-1, 30)
    rep2 = asy.fit_lifshits(synthetic_curve(E2, np.exp(-2 * E2 ** -1.5)), (0.02, 1e-1))
    assert rep2.slope == pytest.approx(-1.5, abs=1e-2)


def test_lifshits_rejects_values_at_one_or_zero():
    E = np.geomspace(0.01, 0.5, 6)
    vals = np.array([0.0, 1e-30, 1e-10, 1e-4, 0.3, 1.0])
    rep = asy.fit_lifshits(synthetic_curve(E, vals), (0.01, 0.5))
    assert rep.dropped == [E[0], E[-1]] and rep.n_points == 4


def test_fit_requires_three_points():
    E = np.array([0.0, 0.1, 0.2])
    with pytest.raises(ValueError, match="need 3"):
        asy.fit_van_hove(synthetic_curve(E, [0.1, 0.2, 0.3]), (0.05, 0.3))
    with pytest.raises(ValueError):
        asy.fit_van_hove(synthetic_curve(E, [0.1, 0.2, 0.3]), (0.3, 0.05))


def test_heat_decay_fit_exact():
    t = np.geomspace(1, 100, 12)
    curve = LaplaceCurve(t, 3 / t, np.zeros(12), "from_ids", "synthetic", {})
    rep = asy.fit_heat_decay(curve, (1, 100))
    assert rep.slope == pytest.approx(-1.0, abs=1e-6)
    assert json.loads(rep.to_json())["n_points"] == 12


def test_heat_decay_fit_free_lattice_fourier():
    L = 512
    k = 2 * np.pi * np.arange(L) / L
    t = np.geomspace(8, 64, 9)
    one = np.exp(-np.outer(t, 2 - 2 * np.cos(k))).mean(axis=1)
    curve = LaplaceCurve(t, one ** 2, np.zeros(t.size), "from_ids", "synthetic", {})
    assert asy.fit_heat_decay(curve, (8, 64)).slope == pytest.approx(-1.0, abs=0.02)


def test_dirichlet_cube_anchor_and_chain():
    # L=2, d=2: a 4x4 dense solve of the all-open Dirichlet square
    g = BoxGeometry(2, 2)
    from perclap.operators import assemble_laplacian
    dense = sla.eigvalsh(assemble_laplacian(full_configuration(g), "D").toarray())[0]
    assert asy.dirichlet_ground_energy(2, 2) == pytest.approx(dense, abs=1e-12)
    assert dense == pytest.approx(4.0)
    chain = [asy.dirichlet_ground_energy(1, s) for s in range(2, 9)]
    assert chain[0] <= 4 and np.all(np.diff(chain) < 0)


def test_dirichlet_cube_scaling_exponent():
    rep = asy.dirichlet_cube_scaling(2, range(4, 33, 4))
    assert rep.slope == pytest.approx(-2.0, abs=0.1)
    with pytest.raises(ValueError):
        asy.dirichlet_cube_scaling(2, [1, 2, 3])


def test_monotonicity_examples():
    g = BoxGeometry(2, 5)
    flat = asy.monotonicity_check(full_configuration(g))
    assert flat.passed and np.allclose(flat.details["energies"], 0, atol=1e-12)
    c = sample_configuration(g, 0.5, 9)
    rep = asy.monotonicity_check(c, np.linspace(0, 1, 11))
    from perclap.operators import assemble_laplacian
    bottom = sla.eigvalsh(assemble_laplacian(c, "Dtilde", "neumann_boundary").toarray())[0]
    assert abs(rep.details["energies"][0]) < 1e-12
    assert rep.details["energies"][-1] == pytest.approx(bottom, abs=1e-12)
    with pytest.raises(ValueError):
        asy.monotonicity_check(c, [0.0, 0.5, 0.5])


@given(seed=st.integers(0, 2**31), p=st.floats(0.1, 0.95))
@settings(max_examples=25, deadline=None)
def test_monotonicity_property(seed, p):
    rep = asy.monotonicity_check(sample_configuration(BoxGeometry(2, 5), p, seed))
    assert rep.passed


def test_linearization_trivial_and_chain():
    assert asy.linearization_check(full_configuration(BoxGeometry(2, 4))).details["trivial"]
    chain = configuration_from_edges(BoxGeometry(1, 3), [])
    rep = asy.linearization_check(chain)
    assert rep.passed and rep.details["order"] == pytest.approx(2.0, abs=0.05)


def test_slope_matches_finite_difference():
    for s in range(5):
        c = sample_configuration(BoxGeometry(2, 6), 0.5, split_seed(3, s))
        exact = asy.slope_at_zero(c)
        assert asy.slope_finite_difference(c) == pytest.approx(exact, rel=1e-3)


def test_large_deviation_zero_alpha_matches_bernoulli_product():
    rep = asy.slope_large_deviation(BoxGeometry(2, 2), 0.9, 0.0, 40_000, 5, [2, 3, 4])
    for side, freq, exact in zip([2, 3, 4], rep.details["frequency"],
                                 rep.details["exact_probability"]):
        n_edges = BoxGeometry(2, side).n_edges
        assert exact == pytest.approx(0.9 ** n_edges, rel=1e-12)
        assert abs(freq - exact) <= 4 * math.sqrt(exact * (1 - exact) / 40_000)
    assert rep.passed


def test_large_deviation_vacuous_when_all_rare():
    rep = asy.slope_large_deviation(BoxGeometry(2, 4), 0.5, 0.01, 1000, 1, [6, 8])
    assert rep.passed and rep.details["vacuous"]


def test_large_deviation_validation():
    with pytest.raises(ValueError):
        asy.slope_large_deviation(BoxGeometry(2, 4), 0.5, -0.1, 10, 0, [4])


def test_tauberian_transform_against_gamma():
    assert asy.power_measure_transform(1.0, 3.0) == pytest.approx(1 / 3, rel=1e-2)
    for delta in (0.5, 1.0, 1.5, 2.5):
        for t in (0.5, 2.0, 40.0):
            oracle = special.gamma(delta + 1) * t ** -delta
            assert asy.power_measure_transform(delta, t) == pytest.approx(oracle, rel=1e-8)


@pytest.mark.parametrize("delta", [0.5, 1.0, 1.5])
def test_tauberian_bounds(delta):
    rep = asy.tauberian_check(delta, 1.0)
    assert rep.passed
    assert rep.details["transform_exponent"] == pytest.approx(-delta, abs=1e-3)
    assert 0 < rep.details["C_l"] <= 1 <= rep.details["C_u"]


def test_heaviside_inequality():
    rep = asy.heaviside_inequality_check(10_000, 3)
    assert rep.passed and rep.violation == 0


def test_finite_cluster_tail_examples():
    full = asy.finite_cluster_tail_check(BoxGeometry(2, 16, "periodic"), 1.0, [0.01, 0.1], 2, 0)
    assert full.passed and full.details["worst_margin"] == 0.0
    vac = asy.finite_cluster_tail_check(BoxGeometry(2, 32, "periodic"), 0.7, [0.5, 1.0], 3, 1)
    assert vac.passed


def test_implication_nontrivial_hits():
    g = BoxGeometry(2, 8)
    configs = [sample_configuration(g, 0.97, split_seed(5, s)) for s in range(200)]
    beta = max(asy.linearization_check(c).details["beta_hat"] for c in configs[:20])
    rep = asy.implication_check(configs, 0.2, beta)
    assert rep.passed
    assert rep.details["premise_hits"] > rep.details["trivial_hits"]


def test_report_json_and_invariant():
    rep = asy.MechanismReport("x", True, 0.0, 0.0, {"a": np.arange(2)}, {"b": np.float64(1)})
    assert json.loads(rep.to_json())["parameters"]["a"] == [0, 1]
    with pytest.raises(ValueError):
        asy._report("bad", float("nan"), 0.0, {}, {})
