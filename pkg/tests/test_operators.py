import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclap.lattice import (BoxGeometry, configuration_from_edges, full_configuration,
                             sample_configuration)
from perclap.operators import (BoundaryCondition, RestrictionScheme, SparseSymmetricOperator,
                               apply, assemble_laplacian, full_cube_operator, involution,
                               perturbation_family, perturbation_matrices, slope_at_zero,
                               staggered_sign)


def _fourier(d, L):
    one = 2 - 2 * np.cos(2 * np.pi * np.arange(L) / L)
    lam = one
    for _ in range(d - 1):
        lam = np.add.outer(lam, one).ravel()
    return np.sort(lam)


def test_isolated_vertex_rows():
    c = full_configuration(BoxGeometry(2, 3), open_=False)
    assert np.all(assemble_laplacian(c, "N").diagonal == 0)
    assert np.all(assemble_laplacian(c, "Dtilde").diagonal == 4)
    assert np.all(assemble_laplacian(c, "D").diagonal == 8)
    assert assemble_laplacian(c, "N").rows.size == 0


@pytest.mark.parametrize("bc,expected", [("N", [0, 2]), ("Dtilde", [3, 5]), ("D", [6, 8])])
def test_dimer_spectra(bc, expected):
    c = configuration_from_edges(BoxGeometry(2, 2), [(0, 1)])
    op = assemble_laplacian(c, bc).restrict([0, 1])
    assert np.allclose(np.linalg.eigvalsh(op.toarray()), expected, atol=1e-14)


def test_full_torus_operators_coincide_with_fourier():
    c = full_configuration(BoxGeometry(2, 8, "periodic"))
    mats = [assemble_laplacian(c, bc).toarray() for bc in ("N", "Dtilde", "D")]
    assert np.array_equal(mats[0], mats[1]) and np.array_equal(mats[1], mats[2])
    assert np.allclose(np.linalg.eigvalsh(mats[0]), _fourier(2, 8), atol=1e-10)


def test_bc_parse_aliases():
    assert BoundaryCondition.parse("neumann") is BoundaryCondition.NEUMANN
    assert BoundaryCondition.parse("pseudo-dirichlet") is BoundaryCondition.PSEUDO_DIRICHLET
    assert BoundaryCondition.parse("D") is BoundaryCondition.DIRICHLET
    with pytest.raises(ValueError):
        BoundaryCondition.parse("robin")
    with pytest.raises(ValueError):
        RestrictionScheme.parse("mirror")


@pytest.mark.parametrize("bc", ["N", "D"])
def test_neumann_boundary_scheme_only_for_pseudo_dirichlet(bc):
    c = full_configuration(BoxGeometry(2, 3))
    with pytest.raises(ValueError, match="pseudo-Dirichlet"):
        assemble_laplacian(c, bc, "neumann_boundary")


def test_neumann_boundary_diagonal():
    g = BoxGeometry(2, 4)
    c = sample_configuration(g, 0.5, 1)
    op = assemble_laplacian(c, "Dtilde", "neumann_boundary")
    assert np.array_equal(op.diagonal, 4 - g.boundary_degree())
    periodic = sample_configuration(BoxGeometry(2, 4, "periodic"), 0.5, 1)
    assert np.all(assemble_laplacian(periodic, "Dtilde", "neumann_boundary").diagonal == 4)


def test_full_cube_chain():
    op = full_cube_operator(BoxGeometry(1, 2))
    assert np.array_equal(op.toarray(), [[1, -1], [-1, 1]])
    ell = 7
    w = np.linalg.eigvalsh(full_cube_operator(BoxGeometry(1, ell)).toarray())
    assert np.allclose(w, np.sort(2 - 2 * np.cos(np.pi * np.arange(ell) / ell)), atol=1e-12)


@pytest.mark.parametrize("d,L", [(1, 5), (2, 4), (3, 3)])
def test_full_cube_row_sums_and_identity(d, L):
    g = BoxGeometry(d, L)
    op = full_cube_operator(g)
    assert np.allclose(op.toarray().sum(axis=1), 0)
    assert np.array_equal(
        op.toarray(), assemble_laplacian(full_configuration(g), "Dtilde", "neumann_boundary").toarray())
    with pytest.raises(ValueError):
        full_cube_operator(BoxGeometry(d, L, "periodic"))


def test_perturbation_family_end_points_and_affinity():
    g = BoxGeometry(2, 5)
    c = sample_configuration(g, 0.6, 4)
    h0 = full_cube_operator(g).toarray()
    h1 = assemble_laplacian(c, "Dtilde", "neumann_boundary").toarray()
    assert np.array_equal(perturbation_family(c, 0.0).toarray(), h0)
    assert np.array_equal(perturbation_family(c, 1.0).toarray(), h1)
    assert np.allclose(perturbation_family(c, 0.5).toarray(), 0.5 * (h0 + h1), atol=0)
    full = full_configuration(g)
    assert np.array_equal(perturbation_family(full, 1.0).toarray(), h0)
    a, w = perturbation_matrices(c)
    assert np.array_equal(a, h0) and np.array_equal(a + w, h1)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            perturbation_family(c, bad)


@given(seed=st.integers(0, 10_000), t=st.floats(0, 1))
@settings(max_examples=40, deadline=None)
def test_family_has_nonnegative_hopping(seed, t):
    g = BoxGeometry(2, 4)
    h = perturbation_family(sample_configuration(g, 0.5, seed), t).toarray()
    a = 2 * g.d * np.eye(g.n_vertices) - h
    assert np.all(a >= 0)


def test_slope_closed_form_values():
    g = BoxGeometry(2, 4)
    assert slope_at_zero(full_configuration(g)) == 0.0
    assert slope_at_zero(full_configuration(g, False)) == 2 * g.n_edges / g.n_vertices


def test_apply_identities():
    rng = np.random.default_rng(0)
    c = sample_configuration(BoxGeometry(2, 6, "periodic"), 0.5, 8)
    op = assemble_laplacian(c, "N")
    assert np.array_equal(apply(op, np.zeros(op.n)), np.zeros(op.n))
    assert np.allclose(apply(op, np.ones(op.n)), 0, atol=1e-14)
    phi = rng.standard_normal(op.n)
    u, v = c.open_edges()
    assert np.isclose(phi @ apply(op, phi), np.sum((phi[u] - phi[v]) ** 2), rtol=1e-12)
    psi = rng.standard_normal(op.n)
    assert np.isclose(phi @ apply(op, psi), psi @ apply(op, phi), rtol=1e-12)
    with pytest.raises(ValueError):
        apply(op, np.ones(op.n + 1))


@given(seed=st.integers(0, 10_000), periodic=st.booleans(), p=st.floats(0, 1))
@settings(max_examples=40, deadline=None)
def test_involution_is_exact_entrywise(seed, periodic, p):
    g = BoxGeometry(2, 6, "periodic" if periodic else "free")
    c = sample_configuration(g, p, seed)
    n_op = assemble_laplacian(c, "N").toarray()
    dt = assemble_laplacian(c, "Dtilde").toarray()
    d_op = assemble_laplacian(c, "D")
    top = 4 * g.d * np.eye(g.n_vertices)
    assert np.array_equal(involution(d_op, g).toarray(), top - n_op)
    u = np.diag(staggered_sign(g))
    assert np.array_equal(u @ dt @ u, top - dt)


@given(seed=st.integers(0, 10_000), p=st.floats(0, 1))
@settings(max_examples=30, deadline=None)
def test_quadratic_form_ordering(seed, p):
    g = BoxGeometry(2, 5)
    c = sample_configuration(g, p, seed)
    phi = np.random.default_rng(seed).standard_normal((g.n_vertices, 20))
    forms = [np.einsum("ij,ij->j", phi, assemble_laplacian(c, bc).toarray() @ phi)
             for bc in ("N", "Dtilde", "D")]
    assert np.all(forms[0] <= forms[1] + 1e-12)
    assert np.all(forms[1] <= forms[2] + 1e-12)


def test_entries_bounded_and_finite():
    c = sample_configuration(BoxGeometry(3, 4), 0.5, 2)
    for bc in ("N", "Dtilde", "D"):
        m = assemble_laplacian(c, bc).toarray()
        assert np.all(np.isfinite(m)) and np.abs(m).max() <= 12


def test_triplet_round_trip():
    op = assemble_laplacian(sample_configuration(BoxGeometry(2, 4), 0.5, 3), "D")
    text = op.to_triplets()
    assert text.splitlines()[0].split()[0] == "0"
    back = SparseSymmetricOperator.from_triplets(text, op.n, d=2)
    assert np.array_equal(back.toarray(), op.toarray())


def test_operator_validation():
    with pytest.raises(ValueError):
        SparseSymmetricOperator(np.zeros(2), np.array([1]), np.array([0]), np.array([1.0]), d=1)
    with pytest.raises(ValueError):
        SparseSymmetricOperator(np.array([np.nan, 0.0]), np.array([0]), np.array([1]),
                                np.array([1.0]), d=1)
