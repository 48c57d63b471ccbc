import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from symplectic_hodge.grid_domain import FormField, make_grid
from symplectic_hodge.hodge_engine import (FLAVORS, RankInstabilityError, _cutoff_report,
                                           cohomology, cohomology_dim, dense_cohomology_dim,
                                           dense_derham_dim, derham_cohomology,
                                           dirichlet_integral, gaffney, harmonic_space,
                                           hodge_decompose, j_field, modal_space,
                                           obstruction_fields, parse_flavor, poincare_solve,
                                           solve_least_squares)
from symplectic_hodge.manufactured import random_trig_field
from symplectic_hodge.symplectic_operators import apply_tag, bc_residual

G1 = make_grid(1, (9, 8))
G2 = make_grid(2, (5, 4, 4, 4))

# bounded harmonic dimensions on the coarse grids; the modal solver and a
# dense whole-grid rank computation agree on the matching cohomology groups
HARMONIC_DIMS = {
    (1, "plus", "Dplus", 0): 0, (1, "plus", "Nplus", 0): 1,
    (1, "minus", "Dminus", 0): 2, (1, "minus", "Nminus", 0): 1,
    (1, "plusplus", "DplusMinus", 1): 2, (1, "plusplus", "Nplus", 1): 3,
    (1, "minusminus", "Dminus", 1): 4, (1, "minusminus", "NplusMinus", 1): 3,
    (2, "plus", "Dplus", 1): 2, (2, "plus", "Nplus", 1): 4,
    (2, "minus", "Dminus", 1): 6, (2, "minus", "Nminus", 1): 4,
    (2, "plusplus", "DplusMinus", 2): 5, (2, "plusplus", "Nplus", 2): 7,
    (2, "minusminus", "Dminus", 2): 8, (2, "minusminus", "NplusMinus", 2): 7,
}


@pytest.mark.parametrize("key", sorted(HARMONIC_DIMS))
def test_harmonic_dimensions(key):
    n, kind, bc, k = key
    h = harmonic_space(kind, bc, G1 if n == 1 else G2, degree=k)
    assert h.stable
    assert h.dimension == HARMONIC_DIMS[key]
    assert h.residual <= 1e-8


def test_harmonic_basis_orthonormal_and_in_bc():
    h = harmonic_space("minus", "Dminus", G2, degree=1)
    basis = h.basis
    assert len(basis) == h.dimension
    gram = np.array([[np.sum(G2.node_weights() * np.sum(a.coeffs * b.coeffs, axis=1))
                      for b in basis] for a in basis])
    assert np.allclose(gram, np.eye(len(basis)), atol=1e-9)
    for f in basis:
        assert bc_residual(f, "Dminus") <= 1e-9
        assert np.allclose(h.project(f).coeffs, f.coeffs, atol=1e-9)


def test_unbounded_space_needs_degree():
    with pytest.raises(ValueError):
        harmonic_space("plus", "Dplus", G1)
    with pytest.raises(ValueError):
        harmonic_space("minus", "Dminus", G1, degree=1)


@pytest.mark.parametrize("flavor", FLAVORS)
def test_decomposition_n1(flavor):
    kind, _ = parse_flavor(flavor)
    k = None if kind in ("plusplus", "minusminus") else 0
    deg = 1 if k is None else 0
    eta = random_trig_field(1, deg, np.random.default_rng(4)).sample(make_grid(1, (17, 16)))
    res = hodge_decompose(eta, flavor)
    assert res.residual <= 1e-9
    assert res.orthogonality <= 1e-8
    total = sum(c.coeffs for c in res.components)
    assert np.allclose(total, eta.coeffs, atol=1e-9 * np.abs(eta.coeffs).max())


def test_parse_flavor_rejects_unknown():
    with pytest.raises(ValueError):
        parse_flavor("plus_D")


@pytest.mark.parametrize("level,variant,k", [("dplus_k", "absolute", 0), ("dminus_k", "relative_D", 0),
                                             ("dplus_k", "relative_N", 0), ("dminus_k", "dual", 0)])
def test_cohomology_matches_dense_oracle_n1(level, variant, k):
    assert cohomology_dim(level, variant, G1, k) == dense_cohomology_dim(level, variant, G1, k)


def test_dplus_zero_absolute_is_constants():
    assert cohomology_dim("dplus_k", "absolute", make_grid(1, (9, 8)), 0) == 1
    res = cohomology("dplus_k", "absolute", G2, 0)
    assert res.dimension == 1 and res.image_in_kernel


def test_cohomology_errors():
    with pytest.raises(ValueError):
        cohomology("dzero_k", "absolute", G1, 0)
    with pytest.raises(ValueError):
        cohomology("dplus_k", "weird", G1, 0)
    with pytest.raises(ValueError):
        cohomology("dplus_k", "absolute", G1)
    with pytest.raises(ValueError):
        cohomology("dplus_n", "absolute", G1, 0)
    with pytest.raises(ValueError):
        derham_cohomology(G1, 3)


@pytest.mark.parametrize("grid,absolute,relative", [(G1, [1, 2, 1], [0, 2, 2]),
                                                     (G2, [1, 4, 6, 4, 1], [0, 2, 6, 6, 2])])
def test_discrete_derham_numbers(grid, absolute, relative):
    # the collocated complex has these Betti numbers on the cylinder grids
    assert [derham_cohomology(grid, k).dimension for k in range(len(absolute))] == absolute
    assert [derham_cohomology(grid, k, True).dimension for k in range(len(relative))] == relative
    assert [dense_derham_dim(grid, k) for k in range(len(absolute))] == absolute


def test_cutoff_report_flags_straddle():
    stable = _cutoff_report([np.array([1.0, 0.5, 1e-14])], 1e-8)
    assert stable.stable and stable.below_max == pytest.approx(1e-14)
    shaky = _cutoff_report([np.array([1.0, 5e-8, 8e-9])], 1e-8)
    assert not shaky.stable and shaky.ratio == pytest.approx(6.25)
    empty = _cutoff_report([], 1e-8)
    assert empty.stable


def test_cohomology_dim_raises_on_instability():
    # a cutoff sitting in the continuous part of the spectrum cannot separate ranks
    with pytest.raises(RankInstabilityError):
        for c in (1e-1, 3e-2, 1e-2, 3e-3):
            cohomology_dim("dplus_k", "absolute", make_grid(1, (33, 32)), 0, cutoff=c)


@settings(max_examples=15)
@given(st.integers(0, 2 ** 31), st.integers(3, 8), st.integers(2, 6))
def test_least_squares_routes_agree(seed, rows, cols):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows + cols, cols))
    b = rng.standard_normal(rows + cols)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    dense = solve_least_squares(A, b)
    cg = solve_least_squares(sp.csr_matrix(A), b, tol=1e-13, dense_limit=0)
    assert dense.method == "dense" and cg.method == "cg" and cg.converged
    assert np.allclose(dense.x, ref, atol=1e-8)
    assert np.allclose(cg.x, ref, atol=1e-6 * max(1.0, np.abs(ref).max()))


def test_modal_roundtrip_and_nyquist():
    space = modal_space(G2)
    eta = random_trig_field(2, 1, np.random.default_rng(8), max_wave=1).sample(G2)
    back = space.from_modes(space.to_modes(eta), 1)
    assert np.allclose(back.coeffs, eta.coeffs, atol=1e-12)
    g = make_grid(1, (5, 4))
    x2 = g.coords()[1]
    nyq = FormField(g, 0, np.cos(2 * np.pi * 2 * x2)[:, None])
    with pytest.raises(ValueError, match="Nyquist"):
        modal_space(g).to_modes(nyq)


def test_to_modes_rejects_nonprimitive():
    raw = FormField(G2, 2, np.random.default_rng(0).standard_normal((G2.num_nodes, 6)))
    with pytest.raises(ValueError):
        modal_space(G2).to_modes(raw)


def test_j_field_inverse():
    eta = random_trig_field(2, 1, np.random.default_rng(2)).sample(G2)
    assert np.allclose(j_field(j_field(eta), inverse=True).coeffs, eta.coeffs)
    assert np.allclose(j_field(j_field(eta)).coeffs, -eta.coeffs)


def test_poincare_exact_dplus():
    g = make_grid(1, (17, 16))
    phi = random_trig_field(1, 0, np.random.default_rng(6)).sample(g)
    eta = apply_tag("dplus", phi)
    rep = poincare_solve("dplus", eta)
    assert rep.status == "solved"
    assert rep.equation_residual <= 1e-8
    assert rep.pairing <= 1e-16 * max(1.0, eta.norm() ** 2) + 1e-20


def test_poincare_obstructed():
    g = make_grid(1, (17, 16))
    lam = obstruction_fields("dplus", g, 1)
    assert len(lam) == 3
    rep = poincare_solve("dplus", lam[0])
    assert rep.status == "integrability_violated"
    assert rep.pairing == pytest.approx(1.0, rel=1e-6)


def test_poincare_errors():
    g = make_grid(1, (9, 8))
    eta = FormField(g, 0, np.ones((72, 1)))
    with pytest.raises(ValueError):
        poincare_solve("dplus", eta)
    with pytest.raises(ValueError):
        poincare_solve("curl", eta)
    with pytest.raises(ValueError):
        poincare_solve("dminus", eta, x=FormField(g, 1, np.ones((72, 2))))


def test_gaffney_positive_and_errors():
    res = gaffney("plus", "D", make_grid(2, (9, 4, 4, 4)), 1)
    assert 0 < res.constant <= 1
    with pytest.raises(ValueError):
        gaffney("plus", "D", G1, 1)
    with pytest.raises(ValueError):
        gaffney("plus", "N", G1, 0)
    with pytest.raises(ValueError):
        gaffney("sideways", "D", G1, 0)


def test_dirichlet_integral_matches_operators():
    g = make_grid(2, (9, 4, 4, 4))
    eta = random_trig_field(2, 1, np.random.default_rng(9), max_wave=1).sample(g)
    plus = apply_tag("dplus", eta).norm() ** 2 + apply_tag("dplusstar", eta).norm() ** 2
    minus = (2 * apply_tag("dminus", eta).norm()) ** 2 + apply_tag("dminusstar", eta).norm() ** 2
    assert dirichlet_integral("plus", eta) == pytest.approx(plus)
    assert dirichlet_integral("minus", eta) == pytest.approx(minus)
    with pytest.raises(ValueError):
        dirichlet_integral("other", eta)
