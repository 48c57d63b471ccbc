import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symplectic_hodge.fiber_algebra import get_model
from symplectic_hodge.grid_domain import FormField, make_grid
from symplectic_hodge.manufactured import random_trig_field
from symplectic_hodge.operator_algebra import operator
from symplectic_hodge.stencils import (bounded_matrix, fd_weights, periodic_matrix,
                                       periodic_symbol, resolved_wavenumbers)
from symplectic_hodge.symplectic_operators import (BC_TAGS, algebra_residuals, assemble,
                                                   apply_tag, bc_residual, bc_rows,
                                                   beta_projectors, boundary_condition,
                                                   greens_defect, read_coo, symbol_at,
                                                   symbol_checks)


@pytest.mark.parametrize("n", [1, 2])
def test_algebra_residuals_vanish(n):
    res = algebra_residuals(n)
    assert res and max(res.values()) <= 1e-12


def test_symbol_checks_n2():
    res = symbol_checks(2, np.random.default_rng(5), samples=20)
    assert res.pop("min_singular") >= 0.25 - 1e-9
    assert max(res.values()) <= 1e-10


def test_fd_weights():
    assert np.allclose(fd_weights((-1, 0, 1)), [-0.5, 0, 0.5])
    assert np.allclose(fd_weights((-2, -1, 0, 1, 2)), [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])
    assert np.allclose(fd_weights((0, 1, 2)), [-1.5, 2, -0.5])


@pytest.mark.parametrize("order", [2, 4])
def test_stencils_exact_on_polynomials(order):
    N = 11
    x = np.linspace(0, 1, N)
    D = bounded_matrix(N, x[1], order)
    for p in range(order + 1):
        assert np.allclose(D @ x ** p, p * x ** max(p - 1, 0) if p else 0, atol=1e-9)
    # periodic stencil acts on Fourier modes by its symbol
    P = periodic_matrix(8, 1 / 8, order)
    j = np.arange(8)
    for m in resolved_wavenumbers(8):
        v = np.exp(2j * np.pi * m * j / 8)
        assert np.allclose(P @ v, periodic_symbol(8, 1 / 8, order, m) * v)


def test_resolved_wavenumbers_drop_nyquist():
    assert sorted(resolved_wavenumbers(4)) == [-1, 0, 1]
    assert sorted(resolved_wavenumbers(5)) == [-2, -1, 0, 1, 2]


@pytest.mark.parametrize("n,shape", [(1, (9, 6)), (2, (7, 4, 3, 4))])
def test_discrete_d_squared_zero(n, shape):
    g = make_grid(n, shape)
    for k in range(2 * n - 1):
        A = assemble("d", g, k).matrix
        B = assemble("d", g, k + 1).matrix
        assert abs(B @ A).max() <= 1e-9 * max(1.0, abs(A).max() ** 2)


def test_dplus_image_is_primitive():
    g = make_grid(2, (7, 4, 4, 4))
    rng = np.random.default_rng(1)
    eta = random_trig_field(2, 1, rng).sample(g)
    out = apply_tag("dplus", eta)
    lam = out.coeffs @ get_model(2).Lam(2).T
    assert np.max(np.abs(lam)) <= 1e-10 * max(1.0, np.max(np.abs(out.coeffs)))


def test_apply_rejects_mismatches():
    g = make_grid(2, (7, 4, 4, 4))
    A = assemble("dminus", g, 2)
    raw = FormField(g, 2, np.random.default_rng(0).standard_normal((g.num_nodes, 6)))
    with pytest.raises(ValueError, match="primitive"):
        A.apply(raw)
    with pytest.raises(ValueError):
        A.apply(FormField(g, 1, np.zeros((g.num_nodes, 4))))
    with pytest.raises(ValueError):
        assemble("curl", g, 1)
    with pytest.raises(ValueError):
        assemble("dplus", g, 2)


def test_coo_roundtrip(tmp_path):
    g = make_grid(1, (5, 4))
    A = assemble("dlam", g, 1)
    path = tmp_path / "op.coo"
    A.write_coo(path)
    header, mat = read_coo(path)
    assert header["tag"] == "dlam" and header["shape"] == "5x4" and header["dst_degree"] == "0"
    assert abs(mat - A.matrix).max() == 0
    A.write_coo(tmp_path / "again.coo")
    assert path.read_bytes() == (tmp_path / "again.coo").read_bytes()


@pytest.mark.parametrize("n,tag,k", [(1, "D", 1), (1, "N", 1), (1, "Dplus", 0), (1, "Nminus", 1),
                                     (2, "JD", 2), (2, "DplusMinus", 1), (2, "Cn", 2)])
def test_bc_rows_kernel_satisfies_condition(n, tag, k):
    g = make_grid(n, (7, 4) if n == 1 else (5, 3, 3, 3))
    rng = np.random.default_rng(3)
    bc = boundary_condition(tag, n, k)
    rows = bc_rows(bc, g).matrix.toarray()
    M = get_model(n)
    basis = np.kron(np.eye(g.num_nodes), M.prim_basis(k) if bc.primitive else np.eye(M.fiber_dim(k)))
    if rows.shape[0]:
        _, s, vt = np.linalg.svd(rows @ basis)
        null = vt[np.sum(s > 1e-10 * s[0]):].T
    else:
        null = np.eye(basis.shape[1])
    vec = basis @ (null @ rng.standard_normal(null.shape[1]))
    eta = FormField.from_flat(g, k, vec)
    assert bc_residual(eta, bc) <= 1e-10 * max(1.0, np.abs(vec).max())


def test_boundary_condition_errors():
    with pytest.raises(ValueError):
        boundary_condition("Q", 1, 0)
    with pytest.raises(ValueError):
        boundary_condition("Dplus", 1, 2)
    with pytest.raises(ValueError):
        boundary_condition("Bn", 2, 1)
    assert set(BC_TAGS) >= {"D", "N", "JD", "JN", "Bn", "Cn"}


def _green(n, shape, tag, k, seed):
    g = make_grid(n, shape)
    rng = np.random.default_rng(seed)
    prim = tag in ("dplus", "dminus")
    phi = random_trig_field(n, k, rng, primitive=prim).sample(g)
    dst = operator(n, tag, k).dst
    psi = random_trig_field(n, dst, rng, primitive=prim).sample(g)
    return max(greens_defect(tag, phi, psi, f) for f in ("direct", "adjoint"))


@pytest.mark.parametrize("tag,k", [("d", 0), ("dlam", 1), ("dplus", 0), ("dminus", 1)])
def test_greens_defect_second_order(tag, k):
    coarse = _green(1, (17, 16), tag, k, 2)
    fine = _green(1, (33, 32), tag, k, 2)
    # second-order consistent: one refinement cuts the defect by about 4
    assert fine < coarse / 3
    assert coarse < 0.5


def test_greens_defect_errors():
    g = make_grid(1, (9, 8))
    phi = FormField(g, 0, np.ones((72, 1)))
    with pytest.raises(ValueError):
        greens_defect("dstar", phi, phi)
    with pytest.raises(ValueError):
        greens_defect("d", phi, phi)
    with pytest.raises(ValueError):
        greens_defect("d", phi, FormField(g, 1, np.ones((72, 2))), form="sideways")


def test_symbol_at_validation():
    with pytest.raises(ValueError, match="unit"):
        symbol_at("d", 0.5, [1.0, 1.0], 0)
    with pytest.raises(ValueError, match="zero"):
        symbol_at("d", 0.5, [0.0, 0.0], 0)
    with pytest.raises(ValueError, match="components"):
        symbol_at("d", 0.5, [1.0, 0.0, 0.0], 0, n=2)
    s = symbol_at("d", (0.5, 0.1), [0.6, 0.8], 0)
    assert s.matrix.shape == (2, 1)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4), st.integers(0, 4))
def test_beta_projectors_partition_identity(v, k):
    xi = np.array(v)
    if np.linalg.norm(xi) < 1e-3:
        xi = np.array([1.0, 0, 0, 0])
    xi = xi / np.linalg.norm(xi)
    Ps = beta_projectors(2, k, xi)
    dim = get_model(2).fiber_dim(k)
    assert np.allclose(sum(Ps), np.eye(dim), atol=1e-9)
    for i, P in enumerate(Ps):
        assert np.allclose(P @ P, P, atol=1e-9)
        for j, Q in enumerate(Ps):
            if i != j:
                assert np.allclose(P @ Q, 0, atol=1e-9)
