"""Grid realizations of the symplectic operators, boundary conditions and symbols.

Operators are assembled from :mod:`operator_algebra` definitions into sparse
matrices acting on full coefficient vectors (node-major, fiber fastest).
Adjoints are the formal ones built from the Hodge star, so Green's formulas
keep their boundary terms.

Every boundary condition is the vanishing of a trace P(rho eta) on the two
faces.  Since rho = 0 there, P(rho eta) = sigma_P(grad rho) eta, which is how
traces and constraint rows are formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .diffop import DiffOp, GridRealizer
from .fiber_algebra import SymplecticModel, get_model
from .grid_domain import (BoundaryTrace, FormField, Grid, boundary_integral, boundary_norm,
                          inner_product, make_rho)
from .manufactured import random_trig_field
from .operator_algebra import PRIMITIVE_TAGS, check_degree, operator

OPERATOR_TAGS = ("d", "dstar", "dlam", "dlamstar", "dplus", "dminus", "dminusprime",
                 "dplusstar", "dminusstar", "lap_plus", "lap_minus", "lap_pp", "lap_mm",
                 "lap_ddlam", "lap_dplusdlam")
ADJOINT = {"d": "dstar", "dlam": "dlamstar", "dplus": "dplusstar", "dminus": "dminusstar"}
BC_TAGS = ("D", "N", "JD", "JN", "Dplus", "Nplus", "Dminus", "Nminus", "DplusMinus",
           "NplusMinus", "Bn", "Cn")

# first-order operator whose trace P(rho eta) defines each simple condition
_BC_OPERATOR = {"D": "d", "N": "dstar", "JD": "dlamstar", "JN": "dlam", "Dplus": "dplus",
                "Nplus": "dplusstar", "Dminus": "dminus", "Nminus": "dminusstar"}
_PRIMITIVE_BCS = ("Dplus", "Nplus", "Dminus", "Nminus", "DplusMinus", "NplusMinus", "Bn", "Cn")


@dataclass
class LinearOpMatrix:
    matrix: sp.csr_matrix
    tag: str
    grid: Grid
    src_degree: int
    dst_degree: int
    src_primitive: bool
    dst_primitive: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, field: FormField) -> FormField:
        if field.grid != self.grid or field.degree != self.src_degree:
            raise ValueError(f"{self.tag} expects degree {self.src_degree} on {self.grid.label()}")
        if self.src_primitive and not field.primitive:
            raise ValueError(f"{self.tag} acts on primitive fields")
        out = self.matrix @ field.flat()
        return FormField.from_flat(self.grid, self.dst_degree, out, primitive=False)

    def write_coo(self, path: str | Path) -> None:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# tag={self.tag} src_degree={self.src_degree} dst_degree={self.dst_degree} "
                     f"src_primitive={int(self.src_primitive)} dst_primitive={int(self.dst_primitive)} "
                     f"n={self.grid.n} shape={self.grid.label()} order={self.grid.stencil_order}\n")
            fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i in order:
                fh.write(f"{coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}\n")


def read_coo(path: str | Path) -> tuple[dict, sp.csr_matrix]:
    """Header fields and matrix of a file written by :meth:`LinearOpMatrix.write_coo`."""
    lines = Path(path).read_text().splitlines()
    header = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    rows, cols, nnz = (int(v) for v in lines[1].split())
    data = np.array([ln.split() for ln in lines[2:2 + nnz]], dtype=object)
    if nnz:
        mat = sp.csr_matrix((data[:, 2].astype(float), (data[:, 0].astype(int), data[:, 1].astype(int))),
                            shape=(rows, cols))
    else:
        mat = sp.csr_matrix((rows, cols))
    return header, mat


_REALIZERS: dict = {}


def realizer(grid: Grid) -> GridRealizer:
    if grid not in _REALIZERS:
        _REALIZERS[grid] = GridRealizer(grid)
    return _REALIZERS[grid]


def assemble(tag: str, grid: Grid, degree: int, model: SymplecticModel | None = None) -> LinearOpMatrix:
    """Sparse realization of ``tag`` on degree-``degree`` fields of ``grid``."""
    if tag not in OPERATOR_TAGS:
        raise ValueError(f"unknown operator tag {tag!r}")
    model = model or get_model(grid.n)
    if model.n != grid.n:
        raise ValueError("model and grid disagree on n")
    check_degree(grid.n, tag, degree)
    op = operator(grid.n, tag, degree)
    prim = tag in PRIMITIVE_TAGS
    return LinearOpMatrix(realizer(grid).realize(op), tag, grid, op.src, op.dst, prim, prim)


def apply_tag(tag: str, field: FormField) -> FormField:
    return assemble(tag, field.grid, field.degree).apply(field)


# ---------------------------------------------------------------- boundary conditions

@dataclass(frozen=True)
class BoundaryCondition:
    """A condition given by traces of first-order operators on the faces.

    Each part is (outer, inner): the trace outer(rho * inner(eta)), where
    ``inner`` is a DiffOp applied in the interior (or None for eta itself).
    """

    tag: str
    n: int
    degree: int
    parts: tuple

    @property
    def primitive(self) -> bool:
        return self.tag in _PRIMITIVE_BCS


def _vacuous(n: int, tag: str, k: int) -> bool:
    try:
        check_degree(n, tag, k)
    except ValueError:
        return True
    return False


def boundary_condition(tag: str, n: int, degree: int) -> BoundaryCondition:
    if tag not in BC_TAGS:
        raise ValueError(f"unknown boundary condition {tag!r}")
    if tag in _PRIMITIVE_BCS and degree > n:
        raise ValueError(f"{tag} is a condition on primitive forms of degree <= {n}")
    if tag == "DplusMinus":
        parts = [("dminus", None)]
        if degree >= 1:
            parts.append(("dplus", operator(n, "dminus", degree)))
    elif tag == "NplusMinus":
        parts = [("dplusstar", None)]
        if degree >= 1:
            parts.append(("dminusstar", operator(n, "dplusstar", degree)))
    elif tag == "Bn":
        if degree != n:
            raise ValueError("Bn is a condition on P^n")
        pm = operator(n, "dplus", n - 1) @ operator(n, "dminus", n)
        parts = [("dminus", pm)]
    elif tag == "Cn":
        if degree != n:
            raise ValueError("Cn is a condition on P^n")
        pms = operator(n, "dminusstar", n - 1) @ operator(n, "dplusstar", n)
        parts = [("dplusstar", pms)]
    else:
        parts = [(_BC_OPERATOR[tag], None)]
    kept = []
    for outer, inner in parts:
        k = degree if inner is None else inner.dst
        if not _vacuous(n, outer, k):
            kept.append((outer, inner))
    return BoundaryCondition(tag, n, degree, tuple(kept))


def _normal_symbol(n: int, tag: str, k: int) -> np.ndarray:
    """sigma_P(dx_1): the coefficient of the axis-0 derivative."""
    op = operator(n, tag, k)
    return op.terms.get((0,), np.zeros(op.shape()))


def face_signs() -> np.ndarray:
    """d rho / d x1 on the faces x1 = 0 and x1 = 1."""
    return np.array([-1.0, 1.0])


def bc_traces(eta: FormField, bc: BoundaryCondition) -> list[BoundaryTrace]:
    """Traces P(rho * inner(eta)) on both faces, one per part of the condition."""
    grid = eta.grid
    if eta.degree != bc.degree or grid.n != bc.n:
        raise ValueError(f"{bc.tag} is set up for degree {bc.degree}, field has {eta.degree}")
    if bc.primitive and not eta.primitive:
        raise ValueError(f"{bc.tag} applies to primitive fields only")
    out = []
    rho = make_rho(grid)
    for outer, inner in bc.parts:
        field = eta if inner is None else FormField.from_flat(
            grid, inner.dst, realizer(grid).realize(inner) @ eta.flat(), primitive=False)
        F = _normal_symbol(grid.n, outer, field.degree)
        vals = []
        for f in (0, 1):
            idx = grid.face_index(f)
            g = rho.gradient[idx, 0][:, None]
            vals.append(g * (field.coeffs[idx] @ F.T))
        out.append(BoundaryTrace(grid, operator(grid.n, outer, field.degree).dst, np.stack(vals)))
    return out


def bc_residual(eta: FormField, bc: BoundaryCondition | str) -> float:
    """Boundary-quadrature norm of the defining traces."""
    if isinstance(bc, str):
        bc = boundary_condition(bc, eta.grid.n, eta.degree)
    traces = bc_traces(eta, bc)
    return float(np.sqrt(sum(boundary_norm(t) ** 2 for t in traces)))


def bc_rows(bc: BoundaryCondition | str, grid: Grid, degree: int | None = None) -> LinearOpMatrix:
    """Constraint rows whose kernel is the set of fields satisfying ``bc``."""
    if isinstance(bc, str):
        bc = boundary_condition(bc, grid.n, degree)
    width = comb(grid.dim, bc.degree)
    N1, F1 = grid.shape[0], grid.face_nodes
    blocks = []
    sel = sp.csr_matrix((np.ones(2), ([0, 1], [0, N1 - 1])), shape=(2, N1))
    face_sel = sp.kron(sel, sp.identity(F1), format="csr")
    for outer, inner in bc.parts:
        k = bc.degree if inner is None else inner.dst
        F = _normal_symbol(grid.n, outer, k)
        rows = sp.kron(face_sel, sp.csr_matrix(F), format="csr")
        if inner is not None:
            rows = rows @ realizer(grid).realize(inner)
        blocks.append(rows)
    mat = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, grid.num_nodes * width))
    return LinearOpMatrix(mat, f"bc:{bc.tag}", grid, bc.degree, -1, bc.primitive, False)


# ---------------------------------------------------------------- Green's formulas

def greens_defect(op_tag: str, phi: FormField, psi: FormField, form: str = "direct") -> float:
    """|(P phi, psi) - (phi, P* psi) - boundary term|.

    ``form="direct"`` uses the boundary term  int <P(rho phi), psi>,
    ``form="adjoint"`` uses  -int <phi, P*(rho psi)>.
    """
    if op_tag not in ADJOINT:
        raise ValueError(f"Green's formula is set up for {sorted(ADJOINT)}, got {op_tag!r}")
    grid = phi.grid
    P = assemble(op_tag, grid, phi.degree)
    if psi.degree != P.dst_degree:
        raise ValueError(f"psi must have degree {P.dst_degree}")
    Pstar = assemble(ADJOINT[op_tag], grid, psi.degree)
    if P.src_primitive and not (phi.primitive and psi.primitive):
        raise ValueError(f"{op_tag} Green's formula is stated for primitive forms")
    lhs = inner_product(P.apply(phi), psi) - inner_product(phi, Pstar.apply(psi))
    rho = make_rho(grid)
    if form == "direct":
        F = _normal_symbol(grid.n, op_tag, phi.degree)
        field, other = phi, psi
        sign = 1.0
    elif form == "adjoint":
        F = _normal_symbol(grid.n, ADJOINT[op_tag], psi.degree)
        field, other = psi, phi
        sign = -1.0
    else:
        raise ValueError("form must be 'direct' or 'adjoint'")
    vals = []
    for f in (0, 1):
        idx = grid.face_index(f)
        vals.append(rho.gradient[idx, 0][:, None] * (field.coeffs[idx] @ F.T))
    trace = BoundaryTrace(grid, other.degree, np.stack(vals))
    other_trace = BoundaryTrace(grid, other.degree,
                                np.stack([other.coeffs[grid.face_index(f)] for f in (0, 1)]))
    return float(abs(lhs - sign * boundary_integral(trace, other_trace)))


# ---------------------------------------------------------------- symbols

@dataclass(frozen=True)
class SymbolSample:
    x: tuple[float, ...]
    xi: np.ndarray
    degree: int
    tag: str
    matrix: np.ndarray


def symbol_at(tag: str, x, xi, degree: int, n: int | None = None) -> SymbolSample:
    """Principal symbol of ``tag`` at covector ``xi`` (constant coefficients, so x is recorded only)."""
    xi = np.asarray(xi, dtype=float)
    n = n if n is not None else xi.size // 2
    if xi.size != 2 * n:
        raise ValueError(f"covector must have {2 * n} components")
    norm = float(np.linalg.norm(xi))
    if norm == 0.0:
        raise ValueError("zero covector")
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"covector must be a unit vector, |xi| = {norm}")
    check_degree(n, tag, degree)
    return SymbolSample(tuple(float(v) for v in np.atleast_1d(x)), xi, degree, tag,
                        operator(n, tag, degree).symbol(xi))


def adapted_frame(xi: np.ndarray) -> np.ndarray:
    """Rows w_1..w_2n: orthonormal Darboux coframe with w_1 = xi and w_{2i} = J w_{2i-1}."""
    xi = np.asarray(xi, dtype=float)
    n = xi.size // 2
    J1 = get_model(n).Jop(1)
    rows = []
    candidates = [xi] + list(np.eye(2 * n))
    for v in candidates:
        for w in rows:
            v = v - (w @ v) * w
        if np.linalg.norm(v) < 1e-8:
            continue
        v = v / np.linalg.norm(v)
        w2 = J1 @ v
        for w in rows:
            w2 = w2 - (w @ w2) * w
        rows.extend([v, w2 / np.linalg.norm(w2)])
        if len(rows) == 2 * n:
            break
    return np.array(rows)


def covector_ops(n: int, k: int, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matrices of w ^ (.) on degree k and i_{w#} on degree k."""
    model = get_model(n)
    m = 2 * n
    ext = sum(w[i] * model.ext(k, i) for i in range(m)) if k < m else np.zeros((0, model.fiber_dim(k)))
    inn = sum(w[i] * model.inner(k, i) for i in range(m)) if k > 0 else np.zeros((0, model.fiber_dim(k)))
    return np.asarray(ext), np.asarray(inn)


def beta_projectors(n: int, k: int, xi: np.ndarray) -> tuple[np.ndarray, ...]:
    """Projectors onto the w1^b1, w2^b2, w12^b3 and b4 parts of degree-k forms."""
    frame = adapted_frame(xi)
    dim = get_model(n).fiber_dim(k)
    I = np.eye(dim)

    def has(w):
        if k == 0:
            return np.zeros((dim, dim))
        e_lo, _ = covector_ops(n, k - 1, w)
        _, i_k = covector_ops(n, k, w)
        return e_lo @ i_k

    P1, P2 = has(frame[0]), has(frame[1])
    return P1 @ (I - P2), P2 @ (I - P1), P1 @ P2, (I - P1) @ (I - P2)


# ---------------------------------------------------------------- verification suites

def _op_gap(A: DiffOp, B: DiffOp, right: np.ndarray | None = None) -> float:
    """Largest coefficient of A - B, optionally restricted to the columns of ``right``."""
    gap = 0.0
    for key in set(A.terms) | set(B.terms):
        a = A.terms.get(key)
        b = B.terms.get(key)
        diff = (a if a is not None else 0.0) - (b if b is not None else 0.0)
        diff = np.asarray(diff, dtype=float)
        if right is not None:
            diff = diff @ right
        if diff.size:
            gap = max(gap, float(np.max(np.abs(diff))))
    return gap


def algebra_residuals(n: int) -> dict[str, float]:
    """Exact coefficient-level identities between the first-order operators.

    Covers d = dplus + L dminus and dplus^2 = dminus^2 = 0 on primitives, and the
    J-conjugations of dlam, dlam*, dminus' and its adjoint.
    """
    M = get_model(n)
    m = 2 * n
    out: dict[str, float] = {}

    def note(name, val):
        out[name] = max(out.get(name, 0.0), val)

    def fib(src, dst, mat):
        return DiffOp.fiber(src, dst, mat)

    # Jop uses dx_1 - i dx_2 as the (1,0) covector; the conjugations below
    # are written for the opposite choice, whose J is Jop^-1 = Jop^T
    def Jc(k):
        return M.Jop(k).T

    def Jc_inv(k):
        return M.Jop(k)

    for k in range(n + 1):
        P = M.prim_basis(k)
        split = None
        if k < n:
            split = operator(n, "dplus", k)
        if k >= 1:
            lm = fib(k - 1, k + 1, M.L(k - 1)) @ operator(n, "dminus", k)
            split = lm if split is None else split + lm
        if split is not None and k < m:
            note("d=dplus+L dminus", _op_gap(operator(n, "d", k), split, P))
        if k + 1 < n:
            note("dplus^2=0", _op_gap(operator(n, "dplus", k + 1) @ operator(n, "dplus", k),
                                      DiffOp(k, k + 2, {}), P))
        if k >= 2:
            note("dminus^2=0", _op_gap(operator(n, "dminus", k - 1) @ operator(n, "dminus", k),
                                       DiffOp(k, k - 2, {}), P))
        if k >= 1:
            # dminus' = J dplus* J^-1 on P^k
            rhs = fib(k - 1, k - 1, Jc(k - 1)) @ operator(n, "dplusstar", k) @ fib(k, k, Jc_inv(k))
            note("dminus'=J dplus* J^-1", _op_gap(operator(n, "dminusprime", k), rhs, P))
        if k < n:
            # adjoint of dminus' from P^(k+1) to P^k is (n - k) dminus*
            rhs = fib(k + 1, k + 1, Jc(k + 1)) @ operator(n, "dplus", k) @ fib(k, k, Jc_inv(k))
            note("dminus'*=J dplus J^-1", _op_gap(operator(n, "dminusstar", k).scale(n - k), rhs, P))
    for k in range(m + 1):
        if k >= 1:
            rhs = (fib(k - 1, k - 1, Jc(k - 1)) @ operator(n, "dstar", k)
                   @ fib(k, k, Jc_inv(k))).scale(-1.0)
            note("dlam=-J d* J^-1", _op_gap(operator(n, "dlam", k), rhs))
        if k < m:
            rhs = (fib(k + 1, k + 1, Jc(k + 1)) @ operator(n, "d", k)
                   @ fib(k, k, Jc_inv(k))).scale(-1.0)
            note("dlam*=-J d J^-1", _op_gap(operator(n, "dlamstar", k), rhs))
    return out


def symbol_checks(n: int, rng: np.random.Generator, samples: int = 100) -> dict[str, float]:
    """Symbol identities in the frame adapted to random unit covectors.

    Returns max residuals of sigma(d) = w1^, sigma(d*) = -i_e1,
    sigma(dlam) = -i_e2, sigma(dlam*) = w2^, the block multipliers
    (1, 1, 1/4, 1/4) of both fourth-order Laplacians, and under
    ``min_singular`` the smallest singular value of those symbols.
    """
    M = get_model(n)
    m = 2 * n
    out = {"sigma(d)": 0.0, "sigma(d*)": 0.0, "sigma(dlam)": 0.0, "sigma(dlam*)": 0.0,
           "sigma(lap_ddlam) blocks": 0.0, "sigma(lap_dplusdlam) blocks": 0.0}
    smin = np.inf

    def note(name, A, B):
        if A.size:
            out[name] = max(out[name], float(np.max(np.abs(A - B))))

    for _ in range(samples):
        xi = rng.standard_normal(m)
        xi /= np.linalg.norm(xi)
        frame = adapted_frame(xi)
        for k in range(m + 1):
            if k < m:
                e1, _ = covector_ops(n, k, frame[0])
                e2, _ = covector_ops(n, k, frame[1])
                note("sigma(d)", symbol_at("d", 0.0, xi, k, n).matrix, e1)
                note("sigma(dlam*)", symbol_at("dlamstar", 0.0, xi, k, n).matrix, e2)
            if k > 0:
                _, i1 = covector_ops(n, k, frame[0])
                _, i2 = covector_ops(n, k, frame[1])
                note("sigma(d*)", symbol_at("dstar", 0.0, xi, k, n).matrix, -i1)
                note("sigma(dlam)", symbol_at("dlam", 0.0, xi, k, n).matrix, -i2)
            P1, P2, P3, P4 = beta_projectors(n, k, xi)
            target = P1 + P2 + 0.25 * (P3 + P4)
            for tag in ("lap_ddlam", "lap_dplusdlam"):
                S = symbol_at(tag, 0.0, xi, k, n).matrix
                note(f"sigma({tag}) blocks", S, target)
                smin = min(smin, float(np.linalg.svd(S, compute_uv=False).min()))
    out["min_singular"] = smin
    return out


@dataclass
class ConsistencyRow:
    metric: str
    shapes: tuple
    errors: tuple
    orders: tuple

    @property
    def observed_order(self) -> float:
        return self.orders[-1] if self.orders else float("nan")


def _consistency_family(n, k, primitive, rng, count, partner_degree=None):
    out = []
    for _ in range(count):
        waves = [rng.integers(-1, 2, size=2 * n - 1)]
        a = random_trig_field(n, k, rng, primitive=primitive, max_wave=1, waves=waves)
        b = (random_trig_field(n, partner_degree, rng, primitive=primitive, max_wave=1, waves=waves)
             if partner_degree is not None else None)
        out.append((a, b))
    return out


def consistency_study(n: int, base_shape, levels: int = 3, order: int = 2, seed: int = 7,
                      family: int = 6) -> list[ConsistencyRow]:
    """Discretization errors under h -> h/2 against exact manufactured values.

    Each metric is the worst case over a family of smooth fields whose pairs
    share Fourier modes; orders are log2 ratios of consecutive levels.
    Metrics: the split d = dplus + L dminus, dplus applied to an exact
    dplus-image (n = 2 only) and both forms of each Green's formula.
    """
    M = get_model(n)
    grids = [Grid(n, tuple(base_shape), order)]
    for _ in range(levels - 1):
        grids.append(grids[-1].refine())
    shapes = tuple(g.label() for g in grids)
    rows = []

    def record(metric, errs):
        errs = tuple(float(e) for e in errs)
        orders = tuple(float(np.log2(errs[i] / errs[i + 1])) if errs[i + 1] > 0 else float("inf")
                       for i in range(len(errs) - 1))
        rows.append(ConsistencyRow(metric, shapes, errs, orders))

    # d - (dplus + L dminus), with the right side exact
    k = 1
    fam = _consistency_family(n, k, True, np.random.default_rng(seed), family)
    errs = []
    for g in grids:
        worst = 0.0
        for a, _ in fam:
            exact = a.apply(operator(n, "dplus", k)) if k < n else None
            lm = a.apply(operator(n, "dminus", k)).map_fiber(M.L(k - 1), k + 1)
            exact = lm if exact is None else exact + lm
            err = assemble("d", g, k).apply(a.sample(g)) - exact.sample(g)
            worst = max(worst, err.norm())
        errs.append(worst)
    record("d-(dplus+L dminus)", errs)

    if n >= 2:
        fam = _consistency_family(n, 0, True, np.random.default_rng(seed), family)
        errs = []
        for g in grids:
            worst = 0.0
            for a, _ in fam:
                image = a.apply(operator(n, "dplus", 0)).sample(g, primitive=True)
                worst = max(worst, assemble("dplus", g, 1).apply(image).norm())
            errs.append(worst)
        record("dplus^2", errs)

    for tag in ("d", "dlam", "dplus", "dminus"):
        if tag == "d":
            k = 1 if n == 2 else 0
        elif tag == "dlam":
            k = 2 if n == 2 else 1
        elif tag == "dplus":
            k = 1 if n == 2 else 0
        else:
            k = 1
        prim = tag in ("dplus", "dminus")
        kd = operator(n, tag, k).dst
        fam = _consistency_family(n, k, prim, np.random.default_rng(seed), family, kd)
        errs = []
        for g in grids:
            worst = 0.0
            for a, b in fam:
                phi, psi = a.sample(g), b.sample(g)
                for form in ("direct", "adjoint"):
                    worst = max(worst, greens_defect(tag, phi, psi, form=form))
            errs.append(worst)
        record(f"green:{tag}", errs)
    return rows
