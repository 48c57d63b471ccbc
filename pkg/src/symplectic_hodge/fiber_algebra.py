"""Exterior algebra of the 2n-dimensional model fiber.

Covectors dx_1, ..., dx_{2n} carry the Euclidean metric and the Darboux form
omega = dx_1^dx_2 + dx_3^dx_4 + ...  A k-form is a coefficient vector over the
lexicographically ordered multi-indices of size k.  All operators are real
matrices cached per degree on a :class:`SymplecticModel`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np

ALGEBRA_TOL = 1e-12
MAX_CONDITION = 1e8


def basis(dim: int, k: int) -> list[tuple[int, ...]]:
    """Lexicographically ordered multi-indices (0-based) of size k."""
    return list(itertools.combinations(range(dim), k))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _index(dim: int, k: int) -> dict:
    return {I: pos for pos, I in enumerate(basis(dim, k))}


@lru_cache(maxsize=None)
def ext_matrix(dim: int, k: int, i: int) -> np.ndarray:
    """Matrix of dx_i ^ (.) from degree k to degree k+1."""
    src = basis(dim, k)
    dst = _index(dim, k + 1)
    out = np.zeros((len(dst), len(src)))
    for col, I in enumerate(src):
        if i in I:
            continue
        pos = sum(1 for a in I if a < i)
        J = tuple(sorted(I + (i,)))
        out[dst[J], col] = (-1) ** pos
    out.setflags(write=False)
    return out


def int_matrix(dim: int, k: int, i: int) -> np.ndarray:
    """Matrix of the contraction i_{e_i} from degree k to degree k-1."""
    return ext_matrix(dim, k - 1, i).T


def wedge_coeffs(dim: int, ka: int, a: np.ndarray, kb: int, b: np.ndarray) -> np.ndarray:
    out = np.zeros(comb(dim, ka + kb))
    dst = _index(dim, ka + kb)
    for I, x in zip(basis(dim, ka), a):
        if x == 0:
            continue
        for J, y in zip(basis(dim, kb), b):
            if y == 0 or set(I) & set(J):
                continue
            K = I + J
            out[dst[tuple(sorted(K))]] += _perm_sign(K) * x * y
    return out


@dataclass(frozen=True)
class FiberForm:
    n: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if not 0 <= self.degree <= 2 * self.n:
            raise ValueError(f"degree {self.degree} outside [0, {2 * self.n}]")
        if coeffs.shape != (comb(2 * self.n, self.degree),):
            raise ValueError(
                f"expected {comb(2 * self.n, self.degree)} coefficients, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dim(self) -> int:
        return 2 * self.n

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def is_primitive(self, tol: float = ALGEBRA_TOL) -> bool:
        if self.degree > self.n:
            return False
        lam = get_model(self.n).Lam(self.degree) @ self.coeffs
        return bool(np.linalg.norm(lam) <= tol * max(self.norm(), 1.0))

    def __add__(self, other: FiberForm) -> FiberForm:
        _check_same(self, other)
        return FiberForm(self.n, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: FiberForm) -> FiberForm:
        _check_same(self, other)
        return FiberForm(self.n, self.degree, self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> FiberForm:
        return FiberForm(self.n, self.degree, c * self.coeffs)

    __rmul__ = __mul__


def _check_same(a: FiberForm, b: FiberForm) -> None:
    if a.n != b.n or a.degree != b.degree:
        raise ValueError("forms live in different spaces")


def basis_form(n: int, *indices: int) -> FiberForm:
    """The basis form dx_{i1} ^ ... ^ dx_{ik} with 1-based indices."""
    idx = tuple(i - 1 for i in indices)
    out = FiberForm(n, 0, np.ones(1))
    for i in idx:
        # append on the right: out ^ dx_i = (-1)^deg dx_i ^ out
        sign = (-1) ** out.degree
        out = FiberForm(n, out.degree + 1, sign * ext_matrix(2 * n, out.degree, i) @ out.coeffs)
    return out


@dataclass(frozen=True)
class LefschetzComponents:
    source_degree: int
    components: tuple  # of (r, FiberForm)

    def reassemble(self) -> FiberForm:
        first = self.components[0][1]
        model = get_model(first.n)
        total = np.zeros(comb(2 * first.n, self.source_degree))
        for r, B in self.components:
            total += model.Lpow(B.degree, r) @ B.coeffs / factorial(r)
        return FiberForm(first.n, self.source_degree, total)


@dataclass
class SymplecticModel:
    """Standard compatible triple on R^{2n} with cached fiber matrices."""

    n: int
    omega: np.ndarray = field(init=False)
    omega_inv: np.ndarray = field(init=False)
    J: np.ndarray = field(init=False)
    metric: np.ndarray = field(init=False)
    orientation: int = 1

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("supported half-dimensions are n = 1, 2")
        m = 2 * self.n
        self.omega = np.zeros((m, m))
        self.J = np.zeros((m, m))
        for i in range(self.n):
            a, b = 2 * i, 2 * i + 1
            self.omega[a, b], self.omega[b, a] = 1.0, -1.0
            # J e_a = e_b, J e_b = -e_a (columns are images)
            self.J[b, a], self.J[a, b] = 1.0, -1.0
        self.omega_inv = np.linalg.inv(self.omega)
        self.metric = np.eye(m)
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return 2 * self.n

    def fiber_dim(self, k: int) -> int:
        return comb(self.dim, k) if 0 <= k <= self.dim else 0

    def _cached(self, key, build):
        if key not in self._cache:
            mat = build()
            if isinstance(mat, np.ndarray):
                mat.setflags(write=False)
            self._cache[key] = mat
        return self._cache[key]

    def ext(self, k: int, i: int) -> np.ndarray:
        return ext_matrix(self.dim, k, i)

    def inner(self, k: int, i: int) -> np.ndarray:
        return int_matrix(self.dim, k, i)

    def L(self, k: int) -> np.ndarray:
        def build():
            out = np.zeros((self.fiber_dim(k + 2), self.fiber_dim(k)))
            for i in range(self.n):
                out += self.ext(k + 1, 2 * i) @ self.ext(k, 2 * i + 1)
            return out
        return self._cached(("L", k), build)

    def Lpow(self, k: int, r: int) -> np.ndarray:
        def build():
            out = np.eye(self.fiber_dim(k))
            for s in range(r):
                out = self.L(k + 2 * s) @ out
            return out
        return self._cached(("Lpow", k, r), build)

    def Lam(self, k: int) -> np.ndarray:
        """Half contraction with omega^{-1} over all index pairs."""
        def build():
            out = np.zeros((self.fiber_dim(k - 2), self.fiber_dim(k)))
            if k < 2:
                return out
            for i in range(self.dim):
                for j in range(self.dim):
                    w = self.omega_inv[i, j]
                    if w:
                        out += 0.5 * w * self.inner(k - 1, i) @ self.inner(k, j)
            return out
        return self._cached(("Lam", k), build)

    def H(self, k: int) -> np.ndarray:
        return self._cached(("H", k), lambda: (self.n - k) * np.eye(self.fiber_dim(k)))

    def star(self, k: int) -> np.ndarray:
        def build():
            out = np.zeros((self.fiber_dim(self.dim - k), self.fiber_dim(k)))
            dst = _index(self.dim, self.dim - k)
            for col, I in enumerate(basis(self.dim, k)):
                rest = tuple(a for a in range(self.dim) if a not in I)
                out[dst[rest], col] = self.orientation * _perm_sign(I + rest)
            return out
        return self._cached(("star", k), build)

    def Jop(self, k: int) -> np.ndarray:
        return self._cached(("J", k), lambda: _j_matrix(self, k))

    def prim_basis(self, k: int) -> np.ndarray:
        """Orthonormal columns spanning the primitive k-forms (k <= n)."""
        def build():
            if k > self.n or k < 0:
                return np.zeros((self.fiber_dim(k), 0))
            if k < 2:
                return np.eye(self.fiber_dim(k))
            _, s, vt = np.linalg.svd(self.Lam(k))
            rank = int(np.sum(s > ALGEBRA_TOL * s[0]))
            return vt[rank:].T.copy()
        return self._cached(("P", k), build)

    def prim_dim(self, k: int) -> int:
        return self.prim_basis(k).shape[1]

    def lefschetz_system(self, k: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Square matrix [L^r/r! P_{k-2r}] and the (r, column-count) layout."""
        def build():
            cols, layout = [], []
            for r in range(max(k - self.n, 0), k // 2 + 1):
                P = self.prim_basis(k - 2 * r)
                if P.shape[1] == 0:
                    continue
                cols.append(self.Lpow(k - 2 * r, r) @ P / factorial(r))
                layout.append((r, P.shape[1]))
            M = np.hstack(cols) if cols else np.zeros((self.fiber_dim(k), 0))
            if M.shape[0] != M.shape[1]:
                raise RuntimeError(f"Lefschetz system for degree {k} is not square")
            cond = np.linalg.cond(M)
            if cond > MAX_CONDITION:
                raise RuntimeError(f"Lefschetz system for degree {k} has condition {cond:.3g}")
            return M, layout
        return self._cached(("lsys", k), build)

    def lefschetz_pieces(self, k: int) -> dict[int, np.ndarray]:
        """Matrices sending a k-form to the coefficients of its B_{k-2r}."""
        def build():
            M, layout = self.lefschetz_system(k)
            Minv = np.linalg.inv(M)
            out, start = {}, 0
            for r, width in layout:
                P = self.prim_basis(k - 2 * r)
                out[r] = P @ Minv[start:start + width]
                start += width
            for piece in out.values():
                piece.setflags(write=False)
            return out
        return self._cached(("lpieces", k), build)

    def R(self, k: int) -> np.ndarray:
        """Lefschetz level: R(L^r B) = r L^r B."""
        def build():
            out = np.zeros((self.fiber_dim(k), self.fiber_dim(k)))
            for r, piece in self.lefschetz_pieces(k).items():
                out += r * self.Lpow(k - 2 * r, r) @ piece / factorial(r)
            return out
        return self._cached(("R", k), build)

    def prim_proj(self, k: int) -> np.ndarray:
        """The r = 0 Lefschetz component, as a map on degree-k forms."""
        def build():
            pieces = self.lefschetz_pieces(k)
            if 0 not in pieces:
                return np.zeros((self.fiber_dim(k), self.fiber_dim(k)))
            return pieces[0].copy()
        return self._cached(("pi", k), build)


def _j_matrix(model: SymplecticModel, k: int) -> np.ndarray:
    """Materialize sum_{p,q} i^{p-q} Pi^{p,q} on real k-forms.

    The (1,0) covectors are dx_{2j-1} - i dx_{2j}; with this choice the
    operator sends dx_1 to dx_2, i.e. it is the pullback by J^{-1}.
    """
    n, m = model.n, model.dim
    if k == 0:
        return np.eye(1)
    theta = []
    for j in range(n):
        a, b = 2 * j, 2 * j + 1
        v = np.zeros(m, dtype=complex)
        v[a], v[b] = 1.0, -1.0j
        theta.append((v, 1, 0))
        theta.append((v.conj(), 0, 1))
    cols, phases = [], []
    for combo in itertools.combinations(range(2 * n), k):
        vec = np.ones(1, dtype=complex)
        deg, p, q = 0, 0, 0
        for idx in combo:
            v, dp, dq = theta[idx]
            vec = _complex_wedge(m, deg, vec, v)
            deg += 1
            p, q = p + dp, q + dq
        cols.append(vec)
        phases.append(1j ** (p - q))
    P = np.array(cols).T
    Jc = P @ np.diag(phases) @ np.linalg.inv(P)
    if np.max(np.abs(Jc.imag)) > ALGEBRA_TOL:
        raise RuntimeError("J operator has a non-real residue")
    return Jc.real.copy()


def _complex_wedge(m: int, k: int, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(comb(m, k + 1), dtype=complex)
    for i in range(m):
        if v[i] != 0:
            out = out + (ext_matrix(m, k, i) @ a) * v[i]
    # a ^ v = (-1)^k v ^ a
    return (-1) ** k * out


_MODELS: dict[int, SymplecticModel] = {}


def get_model(n: int) -> SymplecticModel:
    if n not in _MODELS:
        _MODELS[n] = SymplecticModel(n)
    return _MODELS[n]


# -- operations on FiberForm ----------------------------------------------

def wedge(a: FiberForm, b: FiberForm) -> FiberForm:
    if a.n != b.n:
        raise ValueError("forms on different fibers")
    if a.degree + b.degree > 2 * a.n:
        raise ValueError(f"degree overflow: {a.degree} + {b.degree} > {2 * a.n}")
    return FiberForm(a.n, a.degree + b.degree,
                     wedge_coeffs(2 * a.n, a.degree, a.coeffs, b.degree, b.coeffs))


def interior(i: int, a: FiberForm) -> FiberForm:
    """Contraction with the basis vector e_i (1-based)."""
    if a.degree == 0:
        raise ValueError("cannot contract a 0-form")
    return FiberForm(a.n, a.degree - 1, int_matrix(2 * a.n, a.degree, i - 1) @ a.coeffs)


def lefschetz_L(a: FiberForm) -> FiberForm:
    if a.degree + 2 > 2 * a.n:
        raise ValueError("L would exceed the top degree")
    return FiberForm(a.n, a.degree + 2, get_model(a.n).L(a.degree) @ a.coeffs)


def lambda_dual(a: FiberForm) -> FiberForm:
    if a.degree < 2:
        raise ValueError("Lambda needs degree >= 2")
    return FiberForm(a.n, a.degree - 2, get_model(a.n).Lam(a.degree) @ a.coeffs)


def degree_H(a: FiberForm) -> FiberForm:
    return FiberForm(a.n, a.degree, (a.n - a.degree) * a.coeffs)


def lefschetz_decompose(a: FiberForm) -> LefschetzComponents:
    model = get_model(a.n)
    pieces = model.lefschetz_pieces(a.degree)
    comps = tuple((r, FiberForm(a.n, a.degree - 2 * r, P @ a.coeffs))
                  for r, P in sorted(pieces.items()))
    return LefschetzComponents(a.degree, comps)


def primitive_project(a: FiberForm) -> FiberForm:
    if a.degree > a.n:
        raise ValueError(f"no primitive forms in degree {a.degree} > n = {a.n}")
    return FiberForm(a.n, a.degree, get_model(a.n).prim_proj(a.degree) @ a.coeffs)


def j_operator(a: FiberForm) -> FiberForm:
    return FiberForm(a.n, a.degree, get_model(a.n).Jop(a.degree) @ a.coeffs)


def hodge_star(a: FiberForm) -> FiberForm:
    return FiberForm(a.n, 2 * a.n - a.degree, get_model(a.n).star(a.degree) @ a.coeffs)


def omega_form(n: int) -> FiberForm:
    return FiberForm(n, 2, get_model(n).L(0) @ np.ones(1))


def identity_residuals(n: int, rng: np.random.Generator | None = None,
                       samples: int = 20) -> dict[str, float]:
    """Max entrywise residual of each algebraic identity over all degrees.

    Matrix identities are checked exactly per degree; the Lefschetz
    round trip and primitivity of its pieces use ``samples`` random forms.
    """
    M = get_model(n)
    m = M.dim
    rng = rng if rng is not None else np.random.default_rng(0)
    out: dict[str, float] = {}

    def note(name, A):
        A = np.asarray(A)
        out[name] = max(out.get(name, 0.0), float(np.max(np.abs(A))) if A.size else 0.0)

    for k in range(m + 1):
        I = np.eye(M.fiber_dim(k))
        lam_l = M.Lam(k + 2) @ M.L(k) if k + 2 <= m else np.zeros((M.fiber_dim(k), M.fiber_dim(k)))
        l_lam = M.L(k - 2) @ M.Lam(k) if k >= 2 else np.zeros_like(I)
        note("[Lam,L]=H", lam_l - l_lam - M.H(k))
        if k + 2 <= m:
            note("[H,L]=-2L", M.H(k + 2) @ M.L(k) - M.L(k) @ M.H(k) + 2 * M.L(k))
            note("[J,L]=0", M.Jop(k + 2) @ M.L(k) - M.L(k) @ M.Jop(k))
        if k >= 2:
            note("[H,Lam]=2Lam", M.H(k - 2) @ M.Lam(k) - M.Lam(k) @ M.H(k) - 2 * M.Lam(k))
            note("[J,Lam]=0", M.Jop(k - 2) @ M.Lam(k) - M.Lam(k) @ M.Jop(k))
        for r in range(1, (m - k) // 2 + 1):
            lhs = M.Lam(k + 2 * r) @ M.Lpow(k, r)
            if k >= 2:
                lhs = lhs - M.Lpow(k - 2, r) @ M.Lam(k)
            rhs = r * (M.H(k + 2 * r - 2) + (r - 1) * np.eye(M.fiber_dim(k + 2 * r - 2))) @ M.Lpow(k, r - 1)
            note("[Lam,L^r]=(H+r-1)rL^(r-1)", lhs - rhs)
        R, H = M.R(k), M.H(k)
        note("L Lam=(H+R+1)R", l_lam - (H + R + I) @ R)
        note("Lam L=(H+R)(R+1)", lam_l - (H + R) @ (R + I))
        J = M.Jop(k)
        note("J^2=(-1)^k", J @ J - (-1) ** k * I)
        note("J orthogonal", J.T @ J - I)
        for _ in range(samples):
            a = FiberForm(n, k, rng.standard_normal(M.fiber_dim(k)))
            comps = lefschetz_decompose(a)
            note("Lefschetz round trip", comps.reassemble().coeffs - a.coeffs)
            for _, b in comps.components:
                if b.degree >= 2:
                    note("Lefschetz pieces primitive", M.Lam(b.degree) @ b.coeffs)
    return out
