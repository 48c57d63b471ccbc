"""Symbolic definitions of the symplectic first-order operators and Laplacians.

Every operator is built from the exterior derivative and fiber matrices, so
identities such as d = dplus + L dminus hold exactly at the level of fiber
coefficients.  Operators on primitive forms are written in the full basis and
are meant to be applied to primitive inputs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .diffop import DiffOp
from .fiber_algebra import get_model

FIRST_ORDER = ("d", "dstar", "dlam", "dlamstar", "dplus", "dminus", "dminusprime",
               "dplusstar", "dminusstar")
LAPLACIANS = ("lap_plus", "lap_minus", "lap_pp", "lap_mm", "lap_ddlam", "lap_dplusdlam")
PRIMITIVE_TAGS = ("dplus", "dminus", "dminusprime", "dplusstar", "dminusstar",
                  "lap_plus", "lap_minus", "lap_pp", "lap_mm")

# degree shift of each tag
SHIFT = {"d": 1, "dstar": -1, "dlam": -1, "dlamstar": 1, "dplus": 1, "dminus": -1,
         "dminusprime": -1, "dplusstar": -1, "dminusstar": 1}


def _fib(k_src: int, k_dst: int, mat) -> DiffOp:
    return DiffOp.fiber(k_src, k_dst, mat)


def check_degree(n: int, tag: str, k: int) -> None:
    top = 2 * n
    if tag in PRIMITIVE_TAGS and not 0 <= k <= n:
        raise ValueError(f"{tag} acts on primitive forms of degree <= {n}, got {k}")
    if not 0 <= k <= top:
        raise ValueError(f"degree {k} outside [0, {top}]")
    if tag in SHIFT and not 0 <= k + SHIFT[tag] <= top:
        raise ValueError(f"{tag} maps degree {k} outside [0, {top}]")
    if tag in ("dplus",) and k >= n:
        raise ValueError(f"dplus on P^{k} lands in P^{k + 1}, which is zero for n = {n}")
    if tag in ("dminus", "dminusprime", "dplusstar") and k == 0:
        raise ValueError(f"{tag} is not defined on P^0")
    if tag == "dminusstar" and k >= n:
        raise ValueError(f"dminusstar needs k < n, got k = {k}")
    if tag in ("lap_plus", "lap_minus") and k >= n:
        raise ValueError(f"{tag} is defined on P^k with k < n, got k = {k}")
    if tag in ("lap_pp", "lap_mm") and k != n:
        raise ValueError(f"{tag} is defined on P^n only")


@lru_cache(maxsize=None)
def operator(n: int, tag: str, k: int) -> DiffOp:
    """The DiffOp for ``tag`` acting on degree-k forms."""
    check_degree(n, tag, k)
    return _build(n, tag, k)


def _build(n: int, tag: str, k: int) -> DiffOp:
    M = get_model(n)
    m = 2 * n
    if tag == "d":
        return DiffOp(k, k + 1, {(i,): np.array(M.ext(k, i)) for i in range(m)})
    if tag == "dstar":
        # d* = - star d star in even dimension
        return (_fib(m - k + 1, k - 1, M.star(m - k + 1)) @ operator(n, "d", m - k)
                @ _fib(k, m - k, M.star(k))).scale(-1.0)
    if tag == "dlam":
        out = DiffOp(k, k - 1, {})
        if k >= 2:
            out = operator(n, "d", k - 2) @ _fib(k, k - 2, M.Lam(k))
        if k + 1 >= 2 and k < m:
            other = _fib(k + 1, k - 1, M.Lam(k + 1)) @ operator(n, "d", k)
            out = other.scale(-1.0) if not out.terms else out - other
        return out
    if tag == "dlamstar":
        # adjoint of d Lambda - Lambda d is L d* - d* L
        out = None
        if k >= 1:
            out = _fib(k - 1, k + 1, M.L(k - 1)) @ operator(n, "dstar", k)
        if k + 2 <= m:
            other = operator(n, "dstar", k + 2) @ _fib(k, k + 2, M.L(k))
            out = other.scale(-1.0) if out is None else out - other
        return out
    if tag == "dplus":
        # d - L H^{-1} Lambda d, with H acting on (k-1)-forms by n - k + 1
        dk = operator(n, "d", k)
        if k + 1 < 2:
            return dk
        corr = (_fib(k - 1, k + 1, M.L(k - 1)) @ _fib(k + 1, k - 1, M.Lam(k + 1))).scale(1.0 / (n - k + 1))
        return dk - corr @ dk
    if tag == "dminus":
        return _fib(k + 1, k - 1, M.Lam(k + 1) / (n - k + 1)) @ operator(n, "d", k)
    if tag == "dminusprime":
        # (H + R) dminus; dminus lands in primitive (k-1)-forms where R = 0
        return operator(n, "dminus", k).scale(float(n - k + 1))
    if tag == "dplusstar":
        return operator(n, "dstar", k)
    if tag == "dminusstar":
        dstar_L = operator(n, "dstar", k + 2) @ _fib(k, k + 2, M.L(k))
        if k == 0:
            return dstar_L.scale(1.0 / (n - k))
        L_dstar = _fib(k - 1, k + 1, M.L(k - 1)) @ operator(n, "dstar", k)
        return dstar_L.scale(1.0 / (n - k)) - L_dstar.scale(1.0 / (n - k + 1))
    if tag == "lap_plus":
        out = operator(n, "dplusstar", k + 1) @ operator(n, "dplus", k)
        if k >= 1:
            out = out + operator(n, "dplus", k - 1) @ operator(n, "dplusstar", k)
        return out
    if tag == "lap_minus":
        out = operator(n, "dminus", k + 1) @ operator(n, "dminusstar", k)
        if k >= 1:
            out = out + operator(n, "dminusstar", k - 1) @ operator(n, "dminus", k)
        return out
    if tag == "lap_pp":
        pm = operator(n, "dplus", n - 1) @ operator(n, "dminus", n)
        pm_star = operator(n, "dminusstar", n - 1) @ operator(n, "dplusstar", n)
        pps = operator(n, "dplus", n - 1) @ operator(n, "dplusstar", n)
        return pm_star @ pm + pps @ pps
    if tag == "lap_mm":
        pm = operator(n, "dplus", n - 1) @ operator(n, "dminus", n)
        pm_star = operator(n, "dminusstar", n - 1) @ operator(n, "dplusstar", n)
        msm = operator(n, "dminusstar", n - 1) @ operator(n, "dminus", n)
        return pm @ pm_star + msm @ msm
    if tag == "lap_ddlam":
        a = _maybe(n, "dlamstar", k - 1, "dstar", k, "d", k - 1, "dlam", k)
        q = _quarter_square(n, k, ("d", "dstar"), ("dlam", "dlamstar"))
        return q if a is None else a + q
    if tag == "lap_dplusdlam":
        a = _maybe(n, "d", k - 1, "dlam", k, "dlamstar", k - 1, "dstar", k)
        q = _quarter_square(n, k, ("dstar", "d"), ("dlamstar", "dlam"))
        return q if a is None else a + q
    raise ValueError(f"unknown operator tag {tag!r}")


def _maybe(n, t1, k1, t2, k2, t3, k3, t4, k4):
    """t1 t2 t3 t4 applied right-to-left, or None if a degree falls outside range."""
    try:
        ops = [operator(n, t4, k4)]
        deg = k4 + SHIFT[t4]
        for t in (t3, t2, t1):
            ops.append(operator(n, t, deg))
            deg += SHIFT[t]
    except ValueError:
        return None
    out = ops[0]
    for o in ops[1:]:
        out = o @ out
    return out


def _quarter_square(n, k, pair1, pair2):
    """1/4 (A B + C E)^2 where (A, B) = pair1 and (C, E) = pair2, B and E applied first."""
    def comp(first, second):
        try:
            inner = operator(n, second, k)
            return operator(n, first, k + SHIFT[second]) @ inner
        except ValueError:
            return None
    terms = [t for t in (comp(*pair1), comp(*pair2)) if t is not None]
    s = terms[0]
    for t in terms[1:]:
        s = s + t
    return (s @ s).scale(0.25)
