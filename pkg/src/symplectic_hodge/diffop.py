"""Constant-coefficient differential operators on form fields.

An operator is a finite sum  sum_a  D^a (x) F_a  where D^a is a product of
axis derivatives (a multi-index, stored as a sorted tuple of axes) and F_a a
fiber matrix.  Axis derivatives commute with each other and with fiber
matrices, so composition only multiplies terms pairwise.  Realization turns
the abstract sum into a sparse matrix on the whole grid or a dense block for
one Fourier mode of the periodic axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid_domain import Grid
from .stencils import bounded_matrix, periodic_matrix, periodic_symbol


@dataclass
class DiffOp:
    src: int  # domain degree
    dst: int  # codomain degree
    terms: dict = field(default_factory=dict)  # tuple(axes) -> fiber matrix

    @classmethod
    def fiber(cls, src: int, dst: int, mat: np.ndarray) -> DiffOp:
        return cls(src, dst, {(): np.asarray(mat, dtype=float)})

    def __matmul__(self, other: DiffOp) -> DiffOp:
        if other.dst != self.src:
            raise ValueError(f"cannot compose: degree {other.dst} into {self.src}")
        out: dict = {}
        for ka, A in self.terms.items():
            for kb, B in other.terms.items():
                key = tuple(sorted(ka + kb))
                prod = A @ B
                out[key] = out[key] + prod if key in out else prod
        return DiffOp(other.src, self.dst, out)

    def __add__(self, other: DiffOp) -> DiffOp:
        if (self.src, self.dst) != (other.src, other.dst):
            raise ValueError("cannot add operators between different degrees")
        out = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v.copy()
        return DiffOp(self.src, self.dst, out)

    def __sub__(self, other: DiffOp) -> DiffOp:
        return self + other.scale(-1.0)

    def scale(self, c: float) -> DiffOp:
        return DiffOp(self.src, self.dst, {k: c * v for k, v in self.terms.items()})

    __rmul__ = scale

    @property
    def order(self) -> int:
        return max((len(k) for k in self.terms), default=0)

    def shape(self) -> tuple[int, int]:
        mat = next(iter(self.terms.values()))
        return mat.shape

    def symbol(self, xi: np.ndarray) -> np.ndarray:
        """Principal symbol: top-order terms with each derivative replaced by xi."""
        top = self.order
        out = None
        for key, mat in self.terms.items():
            if len(key) != top:
                continue
            c = float(np.prod([xi[a] for a in key])) if key else 1.0
            out = c * mat if out is None else out + c * mat
        return out

    def apply_modes(self, wavevec: np.ndarray) -> np.ndarray:
        """Exact action on exp(2 pi i k.x) amplitudes (complex fiber matrix)."""
        out = None
        for key, mat in self.terms.items():
            c = complex(np.prod([2j * np.pi * wavevec[a] for a in key])) if key else 1.0
            out = c * mat if out is None else out + c * mat
        return out


class GridRealizer:
    """Sparse matrices of DiffOps on a full grid (node-major, fiber fastest)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        h = grid.spacing
        order = grid.stencil_order
        self.axis_mats = [bounded_matrix(grid.shape[0], h[0], order)] + [
            periodic_matrix(grid.shape[a], h[a], order) for a in range(1, grid.dim)]
        self._node_cache: dict = {}

    def node_operator(self, key: tuple[int, ...]) -> sp.csr_matrix:
        if key not in self._node_cache:
            factors = []
            for a in range(self.grid.dim):
                count = key.count(a)
                m = sp.identity(self.grid.shape[a], format="csr")
                for _ in range(count):
                    m = self.axis_mats[a] @ m
                factors.append(m)
            out = factors[0]
            for f in factors[1:]:
                out = sp.kron(out, f, format="csr")
            self._node_cache[key] = out
        return self._node_cache[key]

    def realize(self, op: DiffOp, left=None, right=None) -> sp.csr_matrix:
        """Sparse matrix of ``op``; optional node operators sandwich the derivatives.

        ``left``/``right`` are node-level sparse matrices (e.g. multiplication
        by rho) applied outside or inside the derivative part of every term.
        """
        total = None
        for key, mat in op.terms.items():
            node = self.node_operator(key)
            if left is not None:
                node = left @ node
            if right is not None:
                node = node @ right
            term = sp.kron(node, sp.csr_matrix(mat), format="csr")
            total = term if total is None else total + term
        return total.tocsr()


class BlockRealizer:
    """Dense blocks of DiffOps for a single Fourier mode of the periodic axes."""

    def __init__(self, grid: Grid):
        self.grid = grid
        h = grid.spacing
        self.D1 = bounded_matrix(grid.shape[0], h[0], grid.stencil_order).toarray()
        self._powers = {0: np.eye(grid.shape[0]), 1: self.D1}

    def _d1_power(self, p: int) -> np.ndarray:
        if p not in self._powers:
            self._powers[p] = self.D1 @ self._d1_power(p - 1)
        return self._powers[p]

    def symbols(self, mode: tuple[int, ...]) -> np.ndarray:
        g = self.grid
        return np.array([periodic_symbol(g.shape[a], g.spacing[a], g.stencil_order, mode[a - 1])
                         for a in range(1, g.dim)])

    def realize(self, op: DiffOp, mode: tuple[int, ...], left=None, right=None) -> np.ndarray:
        lam = self.symbols(mode)
        total = None
        for key, mat in op.terms.items():
            node = self._d1_power(key.count(0)).astype(complex)
            c = complex(np.prod([lam[a - 1] for a in key if a != 0])) if key else 1.0
            node = c * node
            if left is not None:
                node = left @ node
            if right is not None:
                node = node @ right
            term = np.kron(node, mat)
            total = term if total is None else total + term
        return total
