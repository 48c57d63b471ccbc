"""Structured grids on the flat cylinder [0,1] x T^{2n-1} and forms sampled on them.

Axis 0 is the bounded interval with nodes at both endpoints; the remaining
axes are periodic with period 1.  Node arrays are row-major over the axes
(axis 0 slowest), and a field stores one fiber vector per node.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fiber_algebra import get_model

SYHF_MAGIC = b"SYHF"
SYHF_VERSION = 1
BLEND_START, BLEND_END = 0.35, 0.65
PRIMITIVE_FIELD_TOL = 1e-10
SEAM_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    n: int
    shape: tuple[int, ...]
    stencil_order: int = 2

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.n not in (1, 2):
            raise ValueError("supported half-dimensions are n = 1, 2")
        if len(shape) != 2 * self.n:
            raise ValueError(f"need {2 * self.n} axes, got shape {shape}")
        if shape[0] < 5:
            raise ValueError(f"bounded axis needs at least 5 nodes, got {shape[0]}")
        if any(s < 3 for s in shape[1:]):
            raise ValueError("periodic axes need at least 3 nodes")
        if self.stencil_order not in (2, 4):
            raise ValueError("stencil order must be 2 or 4")
        if self.stencil_order == 4 and (shape[0] < 7 or min(shape[1:]) < 5):
            raise ValueError("order-4 stencils need at least 7 bounded and 5 periodic nodes")

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def spacing(self) -> tuple[float, ...]:
        return (1.0 / (self.shape[0] - 1),) + tuple(1.0 / s for s in self.shape[1:])

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def face_shape(self) -> tuple[int, ...]:
        return self.shape[1:]

    @property
    def face_nodes(self) -> int:
        return int(np.prod(self.shape[1:]))

    def axis_coords(self, axis: int) -> np.ndarray:
        if axis == 0:
            return np.linspace(0.0, 1.0, self.shape[0])
        return np.arange(self.shape[axis]) / self.shape[axis]

    def coords(self) -> tuple[np.ndarray, ...]:
        """Flattened node coordinates, one array per axis."""
        mesh = np.meshgrid(*[self.axis_coords(a) for a in range(self.dim)], indexing="ij")
        return tuple(m.ravel() for m in mesh)

    @property
    def boundary_mask(self) -> np.ndarray:
        x1 = np.zeros(self.shape[0], dtype=bool)
        x1[[0, -1]] = True
        return np.repeat(x1, self.face_nodes)

    def face_index(self, face: int) -> np.ndarray:
        """Flat node indices of the face x1 = 0 (face 0) or x1 = 1 (face 1)."""
        row = 0 if face == 0 else self.shape[0] - 1
        return row * self.face_nodes + np.arange(self.face_nodes)

    def x1_weights(self) -> np.ndarray:
        w = np.full(self.shape[0], self.spacing[0])
        w[[0, -1]] *= 0.5
        return w

    @property
    def face_weight(self) -> float:
        return float(np.prod(self.spacing[1:]))

    def node_weights(self) -> np.ndarray:
        """Trapezoid weights on axis 0 times uniform weights on periodic axes."""
        return np.repeat(self.x1_weights() * self.face_weight, self.face_nodes)

    def refine(self) -> Grid:
        shape = (2 * (self.shape[0] - 1) + 1,) + tuple(2 * s for s in self.shape[1:])
        return Grid(self.n, shape, self.stencil_order)

    def label(self) -> str:
        return "x".join(str(s) for s in self.shape)


def make_grid(n: int, shape: Sequence[int], stencil_order: int = 2) -> Grid:
    return Grid(n, tuple(shape), stencil_order)


def parse_shape(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.lower().split("x"))


def _blend(t: np.ndarray):
    s = t ** 3 * (10 - 15 * t + 6 * t ** 2)
    ds = 30 * t ** 2 * (1 - t) ** 2
    return s, ds


def rho_profile(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and x1-derivative of the defining function on [0, 1]."""
    x = np.asarray(x, dtype=float)
    width = BLEND_END - BLEND_START
    t = np.clip((x - BLEND_START) / width, 0.0, 1.0)
    s, ds = _blend(t)
    ds = np.where((x > BLEND_START) & (x < BLEND_END), ds, 0.0)
    value = -((1 - s) * x + s * (1 - x))
    grad = -((1 - s) - s) - ds / width * ((1 - x) - x)
    return value, grad


@dataclass(frozen=True)
class DefiningFunction:
    grid: Grid
    values: np.ndarray
    gradient: np.ndarray  # (nodes, 2n)

    @property
    def x1_values(self) -> np.ndarray:
        return self.values[:: self.grid.face_nodes]


def make_rho(grid: Grid) -> DefiningFunction:
    x = grid.axis_coords(0)
    rho, drho = rho_profile(x)
    rho[[0, -1]] = 0.0
    values = np.repeat(rho, grid.face_nodes)
    grad = np.zeros((grid.num_nodes, grid.dim))
    grad[:, 0] = np.repeat(drho, grid.face_nodes)
    return DefiningFunction(grid, values, grad)


class FormField:
    """A degree-k form sampled at the grid nodes (full coefficient basis)."""

    def __init__(self, grid: Grid, degree: int, coeffs: np.ndarray, primitive: bool | None = None):
        coeffs = np.asarray(coeffs, dtype=float)
        width = comb(grid.dim, degree)
        if coeffs.shape != (grid.num_nodes, width):
            raise ValueError(f"expected coefficient array {(grid.num_nodes, width)}, got {coeffs.shape}")
        self.grid = grid
        self.degree = degree
        self.coeffs = coeffs
        if primitive is None:
            primitive = check_primitive(grid, degree, coeffs)
        elif primitive and not check_primitive(grid, degree, coeffs):
            raise ValueError("field flagged primitive fails the pointwise check")
        self.primitive = bool(primitive)

    @property
    def n(self) -> int:
        return self.grid.n

    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()

    @classmethod
    def from_flat(cls, grid: Grid, degree: int, vec: np.ndarray, primitive: bool | None = None) -> FormField:
        return cls(grid, degree, np.asarray(vec).reshape(grid.num_nodes, -1), primitive)

    def __add__(self, other: FormField) -> FormField:
        _check_compatible(self, other)
        return FormField(self.grid, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: FormField) -> FormField:
        _check_compatible(self, other)
        return FormField(self.grid, self.degree, self.coeffs - other.coeffs)

    def scale(self, c: float) -> FormField:
        return FormField(self.grid, self.degree, c * self.coeffs, self.primitive)

    def norm(self) -> float:
        return float(np.sqrt(max(inner_product(self, self), 0.0)))


def check_primitive(grid: Grid, degree: int, coeffs: np.ndarray, tol: float = PRIMITIVE_FIELD_TOL) -> bool:
    if degree > grid.n:
        return False
    if degree < 2:
        return True
    lam = coeffs @ get_model(grid.n).Lam(degree).T
    scale = np.linalg.norm(coeffs, axis=1)
    # nodes far below the field's peak only carry roundoff from the peak
    floor = max(1e-4 * float(scale.max(initial=0.0)), 1e-300)
    return bool(np.all(np.linalg.norm(lam, axis=1) <= tol * np.maximum(scale, floor)))


def _check_compatible(a: FormField, b: FormField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    if a.degree != b.degree:
        raise ValueError(f"degree mismatch: {a.degree} vs {b.degree}")


def sample_form(grid: Grid, degree: int, expression: Callable) -> FormField:
    """Evaluate ``expression(*coords)`` at the nodes.

    The expression returns an array of shape (nodes, C(2n, k)), or anything
    broadcastable to it.  Periodicity in axes 1..2n-1 is checked by shifting
    each periodic coordinate by one period.
    """
    coords = grid.coords()
    width = comb(grid.dim, degree)
    values = _evaluate(expression, coords, grid.num_nodes, width)
    mismatches = []
    for axis in range(1, grid.dim):
        shifted = list(coords)
        shifted[axis] = coords[axis] + 1.0
        other = _evaluate(expression, tuple(shifted), grid.num_nodes, width)
        gap = float(np.max(np.abs(other - values))) if values.size else 0.0
        if gap > SEAM_TOL * max(1.0, float(np.max(np.abs(values)))):
            mismatches.append((axis, gap))
    if mismatches:
        report = ", ".join(f"axis {a}: {g:.3e}" for a, g in mismatches)
        raise ValueError(f"expression is not periodic ({report})")
    return FormField(grid, degree, values)


def _evaluate(expression, coords, nodes, width):
    out = np.asarray(expression(*coords), dtype=float)
    if out.ndim == 2 and out.shape == (width, nodes) and width != nodes:
        out = out.T
    return np.broadcast_to(out, (nodes, width)).astype(float).copy()


def inner_product(a: FormField, b: FormField) -> float:
    _check_compatible(a, b)
    w = a.grid.node_weights()
    return float(np.sum(w * np.sum(a.coeffs * b.coeffs, axis=1)))


def rho_multiply(rho: DefiningFunction, a: FormField) -> FormField:
    if rho.grid != a.grid:
        raise ValueError("defining function and field live on different grids")
    return FormField(a.grid, a.degree, rho.values[:, None] * a.coeffs, a.primitive)


@dataclass(frozen=True)
class BoundaryTrace:
    """Values of a form on the two faces; ``values[f]`` is face f (x1 = f)."""

    grid: Grid
    degree: int
    values: np.ndarray  # (2, face_nodes, width)

    def face(self, face: int) -> np.ndarray:
        return self.values[face]


def restrict_boundary(a: FormField) -> BoundaryTrace:
    vals = np.stack([a.coeffs[a.grid.face_index(f)] for f in (0, 1)])
    return BoundaryTrace(a.grid, a.degree, vals)


def boundary_integral(t1: BoundaryTrace, t2: BoundaryTrace) -> float:
    if t1.grid != t2.grid or t1.degree != t2.degree:
        raise ValueError("traces are not comparable")
    return float(t1.grid.face_weight * np.sum(t1.values * t2.values))


def boundary_norm(t: BoundaryTrace) -> float:
    return float(np.sqrt(boundary_integral(t, t)))


def write_trace_csv(trace: BoundaryTrace, path: str | Path) -> None:
    grid = trace.grid
    face_coords = np.meshgrid(*[grid.axis_coords(a) for a in range(1, grid.dim)], indexing="ij")
    face_coords = [c.ravel() for c in face_coords]
    width = trace.values.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["face", "node"] + [f"x{a + 2}" for a in range(grid.dim - 1)]
                        + [f"c{j}" for j in range(width)])
        for f in (0, 1):
            for i in range(grid.face_nodes):
                writer.writerow([f, i] + [repr(float(c[i])) for c in face_coords]
                                + [repr(float(v)) for v in trace.values[f, i]])


def write_field(path: str | Path, field: FormField) -> None:
    grid = field.grid
    header = SYHF_MAGIC + struct.pack(
        f"<III{grid.dim}IIB", SYHF_VERSION, grid.n, field.degree, *grid.shape,
        grid.stencil_order, 1 if field.primitive else 0)
    data = np.ascontiguousarray(field.coeffs, dtype="<f8").tobytes()
    Path(path).write_bytes(header + data)


def read_field(path: str | Path) -> FormField:
    raw = Path(path).read_bytes()
    if raw[:4] != SYHF_MAGIC:
        raise ValueError("not a SYHF file")
    version, n, degree = struct.unpack_from("<III", raw, 4)
    if version != SYHF_VERSION:
        raise ValueError(f"unsupported SYHF version {version}")
    offset = 16
    shape = struct.unpack_from(f"<{2 * n}I", raw, offset)
    offset += 8 * n
    order, prim = struct.unpack_from("<IB", raw, offset)
    offset += 5
    grid = Grid(n, tuple(shape), order)
    width = comb(2 * n, degree)
    expected = grid.num_nodes * width * 8
    if len(raw) - offset != expected:
        raise ValueError(f"payload has {len(raw) - offset} bytes, expected {expected}")
    coeffs = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(grid.num_nodes, width)
    field = FormField(grid, degree, coeffs.astype(float), primitive=False)
    field.primitive = bool(prim)
    return field
