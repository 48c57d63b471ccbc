"""One-dimensional first-derivative stencils used along each grid axis."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...]) -> tuple[float, ...]:
    """First-derivative weights (unit spacing) exact on polynomials of degree < len(offsets)."""
    m = len(offsets)
    V = np.array([[float(o) ** p for o in offsets] for p in range(m)])
    rhs = np.zeros(m)
    rhs[1] = 1.0
    return tuple(np.linalg.solve(V, rhs))


def centered_offsets(order: int) -> tuple[int, ...]:
    half = order // 2
    return tuple(range(-half, half + 1))


def bounded_matrix(N: int, h: float, order: int) -> sp.csr_matrix:
    """Centered interior rows, one-sided rows of the same order near the ends."""
    half = order // 2
    width = order + 1
    rows, cols, vals = [], [], []
    for i in range(N):
        if i < half:
            offs = tuple(range(-i, width - i))
        elif i >= N - half:
            offs = tuple(range(-(width - (N - i)), N - i))
        else:
            offs = centered_offsets(order)
        for o, w in zip(offs, fd_weights(offs)):
            if w != 0.0:
                rows.append(i)
                cols.append(i + o)
                vals.append(w / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def periodic_matrix(N: int, h: float, order: int) -> sp.csr_matrix:
    offs = centered_offsets(order)
    weights = fd_weights(offs)
    rows, cols, vals = [], [], []
    for i in range(N):
        for o, w in zip(offs, weights):
            if w != 0.0:
                rows.append(i)
                cols.append((i + o) % N)
                vals.append(w / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def periodic_symbol(N: int, h: float, order: int, m: np.ndarray) -> np.ndarray:
    """Eigenvalue of the periodic stencil on the Fourier mode exp(2 pi i m j / N)."""
    offs = centered_offsets(order)
    weights = fd_weights(offs)
    theta = 2 * np.pi * np.asarray(m) / N
    return sum(w * np.exp(1j * theta * o) for o, w in zip(offs, weights)) / h


def resolved_wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers kept in the discrete space (the Nyquist mode is dropped)."""
    m = np.rint(np.fft.fftfreq(N, d=1.0 / N)).astype(int)
    if N % 2 == 0:
        m = m[m != -N // 2]
    return m
