"""Smooth manufactured forms with exact derivatives.

A field is a finite sum of separable trigonometric terms

    a * prod_axis cos(w_axis * x_axis + phase_axis)

with a constant fiber vector a.  Periodic axes use w = 2 pi m with integer m,
the bounded axis any real frequency.  Derivatives only shift phases and scale
by the frequency, so applying a constant-coefficient DiffOp is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .diffop import DiffOp
from .fiber_algebra import get_model
from .grid_domain import FormField, Grid


@dataclass(frozen=True)
class TrigTerm:
    freqs: tuple[float, ...]
    phases: tuple[float, ...]
    amp: np.ndarray  # full-basis fiber vector


@dataclass(frozen=True)
class TrigField:
    n: int
    degree: int
    terms: tuple[TrigTerm, ...]

    def evaluate(self, coords: tuple[np.ndarray, ...]) -> np.ndarray:
        width = comb(2 * self.n, self.degree)
        out = np.zeros((coords[0].size, width))
        for t in self.terms:
            prof = np.ones(coords[0].size)
            for x, w, p in zip(coords, t.freqs, t.phases):
                prof = prof * np.cos(w * x + p)
            out += np.outer(prof, t.amp)
        return out

    def sample(self, grid: Grid, primitive: bool | None = None) -> FormField:
        if grid.n != self.n:
            raise ValueError("grid and field have different n")
        return FormField(grid, self.degree, self.evaluate(grid.coords()), primitive)

    def apply(self, op: DiffOp) -> TrigField:
        """The exact image under a constant-coefficient operator."""
        if op.src != self.degree:
            raise ValueError(f"operator expects degree {op.src}, field has {self.degree}")
        terms = []
        for t in self.terms:
            for key, mat in op.terms.items():
                amp = mat @ t.amp
                if not np.any(amp):
                    continue
                phases = list(t.phases)
                scale = 1.0
                for axis in key:
                    phases[axis] += np.pi / 2
                    scale *= t.freqs[axis]
                terms.append(TrigTerm(t.freqs, tuple(phases), scale * amp))
        return TrigField(self.n, op.dst, tuple(terms))

    def map_fiber(self, mat: np.ndarray, degree: int) -> TrigField:
        return TrigField(self.n, degree, tuple(TrigTerm(t.freqs, t.phases, mat @ t.amp)
                                               for t in self.terms))

    def __add__(self, other: TrigField) -> TrigField:
        if (self.n, self.degree) != (other.n, other.degree):
            raise ValueError("cannot add fields of different type")
        return TrigField(self.n, self.degree, self.terms + other.terms)

    def scale(self, c: float) -> TrigField:
        return TrigField(self.n, self.degree,
                         tuple(TrigTerm(t.freqs, t.phases, c * t.amp) for t in self.terms))


def random_trig_field(n: int, degree: int, rng: np.random.Generator, *, max_wave: int = 2,
                      n_terms: int = 6, primitive: bool = True, decay: float = 1.5,
                      envelope: bool = False, waves=None) -> TrigField:
    """Random smooth field with a decaying spectrum.

    Periodic wavenumbers are integers in [-max_wave, max_wave]; the bounded
    axis uses a generic frequency in pi * [0.5, max_wave + 0.5] and a random
    phase, so no error term cancels by symmetry.  With
    ``envelope`` every term carries sin(pi x1)^2 written out as trig terms,
    so the field and its first derivative vanish on both faces.  ``waves``
    fixes the periodic wavevectors (one per term), which is useful when two
    fields must share Fourier modes.
    """
    model = get_model(n)
    basis = model.prim_basis(degree) if primitive else np.eye(model.fiber_dim(degree))
    if basis.shape[1] == 0:
        raise ValueError(f"no primitive forms of degree {degree} for n = {n}")
    terms = []
    if waves is not None:
        n_terms = len(waves)
    for t in range(n_terms):
        if waves is None:
            wave = rng.integers(-max_wave, max_wave + 1, size=2 * n - 1)
        else:
            wave = np.asarray(waves[t], dtype=int)
        j1 = float(rng.uniform(0.5, max_wave + 0.5))
        freqs = (np.pi * j1,) + tuple(2 * np.pi * float(m) for m in wave)
        phases = tuple(float(p) for p in rng.uniform(0, 2 * np.pi, size=2 * n))
        size = 1.0 + float(np.sum(np.abs(wave))) + j1
        amp = basis @ rng.standard_normal(basis.shape[1]) / size ** decay
        if envelope:
            # sin^2(pi x) = (1 - cos(2 pi x)) / 2, expanded into products of cosines
            w, p = freqs[0], phases[0]
            rest_f, rest_p = freqs[1:], phases[1:]
            terms.append(TrigTerm((w,) + rest_f, (p,) + rest_p, 0.5 * amp))
            terms.append(TrigTerm((w + 2 * np.pi,) + rest_f, (p,) + rest_p, -0.25 * amp))
            terms.append(TrigTerm((w - 2 * np.pi,) + rest_f, (p,) + rest_p, -0.25 * amp))
        else:
            terms.append(TrigTerm(freqs, phases, amp))
    return TrigField(n, degree, tuple(terms))
