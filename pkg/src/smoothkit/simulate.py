"""Synthetic state and observation paths by Euler-Maruyama."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, ObservationPath, TimeGrid
from .riccati import sqrt_psd


def rng_stream(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream_index)``.

    Streams are children of one ``SeedSequence`` addressed by their spawn key, so
    stream ``k`` is the same whether or not streams ``0..k-1`` were ever created.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream_index),))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True, eq=False)
class SimulationOutput:
    grid: TimeGrid
    states: np.ndarray
    observations: ObservationPath
    seed: int


def simulate(spec: ModelSpec, grid: TimeGrid, seed: int = 0) -> SimulationOutput:
    """Draw X_0 from the initial law, then step X and Y with left-point coefficients.

    The model is not validated, so degenerate noise (``sigma = 0``) is allowed here.
    """
    d = spec.dims
    rng = rng_stream(seed, 0)
    z0 = rng.standard_normal(d.d1)
    zv = rng.standard_normal((grid.n, d.m1))
    zw = rng.standard_normal((grid.n, d.m2))

    left = grid.nodes[:-1]
    a, b, c, sig = (p.cells[p.cell_index(left)] for p in (spec.a, spec.b, spec.c, spec.sigma))
    h = grid.h
    sq = np.sqrt(h)

    x = np.empty((grid.n + 1, d.d1))
    x[0] = spec.initial.mean + sqrt_psd(spec.initial.cov) @ z0
    dy = np.empty((grid.n, d.d2))
    for i in range(grid.n):
        dy[i] = c[i] @ x[i] * h + sig[i] @ zw[i] * sq
        x[i + 1] = x[i] + a[i] @ x[i] * h + b[i] @ zv[i] * sq
    return SimulationOutput(grid, x, ObservationPath(grid, dy), int(seed))
