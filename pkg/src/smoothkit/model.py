"""Continuous-time linear-Gaussian model, its time grid and observation record.

The state and observation processes are

    dX_t = a(t) X_t dt + b(t) dV_t
    dY_t = c(t) X_t dt + sigma(t) dW_t

with X_0 Gaussian and independent of the Brownian motions V and W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError

SIGMA_EIG_TOL = 1e-10
INITIAL_SYM_TOL = 1e-12
INITIAL_EIG_TOL = 1e-10


@dataclass(frozen=True)
class Dims:
    d1: int
    d2: int
    m1: int
    m2: int

    def __post_init__(self):
        for name in ("d1", "d2", "m1", "m2"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ModelError(f"dimension {name} must be a positive integer, got {value!r}")


@dataclass(frozen=True, eq=False)
class CoefficientProvider:
    """A time-dependent coefficient matrix.

    ``kind`` is ``"constant"`` (one matrix) or ``"table"`` (piecewise constant on
    left-closed cells ``[times[k], times[k+1])``; the last cell is closed on the right).
    """

    kind: str
    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if self.kind == "constant":
            if values.ndim != 2:
                raise ModelError("constant coefficient must be a 2-d matrix")
            values = values[None]
            times = None
        elif self.kind == "table":
            if values.ndim != 3:
                raise ModelError("table coefficient values must be a list of 2-d matrices")
            times = np.array(self.times, dtype=float)
            if times.ndim != 1 or len(times) != len(values) + 1:
                raise ModelError("table needs exactly one more node time than matrices")
            if np.any(np.diff(times) <= 0):
                raise ModelError("table node times must be strictly increasing")
            times.setflags(write=False)
        else:
            raise ModelError(f"unknown coefficient kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @classmethod
    def constant(cls, matrix) -> CoefficientProvider:
        return cls("constant", np.atleast_2d(np.asarray(matrix, dtype=float)))

    @classmethod
    def table(cls, times, matrices) -> CoefficientProvider:
        return cls("table", matrices, times)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    @property
    def cells(self) -> np.ndarray:
        """Distinct matrices, shape ``(k, rows, cols)``."""
        return self.values

    def cell_index(self, t, left_limit: bool = False) -> np.ndarray:
        """Index of the cell holding each time in ``t``.

        With ``left_limit`` the limit from the left is used, so a time sitting on a
        table node is attributed to the cell that ends there.
        """
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            if np.any(t < 0):
                raise ModelError("coefficient evaluated at negative time")
            return np.zeros(t.shape, dtype=int)
        lo, hi = self.times[0], self.times[-1]
        if np.any(t < lo) or np.any(t > hi):
            raise ModelError(f"time outside the coefficient table range [{lo}, {hi}]")
        side = "left" if left_limit else "right"
        idx = np.searchsorted(self.times, t, side=side) - 1
        return np.clip(idx, 0, len(self.values) - 1)


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Gaussian law of X_0. A nearly PSD covariance is symmetrized and clipped."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if cov.shape == (len(mean), len(mean)) and _initial_cov_problem(cov) is None:
            cov = 0.5 * (cov + cov.T)
            eigval, eigvec = np.linalg.eigh(cov)
            if eigval[0] < 0.0:
                cov = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
                cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _initial_cov_problem(cov):
    if not np.all(np.isfinite(cov)):
        return "initial covariance has non-finite entries"
    if np.max(np.abs(cov - cov.T)) > INITIAL_SYM_TOL:
        return "initial covariance not symmetric"
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -INITIAL_EIG_TOL:
        return "initial covariance not positive semidefinite"
    return None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    dims: Dims
    a: CoefficientProvider
    b: CoefficientProvider
    c: CoefficientProvider
    sigma: CoefficientProvider
    initial: InitialLaw
    horizon: float

    def coefficient(self, role: str) -> CoefficientProvider:
        return getattr(self, role)

    @classmethod
    def constant(cls, a, b, c, sigma, mean, cov, horizon=1.0) -> ModelSpec:
        """Build a constant-coefficient model from plain arrays (scalars allowed)."""
        a, b, c, sigma = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (a, b, c, sigma))
        dims = Dims(a.shape[0], c.shape[0], b.shape[1], sigma.shape[1])
        return cls(
            dims,
            CoefficientProvider.constant(a),
            CoefficientProvider.constant(b),
            CoefficientProvider.constant(c),
            CoefficientProvider.constant(sigma),
            InitialLaw(mean, cov),
            float(horizon),
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``s_i = i*h`` on ``[0, t_end]`` with ``n`` cells."""

    t_end: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ModelError(f"grid needs a positive integer number of cells, got {self.n!r}")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ModelError(f"grid end time must be positive and finite, got {self.t_end!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def h(self) -> float:
        return self.t_end / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def index_of(self, t: float) -> int:
        """Node index of time ``t``; raises unless ``t`` sits on a node."""
        k = round(t / self.h)
        if not 0 <= k <= self.n or abs(k * self.h - t) > 1e-9 * max(1.0, self.t_end):
            raise ModelError(f"time {t} is not a node of the grid (h={self.h})")
        return k

    def coarsen(self) -> TimeGrid:
        if self.n % 2:
            raise ModelError("only grids with an even number of cells can be coarsened")
        return TimeGrid(self.t_end, self.n // 2)


@dataclass(frozen=True, eq=False)
class ObservationPath:
    """Observation increments ``dY_i = Y_{s_{i+1}} - Y_{s_i}``, shape ``(n, d2)``."""

    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.ndim != 2 or inc.shape[0] != self.grid.n:
            raise ModelError(
                f"observation record has {inc.shape[0]} increments but the grid has {self.grid.n} cells"
            )
        if not np.all(np.isfinite(inc)):
            raise ModelError("observation increments must be finite")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    def coarsen(self) -> ObservationPath:
        """Aggregate pairs of cells onto the grid with half as many cells."""
        coarse = self.grid.coarsen()
        return ObservationPath(coarse, self.increments.reshape(coarse.n, 2, -1).sum(axis=1))


def validate_model(spec: ModelSpec, grid: TimeGrid) -> list[str]:
    """Return every assumption violation found; an empty list means the model is usable."""
    problems = []
    d = spec.dims
    expected = {"a": (d.d1, d.d1), "b": (d.d1, d.m1), "c": (d.d2, d.d1), "sigma": (d.d2, d.m2)}
    for role, shape in expected.items():
        provider = spec.coefficient(role)
        if provider.shape != shape:
            problems.append(f"shape mismatch: {role} is {provider.shape}, expected {shape}")
        if not np.all(np.isfinite(provider.values)):
            problems.append(f"non-finite entries in coefficient {role}")
        if provider.kind == "table" and (provider.times[0] > 0 or provider.times[-1] < grid.t_end):
            problems.append(f"coefficient table {role} does not cover [0, {grid.t_end}]")

    init = spec.initial
    if init.mean.shape != (d.d1,):
        problems.append(f"shape mismatch: initial mean has shape {init.mean.shape}")
    if init.cov.shape != (d.d1, d.d1):
        problems.append(f"shape mismatch: initial covariance has shape {init.cov.shape}")
    else:
        issue = _initial_cov_problem(init.cov)
        if issue:
            problems.append(issue)

    if not (math.isfinite(spec.horizon) and spec.horizon >= 0):
        problems.append("horizon must be a nonnegative finite time")
    elif grid.t_end > spec.horizon * (1 + 1e-12):
        problems.append(f"grid end {grid.t_end} exceeds model horizon {spec.horizon}")

    if spec.sigma.shape == expected["sigma"] and np.all(np.isfinite(spec.sigma.values)):
        sig = spec.sigma
        idx = sig.cell_index(np.clip(grid.nodes, sig.times[0], sig.times[-1]) if sig.kind == "table" else grid.nodes)
        rr = np.einsum("kij,klj->kil", sig.cells, sig.cells)
        min_eig = np.linalg.eigvalsh(rr).min(axis=-1)
        for i in np.flatnonzero(min_eig[idx] <= SIGMA_EIG_TOL):
            problems.append(f"observation noise singular at node {i}")
    return problems


def eval_coeff(provider: CoefficientProvider, t: float, left_limit: bool = False) -> np.ndarray:
    return provider.cells[int(provider.cell_index(t, left_limit))]


@dataclass(frozen=True, eq=False)
class StageCoefficients:
    """Coefficients and derived products sampled at one set of stage times.

    Arrays carry a leading time axis. ``rinv`` is ``(sigma sigma^T)^{-1}``,
    ``h_obs`` is ``c^T rinv c`` and ``bbt`` is ``b b^T``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    bbt: np.ndarray
    rinv: np.ndarray
    ct_rinv: np.ndarray
    h_obs: np.ndarray


@dataclass(frozen=True, eq=False)
class CoefficientSamples:
    """Coefficients at grid nodes, cell midpoints and cell ends (left limits)."""

    grid: TimeGrid
    node: StageCoefficients
    mid: StageCoefficients
    end: StageCoefficients


def _stage(spec: ModelSpec, times, left_limit, rinv_cells):
    a, b, c, sig = (spec.coefficient(r) for r in ("a", "b", "c", "sigma"))
    a_s = a.cells[a.cell_index(times, left_limit)]
    b_s = b.cells[b.cell_index(times, left_limit)]
    c_s = c.cells[c.cell_index(times, left_limit)]
    rinv = rinv_cells[sig.cell_index(times, left_limit)]
    ct_rinv = np.einsum("kji,kjl->kil", c_s, rinv)
    return StageCoefficients(
        a=a_s,
        b=b_s,
        c=c_s,
        bbt=b_s @ np.swapaxes(b_s, -1, -2),
        rinv=rinv,
        ct_rinv=ct_rinv,
        h_obs=ct_rinv @ c_s,
    )


def sample_coefficients(spec: ModelSpec, grid: TimeGrid) -> CoefficientSamples:
    sig = spec.sigma.cells
    rr = sig @ np.swapaxes(sig, -1, -2)
    # one inverse per distinct sigma cell
    with np.errstate(all="ignore"):
        try:
            rinv_cells = np.linalg.inv(rr)
        except np.linalg.LinAlgError:
            rinv_cells = np.linalg.pinv(rr)
    rinv_cells = 0.5 * (rinv_cells + np.swapaxes(rinv_cells, -1, -2))
    nodes = grid.nodes
    return CoefficientSamples(
        grid=grid,
        node=_stage(spec, nodes, False, rinv_cells),
        mid=_stage(spec, grid.midpoints, False, rinv_cells),
        end=_stage(spec, nodes[1:], True, rinv_cells),
    )


def prior_mean_path(spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """Prior means E[X_{s_i}], shape ``(n+1, d1)``, by one RK4 step per cell."""
    from .riccati import linear_flows

    coeffs = sample_coefficients(spec, grid)
    flows = linear_flows(coeffs.node.a[:-1], coeffs.mid.a, coeffs.end.a, grid.h)
    return propagate_mean(flows, spec.initial.mean)


def propagate_mean(flows: np.ndarray, start: np.ndarray) -> np.ndarray:
    out = np.empty((len(flows) + 1, len(start)))
    out[0] = start
    for i, flow in enumerate(flows):
        out[i + 1] = flow @ out[i]
    return out

