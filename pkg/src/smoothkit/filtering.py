"""Kalman-Bucy filtering from observation increments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .model import (
    CoefficientSamples,
    ModelSpec,
    ObservationPath,
    TimeGrid,
    propagate_mean,
    sample_coefficients,
)
from .riccati import _gamma_mid, gramian_flows, linear_flows, solve_gamma_forward


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Filter means mu_{s_i; s_i} and covariances gamma(s_i), both of length n+1.

    ``transition`` holds the per-cell flow of ``a - gamma c^T (sigma sigma^T)^{-1} c``
    (``None`` for the Euler scheme).
    """

    grid: TimeGrid
    means: np.ndarray
    covariances: np.ndarray
    transition: np.ndarray | None = None
    scheme: str = "propagator"


def check_grid(grid: TimeGrid, obs: ObservationPath):
    if obs.grid != grid:
        raise GridMismatchError(
            f"observations live on a grid with n={obs.grid.n}, t_end={obs.grid.t_end}; "
            f"expected n={grid.n}, t_end={grid.t_end}"
        )


def prior_means(coeffs: CoefficientSamples, spec: ModelSpec) -> np.ndarray:
    flows = linear_flows(coeffs.node.a[:-1], coeffs.mid.a, coeffs.end.a, coeffs.grid.h)
    return propagate_mean(flows, spec.initial.mean)


def weighted_innovations(coeffs: CoefficientSamples, obs: ObservationPath, prior: np.ndarray) -> np.ndarray:
    """``c^T (sigma sigma^T)^{-1} (dY_i - c E[X_{s_i}] h)`` for every cell, shape ``(n, d1)``."""
    nd = coeffs.node
    h = coeffs.grid.h
    resid = obs.increments - np.einsum("kij,kj->ki", nd.c[:-1], prior[:-1]) * h
    return np.einsum("kij,kj->ki", nd.ct_rinv[:-1], resid)


def filter_flows(coeffs: CoefficientSamples, gamma: np.ndarray, gramian: bool = False):
    """Per-cell flow of the filter error drift, optionally with the observability Gramian."""
    h = coeffs.grid.h
    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    gmid = _gamma_mid(coeffs, gamma, h)
    f0 = nd.a[:-1] - gamma[:-1] @ nd.h_obs[:-1]
    fm = md.a - gmid @ md.h_obs
    f1 = ed.a - gamma[1:] @ ed.h_obs
    if gramian:
        return gramian_flows(f0, fm, f1, nd.h_obs[:-1], md.h_obs, ed.h_obs, h)
    return linear_flows(f0, fm, f1, h)


def kalman_bucy(
    spec: ModelSpec,
    grid: TimeGrid,
    obs: ObservationPath,
    epsilon: float = 0.0,
    scheme: str = "propagator",
) -> FilterResult:
    """Kalman-Bucy filter.

    The default scheme writes the centred mean as the left-point sum
    ``sum_{j<i} gamma(s_i, s_j; s_i) c^T R^{-1} (dY_j - c E[X_j] h)`` and evaluates it
    recursively with the RK4 flow of the filter error drift, so it reproduces the
    smoothers' terminal value. ``scheme="euler"`` is the plain explicit update
    ``mu += a mu h + gamma c^T R^{-1} (dY - c mu h)``.
    """
    check_grid(grid, obs)
    coeffs = sample_coefficients(spec, grid)
    gamma = solve_gamma_forward(spec, grid, epsilon, coeffs)
    if scheme == "euler":
        nd = coeffs.node
        h = grid.h
        mu = np.empty((grid.n + 1, spec.dims.d1))
        mu[0] = spec.initial.mean
        for i in range(grid.n):
            innov = obs.increments[i] - nd.c[i] @ mu[i] * h
            mu[i + 1] = mu[i] + nd.a[i] @ mu[i] * h + gamma[i] @ nd.ct_rinv[i] @ innov
        return FilterResult(grid, mu, gamma, None, "euler")
    if scheme != "propagator":
        raise ValueError(f"unknown filter scheme {scheme!r}")

    prior = prior_means(coeffs, spec)
    g = weighted_innovations(coeffs, obs, prior)
    flows = filter_flows(coeffs, gamma)
    centred = np.zeros_like(prior)
    for i in range(grid.n):
        centred[i + 1] = flows[i] @ (centred[i] + gamma[i] @ g[i])
    return FilterResult(grid, prior + centred, gamma, flows, "propagator")


def innovations(result: FilterResult, spec: ModelSpec, obs: ObservationPath) -> np.ndarray:
    """Residual increments ``dY_i - c(s_i) mu_{s_i; s_i} h``, shape ``(n, d2)``."""
    check_grid(result.grid, obs)
    coeffs = sample_coefficients(spec, result.grid)
    pred = np.einsum("kij,kj->ki", coeffs.node.c[:-1], result.means[:-1]) * result.grid.h
    return obs.increments - pred
