"""Smoothing distribution of the hidden state given the whole observation record.

All smoothers evaluate the same left-point sum

    mu_{s_i;T} = E[X_{s_i}] + sum_j gamma(s_i, s_j; T) c_j^T (sigma_j sigma_j^T)^{-1}
                 (dY_j - c_j E[X_{s_j}] h)

by different routes: the Bryson-Frazier forward/backward recursion (inverse free),
the RTS backward recursion (needs gamma^{-1}), the O(n^2) direct sum and the
fixed-point recursion in the terminal time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import (
    FilterResult,
    check_grid,
    filter_flows,
    kalman_bucy,
    prior_means,
    weighted_innovations,
)
from .model import ModelSpec, ObservationPath, TimeGrid, sample_coefficients
from .riccati import (
    Propagator,
    RiccatiField,
    _gamma_mid,
    _guard,
    covariance_kernel,
    cross_covariance,
    jittered_inverse,
    lyapunov_flows,
    riccati_field,
)

METHODS = ("bf", "rts", "direct", "fixed-point")


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    grid: TimeGrid
    means: np.ndarray
    marginal_cov: np.ndarray
    method: str
    rho: np.ndarray | None = None
    field: RiccatiField | None = None
    propagator: Propagator | None = None


def bf_smooth(spec: ModelSpec, grid: TimeGrid, obs: ObservationPath, epsilon: float = 0.0) -> SmoothingResult:
    """Bryson-Frazier smoother: backward adjoint pass, then forward mean pass.

    No filtering covariance is ever inverted.
    """
    check_grid(grid, obs)
    coeffs = sample_coefficients(spec, grid)
    field = riccati_field(spec, grid, epsilon, coeffs)
    prior = prior_means(coeffs, spec)
    g = weighted_innovations(coeffs, obs, prior)
    cells, noise = field.alpha.cells, field.alpha.noise

    rho = np.zeros_like(prior)
    for i in range(grid.n - 1, -1, -1):
        rho[i] = cells[i].T @ rho[i + 1] + g[i]

    err = np.empty_like(prior)
    err[0] = field.xi0_cov @ rho[0]
    for i in range(grid.n):
        err[i + 1] = cells[i] @ err[i] + noise[i] @ rho[i + 1]
    _guard(err, grid.n)
    return SmoothingResult(grid, prior + err, field.w, "bf", rho, field, field.alpha)


def direct_integral_smooth(
    spec: ModelSpec, grid: TimeGrid, obs: ObservationPath, epsilon: float = 0.0
) -> SmoothingResult:
    """Reference smoother summing the full cross-covariance kernel; O(n^2) time and memory."""
    check_grid(grid, obs)
    coeffs = sample_coefficients(spec, grid)
    field = riccati_field(spec, grid, epsilon, coeffs)
    prior = prior_means(coeffs, spec)
    g = weighted_innovations(coeffs, obs, prior)
    kern = covariance_kernel(field)
    means = prior + np.einsum("ijab,jb->ia", kern[:, :-1], g)
    return SmoothingResult(grid, means, field.w, "direct", None, field, field.alpha)


def rts_smooth(
    spec: ModelSpec,
    grid: TimeGrid,
    obs: ObservationPath,
    filter_result: FilterResult | None = None,
    epsilon: float = 0.0,
) -> SmoothingResult:
    """Rauch-Tung-Striebel smoother run backward from the filter's terminal moments.

    Raises :class:`SingularCovarianceError` when some gamma(s_i) cannot be inverted.
    """
    check_grid(grid, obs)
    if filter_result is None:
        filter_result = kalman_bucy(spec, grid, obs, epsilon)
    check_grid(filter_result.grid, obs)
    coeffs = sample_coefficients(spec, grid)
    h = grid.h
    gamma = filter_result.covariances
    gmid = _gamma_mid(coeffs, gamma, h)
    ginv = jittered_inverse(gamma)
    ginv_mid = jittered_inverse(gmid)

    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    drift_start = nd.a[:-1] + nd.bbt[:-1] @ ginv[:-1]
    drift_mid = md.a + md.bbt @ ginv_mid
    drift_end = ed.a + ed.bbt @ ginv[1:]
    # backward in time: reversed stage order, negated drift
    back, back_noise = lyapunov_flows(
        -drift_end, -drift_mid, -drift_start, ed.bbt, md.bbt, nd.bbt[:-1], h
    )

    n = grid.n
    w = np.empty_like(gamma)
    w[n] = gamma[n]
    for i in range(n - 1, -1, -1):
        w[i] = back[i] @ w[i + 1] @ back[i].T + back_noise[i]
        w[i] = 0.5 * (w[i] + w[i].T)
        _guard(w[i], i)

    prior = prior_means(coeffs, spec)
    g = weighted_innovations(coeffs, obs, prior)
    filt = filter_result.means - prior
    filt_upd = filt.copy()
    filt_upd[:-1] += np.einsum("kij,kj->ki", gamma[:-1], g)
    # w gamma^{-1} f: part of the smoothed mean carried by data up to the node
    past = np.einsum("kij,kjl,kl->ki", w, ginv, filt_upd)
    past_pred = np.einsum("kij,kjl,kl->ki", w, ginv, filt)

    err = np.empty_like(prior)
    err[n] = filt[n]
    for i in range(n - 1, -1, -1):
        err[i] = past[i] + back[i] @ (err[i + 1] - past_pred[i + 1])
    _guard(err, 0)
    return SmoothingResult(grid, prior + err, w, "rts")


def fixed_point_smooth(
    spec: ModelSpec, grid: TimeGrid, obs: ObservationPath, s_index: int, epsilon: float = 0.0
) -> np.ndarray:
    """mu_{s; s_j} for ``j = s_index .. n``, shape ``(n - s_index + 1, d1)``."""
    check_grid(grid, obs)
    if not 0 <= s_index <= grid.n:
        raise IndexError(f"node index {s_index} outside the grid")
    coeffs = sample_coefficients(spec, grid)
    filt = kalman_bucy(spec, grid, obs, epsilon)
    gamma = filt.covariances
    prior = prior_means(coeffs, spec)
    g = weighted_innovations(coeffs, obs, prior)
    flows, gram = filter_flows(coeffs, gamma, gramian=True)
    centred = filt.means - prior

    out = np.empty((grid.n - s_index + 1, spec.dims.d1))
    mu = centred[s_index].copy()
    cross = gamma[s_index].copy()  # gamma(s_k, s; s_k)
    out[0] = mu
    for k in range(s_index, grid.n):
        updated = centred[k] + gamma[k] @ g[k]
        mu = mu + cross.T @ (g[k] - gram[k] @ updated)
        cross = flows[k] @ cross
        out[k - s_index + 1] = mu
    return out + prior[s_index]


def cross_cov_query(result: SmoothingResult, i: int, j: int) -> np.ndarray:
    if result.field is None or result.propagator is None:
        raise ValueError(f"{result.method} result carries no Riccati field; use bf or direct")
    return cross_covariance(result.field, result.propagator, i, j)


def smooth(spec, grid, obs, method="bf", epsilon=0.0) -> SmoothingResult:
    if method == "bf":
        return bf_smooth(spec, grid, obs, epsilon)
    if method == "rts":
        return rts_smooth(spec, grid, obs, epsilon=epsilon)
    if method == "direct":
        return direct_integral_smooth(spec, grid, obs, epsilon)
    raise ValueError(f"unknown smoothing method {method!r}")
