"""Independent references for testing.

* an exact discrete-time Kalman filter / RTS smoother on the Euler-discretized model,
* brute-force conditioning of the joint Gaussian of states and increments,
* closed-form posterior for the static scalar model ``Y = c X + sigma Z``.

Nothing in this module calls the continuous-time solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularCovarianceError
from .model import ModelSpec, ObservationPath, TimeGrid

MAX_JOINT_OBS = 2000


@dataclass(frozen=True, eq=False)
class DiscreteLGSSM:
    """``x_{i+1} = A_i x_i + q_i``, ``dY_i = H_i x_i + r_i`` for cells ``i = 0..n-1``."""

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    mean0: np.ndarray
    cov0: np.ndarray

    @property
    def n(self) -> int:
        return len(self.A)


def _left(provider, grid):
    return provider.cells[provider.cell_index(grid.nodes[:-1])]


def discretize(spec: ModelSpec, grid: TimeGrid, transition: str = "euler") -> DiscreteLGSSM:
    """Discretize with left-point coefficients.

    ``transition="euler"`` gives ``A = I + a h`` and ``Q = b b^T h``;
    ``"expm"`` gives the exact transition ``expm(a h)`` and the exact noise
    integral (Van Loan) for coefficients that are constant over each cell.
    """
    h = grid.h
    a = _left(spec.a, grid)
    b = _left(spec.b, grid)
    c = _left(spec.c, grid)
    sig = _left(spec.sigma, grid)
    d = a.shape[-1]
    bbt = b @ np.swapaxes(b, -1, -2)
    if transition == "euler":
        A = np.eye(d) + a * h
        Q = bbt * h
    elif transition == "expm":
        A = np.empty_like(a)
        Q = np.empty_like(a)
        for i in range(grid.n):
            block = np.zeros((2 * d, 2 * d))
            block[:d, :d] = -a[i]
            block[:d, d:] = bbt[i]
            block[d:, d:] = a[i].T
            vl = linalg.expm(block * h)
            A[i] = vl[d:, d:].T
            Q[i] = A[i] @ vl[:d, d:]
            Q[i] = 0.5 * (Q[i] + Q[i].T)
    else:
        raise ValueError(f"unknown transition {transition!r}")
    return DiscreteLGSSM(
        A=A,
        Q=Q,
        H=c * h,
        R=sig @ np.swapaxes(sig, -1, -2) * h,
        mean0=np.array(spec.initial.mean, dtype=float),
        cov0=np.array(spec.initial.cov, dtype=float),
    )


@dataclass(frozen=True, eq=False)
class DiscreteSmootherOutput:
    """Predicted (before dY_i), updated (after dY_i) and smoothed moments at every node."""

    pred_means: np.ndarray
    pred_covs: np.ndarray
    upd_means: np.ndarray
    upd_covs: np.ndarray
    smooth_means: np.ndarray
    smooth_covs: np.ndarray
    gains: np.ndarray

    def cross_covariance(self, i: int, j: int) -> np.ndarray:
        """Smoothed Cov(x_i, x_j) from the RTS gains."""
        if i > j:
            return self.cross_covariance(j, i).T
        out = self.smooth_covs[j]
        for k in range(j - 1, i - 1, -1):
            out = self.gains[k] @ out
        return out


def _psd_solve_right(lhs, mat):
    """``lhs @ mat^{-1}`` for symmetric PSD ``mat``; pseudo-inverse if singular."""
    try:
        factor = linalg.cho_factor(mat)
        return linalg.cho_solve(factor, lhs.T).T
    except linalg.LinAlgError:
        return lhs @ np.linalg.pinv(mat)


def discrete_kalman_rts(model: DiscreteLGSSM, obs) -> DiscreteSmootherOutput:
    """Textbook Kalman filter (Joseph-form update) and RTS smoother."""
    y = obs.increments if isinstance(obs, ObservationPath) else np.asarray(obs, dtype=float)
    n = model.n
    d = len(model.mean0)
    eye = np.eye(d)
    pm = np.empty((n + 1, d))
    pc = np.empty((n + 1, d, d))
    um = np.empty((n + 1, d))
    uc = np.empty((n + 1, d, d))
    pm[0], pc[0] = model.mean0, model.cov0
    for i in range(n):
        H, R = model.H[i], model.R[i]
        s = H @ pc[i] @ H.T + R
        try:
            factor = linalg.cho_factor(s)
        except linalg.LinAlgError as exc:
            raise SingularCovarianceError(f"innovation covariance singular at cell {i}") from exc
        gain = linalg.cho_solve(factor, H @ pc[i]).T
        um[i] = pm[i] + gain @ (y[i] - H @ pm[i])
        ikh = eye - gain @ H
        uc[i] = ikh @ pc[i] @ ikh.T + gain @ R @ gain.T
        pm[i + 1] = model.A[i] @ um[i]
        pc[i + 1] = model.A[i] @ uc[i] @ model.A[i].T + model.Q[i]
        pc[i + 1] = 0.5 * (pc[i + 1] + pc[i + 1].T)
    um[n], uc[n] = pm[n], pc[n]

    sm = np.empty_like(um)
    sc = np.empty_like(uc)
    gains = np.empty((n, d, d))
    sm[n], sc[n] = um[n], uc[n]
    for i in range(n - 1, -1, -1):
        g = _psd_solve_right(uc[i] @ model.A[i].T, pc[i + 1])
        gains[i] = g
        sm[i] = um[i] + g @ (sm[i + 1] - pm[i + 1])
        sc[i] = uc[i] + g @ (sc[i + 1] - pc[i + 1]) @ g.T
        sc[i] = 0.5 * (sc[i] + sc[i].T)
    return DiscreteSmootherOutput(pm, pc, um, uc, sm, sc, gains)


@dataclass(frozen=True, eq=False)
class JointGaussian:
    """Law of the stacked vector ``(x_0, ..., x_n, dY_0, ..., dY_{n-1})``."""

    mean: np.ndarray
    cov: np.ndarray
    d1: int
    d2: int
    n: int


def joint_gaussian(model: DiscreteLGSSM) -> JointGaussian:
    n = model.n
    d1 = len(model.mean0)
    d2 = model.H.shape[1]
    means = [model.mean0]
    covs = [model.cov0]
    for i in range(n):
        means.append(model.A[i] @ means[-1])
        covs.append(model.A[i] @ covs[-1] @ model.A[i].T + model.Q[i])
    nx = (n + 1) * d1
    sxx = np.zeros((nx, nx))
    for j in range(n + 1):
        block = covs[j]
        for i in range(j, n + 1):
            if i > j:
                block = model.A[i - 1] @ block
            sxx[i * d1:(i + 1) * d1, j * d1:(j + 1) * d1] = block
            sxx[j * d1:(j + 1) * d1, i * d1:(i + 1) * d1] = block.T
    hmat = np.zeros((n * d2, nx))
    for i in range(n):
        hmat[i * d2:(i + 1) * d2, i * d1:(i + 1) * d1] = model.H[i]
    rmat = linalg.block_diag(*model.R) if n else np.zeros((0, 0))
    sxy = sxx @ hmat.T
    syy = hmat @ sxx @ hmat.T + rmat
    cov = np.block([[sxx, sxy], [sxy.T, syy]])
    mean = np.concatenate([np.concatenate(means), hmat @ np.concatenate(means)])
    return JointGaussian(mean, 0.5 * (cov + cov.T), d1, d2, n)


def joint_conditioning(joint: JointGaussian, obs):
    """Condition the state block on the increments by a Schur complement.

    Returns ``(means, cov)`` with means of shape ``(n+1, d1)`` and the full
    ``((n+1) d1, (n+1) d1)`` conditional covariance.
    """
    y = obs.increments if isinstance(obs, ObservationPath) else np.asarray(obs, dtype=float)
    n, d1, d2 = joint.n, joint.d1, joint.d2
    if n * d2 > MAX_JOINT_OBS:
        raise ValueError(f"joint conditioning limited to {MAX_JOINT_OBS} observation coordinates")
    nx = (n + 1) * d1
    sxx = joint.cov[:nx, :nx]
    sxy = joint.cov[:nx, nx:]
    syy = joint.cov[nx:, nx:]
    try:
        factor = linalg.cho_factor(syy)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError("observation block covariance is singular") from exc
    resid = y.reshape(-1) - joint.mean[nx:]
    mean = joint.mean[:nx] + sxy @ linalg.cho_solve(factor, resid)
    cov = sxx - sxy @ linalg.cho_solve(factor, sxy.T)
    return mean.reshape(n + 1, d1), 0.5 * (cov + cov.T)


def static_scalar_posterior(mu_x: float, var_x: float, c: float, sigma: float, y: float):
    """Posterior (mean, variance) of X ~ N(mu_x, var_x) given y = c X + sigma Z."""
    if sigma <= 0 or var_x < 0:
        raise ValueError("need sigma > 0 and var_x >= 0")
    s2 = sigma * sigma
    denom = c * c * var_x + s2
    return mu_x + var_x * c * (y - c * mu_x) / denom, var_x * s2 / denom


def static_scalar_posterior_quotient(mu_x: float, var_x: float, c: float, sigma: float, y: float):
    """Same posterior from ratios of tilted moments ``E[X^k exp(-c^2 X^2 / 2 sigma^2)]``.

    The three Gaussian integrals are evaluated in closed form; their shared factor
    ``exp(-kappa mu^2 / shrink) / sqrt(shrink)`` cancels in every ratio and is left out
    so that it cannot underflow. The mean is then
    ``E[X] + (c / sigma^2) * tilted_var * (y - c E[X])`` and the variance is ``tilted_var``.
    """
    if sigma <= 0 or var_x < 0:
        raise ValueError("need sigma > 0 and var_x >= 0")
    kappa = c * c / (2.0 * sigma * sigma)
    shrink = 1.0 + 2.0 * kappa * var_x
    first = mu_x / shrink  # E[X e] / E[e]
    second = var_x / shrink + first * first  # E[X^2 e] / E[e]
    tilted_var = second - first * first
    mean = mu_x + c / (sigma * sigma) * tilted_var * (y - c * mu_x)
    return mean, tilted_var
