"""Riccati solvers, cell propagators and the smoothing covariance kernel.

Everything here works on a uniform grid with one classical RK4 step per cell.
Quantities needed at cell midpoints (``gamma`` and ``phi`` inside the drift of a
linear flow) come from the cubic Hermite interpolant built from node values and
the ODE right-hand side, which keeps the linear flows fourth order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiccatiBlowUp, SingularCovarianceError
from .model import CoefficientSamples, InitialLaw, ModelSpec, TimeGrid, sample_coefficients

BLOWUP = 1e12
JITTER = 1e-10
SINGULAR_RTOL = 1e-8


def _t(m):
    return np.swapaxes(m, -1, -2)


def _sym(m):
    return 0.5 * (m + _t(m))


def _clip_spectrum(m, upper: bool):
    """Symmetrize; clip eigenvalues at zero from below (PSD) or above (NSD)."""
    m = 0.5 * (m + m.T)
    if m.shape[0] == 1:
        v = m[0, 0]
        if (v > 0.0) if upper else (v < 0.0):
            m = np.zeros_like(m)
        return m
    eigval = np.linalg.eigvalsh(m)
    if (eigval[-1] > 0.0) if upper else (eigval[0] < 0.0):
        eigval, eigvec = np.linalg.eigh(m)
        eigval = np.minimum(eigval, 0.0) if upper else np.maximum(eigval, 0.0)
        m = (eigvec * eigval) @ eigvec.T
        m = 0.5 * (m + m.T)
    return m


def _guard(m, i):
    if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > BLOWUP:
        raise RiccatiBlowUp(f"Riccati blow-up at node {i}")


def sqrt_psd(m: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(_sym(m))
    return _sym((eigvec * np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T)


def gamma_rhs(g, a, bbt, h_obs):
    """Filtering Riccati right-hand side; broadcasts over leading axes."""
    ag = a @ g
    return -g @ h_obs @ g + ag + _t(ag) + bbt


def phi_rhs(p, a, bbt, h_obs):
    """Backward Riccati right-hand side in ``s``."""
    pa = p @ a
    return -p @ bbt @ p - _t(pa) - pa + h_obs


def solve_gamma_forward(
    spec: ModelSpec, grid: TimeGrid, epsilon: float = 0.0, coeffs: CoefficientSamples | None = None
) -> np.ndarray:
    """Filtering covariance gamma(s_i), shape ``(n+1, d1, d1)``.

    Starts from ``V[X_0] + epsilon*I``; every step is symmetrized and clipped to PSD.
    """
    coeffs = coeffs or sample_coefficients(spec, grid)
    d = spec.dims.d1
    h = grid.h
    out = np.empty((grid.n + 1, d, d))
    g = _clip_spectrum(spec.initial.cov + epsilon * np.eye(d), upper=False)
    out[0] = g
    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    for i in range(grid.n):
        k1 = gamma_rhs(g, nd.a[i], nd.bbt[i], nd.h_obs[i])
        k2 = gamma_rhs(g + 0.5 * h * k1, md.a[i], md.bbt[i], md.h_obs[i])
        k3 = gamma_rhs(g + 0.5 * h * k2, md.a[i], md.bbt[i], md.h_obs[i])
        k4 = gamma_rhs(g + h * k3, ed.a[i], ed.bbt[i], ed.h_obs[i])
        g = _clip_spectrum(g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), upper=False)
        _guard(g, i + 1)
        out[i + 1] = g
    return out


def solve_phi_backward(
    spec: ModelSpec, grid: TimeGrid, t_index: int | None = None, coeffs: CoefficientSamples | None = None
) -> np.ndarray:
    """phi(s_i; s_t) for ``i <= t_index``, shape ``(t_index+1, d1, d1)``; zero at ``t_index``."""
    coeffs = coeffs or sample_coefficients(spec, grid)
    t_index = grid.n if t_index is None else int(t_index)
    if not 0 <= t_index <= grid.n:
        raise IndexError(f"terminal index {t_index} outside the grid")
    d = spec.dims.d1
    h = grid.h
    out = np.empty((t_index + 1, d, d))
    p = np.zeros((d, d))
    out[t_index] = p
    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    for i in range(t_index - 1, -1, -1):
        k1 = phi_rhs(p, ed.a[i], ed.bbt[i], ed.h_obs[i])
        k2 = phi_rhs(p - 0.5 * h * k1, md.a[i], md.bbt[i], md.h_obs[i])
        k3 = phi_rhs(p - 0.5 * h * k2, md.a[i], md.bbt[i], md.h_obs[i])
        k4 = phi_rhs(p - h * k3, nd.a[i], nd.bbt[i], nd.h_obs[i])
        p = _clip_spectrum(p - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), upper=True)
        _guard(p, i)
        out[i] = p
    return out


def xi0_covariance(initial: InitialLaw, phi0: np.ndarray, epsilon: float = 0.0) -> np.ndarray:
    """Covariance of the smoothing error at time zero.

    Uses ``V^{1/2} (I - V^{1/2} phi0 V^{1/2})^{-1} V^{1/2}`` with ``V = V[X_0] + epsilon*I``;
    valid for singular ``V``.
    """
    d = len(initial.mean)
    root = sqrt_psd(initial.cov + epsilon * np.eye(d))
    inner = _sym(np.eye(d) - root @ phi0 @ root)
    if np.linalg.eigvalsh(inner).min() <= 1e-12:
        raise SingularCovarianceError(
            "I - V^1/2 phi V^1/2 is not positive definite; phi is not negative semidefinite"
        )
    return _sym(root @ np.linalg.solve(inner, root))


def hermite_midpoints(values, rhs_start, rhs_end, h):
    """Cubic Hermite interpolant at cell midpoints from node values and slopes."""
    return 0.5 * (values[:-1] + values[1:]) + (h / 8.0) * (rhs_start - rhs_end)


# --- per-cell linear flows, vectorized over cells ---------------------------------


def linear_flows(f0, fm, f1, h):
    """RK4 transition matrix of ``x' = F(s) x`` over each cell.

    ``f0``, ``fm``, ``f1`` hold the drift at cell start, midpoint and end, shape ``(n, d, d)``.
    """
    eye = np.eye(f0.shape[-1])
    k1 = f0
    k2 = fm @ (eye + 0.5 * h * k1)
    k3 = fm @ (eye + 0.5 * h * k2)
    k4 = f1 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lyapunov_flows(f0, fm, f1, d0, dm, d1, h):
    """Transition and accumulated noise covariance of ``P' = F P + P F^T + D`` per cell.

    Over a cell ``P(end) = Phi P(start) Phi^T + Q``; returns ``(Phi, Q)``.
    """
    phi = linear_flows(f0, fm, f1, h)

    def rhs(q, f, dd):
        fq = f @ q
        return fq + _t(fq) + dd

    q1 = d0
    q2 = rhs(0.5 * h * q1, fm, dm)
    q3 = rhs(0.5 * h * q2, fm, dm)
    q4 = rhs(h * q3, f1, d1)
    return phi, _sym((h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4))


def gramian_flows(f0, fm, f1, w0, wm, w1, h):
    """Transition ``K`` of ``x' = F x`` and ``M = int K^T W K`` over each cell."""
    eye = np.eye(f0.shape[-1])
    k1 = f0
    ka = eye + 0.5 * h * k1
    k2 = fm @ ka
    kb = eye + 0.5 * h * k2
    k3 = fm @ kb
    kc = eye + h * k3
    k4 = f1 @ kc
    flow = eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    m1 = w0
    m2 = _t(ka) @ wm @ ka
    m3 = _t(kb) @ wm @ kb
    m4 = _t(kc) @ w1 @ kc
    return flow, _sym((h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4))


def jittered_inverse(gamma: np.ndarray) -> np.ndarray:
    """Inverse of each PSD matrix in a stack after a small diagonal jitter.

    Raises when a matrix is singular beyond what the jitter is meant to absorb.
    """
    gamma = np.asarray(gamma)
    d = gamma.shape[-1]
    scale = 1.0 + np.trace(gamma, axis1=-2, axis2=-1) / d
    min_eig = np.linalg.eigvalsh(_sym(gamma))[..., 0]
    bad = np.flatnonzero(np.atleast_1d(min_eig <= SINGULAR_RTOL * scale))
    if bad.size:
        raise SingularCovarianceError(
            f"filtering covariance singular at index {int(bad[0])}; "
            "use the inverse-free Bryson-Frazier smoother instead"
        )
    eye = np.eye(d)
    return _sym(np.linalg.inv(gamma + (JITTER * scale)[..., None, None] * eye))


# --- field and propagators ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Propagator:
    """Per-cell transition matrices of one linear drift family.

    ``kind`` is ``"alpha"`` (drift ``a + b b^T phi``) or ``"beta"`` (drift
    ``a + b b^T gamma^{-1}``). ``noise[i]`` is the covariance injected by ``b dV``
    across cell ``i`` when propagated with that drift.
    """

    kind: str
    grid: TimeGrid
    cells: np.ndarray
    noise: np.ndarray

    def compose(self, start: int, stop: int) -> np.ndarray:
        """Transition from node ``start`` to node ``stop >= start``."""
        if stop < start:
            raise ValueError("compose needs stop >= start")
        out = np.eye(self.cells.shape[-1])
        for i in range(start, stop):
            out = self.cells[i] @ out
        return out


@dataclass(frozen=True, eq=False)
class RiccatiField:
    """gamma(s_i), phi(s_i; T), w(s_i; T) and V[xi_{0;T}] on one grid.

    ``alpha`` is the propagator of the smoothing-error drift; ``gamma_mid`` and
    ``phi_mid`` are the interpolated midpoint values the propagators were built from.
    """

    grid: TimeGrid
    gamma: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    xi0_cov: np.ndarray
    gamma_mid: np.ndarray
    phi_mid: np.ndarray
    alpha: Propagator
    epsilon: float = 0.0


def _gamma_mid(coeffs, gamma, h):
    nd, ed = coeffs.node, coeffs.end
    start = gamma_rhs(gamma[:-1], nd.a[:-1], nd.bbt[:-1], nd.h_obs[:-1])
    end = gamma_rhs(gamma[1:], ed.a, ed.bbt, ed.h_obs)
    return _sym(hermite_midpoints(gamma, start, end, h))


def _phi_mid(coeffs, phi, h):
    nd, ed = coeffs.node, coeffs.end
    start = phi_rhs(phi[:-1], nd.a[:-1], nd.bbt[:-1], nd.h_obs[:-1])
    end = phi_rhs(phi[1:], ed.a, ed.bbt, ed.h_obs)
    return _sym(hermite_midpoints(phi, start, end, h))


def _alpha_propagator(grid, coeffs, phi, phi_mid):
    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    f0 = nd.a[:-1] + nd.bbt[:-1] @ phi[:-1]
    fm = md.a + md.bbt @ phi_mid
    f1 = ed.a + ed.bbt @ phi[1:]
    cells, noise = lyapunov_flows(f0, fm, f1, nd.bbt[:-1], md.bbt, ed.bbt, grid.h)
    return Propagator("alpha", grid, cells, noise)


def _beta_propagator(grid, coeffs, gamma, gamma_mid):
    nd, md, ed = coeffs.node, coeffs.mid, coeffs.end
    ginv = jittered_inverse(gamma)
    ginv_mid = jittered_inverse(gamma_mid)
    f0 = nd.a[:-1] + nd.bbt[:-1] @ ginv[:-1]
    fm = md.a + md.bbt @ ginv_mid
    f1 = ed.a + ed.bbt @ ginv[1:]
    cells, noise = lyapunov_flows(f0, fm, f1, nd.bbt[:-1], md.bbt, ed.bbt, grid.h)
    return Propagator("beta", grid, cells, noise)


def propagate_covariance(prop: Propagator, start: np.ndarray) -> np.ndarray:
    """Run ``P_{i+1} = A_i P_i A_i^T + Q_i`` along the grid."""
    out = np.empty((len(prop.cells) + 1,) + start.shape)
    p = out[0] = start
    for i, (a, q) in enumerate(zip(prop.cells, prop.noise)):
        p = a @ p @ a.T + q
        p = 0.5 * (p + p.T)
        _guard(p, i + 1)
        out[i + 1] = p
    return out


def riccati_field(spec: ModelSpec, grid: TimeGrid, epsilon: float = 0.0,
                  coeffs: CoefficientSamples | None = None) -> RiccatiField:
    coeffs = coeffs or sample_coefficients(spec, grid)
    gamma = solve_gamma_forward(spec, grid, epsilon, coeffs)
    phi = solve_phi_backward(spec, grid, grid.n, coeffs)
    xi0 = xi0_covariance(spec.initial, phi[0], epsilon)
    phi_mid = _phi_mid(coeffs, phi, grid.h)
    alpha = _alpha_propagator(grid, coeffs, phi, phi_mid)
    return RiccatiField(
        grid=grid,
        gamma=gamma,
        phi=phi,
        w=propagate_covariance(alpha, xi0),
        xi0_cov=xi0,
        gamma_mid=_gamma_mid(coeffs, gamma, grid.h),
        phi_mid=phi_mid,
        alpha=alpha,
        epsilon=epsilon,
    )


def build_propagator(kind: str, spec: ModelSpec, grid: TimeGrid, field: RiccatiField,
                     coeffs: CoefficientSamples | None = None) -> Propagator:
    """Cell transitions for the ``"alpha"`` or ``"beta"`` drift family."""
    if field.grid != grid:
        raise ValueError("field was computed on a different grid")
    coeffs = coeffs or sample_coefficients(spec, grid)
    if kind == "alpha":
        return _alpha_propagator(grid, coeffs, field.phi, field.phi_mid)
    if kind == "beta":
        return _beta_propagator(grid, coeffs, field.gamma, field.gamma_mid)
    raise ValueError(f"unknown propagator family {kind!r}")


def smoothing_w(spec: ModelSpec, grid: TimeGrid, field: RiccatiField) -> np.ndarray:
    """Marginal smoothing covariances w(s_i; T) from the linear Lyapunov flow."""
    return propagate_covariance(build_propagator("alpha", spec, grid, field), field.xi0_cov)


def cross_covariance(field: RiccatiField, alpha: Propagator, i: int, j: int) -> np.ndarray:
    """Smoothing cross-covariance Cov(X_{s_i}, X_{s_j} | Y_T)."""
    if i >= j:
        return alpha.compose(j, i) @ field.w[j]
    return cross_covariance(field, alpha, j, i).T


def covariance_kernel(field: RiccatiField, alpha: Propagator | None = None) -> np.ndarray:
    """All cross-covariances at once, shape ``(n+1, n+1, d1, d1)``; O(n^2) memory."""
    alpha = alpha or field.alpha
    n = field.grid.n
    d = field.w.shape[-1]
    kern = np.zeros((n + 1, n + 1, d, d))
    for j in range(n + 1):
        kern[j, j] = field.w[j]
    for i in range(n):
        kern[i + 1, : i + 1] = alpha.cells[i] @ kern[i, : i + 1]
    upper = np.triu_indices(n + 1, k=1)
    kern[upper] = _t(kern[upper[1], upper[0]])
    return kern
