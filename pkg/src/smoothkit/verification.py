"""Oracle cross-checks at two grid resolutions, as run by ``smoothkit verify``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularCovarianceError
from .filtering import kalman_bucy
from .model import ModelSpec, ObservationPath
from .oracle import discrete_kalman_rts, discretize
from .smoother import bf_smooth, direct_integral_smooth, fixed_point_smooth, rts_smooth

TOL_BF_DIRECT = 1e-9
TOL_BF_RTS = 1e-7
TOL_FIXED_POINT = 1e-6
TOL_TERMINAL_MEAN = 1e-6
TOL_TERMINAL_COV = 1e-6
TOL_PSD = -1e-7
RATIO_RANGE = (1.7, 2.3)
CONVERGED = 1e-9
DIRECT_MAX_CELLS = 4000


@dataclass
class Check:
    name: str
    value: float
    bound: str
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<28} {self.value: .6e}  {self.bound}"
        return f"{text}  ({self.note})" if self.note else text


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, bound, passed, note=""):
        self.checks.append(Check(name, float(value), bound, bool(passed), note))

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append("verify: " + ("all checks passed" if self.passed else "tolerance failures"))
        return "\n".join(lines) + "\n"


def _max_abs(x, y):
    return float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) if np.size(x) else 0.0


def _ratio_check(report, name, coarse, fine):
    if coarse <= CONVERGED and fine <= CONVERGED:
        report.add(name, 0.0, f"errors <= {CONVERGED:g}", True, "no discretization gap")
        return
    ratio = coarse / fine if fine > 0 else np.inf
    lo, hi = RATIO_RANGE
    report.add(name, ratio, f"in [{lo}, {hi}]", lo <= ratio <= hi, f"{coarse:.3e} -> {fine:.3e}")


def verify(spec: ModelSpec, obs: ObservationPath, epsilon: float = 0.0) -> VerificationReport:
    """Run the cross-checks on ``obs`` and on its two-cell aggregate."""
    report = VerificationReport()
    fine_obs = obs
    coarse_obs = obs.coarsen()
    oracle_err = {}
    for label, o in (("coarse", coarse_obs), ("fine", fine_obs)):
        g = o.grid
        bf = bf_smooth(spec, g, o, epsilon)
        disc = discrete_kalman_rts(discretize(spec, g), o)
        oracle_err[label] = (
            _max_abs(bf.means, disc.smooth_means),
            _max_abs(bf.marginal_cov, disc.smooth_covs),
        )
        report.add(f"oracle_mean_err[n={g.n}]", oracle_err[label][0], "reported", True)
        report.add(f"oracle_cov_err[n={g.n}]", oracle_err[label][1], "reported", True)
        if label != "fine":
            continue

        if g.n <= DIRECT_MAX_CELLS:
            direct = direct_integral_smooth(spec, g, o, epsilon)
            err = _max_abs(bf.means, direct.means)
            report.add("bf_vs_direct", err, f"<= {TOL_BF_DIRECT:g}", err <= TOL_BF_DIRECT)
        filt = kalman_bucy(spec, g, o, epsilon)
        try:
            rts = rts_smooth(spec, g, o, filt, epsilon)
        except SingularCovarianceError:
            report.add("bf_vs_rts", 0.0, "skipped", True, "filtering covariance singular")
        else:
            err = _max_abs(bf.means, rts.means)
            report.add("bf_vs_rts", err, f"<= {TOL_BF_RTS:g}", err <= TOL_BF_RTS)
        s_index = g.n // 2
        fp = fixed_point_smooth(spec, g, o, s_index, epsilon)
        err = _max_abs(fp[-1], bf.means[s_index])
        report.add("fixed_point_vs_bf", err, f"<= {TOL_FIXED_POINT:g}", err <= TOL_FIXED_POINT)
        err = _max_abs(filt.means[-1], bf.means[-1])
        report.add("terminal_mean_vs_filter", err, f"<= {TOL_TERMINAL_MEAN:g}", err <= TOL_TERMINAL_MEAN)
        gam = bf.field.gamma[-1]
        rel = np.linalg.norm(bf.marginal_cov[-1] - gam) / max(np.linalg.norm(gam), 1e-300)
        report.add("terminal_w_vs_gamma", rel, f"<= {TOL_TERMINAL_COV:g}", rel <= TOL_TERMINAL_COV)
        gap = bf.field.gamma - bf.marginal_cov
        min_eig = float(np.linalg.eigvalsh(0.5 * (gap + np.swapaxes(gap, -1, -2))).min())
        report.add("min_eig_gamma_minus_w", min_eig, f">= {TOL_PSD:g}", min_eig >= TOL_PSD)

    _ratio_check(report, "oracle_mean_ratio", oracle_err["coarse"][0], oracle_err["fine"][0])
    _ratio_check(report, "oracle_cov_ratio", oracle_err["coarse"][1], oracle_err["fine"][1])
    return report
