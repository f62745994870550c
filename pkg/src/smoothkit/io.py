"""Model config parsing and CSV/JSON writers with fixed column layouts."""

from __future__ import annotations

import csv
import gzip
import io
import json
from pathlib import Path

import numpy as np

from .errors import GridMismatchError, ModelError
from .model import CoefficientProvider, Dims, InitialLaw, ModelSpec, ObservationPath, TimeGrid

ROLES = ("a", "b", "c", "sigma")


def _fmt(x) -> str:
    return repr(float(x))


def _provider(role, entry) -> CoefficientProvider:
    if not isinstance(entry, dict) or len(entry) != 1:
        raise ModelError(f"coefficient {role} must be {{'constant': ...}} or {{'table': ...}}")
    if "constant" in entry:
        return CoefficientProvider.constant(entry["constant"])
    if "table" in entry:
        table = entry["table"]
        try:
            return CoefficientProvider.table(table["times"], table["values"])
        except (KeyError, TypeError) as exc:
            raise ModelError(f"coefficient table {role} needs 'times' and 'values'") from exc
    raise ModelError(f"coefficient {role} must be {{'constant': ...}} or {{'table': ...}}")


def model_from_dict(config: dict) -> ModelSpec:
    """Build a ModelSpec from the JSON layout documented in the README."""
    try:
        dims = Dims(**{k: int(config["dims"][k]) for k in ("d1", "d2", "m1", "m2")})
        coeffs = config.get("coefficients", config)
        providers = {role: _provider(role, coeffs[role]) for role in ROLES}
        initial = InitialLaw(config["initial"]["mean"], config["initial"]["cov"])
        horizon = float(config["horizon"])
    except KeyError as exc:
        raise ModelError(f"model config is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed model config: {exc}") from exc
    return ModelSpec(dims, initial=initial, horizon=horizon, **providers)


def model_to_dict(spec: ModelSpec) -> dict:
    def enc(p):
        if p.kind == "constant":
            return {"constant": p.values[0].tolist()}
        return {"table": {"times": p.times.tolist(), "values": p.values.tolist()}}

    d = spec.dims
    return {
        "dims": {"d1": d.d1, "d2": d.d2, "m1": d.m1, "m2": d.m2},
        "horizon": spec.horizon,
        "initial": {"mean": spec.initial.mean.tolist(), "cov": spec.initial.cov.tolist()},
        "coefficients": {role: enc(spec.coefficient(role)) for role in ROLES},
    }


def load_model(path) -> ModelSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ModelError(f"model file not found: {path}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(config)


def _is_gzip(path) -> bool:
    return str(path).endswith(".gz")


def write_rows(path, header, rows):
    """Write a CSV to ``path`` (gzip if it ends in .gz) or return it as text when ``path`` is None.

    Rows are streamed, so ``rows`` may be a generator.
    """
    if path is None:
        buf = io.StringIO()
        write_csv(buf, header, rows)
        return buf.getvalue()
    if not _is_gzip(path):
        with open(path, "w", newline="") as fh:
            write_csv(fh, header, rows)
        return None
    # mtime=0 and no stored name keep the archive byte-identical across runs
    with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as gz:
        with io.TextIOWrapper(gz, newline="") as fh:
            write_csv(fh, header, rows)
    return None


def write_csv(fh, header, rows):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _cols(prefix, k):
    return [f"{prefix}_{i + 1}" for i in range(k)]


def _matrix_cols(prefix, d):
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(d) for j in range(d)]


def simulation_table(sim):
    d1 = sim.states.shape[1]
    d2 = sim.observations.increments.shape[1]
    header = ["time"] + _cols("x", d1) + _cols("dy", d2)
    times = sim.grid.nodes
    rows = [
        [_fmt(times[i])] + [_fmt(v) for v in sim.states[i]] + [_fmt(v) for v in sim.observations.increments[i]]
        for i in range(sim.grid.n)
    ]
    rows.append([_fmt(times[-1])] + [_fmt(v) for v in sim.states[-1]] + [""] * d2)
    return header, rows


def filter_table(result):
    d = result.means.shape[1]
    header = ["time"] + _cols("mu", d) + _matrix_cols("gamma", d)
    rows = [
        [_fmt(t)] + [_fmt(v) for v in m] + [_fmt(v) for v in g.reshape(-1)]
        for t, m, g in zip(result.grid.nodes, result.means, result.covariances)
    ]
    return header, rows


def smoothing_table(result):
    d = result.means.shape[1]
    header = ["time"] + _cols("mu", d) + _matrix_cols("w", d)
    if result.rho is not None:
        header += _cols("rho", d)
    rows = []
    for i, t in enumerate(result.grid.nodes):
        row = [_fmt(t)] + [_fmt(v) for v in result.means[i]] + [_fmt(v) for v in result.marginal_cov[i].reshape(-1)]
        if result.rho is not None:
            row += [_fmt(v) for v in result.rho[i]]
        rows.append(row)
    return header, rows


def fixed_point_table(grid, s_index, means):
    d = means.shape[1]
    header = ["time"] + _cols("mu", d)
    times = grid.nodes[s_index:]
    return header, [[_fmt(t)] + [_fmt(v) for v in m] for t, m in zip(times, means)]


def riccati_table(field):
    """Node index, gamma, phi and w entries (row-major) for inspection."""
    d = field.gamma.shape[-1]
    header = ["node", "time"] + _matrix_cols("gamma", d) + _matrix_cols("phi", d) + _matrix_cols("w", d)
    rows = [
        [str(i), _fmt(t)] + [_fmt(v) for m in (field.gamma[i], field.phi[i], field.w[i]) for v in m.reshape(-1)]
        for i, t in enumerate(field.grid.nodes)
    ]
    return header, rows


def batch_table(batch):
    d = batch.paths.shape[-1]
    header = ["path_id", "time"] + _cols("x", d)
    times = [_fmt(t) for t in batch.grid.nodes]
    rows = (
        [str(m), times[i]] + [_fmt(v) for v in batch.paths[m, i]]
        for m in range(batch.M)
        for i in range(batch.grid.n + 1)
    )
    return header, rows


def band_table(band):
    d = band.lower.shape[-1]
    header = ["time"] + _cols("lower", d) + _cols("upper", d)
    rows = [
        [_fmt(t)] + [_fmt(v) for v in lo] + [_fmt(v) for v in up]
        for t, lo, up in zip(band.grid.nodes, band.lower, band.upper)
    ]
    return header, rows


def read_observations(path, grid: TimeGrid, d2: int) -> ObservationPath:
    """Read increments from a CSV with ``dy_1..dy_d2`` columns (the simulate layout).

    Rows whose dy cells are empty (the terminal state row) are skipped. When a
    ``time`` column is present it must match the grid nodes.
    """
    try:
        opener = gzip.open if _is_gzip(path) else open
        with opener(path, "rt", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ModelError(f"observation file not found: {path}") from exc
    if not rows:
        raise ModelError(f"observation file {path} is empty")
    header = [h.strip() for h in rows[0]]
    wanted = _cols("dy", d2)
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ModelError(f"observation file {path} lacks columns {missing}")
    idx = [header.index(c) for c in wanted]
    tcol = header.index("time") if "time" in header else None
    incs, times = [], []
    for line, row in enumerate(rows[1:], start=2):
        cells = [row[k].strip() if k < len(row) else "" for k in idx]
        if all(c == "" for c in cells):
            continue
        try:
            incs.append([float(c) for c in cells])
            if tcol is not None:
                times.append(float(row[tcol]))
        except ValueError as exc:
            raise ModelError(f"{path}:{line}: {exc}") from exc
    if len(incs) != grid.n:
        raise GridMismatchError(f"{path} holds {len(incs)} increments but the grid has {grid.n} cells")
    if times and np.max(np.abs(np.array(times) - grid.nodes[:-1])) > 1e-9 * max(1.0, grid.t_end):
        raise GridMismatchError(f"{path} time column does not match the grid (t_end={grid.t_end}, n={grid.n})")
    return ObservationPath(grid, np.array(incs).reshape(grid.n, d2))
