"""``smoothkit`` command line: simulate, filter, smooth, sample, functional, band, verify.

Exit codes: 0 success, 2 input/config error, 3 numerical failure,
4 verification tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import io as sio
from .errors import ModelError, NumericalError, SingularCovarianceError
from .filtering import kalman_bucy
from .model import TimeGrid, validate_model
from .sampler import FUNCTIONALS, confidence_band, estimate_functional, sample_conditional_paths
from .simulate import simulate
from .smoother import bf_smooth, fixed_point_smooth, smooth
from .verification import verify

DEFAULT_SEED = 0
DEFAULT_N = 1000

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 2, 3, 4


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    model_path: Path
    t_end: float | None
    n: int
    seed: int
    out: Path | None
    epsilon: float


def _emit(out, header, rows):
    if out is None:
        sio.write_csv(sys.stdout, header, rows)
    else:
        sio.write_rows(out, header, rows)


def _emit_text(out, text):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _setup(args, need_obs=False):
    cfg = RunConfig(Path(args.model), args.t_end, args.n, args.seed, args.out, args.epsilon)
    spec = sio.load_model(cfg.model_path)
    grid = TimeGrid(cfg.t_end if cfg.t_end is not None else spec.horizon, cfg.n)
    problems = validate_model(spec, grid)
    if problems:
        raise InputError("model validation failed:\n  " + "\n  ".join(problems))
    obs = None
    if need_obs:
        if args.obs is None:
            raise InputError("this command needs --obs <observation csv>")
        obs = sio.read_observations(args.obs, grid, spec.dims.d2)
    return cfg, spec, grid, obs


def cmd_simulate(args):
    cfg = RunConfig(Path(args.model), args.t_end, args.n, args.seed, args.out, args.epsilon)
    spec = sio.load_model(cfg.model_path)
    grid = TimeGrid(cfg.t_end if cfg.t_end is not None else spec.horizon, cfg.n)
    problems = validate_model(spec, grid)
    if problems:
        raise InputError("model validation failed:\n  " + "\n  ".join(problems))
    _emit(cfg.out, *sio.simulation_table(simulate(spec, grid, cfg.seed)))


def cmd_filter(args):
    cfg, spec, grid, obs = _setup(args, need_obs=True)
    _emit(cfg.out, *sio.filter_table(kalman_bucy(spec, grid, obs, cfg.epsilon)))


def cmd_smooth(args):
    cfg, spec, grid, obs = _setup(args, need_obs=True)
    if args.method == "fixed-point":
        if args.at is None:
            raise InputError("--method fixed-point needs --at <time>")
        s_index = grid.index_of(args.at)
        means = fixed_point_smooth(spec, grid, obs, s_index, cfg.epsilon)
        _emit(cfg.out, *sio.fixed_point_table(grid, s_index, means))
        return
    try:
        result = smooth(spec, grid, obs, args.method, cfg.epsilon)
    except SingularCovarianceError as exc:
        if args.method == "rts":
            raise SingularCovarianceError(f"{exc}. RTS needs gamma^-1; rerun with --method bf") from exc
        raise
    _emit(cfg.out, *sio.smoothing_table(result))


def _batch(args):
    cfg, spec, grid, obs = _setup(args, need_obs=True)
    if args.paths < 1:
        raise InputError("--paths must be at least 1")
    result = bf_smooth(spec, grid, obs, cfg.epsilon)
    batch = sample_conditional_paths(spec, grid, result, args.paths, cfg.seed, args.scheme)
    return cfg, batch


def cmd_sample(args):
    cfg, batch = _batch(args)
    _emit(cfg.out, *sio.batch_table(batch))


def cmd_functional(args):
    cfg, batch = _batch(args)
    values = None
    if args.functional == "table":
        if args.table is None:
            raise InputError("--functional table needs --table <file with one value per path>")
        try:
            values = [float(x) for x in Path(args.table).read_text().split()]
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read functional table {args.table}: {exc}") from exc
    try:
        est = estimate_functional(batch, args.functional, args.coord, args.threshold, values)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit_text(cfg.out, json.dumps(est.to_dict(), sort_keys=True) + "\n")


def cmd_band(args):
    cfg, batch = _batch(args)
    try:
        band = confidence_band(batch, args.level, args.kind)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(cfg.out, *sio.band_table(band))


def cmd_verify(args):
    cfg = RunConfig(Path(args.model), args.t_end, args.n, args.seed, args.out, args.epsilon)
    spec = sio.load_model(cfg.model_path)
    grid = TimeGrid(cfg.t_end if cfg.t_end is not None else spec.horizon, cfg.n)
    if grid.n % 2:
        raise InputError("verify compares n and n/2 cells; --n must be even")
    problems = validate_model(spec, grid)
    if problems:
        raise InputError("model validation failed:\n  " + "\n  ".join(problems))
    if args.obs is not None:
        obs = sio.read_observations(args.obs, grid, spec.dims.d2)
    else:
        obs = simulate(spec, grid, cfg.seed).observations
    report = verify(spec, obs, cfg.epsilon)
    _emit_text(cfg.out, report.text())
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, obs=True):
        p.add_argument("--model", required=True, help="model config (JSON)")
        p.add_argument("--t-end", type=float, default=None, help="grid end time (default: model horizon)")
        p.add_argument("--n", type=int, default=DEFAULT_N, help="number of grid cells")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--out", default=None, help="output file (default: stdout)")
        p.add_argument("--epsilon", type=float, default=0.0, help="regularization added to V[X0]")
        if obs:
            p.add_argument("--obs", default=None, help="observation CSV with dy_* columns")

    def sampling(p):
        p.add_argument("--paths", type=int, default=1000, help="number of conditional paths M")
        p.add_argument("--scheme", choices=("euler", "exact"), default="euler")

    common(sub.add_parser("simulate", help="simulate state and observation paths"), obs=False)
    common(sub.add_parser("filter", help="Kalman-Bucy filter"))
    p = sub.add_parser("smooth", help="smoothed means and covariances")
    common(p)
    p.add_argument("--method", choices=("bf", "rts", "direct", "fixed-point"), default="bf")
    p.add_argument("--at", type=float, default=None, help="query time for the fixed-point smoother")
    p = sub.add_parser("sample", help="sample conditional paths")
    common(p)
    sampling(p)
    p = sub.add_parser("functional", help="Monte Carlo estimate of a path functional")
    common(p)
    sampling(p)
    p.add_argument("--functional", choices=FUNCTIONALS, default="max")
    p.add_argument("--coord", type=int, default=0, help="state coordinate (0-based)")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--table", default=None, help="whitespace-separated per-path values")
    p = sub.add_parser("band", help="confidence band from sampled paths")
    common(p)
    sampling(p)
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--kind", choices=("simultaneous", "pointwise"), default="simultaneous")
    common(sub.add_parser("verify", help="oracle cross-checks at n and n/2 cells"))
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "smooth": cmd_smooth,
    "sample": cmd_sample,
    "functional": cmd_functional,
    "band": cmd_band,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        status = COMMANDS[args.command](args)
    except (InputError, ModelError) as exc:
        print(f"smoothkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"smoothkit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
