import json
from pathlib import Path

import numpy as np
import pytest

from smoothkit import (
    CoefficientProvider,
    Dims,
    InitialLaw,
    ModelSpec,
    TimeGrid,
    simulate,
)
from smoothkit.io import load_model

ROOT = Path(__file__).resolve().parents[1]
MODELS = ROOT / "models"

ACCEPTANCE_LINES = []


def static_model(mean=0.0, var=1.0, c=1.0, sigma=1.0):
    return ModelSpec.constant(0.0, 0.0, c, sigma, [mean], [[var]])


def scalar_benchmark():
    return load_model(MODELS / "scalar.json")


def oscillator():
    return load_model(MODELS / "oscillator.json")


def oscillator_constant():
    """Two-state model with constant coefficients and a full-rank initial law."""
    return ModelSpec.constant(
        [[0.0, 1.0], [-2.0, -0.3]],
        [[0.0], [1.0]],
        [[1.0, 0.0]],
        [[0.4]],
        [1.0, 0.0],
        [[1.0, 0.2], [0.2, 0.5]],
        horizon=1.0,
    )


def three_state():
    """Three states, two observations, piecewise-constant drift."""
    a1 = [[-0.4, 0.5, 0.0], [0.0, -0.2, 0.3], [0.1, 0.0, -0.6]]
    a2 = [[-0.8, 0.2, 0.0], [0.1, -0.5, 0.3], [0.0, 0.2, -0.3]]
    b = [[1.0, 0.0], [0.3, 0.5], [0.0, 0.8]]
    c = [[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]]
    sigma = [[0.5, 0.0], [0.1, 0.4]]
    return ModelSpec(
        Dims(3, 2, 2, 2),
        CoefficientProvider.table([0.0, 0.6, 1.5], [a1, a2]),
        CoefficientProvider.constant(b),
        CoefficientProvider.constant(c),
        CoefficientProvider.constant(sigma),
        InitialLaw([0.5, -0.2, 0.1], [[0.8, 0.1, 0.0], [0.1, 0.6, 0.05], [0.0, 0.05, 0.4]]),
        1.5,
    )


NONSINGULAR_MODELS = {
    "scalar": scalar_benchmark,
    "oscillator": oscillator,
    "three_state": three_state,
}


def observed(spec, n, seed=7, t_end=None):
    grid = TimeGrid(spec.horizon if t_end is None else t_end, n)
    return grid, simulate(spec, grid, seed).observations


def write_model(path, config):
    path.write_text(json.dumps(config))
    return path


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
