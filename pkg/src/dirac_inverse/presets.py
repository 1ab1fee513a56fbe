"""Closed-form test potentials used by the CLI and the test suites."""
from __future__ import annotations

import numpy as np

from .direct import DiracPotential
from .grid import Grid, GridMatrixFunction

SINE_AMPLITUDE = 0.5
BORG_SPLIT = 0.5
BORG_STEP = 0.4


def zero(grid: Grid, m1: int = 1, m2: int = 1) -> DiracPotential:
    return DiracPotential.zero(grid, m1, m2)


def constant(grid: Grid, value, m1: int = 1, m2: int = 1) -> DiracPotential:
    c = np.asarray(value, dtype=complex)
    if c.ndim == 0:
        c = np.full((m1, m2), c)
    return DiracPotential.constant(grid, c)


def sine(grid: Grid) -> DiracPotential:
    """Scalar ``v(x) = 0.5 sin(2 pi x)``."""
    return DiracPotential.from_callable(
        grid, lambda x: SINE_AMPLITUDE * np.sin(2 * np.pi * x), name="sine")


def rectangular(grid: Grid) -> DiracPotential:
    """``2 x 1`` potential ``[0.4 sin(2 pi x), 0.3 cos(3 pi x)]^T``."""
    x = grid.points
    v = np.stack([0.4 * np.sin(2 * np.pi * x), 0.3 * np.cos(3 * np.pi * x)], axis=1)
    return DiracPotential(GridMatrixFunction(grid, v[:, :, None]), name="rectangular")


def borg_pair(grid: Grid, split: float = BORG_SPLIT, step: float = BORG_STEP
              ) -> tuple[DiracPotential, DiracPotential]:
    """Two scalar potentials equal on ``[0, split]`` and different after it.

    The second one adds a step of height ``step`` for ``x > split`` to the
    sine preset.
    """
    base = lambda x: SINE_AMPLITUDE * np.sin(2 * np.pi * x)
    v1 = DiracPotential.from_callable(grid, base, name="borg-1")
    v2 = DiracPotential.from_callable(
        grid, lambda x: base(x) + step * (np.asarray(x) > split), name="borg-2")
    return v1, v2
