"""CSV and JSON serialization plus the run configuration.

Grid functions are written as ``x,re_0_0,im_0_0,re_0_1,...`` (row-major
matrix entries) and Weyl samples as ``xi,eta,re_0_0,im_0_0,...``.  Numbers
use 17 significant digits so every double survives a round trip unchanged.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import presets
from .direct import DiracPotential, WeylLineSamples
from .errors import DiracError
from .grid import Grid, GridMatrixFunction


class ConfigError(DiracError, ValueError):
    """Malformed configuration; the message names the offending field."""


class FormatError(DiracError, ValueError):
    """A data file does not match the expected layout."""


_ENTRY = re.compile(r"^(re|im)_(\d+)_(\d+)$")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _entry_header(rows: int, cols: int) -> list[str]:
    out = []
    for i in range(rows):
        for k in range(cols):
            out += [f"re_{i}_{k}", f"im_{i}_{k}"]
    return out


def _entry_values(mat: np.ndarray) -> list[str]:
    out = []
    for z in mat.reshape(-1):
        out += [_fmt(z.real), _fmt(z.imag)]
    return out


def _parse_entry_header(names: list[str]) -> tuple[int, int]:
    idx = []
    for name in names:
        m = _ENTRY.match(name)
        if not m:
            raise FormatError(f"unexpected column {name!r}")
        idx.append((m.group(1), int(m.group(2)), int(m.group(3))))
    rows = max(i for _, i, _ in idx) + 1
    cols = max(k for _, _, k in idx) + 1
    if names != _entry_header(rows, cols):
        raise FormatError("matrix columns are not in row-major re/im order")
    return rows, cols


def write_grid_function(path, f: GridMatrixFunction) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] + _entry_header(f.rows, f.cols))
        for x, mat in zip(f.grid.points, f.samples):
            w.writerow([_fmt(x)] + _entry_values(mat))


def _read_rows(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: ragged rows")
    return header, data


def _complex_block(data: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return (data[:, 0::2] + 1j * data[:, 1::2]).reshape(-1, rows, cols)


def read_grid_function(path, grid: Grid | None = None) -> GridMatrixFunction:
    """Read a grid-function CSV; the grid is inferred from the ``x`` column."""
    header, data = _read_rows(path)
    if header[0] != "x":
        raise FormatError(f"{path}: first column must be 'x'")
    rows, cols = _parse_entry_header(header[1:])
    x = data[:, 0]
    inferred = Grid(float(x[-1]), x.size - 1)
    if not np.allclose(x, inferred.points, rtol=0, atol=1e-12 * inferred.T):
        raise FormatError(f"{path}: x column is not a uniform grid starting at 0")
    if grid is not None and grid != inferred:
        raise FormatError(f"{path}: grid {inferred} does not match {grid}")
    return GridMatrixFunction(inferred, _complex_block(data[:, 1:], rows, cols))


def write_weyl_samples(path, s: WeylLineSamples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xi", "eta"] + _entry_header(s.m2, s.m1))
        for xi, mat in zip(s.xi, s.phi):
            w.writerow([_fmt(xi), _fmt(s.eta)] + _entry_values(mat))


def read_weyl_samples(path) -> WeylLineSamples:
    header, data = _read_rows(path)
    if header[:2] != ["xi", "eta"]:
        raise FormatError(f"{path}: columns must start with 'xi,eta'")
    rows, cols = _parse_entry_header(header[2:])
    etas = np.unique(data[:, 1])
    if etas.size != 1:
        raise FormatError(f"{path}: one eta per file expected")
    return WeylLineSamples(float(etas[0]), data[:, 0], _complex_block(data[:, 2:], rows, cols))


def sniff_kind(path) -> str:
    """``"weyl"`` or ``"grid"`` depending on the CSV header."""
    with open(path, newline="") as fh:
        first = fh.readline().strip().split(",")
    if first[:2] == ["xi", "eta"]:
        return "weyl"
    if first[:1] == ["x"]:
        return "grid"
    raise FormatError(f"{path}: unrecognized header")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


POTENTIAL_KINDS = ("zero", "constant", "file", "preset-sine", "preset-rectangular",
                   "preset-borg")


@dataclass(frozen=True)
class WeylConfig:
    eta: float = 2.0
    a: float = 200.0
    n_xi: int = 4096
    taper: float = 0.0


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "zero"
    value: object = None
    path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (one JSON document)."""

    m1: int = 1
    m2: int = 1
    T: float = 1.0
    n: int = 512
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    weyl: WeylConfig = field(default_factory=WeylConfig)
    use_fourier: bool = False
    tol: float | None = None
    reference: bool = True

    @property
    def grid(self) -> Grid:
        return Grid(self.T, self.n)

    def with_n(self, n: int) -> "RunConfig":
        return RunConfig(self.m1, self.m2, self.T, n, self.potential, self.weyl,
                         self.use_fourier, self.tol, self.reference)

    def potential_on(self, grid: Grid | None = None):
        """The configured potential; for ``preset-borg`` the pair is returned."""
        grid = grid or self.grid
        p = self.potential
        if p.kind == "zero":
            return presets.zero(grid, self.m1, self.m2)
        if p.kind == "constant":
            return presets.constant(grid, p.value, self.m1, self.m2)
        if p.kind == "preset-sine":
            return presets.sine(grid)
        if p.kind == "preset-rectangular":
            return presets.rectangular(grid)
        if p.kind == "preset-borg":
            return presets.borg_pair(grid)
        V = DiracPotential(read_grid_function(p.path), name=f"file:{p.path}")
        if (V.m1, V.m2) != (self.m1, self.m2):
            raise ConfigError(f"potential file holds {V.m1}x{V.m2} samples, "
                              f"config declares {self.m1}x{self.m2}")
        return V.on_grid(grid)

    def primary_potential(self, grid: Grid | None = None) -> DiracPotential:
        V = self.potential_on(grid)
        return V[0] if isinstance(V, tuple) else V


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section or 'config'} must be a JSON object")
    extra = sorted(set(data) - set(allowed))
    if extra:
        where = f" in {section}" if section else ""
        raise ConfigError(f"unknown key{'s' if len(extra) > 1 else ''}{where}: {', '.join(extra)}")


def _positive_int(name, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    if value <= 0:
        raise ConfigError(f"{name} must be positive")
    return value


def _positive_real(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be positive")
    return float(value)


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a configuration mapping; unknown keys are rejected."""
    _check_keys("", data, set(RunConfig.__dataclass_fields__) - {"reference"})
    m1 = _positive_int("m1", data.get("m1", 1))
    m2 = _positive_int("m2", data.get("m2", 1))
    T = _positive_real("T", data.get("T", 1.0))
    n = _positive_int("n", data.get("n", 512))
    pot = data.get("potential", {})
    _check_keys("potential", pot, PotentialConfig.__dataclass_fields__)
    kind = pot.get("kind", "zero")
    if kind not in POTENTIAL_KINDS:
        raise ConfigError(f"potential.kind must be one of {', '.join(POTENTIAL_KINDS)}")
    value, path = pot.get("value"), pot.get("path")
    if kind == "constant":
        if value is None:
            raise ConfigError("potential.value is required for kind 'constant'")
        arr = np.asarray(value, dtype=float)
        if arr.ndim not in (0, 2) or (arr.ndim == 2 and arr.shape != (m1, m2)):
            raise ConfigError(f"potential.value must be a number or an {m1}x{m2} matrix")
    if kind == "file":
        if not path:
            raise ConfigError("potential.path is required for kind 'file'")
        p = Path(path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"potential.path does not exist: {path}")
        path = str(p)
    if kind in ("preset-sine", "preset-borg") and (m1, m2) != (1, 1):
        raise ConfigError(f"{kind} needs m1 = m2 = 1")
    if kind == "preset-rectangular" and (m1, m2) != (2, 1):
        raise ConfigError("preset-rectangular needs m1 = 2, m2 = 1")
    wy = data.get("weyl", {})
    _check_keys("weyl", wy, WeylConfig.__dataclass_fields__)
    eta = _positive_real("weyl.eta", wy.get("eta", 2.0 / T))
    a = _positive_real("weyl.a", wy.get("a", 200.0))
    n_xi = _positive_int("weyl.n_xi", wy.get("n_xi", 4096))
    if n_xi % 2:
        raise ConfigError("weyl.n_xi must be even")
    taper = wy.get("taper", 0.0)
    if isinstance(taper, bool) or not isinstance(taper, (int, float)) or not 0 <= taper < 0.5:
        raise ConfigError("weyl.taper must lie in [0, 0.5)")
    use_fourier = data.get("use_fourier", False)
    if not isinstance(use_fourier, bool):
        raise ConfigError("use_fourier must be true or false")
    tol = data.get("tol")
    if tol is not None:
        tol = _positive_real("tol", tol)
    return RunConfig(m1, m2, T, n, PotentialConfig(kind, value, path),
                     WeylConfig(eta, a, n_xi, float(taper)), use_fourier, tol,
                     reference="potential" in data)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data, p.parent)
