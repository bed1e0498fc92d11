"""Field containers, pinning profiles and the text dump format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid, build_grid

PINNING_KINDS = ("constant", "two_value_step", "checkerboard", "smooth_bump", "seeded_random")


def _check(grid: Grid, values: np.ndarray, shape, what: str) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != shape:
        raise ValueError(f"{what}: expected shape {shape}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what}: non-finite entries")
    return values


@dataclass(eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    units: str = "dimensionless"

    def __post_init__(self):
        self.values = _check(self.grid, np.asarray(self.values, dtype=float), self.grid.shape, "ScalarField")


@dataclass(eq=False)
class VectorField:
    """Components stacked on the leading axis: ``values[0]`` is x, ``values[1]`` is y."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check(self.grid, np.asarray(self.values, dtype=float), (2,) + self.grid.shape, "VectorField")

    @property
    def x(self) -> np.ndarray:
        return self.values[0]

    @property
    def y(self) -> np.ndarray:
        return self.values[1]


@dataclass(eq=False)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check(self.grid, np.asarray(self.values, dtype=complex), self.grid.shape, "ComplexField")


def constant_scalar(grid: Grid, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(c)))


def zero_vector(grid: Grid) -> VectorField:
    return VectorField(grid, np.zeros((2,) + grid.shape))


def constant_complex(grid: Grid, c: complex = 1.0) -> ComplexField:
    return ComplexField(grid, np.full(grid.shape, complex(c)))


@dataclass
class PinningSpec:
    """Pinning profile description.

    ``level`` is the value of a constant profile.  ``radius`` is the
    inclusion radius (step, bump) or the inclusion size of the random
    profile; ``period`` is the checkerboard cell size.  ``center``
    defaults to the domain centre.
    """

    kind: str = "constant"
    b: float = 0.5
    level: float = 1.0
    period: float = 0.25
    radius: float = 0.2
    center: tuple | None = None
    seed: int = 0
    count: int = 6
    extras: dict = field(default_factory=dict)


def make_pinning(spec: PinningSpec, grid: Grid) -> ScalarField:
    """Generate the pinning coefficient a with values in [b, 1]."""
    b = float(spec.b)
    if not 0.0 < b < 1.0:
        raise ValueError(f"pinning floor b must lie in (0, 1), got {b}")
    if spec.kind not in PINNING_KINDS:
        raise ValueError(f"unknown pinning kind {spec.kind!r}")
    X, Y = grid.x, grid.y
    c = grid.center if spec.center is None else np.asarray(spec.center, dtype=float)
    r = np.hypot(X - c[0], Y - c[1])
    if spec.kind == "constant":
        level = float(spec.level)
        if not b <= level <= 1.0:
            raise ValueError(f"constant level {level} outside [b, 1]")
        a = np.full(grid.shape, level)
    elif spec.kind == "two_value_step":
        a = np.where(r <= spec.radius, b, 1.0)
    elif spec.kind == "checkerboard":
        p = float(spec.period)
        cells = np.floor((X - grid.x0) / p + 1e-9).astype(int) + np.floor((Y - grid.y0) / p + 1e-9).astype(int)
        a = np.where(cells % 2 == 0, 1.0, b)
    elif spec.kind == "smooth_bump":
        a = 1.0 - (1.0 - b) * np.exp(-0.5 * (r / spec.radius) ** 2)
    else:
        rng = np.random.default_rng(spec.seed)
        lo = np.array([X.min(), Y.min()])
        hi = np.array([X.max(), Y.max()])
        a = np.ones(grid.shape)
        centers = lo + (hi - lo) * rng.random((spec.count, 2))
        levels = b + (1.0 - b) * rng.random(spec.count) * 0.5
        for (cx, cy), lv in zip(centers, levels):
            a = np.where(np.hypot(X - cx, Y - cy) <= spec.radius, np.minimum(a, lv), a)
    return ScalarField(grid, np.clip(a, b, 1.0))


# ---------------------------------------------------------------- dumps

FIELD_KINDS = ("scalar", "vector", "complex")


def _kind_of(f) -> str:
    if isinstance(f, ComplexField):
        return "complex"
    if isinstance(f, VectorField):
        return "vector"
    if isinstance(f, ScalarField):
        return "scalar"
    raise TypeError(f"not a field: {type(f)!r}")


def write_dump(path, f) -> None:
    """Write ``PGL1 <nx> <ny> <h> <kind> <count>`` and row-major values."""
    g = f.grid
    kind = _kind_of(f)
    lines = [f"PGL1 {g.nx} {g.ny} {g.h:.17g} {kind} {g.size}"]
    if kind == "scalar":
        lines += [f"{v:.17g}" for v in f.values.ravel()]
    elif kind == "complex":
        lines += [f"{v.real:.17g} {v.imag:.17g}" for v in f.values.ravel()]
    else:
        lines += [f"{a:.17g} {b:.17g}" for a, b in zip(f.values[0].ravel(), f.values[1].ravel())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dump(path, grid: Grid | None = None):
    """Read a dump back into a field.

    Without ``grid`` a rectangle grid with the dump's spacing is rebuilt.
    """
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if len(head) != 6 or head[0] != "PGL1":
        raise ValueError(f"{path}: bad dump header {text[0]!r}")
    nx, ny, h, kind, count = int(head[1]), int(head[2]), float(head[3]), head[4], int(head[5])
    if kind not in FIELD_KINDS:
        raise ValueError(f"{path}: unknown field kind {kind!r}")
    if count != nx * ny or len(text) - 1 < count:
        raise ValueError(f"{path}: expected {nx * ny} values, header says {count}, found {len(text) - 1}")
    if grid is None:
        grid = build_grid(nx, ny, "rectangle", h * (nx - 1))
    elif (grid.nx, grid.ny) != (nx, ny) or grid.h != h:
        raise ValueError(f"{path}: dump is {nx}x{ny} h={h!r}, grid is {grid.nx}x{grid.ny} h={grid.h!r}")
    rows = text[1 : 1 + count]
    if kind == "scalar":
        vals = np.array([float(s) for s in rows]).reshape(ny, nx)
        return ScalarField(grid, vals)
    pairs = np.array([[float(t) for t in s.split()] for s in rows])
    if pairs.shape != (count, 2):
        raise ValueError(f"{path}: {kind} rows must hold two numbers")
    if kind == "complex":
        return ComplexField(grid, (pairs[:, 0] + 1j * pairs[:, 1]).reshape(ny, nx))
    return VectorField(grid, pairs.T.reshape(2, ny, nx))
