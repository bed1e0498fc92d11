"""Uniform node-collocated grids on rectangles and disks.

Disks are masked squares.  Quadrature weights are the exact areas of the
node dual cells clipped to the domain, so on a rectangle they reduce to
the tensor trapezoid rule (h^2 inside, halved on edges, quartered on
corners).  Edge weights are the clipped areas of the edge dual boxes and
back the compact kinetic and Dirichlet forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EXTERIOR = 0
INTERIOR = 1
BOUNDARY = 2

DOMAIN_KINDS = ("rectangle", "disk")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _disk_box_area(x0, x1, y0, y1, R):
    """Exact area of [x0,x1]x[y0,y1] intersected with the disk |p| <= R."""

    def prim(x):
        # antiderivative of sqrt(R^2 - x^2)
        x = np.clip(x, -R, R)
        return 0.5 * (x * np.sqrt(max(R * R - x * x, 0.0)) + R * R * np.arcsin(x / R))

    lo, hi = max(x0, -R), min(x1, R)
    if hi <= lo:
        return 0.0
    cuts = [lo, hi]
    for yy in (y0, y1):
        if abs(yy) < R:
            xc = np.sqrt(R * R - yy * yy)
            cuts += [-xc, xc]
    cuts = sorted(c for c in set(cuts) if lo <= c <= hi)
    area = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        m = 0.5 * (a + b)
        s = np.sqrt(max(R * R - m * m, 0.0))
        top_is_circle = s < y1
        bot_is_circle = -s > y0
        top = s if top_is_circle else y1
        bot = -s if bot_is_circle else y0
        if top <= bot:
            continue
        arc = prim(b) - prim(a)
        up = arc if top_is_circle else y1 * (b - a)
        dn = -arc if bot_is_circle else y0 * (b - a)
        area += up - dn
    return max(area, 0.0)


@dataclass(eq=False)
class Grid:
    """Node grid with mask, normals and quadrature.

    Arrays are indexed ``[j, i]`` with ``x = x0 + i*h`` and ``y = y0 + j*h``.
    """

    nx: int
    ny: int
    h: float
    domain_kind: str
    extent: float
    x0: float
    y0: float
    x: np.ndarray
    y: np.ndarray
    node_mask: np.ndarray
    boundary_normals: np.ndarray
    weights: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    inside: np.ndarray
    arms: dict
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def inradius(self) -> float:
        if self.domain_kind == "disk":
            return self.extent
        return 0.5 * (min(self.nx, self.ny) - 1) * self.h

    @property
    def active(self) -> np.ndarray:
        return self.node_mask != EXTERIOR

    @property
    def center(self) -> np.ndarray:
        if self.domain_kind == "disk":
            return np.zeros(2)
        return np.array([self.x0 + 0.5 * (self.nx - 1) * self.h, self.y0 + 0.5 * (self.ny - 1) * self.h])

    def boundary_distance(self, px, py):
        """Distance from points to the domain boundary (positive inside)."""
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        if self.domain_kind == "disk":
            return self.extent - np.hypot(px, py)
        x1 = self.x0 + (self.nx - 1) * self.h
        y1 = self.y0 + (self.ny - 1) * self.h
        return np.minimum(np.minimum(px - self.x0, x1 - px), np.minimum(py - self.y0, y1 - py))

    def contains_ball(self, center, radius, margin=0.0) -> bool:
        """True if the closed ball lies in {dist(x, boundary) > margin}."""
        return bool(self.boundary_distance(center[0], center[1]) - radius > margin)

    def same_as(self, other: "Grid") -> bool:
        return other is self or (
            self.nx == other.nx
            and self.ny == other.ny
            and self.h == other.h
            and self.domain_kind == other.domain_kind
            and self.x0 == other.x0
            and self.y0 == other.y0
        )


def build_grid(nx: int, ny: int, domain_kind: str = "rectangle", extent: float = 1.0) -> Grid:
    """Build a grid.

    For ``rectangle`` the domain is ``[0, (nx-1)h] x [0, (ny-1)h]`` with
    ``h = extent/(nx-1)``.  For ``disk`` the domain is the disk of radius
    ``extent`` centred at the origin, embedded in the square
    ``[-extent, extent]^2`` with ``h = 2*extent/(nx-1)``.
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise TypeError("node counts must be integers")
    if nx < 8 or ny < 8:
        raise ValueError(f"node counts must be >= 8, got {nx}x{ny}")
    if not extent > 0 or not np.isfinite(extent):
        raise ValueError(f"extent must be positive, got {extent}")
    if domain_kind not in DOMAIN_KINDS:
        raise ValueError(f"unknown domain kind {domain_kind!r}")
    nx, ny = int(nx), int(ny)

    if domain_kind == "rectangle":
        h = float(extent) / (nx - 1)
        x0 = y0 = 0.0
    else:
        if nx != ny:
            raise ValueError("disk grids must be square")
        h = 2.0 * float(extent) / (nx - 1)
        x0 = y0 = -float(extent)
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)

    if domain_kind == "rectangle":
        wxv = np.full(nx, h)
        wxv[[0, -1]] = 0.5 * h
        wyv = np.full(ny, h)
        wyv[[0, -1]] = 0.5 * h
        weights = np.outer(wyv, wxv)
        wx = np.outer(wyv, np.full(nx - 1, h))
        wy = np.outer(np.full(ny - 1, h), wxv)
        mask = np.full((ny, nx), INTERIOR, dtype=np.int8)
        mask[[0, -1], :] = BOUNDARY
        mask[:, [0, -1]] = BOUNDARY
        inside = mask == INTERIOR
        normals = np.zeros((ny, nx, 2))
        normals[:, 0, 0] -= 1.0
        normals[:, -1, 0] += 1.0
        normals[0, :, 1] -= 1.0
        normals[-1, :, 1] += 1.0
        nrm = np.linalg.norm(normals, axis=-1)
        nz = nrm > 0
        normals[nz] /= nrm[nz][:, None]
        arms = {d: np.zeros((ny, nx)) for d in "EWNS"}
        arms["E"][:, :-1] = np.where(~inside[:, 1:] & inside[:, :-1], 1.0, 0.0)
        arms["W"][:, 1:] = np.where(~inside[:, :-1] & inside[:, 1:], 1.0, 0.0)
        arms["N"][:-1, :] = np.where(~inside[1:, :] & inside[:-1, :], 1.0, 0.0)
        arms["S"][1:, :] = np.where(~inside[:-1, :] & inside[1:, :], 1.0, 0.0)
    else:
        R = float(extent)
        r = np.hypot(X, Y)
        inside = r < R * (1.0 - 1e-12)
        far_in = r < R - h  # dual cell and edge boxes fully inside
        far_out = r > R + h
        half = 0.5 * h
        weights = np.where(far_in, h * h, 0.0)
        wx = np.where(far_in[:, :-1] & far_in[:, 1:], h * h, 0.0)
        wy = np.where(far_in[:-1, :] & far_in[1:, :], h * h, 0.0)
        for j, i in zip(*np.nonzero(~far_in & ~far_out)):
            weights[j, i] = _disk_box_area(xs[i] - half, xs[i] + half, ys[j] - half, ys[j] + half, R)
        for j, i in zip(*np.nonzero(~(far_in[:, :-1] & far_in[:, 1:]) & ~(far_out[:, :-1] & far_out[:, 1:]))):
            wx[j, i] = _disk_box_area(xs[i], xs[i + 1], ys[j] - half, ys[j] + half, R)
        for j, i in zip(*np.nonzero(~(far_in[:-1, :] & far_in[1:, :]) & ~(far_out[:-1, :] & far_out[1:, :]))):
            wy[j, i] = _disk_box_area(xs[i] - half, xs[i] + half, ys[j], ys[j + 1], R)
        # drop slivers and edges that touch a weightless node
        tiny = 1e-14 * h * h
        weights[weights < tiny] = 0.0
        pos = weights > 0
        wx[~(pos[:, :-1] & pos[:, 1:])] = 0.0
        wy[~(pos[:-1, :] & pos[1:, :])] = 0.0
        mask = np.full((ny, nx), EXTERIOR, dtype=np.int8)
        mask[pos] = BOUNDARY
        mask[inside] = INTERIOR
        normals = np.zeros((ny, nx, 2))
        bnd = mask == BOUNDARY
        normals[bnd, 0] = X[bnd] / r[bnd]
        normals[bnd, 1] = Y[bnd] / r[bnd]
        # arm fractions from inside nodes to the circle along grid lines
        arms = {d: np.zeros((ny, nx)) for d in "EWNS"}
        sx = np.sqrt(np.maximum(R * R - Y * Y, 0.0))
        sy = np.sqrt(np.maximum(R * R - X * X, 0.0))
        e = np.zeros_like(inside)
        e[:, :-1] = inside[:, :-1] & ~inside[:, 1:]
        arms["E"][e] = (sx[e] - X[e]) / h
        w = np.zeros_like(inside)
        w[:, 1:] = inside[:, 1:] & ~inside[:, :-1]
        arms["W"][w] = (X[w] + sx[w]) / h
        n = np.zeros_like(inside)
        n[:-1, :] = inside[:-1, :] & ~inside[1:, :]
        arms["N"][n] = (sy[n] - Y[n]) / h
        s = np.zeros_like(inside)
        s[1:, :] = inside[1:, :] & ~inside[:-1, :]
        arms["S"][s] = (Y[s] + sy[s]) / h
        for d in arms:
            arms[d] = np.clip(arms[d], 0.0, 1.0)
            # guard against a node sitting numerically on the circle
            arms[d][(arms[d] > 0) & (arms[d] < 1e-8)] = 1e-8

    return Grid(
        nx=nx,
        ny=ny,
        h=h,
        domain_kind=domain_kind,
        extent=float(extent),
        x0=x0,
        y0=y0,
        x=_freeze(X),
        y=_freeze(Y),
        node_mask=_freeze(mask),
        boundary_normals=_freeze(normals),
        weights=_freeze(weights),
        wx=_freeze(wx),
        wy=_freeze(wy),
        inside=_freeze(np.asarray(inside, dtype=bool)),
        arms={k: _freeze(v) for k, v in arms.items()},
    )
