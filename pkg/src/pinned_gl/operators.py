"""Nodal difference operators and quadrature.

Centered second-order differences in the interior of the bounding box,
one-sided second-order stencils on its edges.  Disk grids use the same
tensor stencils, with nodes outside the disk carrying extension values.
The operators are assembled once per grid as sparse matrices acting on row-major flattened arrays.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fields import ComplexField, ScalarField, VectorField
from .grid import Grid


def _axis_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    ny, nx = grid.shape
    # stencils span the whole bounding box so that d/dx and d/dy commute
    act = np.ones(grid.shape, dtype=bool)
    idx = np.arange(grid.size).reshape(ny, nx)
    h = grid.h

    def shifted(k):
        # availability and flat index of the neighbour k steps along axis
        ok = np.zeros_like(act)
        nb = np.full((ny, nx), -1)
        if axis == 1:
            if k > 0:
                ok[:, :-k] = act[:, k:]
                nb[:, :-k] = idx[:, k:]
            else:
                ok[:, -k:] = act[:, :k]
                nb[:, -k:] = idx[:, :k]
        else:
            if k > 0:
                ok[:-k, :] = act[k:, :]
                nb[:-k, :] = idx[k:, :]
            else:
                ok[-k:, :] = act[:k, :]
                nb[-k:, :] = idx[:k, :]
        return ok, nb

    p1, i_p1 = shifted(1)
    m1, i_m1 = shifted(-1)
    p2, i_p2 = shifted(2)
    m2, i_m2 = shifted(-2)
    rows, cols, vals = [], [], []

    def put(sel, pairs):
        r = idx[sel]
        for nbi, c in pairs:
            rows.append(r)
            cols.append(r if nbi is None else nbi[sel])
            vals.append(np.full(r.size, c / h))

    centered = act & p1 & m1
    fwd2 = act & ~centered & p1 & p2
    bwd2 = act & ~centered & ~fwd2 & m1 & m2
    fwd1 = act & ~centered & ~fwd2 & ~bwd2 & p1
    bwd1 = act & ~centered & ~fwd2 & ~bwd2 & ~fwd1 & m1
    put(centered, [(i_p1, 0.5), (i_m1, -0.5)])
    put(fwd2, [(None, -1.5), (i_p1, 2.0), (i_p2, -0.5)])
    put(bwd2, [(None, 1.5), (i_m1, -2.0), (i_m2, 0.5)])
    put(fwd1, [(None, -1.0), (i_p1, 1.0)])
    put(bwd1, [(None, 1.0), (i_m1, -1.0)])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    return sp.csr_matrix((v, (r, c)), shape=(grid.size, grid.size))


def diff_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse d/dx and d/dy on flattened node arrays (cached on the grid)."""
    if "Dx" not in grid._cache:
        grid._cache["Dx"] = _axis_matrix(grid, 1)
        grid._cache["Dy"] = _axis_matrix(grid, 0)
    return grid._cache["Dx"], grid._cache["Dy"]


# Array-level kernels used by the energy code -------------------------------


def grad_array(grid: Grid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Dx, Dy = diff_matrices(grid)
    flat = f.reshape(-1)
    return (Dx @ flat).reshape(grid.shape), (Dy @ flat).reshape(grid.shape)


def curl_array(grid: Grid, vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    Dx, Dy = diff_matrices(grid)
    return (Dx @ vy.reshape(-1) - Dy @ vx.reshape(-1)).reshape(grid.shape)


def div_array(grid: Grid, vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    Dx, Dy = diff_matrices(grid)
    return (Dx @ vx.reshape(-1) + Dy @ vy.reshape(-1)).reshape(grid.shape)


def integrate_array(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(grid.weights * f))


# Field-level operations ----------------------------------------------------


def _same_grid(*fields) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if not f.grid.same_as(g):
            raise ValueError("fields live on different grids")
    return g


def grad(f: ScalarField) -> VectorField:
    gx, gy = grad_array(f.grid, f.values)
    return VectorField(f.grid, np.stack([gx, gy]))


def perp_grad(f: ScalarField) -> VectorField:
    """(-d_y f, d_x f)."""
    gx, gy = grad_array(f.grid, f.values)
    return VectorField(f.grid, np.stack([-gy, gx]))


def div(V: VectorField) -> ScalarField:
    return ScalarField(V.grid, div_array(V.grid, V.x, V.y))


def curl(V: VectorField) -> ScalarField:
    """d_x V_y - d_y V_x."""
    return ScalarField(V.grid, curl_array(V.grid, V.x, V.y))


def covariant_grad(u: ComplexField, A: VectorField) -> np.ndarray:
    """(grad - iA)u as a complex array of shape (2, ny, nx)."""
    g = _same_grid(u, A)
    gr = grad_array(g, u.values.real)
    gi = grad_array(g, u.values.imag)
    return np.stack([gr[k] + 1j * gi[k] - 1j * A.values[k] * u.values for k in range(2)])


def integrate(f: ScalarField) -> float:
    return integrate_array(f.grid, f.values)


def extension_matrix(grid: Grid, defined: np.ndarray, layers: int = 3) -> sp.csr_matrix:
    """Linear map from values on ``defined`` nodes to all nodes.

    Each undefined node within ``layers`` rings of the defined set gets a
    polynomial extrapolation along the grid lines pointing back into the
    set (quadratic where three points exist, else linear, else constant),
    averaged over the usable directions.  Remaining nodes copy their
    nearest defined node.  On a rectangle this is the identity.
    """
    key = ("ext", defined.tobytes(), layers)
    if key in grid._cache:
        return grid._cache[key]
    ny, nx = grid.shape
    flat_def = np.flatnonzero(defined.reshape(-1))
    col = -np.ones(grid.size, dtype=int)
    col[flat_def] = np.arange(flat_def.size)
    rows = {int(k): {int(col[k]): 1.0} for k in flat_def}
    known = defined.copy()
    stencils = [(3.0, -3.0, 1.0), (2.0, -1.0), (1.0,)]
    for _ in range(layers):
        new = {}
        for j, i in zip(*np.nonzero(~known)):
            best = None
            for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                for coefs in stencils:
                    pts = [(j + dj * (m + 1), i + di * (m + 1)) for m in range(len(coefs))]
                    if all(0 <= pj < ny and 0 <= pi < nx and known[pj, pi] for pj, pi in pts):
                        order = len(coefs)
                        if best is None or order > best[0]:
                            best = (order, [(coefs, pts)])
                        elif order == best[0]:
                            best[1].append((coefs, pts))
                        break
            if best is None:
                continue
            acc: dict = {}
            share = 1.0 / len(best[1])
            for coefs, pts in best[1]:
                for c, (pj, pi) in zip(coefs, pts):
                    for kk, v in rows[pj * nx + pi].items():
                        acc[kk] = acc.get(kk, 0.0) + share * c * v
            new[j * nx + i] = acc
        if not new:
            break
        for k, acc in new.items():
            rows[k] = acc
            known.reshape(-1)[k] = True
    if not known.all():
        from scipy import ndimage

        _, (jj, ii) = ndimage.distance_transform_edt(~known, return_indices=True)
        for j, i in zip(*np.nonzero(~known)):
            rows[j * nx + i] = rows[jj[j, i] * nx + ii[j, i]]
    r, c, v = [], [], []
    for k, acc in rows.items():
        for kk, val in acc.items():
            r.append(k)
            c.append(kk)
            v.append(val)
    E = sp.csr_matrix((v, (r, c)), shape=(grid.size, flat_def.size))
    grid._cache[key] = E
    return E


def extend(grid: Grid, values: np.ndarray, defined: np.ndarray, layers: int = 3) -> np.ndarray:
    """Overwrite values off ``defined`` by the extrapolation of ``extension_matrix``."""
    if defined.all():
        return values
    E = extension_matrix(grid, defined, layers)
    return (E @ values.reshape(-1)[defined.reshape(-1)]).reshape(grid.shape)


def cell_weights(grid: Grid) -> np.ndarray:
    """Area of each grid cell inside the domain, shape (ny-1, nx-1).

    Cells with a weightless corner get zero, matching the rule for edges.
    """
    key = "cell_weights"
    if key in grid._cache:
        return grid._cache[key]
    h = grid.h
    if grid.domain_kind == "disk":
        from .grid import _disk_box_area

        xs = grid.x[0]
        ys = grid.y[:, 0]
        R = grid.extent
        cx = 0.5 * (grid.x[:-1, :-1] + grid.x[1:, 1:])
        cy = 0.5 * (grid.y[:-1, :-1] + grid.y[1:, 1:])
        rc = np.hypot(cx, cy)
        wc = np.where(rc < R - h, h * h, 0.0)
        for j, i in zip(*np.nonzero((rc >= R - h) & (rc <= R + h))):
            wc[j, i] = _disk_box_area(xs[i], xs[i + 1], ys[j], ys[j + 1], R)
    else:
        wc = np.full((grid.ny - 1, grid.nx - 1), h * h)
    pos = grid.weights > 0
    corners = pos[:-1, :-1] & pos[:-1, 1:] & pos[1:, :-1] & pos[1:, 1:]
    wc = np.where(corners, wc, 0.0)
    wc.setflags(write=False)
    grid._cache[key] = wc
    return wc


def cell_curl_array(grid: Grid, Ax: np.ndarray, Ay: np.ndarray) -> np.ndarray:
    """Circulation of the edge-averaged field around each cell, over h^2."""
    dy = (Ay[:-1, 1:] + Ay[1:, 1:]) - (Ay[:-1, :-1] + Ay[1:, :-1])
    dx = (Ax[1:, :-1] + Ax[1:, 1:]) - (Ax[:-1, :-1] + Ax[:-1, 1:])
    return (dy - dx) / (2.0 * grid.h)


def cell_curl_adjoint(grid: Grid, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of cell_curl_array applied to cell values r."""
    s = r / (2.0 * grid.h)
    gx = np.zeros(grid.shape)
    gy = np.zeros(grid.shape)
    gy[:-1, 1:] += s
    gy[1:, 1:] += s
    gy[:-1, :-1] -= s
    gy[1:, :-1] -= s
    gx[1:, :-1] -= s
    gx[1:, 1:] -= s
    gx[:-1, :-1] += s
    gx[:-1, 1:] += s
    return gx, gy
