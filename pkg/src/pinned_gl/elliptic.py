"""Matrix-free elliptic solves: the pinned density, the Meissner potential
and the Coulomb projection.

Two compact operators live here.  The Neumann form uses the clipped edge
areas of the grid,

    (L f)_i = sum_{edges ij} w_ij (f_i - f_j) / h^2,

and is the Hessian of ``1/2 int |grad f|^2`` in the compact (edge)
discretization shared with the kinetic energy.  The Dirichlet form acts
on nodes strictly inside the domain, uses harmonic-mean face weights
``2/(rho_i^2 + rho_j^2)`` and a fractional arm ``theta*h`` towards the
boundary, which keeps the matrix symmetric.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import lsmr

from .fields import ScalarField, VectorField
from .grid import BOUNDARY, INTERIOR, Grid
from .operators import diff_matrices, extend, extension_matrix

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """Raised by callers that require convergence."""


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float
    tol: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


# ------------------------------------------------------------------ CG


def _pcg(apply, b, tol, max_iter, diag=None, x0=None, project=None):
    """Preconditioned CG on flat vectors.  Returns x, iterations, rel. residual."""
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, False
    r = b - apply(x) if x0 is not None else b.copy()
    if project is not None:
        r = project(r)
    inv = None if diag is None else np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    z = r if inv is None else inv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    rel = np.linalg.norm(r) / bnorm
    indefinite = False
    while rel > tol and it < max_iter:
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            indefinite = True
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        it += 1
        rel = np.linalg.norm(r) / bnorm
        z = r if inv is None else inv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    # report the true residual, not the recursive one
    rt = b - apply(x)
    if project is not None:
        rt = project(rt)
    return x, it, float(np.linalg.norm(rt) / bnorm), indefinite


def cg_solve(apply, rhs, tol: float = 1e-10, max_iter: int = 10000, precond_diag=None, x0=None):
    """Solve ``apply(x) = rhs`` for a symmetric positive definite operator.

    ``apply`` maps an array shaped like ``rhs`` to another such array.
    Returns ``(solution, SolveReport)``; the solution is a ScalarField when
    ``rhs`` is one.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    grid = rhs.grid if isinstance(rhs, ScalarField) else None
    b = np.asarray(rhs.values if grid is not None else rhs, dtype=float)
    shape = b.shape

    def op(v):
        return np.asarray(apply(v.reshape(shape)), dtype=float).reshape(-1)

    diag = None if precond_diag is None else np.asarray(precond_diag, dtype=float).reshape(-1)
    xin = None if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    x, it, res, _ = _pcg(op, b.reshape(-1), tol, max_iter, diag, xin)
    rep = SolveReport(it, res, res <= tol, time.perf_counter() - t0, tol)
    if not rep.converged:
        log.warning("cg_solve: no convergence after %d iterations (residual %.3e)", it, res)
    x = x.reshape(shape)
    return (ScalarField(grid, x) if grid is not None else x), rep


# ------------------------------------------------------- Neumann form


def neumann_apply(grid: Grid, f: np.ndarray, coef_x=None, coef_y=None) -> np.ndarray:
    """Compact weighted Laplacian ``L f`` (optionally with extra edge factors)."""
    h2 = grid.h * grid.h
    cx = grid.wx / h2 if coef_x is None else grid.wx * coef_x / h2
    cy = grid.wy / h2 if coef_y is None else grid.wy * coef_y / h2
    out = np.zeros_like(f)
    fx = cx * (f[:, 1:] - f[:, :-1])
    fy = cy * (f[1:, :] - f[:-1, :])
    out[:, :-1] -= fx
    out[:, 1:] += fx
    out[:-1, :] -= fy
    out[1:, :] += fy
    return out


def neumann_diag(grid: Grid) -> np.ndarray:
    h2 = grid.h * grid.h
    d = np.zeros(grid.shape)
    d[:, :-1] += grid.wx / h2
    d[:, 1:] += grid.wx / h2
    d[:-1, :] += grid.wy / h2
    d[1:, :] += grid.wy / h2
    return d


def dirichlet_energy(grid: Grid, f: np.ndarray) -> float:
    """``1/2 f.L f`` -- the compact discretization of ``1/2 int |grad f|^2``."""
    h2 = grid.h * grid.h
    return 0.5 * float(
        np.sum(grid.wx * (f[:, 1:] - f[:, :-1]) ** 2) / h2 + np.sum(grid.wy * (f[1:, :] - f[:-1, :]) ** 2) / h2
    )


def extend_outside(grid: Grid, values: np.ndarray, where: np.ndarray) -> np.ndarray:
    """Copy values at ``where`` to every other node from its nearest such node."""
    if where.all():
        return values
    _, (jj, ii) = ndimage.distance_transform_edt(~where, return_indices=True)
    return values[jj, ii]


# ------------------------------------------------------------ rho


def rho_energy(grid: Grid, rho: np.ndarray, a: np.ndarray, eps: float) -> float:
    """Discrete E_eps(rho) = 1/2 int |grad rho|^2 + (a - rho^2)^2/(2 eps^2)."""
    return dirichlet_energy(grid, rho) + float(np.sum(grid.weights * (a - rho**2) ** 2)) / (4 * eps * eps)


def rho_residual(grid: Grid, rho: np.ndarray, a: np.ndarray, eps: float) -> np.ndarray:
    """Gradient of the discrete E_eps at rho (Euclidean, not divided by weights)."""
    return neumann_apply(grid, rho) - grid.weights * rho * (a - rho**2) / (eps * eps)


def _residual_norm(grid: Grid, R: np.ndarray) -> float:
    # L2 norm of the pointwise residual R_i / w_i under the quadrature
    w = grid.weights
    pos = w > 0
    return float(np.sqrt(np.sum(R[pos] ** 2 / w[pos])))


def solve_rho(a: ScalarField, eps: float, tol: float = 1e-10, max_iter: int = 200):
    """Positive minimizer of the discrete E_eps: -Lap rho = rho(a - rho^2)/eps^2, Neumann.

    Damped Newton with an energy line search; explicit gradient flow with
    step ``min(eps^2, h^2)/8`` takes over when Newton stalls.
    """
    t0 = time.perf_counter()
    grid = a.grid
    av = a.values
    act = grid.weights > 0
    if not eps > 0:
        raise ValueError("eps must be positive")
    if av[act].min() <= 0 or av[act].max() > 1 + 1e-12:
        raise ValueError("pinning coefficient must lie in (0, 1]")
    b = float(av[act].min())
    lo, hi = np.sqrt(b), 1.0
    rho = np.clip(np.sqrt(av), lo, hi)
    rho = extend_outside(grid, rho, act)
    e2 = eps * eps

    def energy(r):
        return rho_energy(grid, r, av, eps)

    R = rho_residual(grid, rho, av, eps)
    res = _residual_norm(grid, R)
    it = 0
    flow_steps = 0
    while res > tol and it < max_iter:
        it += 1
        coeff = grid.weights * (3 * rho**2 - av) / e2

        def jac(v):
            return neumann_apply(grid, v) + coeff * v

        diag = neumann_diag(grid) + coeff
        ok = act & (diag > 0)
        step = np.zeros_like(rho)
        newton_ok = bool(np.all(diag[act] > 0))
        if newton_ok:
            sel = ok.reshape(-1)

            def op(v):
                full = np.zeros(grid.size)
                full[sel] = v
                return jac(full.reshape(grid.shape)).reshape(-1)[sel]

            x, _, rel, indefinite = _pcg(op, -R.reshape(-1)[sel], 1e-12, 5000, diag.reshape(-1)[sel])
            newton_ok = not indefinite and rel < 1e-6
            step.reshape(-1)[sel] = x
        accepted = False
        if newton_ok:
            e0 = energy(rho)
            t = 1.0
            while t > 1e-4:
                trial = np.clip(rho + t * step, lo, hi)
                Rt = rho_residual(grid, trial, av, eps)
                if energy(trial) <= e0 + 1e-14 * abs(e0) or _residual_norm(grid, Rt) < 0.5 * res:
                    rho, R, accepted = trial, Rt, True
                    break
                t *= 0.5
        if not accepted:
            # gradient flow of E_eps: drho/dt = -R/w
            dt = min(e2, grid.h**2) / 8.0
            w = np.where(act, grid.weights, 1.0)
            for _ in range(50):
                rho = np.clip(rho - dt * R / w, lo, hi)
                R = rho_residual(grid, rho, av, eps)
                flow_steps += 1
        rho = np.where(act, rho, extend_outside(grid, rho, act))
        res = _residual_norm(grid, R)
    rep = SolveReport(it, res, res <= tol, time.perf_counter() - t0, tol)
    if flow_steps:
        log.info("solve_rho used %d gradient-flow steps", flow_steps)
    if not rep.converged:
        log.warning("solve_rho: residual %.3e after %d iterations", res, it)
    return ScalarField(grid, rho), rep


# ------------------------------------------------------------- xi


def _face_weights(rho: np.ndarray):
    r2 = rho * rho
    kx = 2.0 / (r2[:, 1:] + r2[:, :-1])
    ky = 2.0 / (r2[1:, :] + r2[:-1, :])
    return kx, ky


def _xi_parts(grid: Grid, rho: np.ndarray):
    """Couplings between inside nodes and the diagonal arm terms (scaled by 1/h^2 later)."""
    ins = grid.inside
    kx, ky = _face_weights(rho)
    cx = np.where(ins[:, 1:] & ins[:, :-1], kx, 0.0)
    cy = np.where(ins[1:, :] & ins[:-1, :], ky, 0.0)
    arm = np.zeros(grid.shape)
    th = grid.arms
    e = th["E"][:, :-1] > 0
    arm[:, :-1] += np.where(e, kx / np.where(e, th["E"][:, :-1], 1.0), 0.0)
    w = th["W"][:, 1:] > 0
    arm[:, 1:] += np.where(w, kx / np.where(w, th["W"][:, 1:], 1.0), 0.0)
    n = th["N"][:-1, :] > 0
    arm[:-1, :] += np.where(n, ky / np.where(n, th["N"][:-1, :], 1.0), 0.0)
    s = th["S"][1:, :] > 0
    arm[1:, :] += np.where(s, ky / np.where(s, th["S"][1:, :], 1.0), 0.0)
    return cx, cy, arm


def xi_operator(grid: Grid, rho: np.ndarray):
    """Return (apply, diag) for ``-div(grad xi / rho^2) + xi`` on inside nodes."""
    cx, cy, arm = _xi_parts(grid, rho)
    h2 = grid.h * grid.h
    ins = grid.inside

    def apply(f):
        f = np.where(ins, f, 0.0)
        out = arm * f
        fx = cx * (f[:, 1:] - f[:, :-1])
        fy = cy * (f[1:, :] - f[:-1, :])
        out[:, :-1] -= fx
        out[:, 1:] += fx
        out[:-1, :] -= fy
        out[1:, :] += fy
        return np.where(ins, out / h2 + f, 0.0)

    diag = arm.copy()
    diag[:, :-1] += cx
    diag[:, 1:] += cx
    diag[:-1, :] += cy
    diag[1:, :] += cy
    diag = np.where(ins, diag / h2 + 1.0, 0.0)
    return apply, diag


def xi_forms(rho: ScalarField, xi: ScalarField) -> dict:
    """The solver's own quadratures: ``int |grad xi|^2/rho^2``, ``int xi^2``, ``int xi``."""
    grid = xi.grid
    f = np.where(grid.inside, xi.values, 0.0)
    cx, cy, arm = _xi_parts(grid, rho.values)
    dirichlet = float(np.sum(cx * (f[:, 1:] - f[:, :-1]) ** 2) + np.sum(cy * (f[1:, :] - f[:-1, :]) ** 2))
    dirichlet += float(np.sum(arm * f * f))
    h2 = grid.h * grid.h
    return {"dirichlet": dirichlet, "mass": h2 * float(np.sum(f * f)), "load": h2 * float(np.sum(f))}


def solve_xi(rho: ScalarField, tol: float = 1e-10, max_iter: int = 20000):
    """Solve -div(grad xi / rho^2) + xi = 1 in the domain, xi = 0 on the boundary."""
    t0 = time.perf_counter()
    grid = rho.grid
    rv = rho.values
    act = grid.weights > 0
    if rv[act].min() <= 0 or rv[act].max() > 1 + 1e-8:
        raise ValueError("rho must lie in (0, 1]")
    apply, diag = xi_operator(grid, rv)
    ins = grid.inside
    sel = ins.reshape(-1)
    rhs = np.ones(int(sel.sum()))

    def op(v):
        full = np.zeros(grid.size)
        full[sel] = v
        return apply(full.reshape(grid.shape)).reshape(-1)[sel]

    x, it, rel, _ = _pcg(op, rhs, tol, max_iter, diag.reshape(-1)[sel])
    xi = np.zeros(grid.size)
    xi[sel] = x
    rep = SolveReport(it, rel, rel <= tol, time.perf_counter() - t0, tol)
    if not rep.converged:
        log.warning("solve_xi: residual %.3e after %d iterations", rel, it)
    return ScalarField(grid, xi.reshape(grid.shape)), rep


# ------------------------------------------------------------ Coulomb


def _strong_system(grid: Grid):
    """Rows ``h div G`` at interior nodes and ``nu . G`` at boundary nodes.

    Columns are the nodes of positive weight, scaled to unit norm; G is the
    nodal gradient of their extension.  Returns (M, column scale, Gx, Gy,
    E, interior, boundary) with the row selectors as flat boolean arrays.
    """
    key = "coulomb_system"
    if key in grid._cache:
        return grid._cache[key]
    Dx, Dy = diff_matrices(grid)
    act = grid.weights > 0
    E = extension_matrix(grid, act)
    Gx = (Dx @ E).tocsr()
    Gy = (Dy @ E).tocsr()
    inner = (grid.node_mask == INTERIOR).reshape(-1)
    bnd = (grid.node_mask == BOUNDARY).reshape(-1)
    nx = grid.boundary_normals[..., 0].reshape(-1)
    ny = grid.boundary_normals[..., 1].reshape(-1)
    Mi = (Dx @ Gx + Dy @ Gy)[inner] * grid.h
    Mb = (sp.diags(nx) @ Gx + sp.diags(ny) @ Gy)[bnd]
    M = sp.vstack([Mi, Mb]).tocsr()
    cn = np.sqrt(np.asarray(M.multiply(M).sum(axis=0))).reshape(-1)
    scale = 1.0 / np.where(cn > 0, cn, 1.0)
    out = ((M @ sp.diags(scale)).tocsr(), scale, Gx, Gy, E, inner, bnd)
    grid._cache[key] = out
    return out


def _strong_rhs(grid: Grid, ax: np.ndarray, ay: np.ndarray, inner, bnd) -> np.ndarray:
    Dx, Dy = diff_matrices(grid)
    ax = ax.reshape(-1)
    ay = ay.reshape(-1)
    nx = grid.boundary_normals[..., 0].reshape(-1)
    ny = grid.boundary_normals[..., 1].reshape(-1)
    return np.concatenate([grid.h * (Dx @ ax + Dy @ ay)[inner], (nx * ax + ny * ay)[bnd]])


def coulomb_project(A: VectorField, tol: float = 1e-14, max_iter: int = 200000, return_phi: bool = False):
    """Remove the gradient part of A: ``A' = A - grad phi`` with

        div grad phi = div A  at interior nodes,
        nu . grad phi = nu . A  at boundary nodes,

    all in the nodal difference operators.  The system is solved in the
    least-squares sense (LSMR), so A' has zero discrete divergence and
    normal component whenever that is attainable, and projecting twice
    changes nothing.  Fields that already satisfy both conditions are
    returned unchanged; nodal gradients map to zero.
    """
    t0 = time.perf_counter()
    grid = A.grid
    M, scale, Gx, Gy, E, inner, bnd = _strong_system(grid)
    b = _strong_rhs(grid, A.x, A.y, inner, bnd)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        x, it, rel, ok = np.zeros(M.shape[1]), 0, 0.0, True
    else:
        out = lsmr(M, b, atol=tol, btol=tol, maxiter=max_iter)
        x, istop, it = out[0] * scale, out[1], out[2]
        # least-squares optimality: normal-equation residual relative to |M||b|
        rel = float(out[4] / (out[5] * bn))
        ok = istop in (1, 2, 4, 5) or rel <= tol
    phi = (E @ x).reshape(grid.shape)
    gx = (Gx @ x).reshape(grid.shape)
    gy = (Gy @ x).reshape(grid.shape)
    res = VectorField(grid, np.stack([A.x - gx, A.y - gy]))
    rep = SolveReport(it, rel, bool(ok), time.perf_counter() - t0, tol)
    if not rep.converged:
        log.warning("coulomb_project: residual %.3e after %d iterations", rel, it)
    if return_phi:
        return res, rep, ScalarField(grid, phi)
    return res, rep


def _edge_incidence(grid):
    key = "edge_incidence"
    if key in grid._cache:
        return grid._cache[key]
    ny, nx = grid.shape
    idx = np.arange(grid.size).reshape(grid.shape)
    tails, heads, wts = [], [], []
    for w, a, b in ((grid.wx, idx[:, :-1], idx[:, 1:]), (grid.wy, idx[:-1, :], idx[1:, :])):
        m = w > 0
        tails.append(a[m])
        heads.append(b[m])
        wts.append(w[m])
    t = np.concatenate(tails)
    hd = np.concatenate(heads)
    ne = t.size
    rows = np.concatenate([np.arange(ne), np.arange(ne)])
    vals = np.concatenate([-np.ones(ne), np.ones(ne)]) / grid.h
    B = sp.csr_matrix((vals, (rows, np.concatenate([t, hd]))), shape=(ne, grid.size))
    out = (B, np.concatenate(wts), t, hd, int((grid.wx > 0).sum()))
    grid._cache[key] = out
    return out


def link_coulomb_phase(A: VectorField, tol: float = 1e-10, max_iter: int = 20000):
    """Gauge phase removing the gradient part of the edge-averaged field.

    Minimizes ``sum_e w_e (Abar_e - (phi_j - phi_i)/h)^2`` over node values,
    with ``Abar_e`` the component of ``(A_i + A_j)/2`` along the edge.  The
    edge Laplacian has no checkerboard null space, so phi is smooth up to
    the boundary.  Values off the connected nodes are extrapolated.
    """
    t0 = time.perf_counter()
    g = A.grid
    B, w, tl, hd, nxe = _edge_incidence(g)
    Ax = A.x.reshape(-1)
    Ay = A.y.reshape(-1)
    bar = np.concatenate([0.5 * (Ax[tl[:nxe]] + Ax[hd[:nxe]]), 0.5 * (Ay[tl[nxe:]] + Ay[hd[nxe:]])])
    used = np.zeros(g.size, dtype=bool)
    used[tl] = True
    used[hd] = True
    diag = np.asarray(B.multiply(B).T @ w).reshape(-1)

    def op(v):
        return B.T @ (w * (B @ v))

    def center(r):
        r = np.where(used, r, 0.0)
        return r - used * (r.sum() / max(used.sum(), 1))

    b = center(B.T @ (w * bar))
    x, it, rel, _ = _pcg(op, b, tol, max_iter, diag, project=center)
    # sliver nodes carry ill-determined fields; extrapolate over them instead
    solid = used.reshape(g.shape) & (g.weights >= 0.25 * g.h * g.h)
    phi = extend(g, x.reshape(g.shape), solid)
    rep = SolveReport(it, rel, rel <= tol, time.perf_counter() - t0, tol)
    if not rep.converged:
        log.warning("link_coulomb_phase: residual %.3e after %d iterations", rel, it)
    return ScalarField(g, phi), rep


def coulomb_defect(A: VectorField) -> dict:
    """Gauge diagnostics: nodal divergence inside and normal component on the boundary."""
    grid = A.grid
    Dx, Dy = diff_matrices(grid)
    div = (Dx @ A.x.reshape(-1) + Dy @ A.y.reshape(-1)).reshape(grid.shape)
    nrm = grid.boundary_normals
    bnd = grid.node_mask == BOUNDARY
    an = A.x * nrm[..., 0] + A.y * nrm[..., 1]
    return {
        "div_interior_max": float(np.abs(div[grid.node_mask == INTERIOR]).max()),
        "normal_max": float(np.abs(an[bnd]).max()) if bnd.any() else 0.0,
    }
