"""Energies, vorticity, gauge changes and the splitting identity.

The kinetic term is written on grid edges with gauge links: for the edge
from node i to its neighbour j along a unit direction e,

    |D_A u|^2 ~ |exp(-i theta) u_j - u_i|^2 / h^2,  theta = h (A_i + A_j).e / 2,

weighted by the clipped edge area.  A weight eta enters as eta_i eta_j on
the edge.  With this form the decoupling of the density holds exactly
against the discrete Euler-Lagrange equation for rho.  The potential is
a nodal quadrature.  The field term uses the circulation of the same
edge-averaged A around each cell, so it sees exactly the flux the links
carry; a centred nodal curl would miss cell-scale checkerboard flux and
let the energy drop without bound.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .fields import ComplexField, ScalarField, VectorField
from .grid import INTERIOR
from .meissner import MeissnerState, extended_xi, meissner_energy
from .operators import (
    _same_grid,
    covariant_grad,
    cell_curl_adjoint,
    cell_curl_array,
    cell_weights,
    curl_array,
    extend,
    grad_array,
    integrate_array,
)


@dataclass
class Configuration:
    u: ComplexField
    A: VectorField
    eps: float
    hex: float = 0.0

    def __post_init__(self):
        _same_grid(self.u, self.A)
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.hex >= 0:
            raise ValueError("hex must be non-negative")

    @property
    def grid(self):
        return self.u.grid

    def with_fields(self, u=None, A=None) -> "Configuration":
        return Configuration(self.u if u is None else u, self.A if A is None else A, self.eps, self.hex)


@dataclass
class EnergyReport:
    total: float
    kinetic: float
    potential: float
    field: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplittingReport:
    lhs: float
    meissner: float
    free_weighted: float
    vortex_pairing: float
    r0: float
    residual: float

    def as_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ kernels


def _edges(grid, u, Ax, Ay, eta=None):
    """Per-edge weights, links and differences for x- and y-edges."""
    h = grid.h
    out = []
    for axis, Ac, w in ((1, Ax, grid.wx), (0, Ay, grid.wy)):
        if axis == 1:
            ui, uj, Ai, Aj = u[:, :-1], u[:, 1:], Ac[:, :-1], Ac[:, 1:]
            ei, ej = (eta[:, :-1], eta[:, 1:]) if eta is not None else (1.0, 1.0)
        else:
            ui, uj, Ai, Aj = u[:-1, :], u[1:, :], Ac[:-1, :], Ac[1:, :]
            ei, ej = (eta[:-1, :], eta[1:, :]) if eta is not None else (1.0, 1.0)
        c = w * ei * ej
        link = np.exp(-0.5j * h * (Ai + Aj))
        D = link * uj - ui
        out.append((c, link, D, uj))
    return out


def kinetic_array(grid, u, Ax, Ay, eta=None) -> float:
    """1/2 sum over edges of c_e |D_e|^2 / h^2."""
    h2 = grid.h**2
    return 0.5 * sum(float(np.sum(c * (D.real**2 + D.imag**2))) for c, _, D, _ in _edges(grid, u, Ax, Ay, eta)) / h2


def energy_parts(grid, u, Ax, Ay, a, eps, hex, eta=None):
    """(kinetic, potential, field) of GL (eta None) or of the weighted free energy."""
    kin = kinetic_array(grid, u, Ax, Ay, eta)
    m2 = u.real**2 + u.imag**2
    if eta is None:
        pot = float(np.sum(grid.weights * (a - m2) ** 2)) / (4 * eps * eps)
    else:
        pot = float(np.sum(grid.weights * eta**4 * (1 - m2) ** 2)) / (4 * eps * eps)
    r = cell_curl_array(grid, Ax, Ay) - hex
    fld = 0.5 * float(np.sum(cell_weights(grid) * r * r))
    return kin, pot, fld


def energy_and_gradient(grid, u, Ax, Ay, a, eps, hex):
    """GL energy and its Euclidean gradient (gu complex, gAx, gAy).

    ``gu`` is defined by ``dE = Re sum conj(gu) du``; dividing by the node
    weights gives the gradient in the quadrature inner product.
    """
    h = grid.h
    h2 = h * h
    gu = np.zeros_like(u)
    gAx = np.zeros(grid.shape)
    gAy = np.zeros(grid.shape)
    kin = 0.0
    for k, (c, link, D, uj) in enumerate(_edges(grid, u, Ax, Ay)):
        kin += 0.5 * float(np.sum(c * (D.real**2 + D.imag**2))) / h2
        cu = c * D / h2
        ga = c * np.imag(np.conj(D) * link * uj) / (2 * h)
        if k == 0:
            gu[:, 1:] += np.conj(link) * cu
            gu[:, :-1] -= cu
            gAx[:, :-1] += ga
            gAx[:, 1:] += ga
        else:
            gu[1:, :] += np.conj(link) * cu
            gu[:-1, :] -= cu
            gAy[:-1, :] += ga
            gAy[1:, :] += ga
    w = grid.weights
    m2 = u.real**2 + u.imag**2
    pot = float(np.sum(w * (a - m2) ** 2)) / (4 * eps * eps)
    gu -= w * (a - m2) * u / (eps * eps)
    wc = cell_weights(grid)
    r = cell_curl_array(grid, Ax, Ay) - hex
    fld = 0.5 * float(np.sum(wc * r * r))
    fx, fy = cell_curl_adjoint(grid, wc * r)
    gAx += fx
    gAy += fy
    return (kin, pot, fld), gu, gAx, gAy


def current_array(grid, u, Ax, Ay) -> np.ndarray:
    """<iu, grad_A u> = Im(conj(u) grad_A u), nodal."""
    Du = covariant_grad(ComplexField(grid, u), VectorField(grid, np.stack([Ax, Ay])))
    return np.imag(np.conj(u)[None] * Du)


# ------------------------------------------------------------ public API


def gl_energy(cfg: Configuration, a: ScalarField) -> EnergyReport:
    """Ginzburg-Landau energy 1/2 int |grad_A u|^2 + (a-|u|^2)^2/(2 eps^2) + |curl A - hex|^2."""
    g = _same_grid(cfg.u, cfg.A, a)
    kin, pot, fld = energy_parts(g, cfg.u.values, cfg.A.x, cfg.A.y, a.values, cfg.eps, cfg.hex)
    return EnergyReport(kin + pot + fld, kin, pot, fld)


def free_energy_weighted(u: ComplexField, A: VectorField, eta: ScalarField, eps: float) -> float:
    """1/2 int eta^2 |grad_A u|^2 + eta^4 (1-|u|^2)^2/(2 eps^2) + |curl A|^2."""
    g = _same_grid(u, A, eta)
    ev = eta.values[g.weights > 0]
    if ev.min() <= 0 or ev.max() > 1 + 1e-8:
        raise ValueError("weight eta must lie in (0, 1]")
    kin, pot, fld = energy_parts(g, u.values, A.x, A.y, None, eps, 0.0, eta=eta.values)
    return kin + pot + fld


def lm_decouple_check(u: ComplexField, A: VectorField, rho: ScalarField, a: ScalarField, eps: float) -> float:
    """|E(rho u, A) - E(rho) - 1/2 int rho^2 |grad_A u|^2 + rho^4 (1-|u|^2)^2/(2 eps^2)|.

    Both sides omit the field term.  ``rho`` must solve the discrete
    density equation for ``a``; the identity is then exact up to that
    solve's residual.
    """
    g = _same_grid(u, A, rho, a)
    rv = rho.values
    k1, p1, _ = energy_parts(g, rv * u.values, A.x, A.y, a.values, eps, 0.0)
    k0, p0, _ = energy_parts(g, rv.astype(complex), np.zeros(g.shape), np.zeros(g.shape), a.values, eps, 0.0)
    k2, p2, _ = energy_parts(g, u.values, A.x, A.y, None, eps, 0.0, eta=rv)
    return abs((k1 + p1) - (k0 + p0) - (k2 + p2))


def vorticity(u: ComplexField, A: VectorField) -> ScalarField:
    """mu = curl <iu, grad_A u> + curl A at every node."""
    g = _same_grid(u, A)
    j = current_array(g, u.values, A.x, A.y)
    return ScalarField(g, curl_array(g, j[0], j[1]) + curl_array(g, A.x, A.y))


def vortex_pairing(u: ComplexField, A: VectorField, xi: ScalarField) -> float:
    """int mu xi, evaluated in integrated-by-parts form.

    With perp_grad = (-d_y, d_x) and xi = 0 on the boundary,
    int mu xi = -int (j + A).perp_grad(xi) = int (j + A).(d_y xi, -d_x xi).
    """
    g = _same_grid(u, A, xi)
    bnd = ~g.inside
    if np.abs(xi.values[bnd]).max(initial=0.0) > 1e-10:
        raise ValueError("xi must vanish off the inside nodes")
    xe = extended_xi(xi)
    gx, gy = grad_array(g, xe)
    j = current_array(g, u.values, A.x, A.y)
    return integrate_array(g, (j[0] + A.x) * gy - (j[1] + A.y) * gx)


def r0_term(u: ComplexField, state: MeissnerState, hex: float) -> float:
    """(hex^2/2) int |grad xi|^2/rho^2 (|u|^2 - 1)."""
    g = state.grid
    gx, gy = grad_array(g, extended_xi(state.xi))
    m2 = np.abs(u.values) ** 2
    return 0.5 * hex * hex * integrate_array(g, (gx**2 + gy**2) / state.rho.values**2 * (m2 - 1.0))


def assemble(cfg: Configuration, state: MeissnerState) -> Configuration:
    """Full configuration (rho u, A + hex A0) from a split pair (u, A)."""
    g = _same_grid(cfg.u, cfg.A, state.a)
    u = ComplexField(g, state.rho.values * cfg.u.values)
    A = VectorField(g, cfg.A.values + cfg.hex * state.A0.values)
    return Configuration(u, A, cfg.eps, cfg.hex)


def split_energy(cfg: Configuration, meissner: MeissnerState) -> SplittingReport:
    """Evaluate both sides of GL(rho u, A + hex A0) = M + F_rho(u, A) - hex P + R0."""
    full = assemble(cfg, meissner)
    lhs = gl_energy(full, meissner.a).total
    m = meissner_energy(meissner, cfg.hex)
    f = free_energy_weighted(cfg.u, cfg.A, meissner.rho, cfg.eps)
    p = cfg.hex * vortex_pairing(cfg.u, cfg.A, meissner.xi)
    r0 = r0_term(cfg.u, meissner, cfg.hex)
    return SplittingReport(lhs, m, f, p, r0, lhs - (m + f - p + r0))


def gauge_transform(cfg: Configuration, phi: ScalarField) -> Configuration:
    """(u e^{i phi}, A + grad phi)."""
    g = _same_grid(cfg.u, phi)
    gx, gy = grad_array(g, phi.values)
    u = ComplexField(g, cfg.u.values * np.exp(1j * phi.values))
    A = VectorField(g, cfg.A.values + np.stack([gx, gy]))
    return cfg.with_fields(u, A)


def deep_interior(grid) -> np.ndarray:
    """Nodes whose discrete equations see only full cells and centred stencils."""
    full = (grid.node_mask == INTERIOR) & np.isclose(grid.weights, grid.h**2)
    full[[0, -1], :] = False
    full[:, [0, -1]] = False
    cross = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_erosion(full, structure=cross, iterations=2)


def el_residual(cfg: Configuration, a: ScalarField) -> tuple[float, float, dict]:
    """Residuals of the discrete Euler-Lagrange equations.

    Returns ``(r_u, r_A, boundary)``: quadrature L2 norms over the deep
    interior of the energy gradient divided by the node weights (the
    discrete forms of ``-(grad_A)^2 u - u(a - |u|^2)/eps^2`` and of
    ``-perp_grad h - <iu, grad_A u>`` up to sign), and a dict with the
    boundary conditions ``max |curl A - hex|`` (cell curl on cells touching
    the boundary) and ``max |grad_A u . nu|``
    over boundary nodes, plus the full gradient norm over all weighted nodes.
    """
    g = _same_grid(cfg.u, cfg.A, a)
    _, gu, gAx, gAy = energy_and_gradient(g, cfg.u.values, cfg.A.x, cfg.A.y, a.values, cfg.eps, cfg.hex)
    w = g.weights
    pos = w > 0
    inner = deep_interior(g)
    ru = np.where(pos, np.abs(gu) / np.where(pos, w, 1.0), 0.0)
    rA = np.where(pos, np.hypot(gAx, gAy) / np.where(pos, w, 1.0), 0.0)
    r_u = float(np.sqrt(np.sum(w[inner] * ru[inner] ** 2)))
    r_A = float(np.sqrt(np.sum(w[inner] * rA[inner] ** 2)))
    bnd = g.node_mask == 2
    touch = bnd[:-1, :-1] | bnd[:-1, 1:] | bnd[1:, :-1] | bnd[1:, 1:]
    cells = touch & (cell_weights(g) > 0)
    h = cell_curl_array(g, cfg.A.x, cfg.A.y)
    # outside nodes carry no weight, so their values are free; extrapolate
    ue = extend(g, cfg.u.values, pos)
    Ae = np.stack([extend(g, cfg.A.values[k], pos) for k in range(2)])
    Du = covariant_grad(ComplexField(g, ue), VectorField(g, Ae))
    nrm = g.boundary_normals
    dn = np.abs(Du[0] * nrm[..., 0] + Du[1] * nrm[..., 1])
    # sliver nodes satisfy the natural condition only weakly
    solid = bnd & (w >= 0.25 * g.h**2)
    boundary = {
        "field_bc": float(np.abs(h[cells] - cfg.hex).max()) if cells.any() else 0.0,
        "neumann_bc": float(dn[solid].max()) if solid.any() else 0.0,
        "neumann_bc_all": float(dn[bnd].max()) if bnd.any() else 0.0,
        "grad_norm": float(np.sqrt(np.sum(w[pos] * (ru[pos] ** 2 + rA[pos] ** 2)))),
    }
    return r_u, r_A, boundary


def real_gauge(cfg: Configuration) -> tuple[np.ndarray, VectorField]:
    """Modulus and the vector potential in the gauge where u is real positive.

    The phase is unwrapped along the first row, then down every column;
    this is valid for vortexless u.  Off the weighted nodes the phase is
    extrapolated from the weighted ones.
    """
    g = cfg.grid
    act = g.weights > 0
    u = cfg.u.values
    if not act.all():
        _, (jj, ii) = ndimage.distance_transform_edt(~act, return_indices=True)
        u = u[jj, ii]
    ph = np.angle(u)
    ph[0, :] = np.unwrap(ph[0, :])
    ph = np.unwrap(ph, axis=0)
    ph = extend(g, ph, act)
    gx, gy = grad_array(g, ph)
    return np.abs(cfg.u.values), VectorField(g, cfg.A.values - np.stack([gx, gy]))


CONVEXITY_FLOOR = 0.75


def convexity_gap(cfg1: Configuration, cfg2: Configuration, meissner: MeissnerState) -> float:
    """Y = (GL(rho eta1, A1) + GL(rho eta2, A2))/2 - GL(rho (eta1+eta2)/2, (A1+A2)/2).

    Each split pair is assembled into (rho u, A + hex A0) and moved to
    its real gauge first; ``eta_j = |u_j|``.
    """
    g = meissner.grid
    act = g.weights > 0
    for c in (cfg1, cfg2):
        if np.abs(c.u.values[act]).min() < CONVEXITY_FLOOR:
            raise ValueError("convexity gap needs |u| >= 3/4 everywhere")
    if cfg1.hex != cfg2.hex or cfg1.eps != cfg2.eps:
        raise ValueError("configurations differ in hex or eps")
    rho = meissner.rho.values
    parts = []
    for c in (cfg1, cfg2):
        full = assemble(c, meissner)
        eta, Ac = real_gauge(full.with_fields(u=ComplexField(g, c.u.values)))
        parts.append((eta, Ac))

    def gl(eta, Avals):
        k, p, f = energy_parts(g, (rho * eta).astype(complex), Avals[0], Avals[1], meissner.a.values, cfg1.eps, cfg1.hex)
        return k + p + f

    (e1, A1), (e2, A2) = parts
    mid = gl(0.5 * (e1 + e2), 0.5 * (A1.values + A2.values))
    return 0.5 * (gl(e1, A1.values) + gl(e2, A2.values)) - mid
