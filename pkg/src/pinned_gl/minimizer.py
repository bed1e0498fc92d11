"""Descent for the discrete GL energy.

Nonlinear conjugate gradients (Polak-Ribiere+) on the coupled variable
(u, A) with a Jacobi preconditioner and an Armijo backtracking line
search.  Directions restart every ``restart`` iterations and whenever the
conjugate direction fails to descend.

The energy is gauge invariant, so the descended objective adds the
penalty ``kappa/2 int (div A)^2``: its minimum over a gauge orbit is zero
at the Coulomb representative, and it pins the otherwise free gradient
part of A (which near cut cells would drift).  Starts and results are
moved to the Coulomb gauge explicitly as well.  The local run also
watches the weighted free energy against the ``eps^beta`` ceiling that
defines the admissible set.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .balls import bad_set, distance_probe, vorticity_estimate_check, BallCollection
from .elliptic import _edge_incidence, link_coulomb_phase
from .energetics import (
    Configuration,
    el_residual,
    energy_and_gradient,
    energy_parts,
    free_energy_weighted,
    vorticity,
)
from .fields import ComplexField, ScalarField, VectorField
from .meissner import MeissnerState, build_meissner, meissner_energy
from .operators import cell_weights, grad_array

log = logging.getLogger(__name__)


class DescentError(RuntimeError):
    """A line search failed to produce descent along a descent direction."""


@dataclass
class MinimizeParams:
    max_iters: int = 5000
    grad_tol: float = 1e-6
    step_rule: str = "backtracking"
    fixed_step: float = 0.05
    beta: float = 0.5
    alpha_cap: float = 0.3
    restart: int = 50
    ftol: float = 1e-13
    armijo: float = 1e-4
    project_gauge: bool = True
    gauge_penalty: float = 0.1

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not 0 < self.alpha_cap < 0.5:
            raise ValueError("alpha_cap must lie in (0, 1/2)")
        if not 0 < self.beta < 2 - 4 * self.alpha_cap:
            raise ValueError(f"beta must lie in (0, 2 - 4 alpha_cap) = (0, {2 - 4 * self.alpha_cap:.3g})")


@dataclass
class MinimizeTrace:
    rows: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    iterations: int = 0
    wall_time: float = 0.0
    constraint_active: bool = False
    certificate: dict = field(default_factory=dict)

    def energies(self, kind: str = "step") -> np.ndarray:
        return np.array([r["energy"] for r in self.rows if r["kind"] == kind])


# ------------------------------------------------------------ gradient


def energy_gradient(cfg: Configuration, a: ScalarField) -> tuple[ComplexField, VectorField]:
    """Gradient of gl_energy in the quadrature inner product.

    With ``int f g = sum w f g`` the gradient is the Euclidean one divided
    by the node weights; nodes of zero weight carry zero.
    """
    g = cfg.grid
    _, gu, gAx, gAy = energy_and_gradient(g, cfg.u.values, cfg.A.x, cfg.A.y, a.values, cfg.eps, cfg.hex)
    w = g.weights
    pos = w > 0
    inv = np.where(pos, 1.0 / np.where(pos, w, 1.0), 0.0)
    return ComplexField(g, gu * inv), VectorField(g, np.stack([gAx * inv, gAy * inv]))


def _jacobi(grid, u, a, eps, kappa=0.0):
    """Diagonal curvature estimates for the u and A blocks."""
    h2 = grid.h**2
    wx, wy = grid.wx, grid.wy
    ku = np.zeros(grid.shape)
    ku[:, :-1] += wx
    ku[:, 1:] += wx
    ku[:-1, :] += wy
    ku[1:, :] += wy
    m2 = np.abs(u) ** 2
    du = ku / h2 + grid.weights * (2 * m2 + np.abs(a - m2)) / (eps * eps)
    key = "jacobi_A"
    if key not in grid._cache:
        q = cell_weights(grid) / (4.0 * h2)
        c = np.zeros(grid.shape)
        c[:-1, :-1] += q
        c[:-1, 1:] += q
        c[1:, :-1] += q
        c[1:, 1:] += q
        grid._cache[key] = (c, c)
    cx, cy = grid._cache[key]
    pen = 0.5 * kappa * (grid.weights > 0)
    dAx = pen + cx + 0.25 * np.maximum(ku, 0) * np.maximum(m2, 0.25)
    dAy = pen + cy + 0.25 * np.maximum(ku, 0) * np.maximum(m2, 0.25)
    inv = lambda d: np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    return inv(du), inv(dAx), inv(dAy)


def _pack(u, Ax, Ay):
    return np.concatenate([u.real.ravel(), u.imag.ravel(), Ax.ravel(), Ay.ravel()])


def _unpack(x, shape):
    n = shape[0] * shape[1]
    u = (x[:n] + 1j * x[n : 2 * n]).reshape(shape)
    return u, x[2 * n : 3 * n].reshape(shape), x[3 * n :].reshape(shape)


def _grad_max(grid, gu, gAx, gAy) -> float:
    # per unit cell area rather than per node weight, so that slivers of cut
    # cells do not dominate; equal to the quadrature gradient on full cells
    h2 = grid.h**2
    return float(max(np.abs(gu).max(), np.abs(gAx).max(), np.abs(gAy).max())) / h2


def _grad_l2(grid, gu, gAx, gAy) -> float:
    w = grid.weights
    pos = w > 0
    return float(np.sqrt(np.sum((np.abs(gu[pos]) ** 2 + gAx[pos] ** 2 + gAy[pos] ** 2) / w[pos])))


def _edge_exact_gradient(d: np.ndarray, q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Node values along the last axis whose neighbour averages equal ``d``.

    ``(x_k + x_{k+1}) / 2 = d_k`` leaves one alternating mode per line,
    invisible to edge averages; it is fixed by least squares against ``q``
    over the ``keep`` nodes.  Other nodes get ``q``.
    """
    n = q.shape[-1]
    sign = (-1.0) ** np.arange(n)
    e = np.zeros(q.shape)
    e[..., 1:] = np.cumsum(sign[1:] * 2.0 * d, axis=-1)
    p = sign * e
    cnt = np.maximum(keep.sum(axis=-1, keepdims=True), 1)
    c = np.sum(np.where(keep, sign * (q - p), 0.0), axis=-1, keepdims=True) / cnt
    return np.where(keep, p + sign * c, q)


def link_gauge_transform(cfg: Configuration, phi: ScalarField) -> Configuration:
    """(u e^{i phi}, A + dA) with edge averages of dA equal to phi differences / h.

    The energy sees A only through edge averages, so this transform leaves
    it unchanged to rounding; the nodal ``gauge_transform`` does not on cut
    cells.
    """
    g = cfg.grid
    f = phi.values
    h = g.h
    gx, gy = grad_array(g, f)
    # zero-weight nodes only meet zero-weight edges and cells
    keep = g.weights > 0
    dAx = _edge_exact_gradient(np.diff(f, axis=1) / h, gx, keep)
    dAy = _edge_exact_gradient((np.diff(f, axis=0) / h).T, gy.T, keep.T).T
    u = ComplexField(g, cfg.u.values * np.exp(1j * f))
    return cfg.with_fields(u, VectorField(g, cfg.A.values + np.stack([dAx, dAy])))


def coulomb_gauge(cfg: Configuration) -> Configuration:
    """Gauge-transform the pair so that its edge-averaged A is divergence free."""
    phi, _ = link_coulomb_phase(cfg.A)
    return link_gauge_transform(cfg, ScalarField(cfg.grid, -phi.values))


def gauge_penalty(grid, Ax, Ay):
    """1/2 int (div A)^2 in weak form, with its gradient.

    ``s = B^T W Abar`` is the weak divergence of the edge-averaged field
    (normal flux through the boundary taken as zero), about ``-h^2 div A``
    at a full node; the penalty is ``sum s^2 / (2 h^2)``.
    """
    B, w, tl, hd, nxe = _edge_incidence(grid)
    fx = Ax.reshape(-1)
    fy = Ay.reshape(-1)
    bar = np.concatenate([0.5 * (fx[tl[:nxe]] + fx[hd[:nxe]]), 0.5 * (fy[tl[nxe:]] + fy[hd[nxe:]])])
    s = B.T @ (w * bar)
    h2 = grid.h**2
    val = 0.5 * float(s @ s) / h2
    ge = w * (B @ s) / h2
    gx = np.zeros(grid.size)
    gy = np.zeros(grid.size)
    np.add.at(gx, tl[:nxe], 0.5 * ge[:nxe])
    np.add.at(gx, hd[:nxe], 0.5 * ge[:nxe])
    np.add.at(gy, tl[nxe:], 0.5 * ge[nxe:])
    np.add.at(gy, hd[nxe:], 0.5 * ge[nxe:])
    return val, gx.reshape(grid.shape), gy.reshape(grid.shape)


def _descend(cfg0: Configuration, a: ScalarField, params: MinimizeParams, watch=None):
    g = cfg0.grid
    eps, hex = cfg0.eps, cfg0.hex
    av = a.values
    shape = g.shape
    trace = MinimizeTrace()
    t0 = time.perf_counter()
    tol = params.grad_tol / eps**2
    kappa = params.gauge_penalty

    def evaluate(x):
        u, Ax, Ay = _unpack(x, shape)
        parts, gu, gAx, gAy = energy_and_gradient(g, u, Ax, Ay, av, eps, hex)
        E = sum(parts)
        if kappa > 0:
            pen, px, py = gauge_penalty(g, Ax, Ay)
            return E + kappa * pen, E, gu, gAx + kappa * px, gAy + kappa * py
        return E, E, gu, gAx, gAy

    def record(it, kind, x, obj, E, gmax):
        row = {"iter": it, "energy": E, "objective": obj, "grad_norm": gmax, "kind": kind}
        if watch:
            row.update(watch(x))
        trace.rows.append(row)

    def precond(x):
        Pu, PAx, PAy = _jacobi(g, _unpack(x, shape)[0], av, eps, kappa)
        return np.concatenate([Pu.ravel(), Pu.ravel(), PAx.ravel(), PAy.ravel()])

    x = _pack(cfg0.u.values, cfg0.A.x, cfg0.A.y)
    obj, E, gu, gAx, gAy = evaluate(x)
    gmax = _grad_max(g, gu, gAx, gAy)
    record(0, "start", x, obj, E, gmax)
    grad = _pack(gu, gAx, gAy)
    P = precond(x)
    z = P * grad
    d = -z
    step = 1.0
    history = [obj]
    it = 0
    since_restart = 0
    reason = "max_iters"
    while it < params.max_iters:
        if gmax <= tol:
            reason = "grad_tol"
            trace.converged = True
            break
        slope = float(grad @ d)
        if slope >= 0:
            d = -z
            slope = float(grad @ d)
            since_restart = 0
        if params.step_rule == "fixed":
            t = params.fixed_step
            xn = x + t * d
            on, En, gun, gAxn, gAyn = evaluate(xn)
            if on > obj:
                raise DescentError(f"fixed step increased the energy at iteration {it}: {obj!r} -> {on!r}")
        else:
            t = min(1.0, 2.0 * step)
            failed = False
            while True:
                xn = x + t * d
                on, En, gun, gAxn, gAyn = evaluate(xn)
                if on <= obj + params.armijo * t * slope:
                    break
                t *= 0.5
                if t < 1e-14:
                    if since_restart == 0:
                        failed = True
                        break
                    # retry along the preconditioned steepest descent
                    d = -z
                    slope = float(grad @ d)
                    since_restart = 0
                    t = 1.0
            if failed:
                reason = "line_search"
                trace.converged = gmax <= 10 * tol
                break
        it += 1
        since_restart += 1
        step = t
        x, obj, E = xn, on, En
        gu, gAx, gAy = gun, gAxn, gAyn
        gnew = _pack(gu, gAx, gAy)
        gmax = _grad_max(g, gu, gAx, gAy)
        record(it, "step", x, obj, E, gmax)
        restart = since_restart >= params.restart
        if restart:
            P = precond(x)
        znew = P * gnew
        if restart:
            d = -znew
            since_restart = 0
        else:
            beta = max(0.0, float(znew @ (gnew - grad)) / max(float(z @ grad), 1e-300))
            d = -znew + beta * d
        grad, z = gnew, znew
        history.append(obj)
        if len(history) > 25 and history[-26] - obj <= params.ftol * max(1.0, abs(obj)):
            reason = "stagnation"
            trace.converged = True
            break
    trace.reason = reason
    trace.iterations = it
    u, Ax, Ay = _unpack(x, shape)
    out = Configuration(ComplexField(g, u), VectorField(g, np.stack([Ax, Ay])), eps, hex)
    trace.wall_time = time.perf_counter() - t0
    return out, trace


def _gl(cfg, a):
    return sum(energy_parts(cfg.grid, cfg.u.values, cfg.A.x, cfg.A.y, a.values, cfg.eps, cfg.hex))


def _start(cfg0: Configuration, params: MinimizeParams) -> Configuration:
    return coulomb_gauge(cfg0) if params.project_gauge else cfg0


def _finish(cfg: Configuration, a: ScalarField, trace: MinimizeTrace, project: bool) -> Configuration:
    if project:
        before = _gl(cfg, a)
        cfg = coulomb_gauge(cfg)
        after = _gl(cfg, a)
        trace.certificate["gauge_energy_change"] = after - before
        trace.rows.append(
            {"iter": trace.iterations, "energy": after, "objective": float("nan"), "grad_norm": float("nan"), "kind": "gauge"}
        )
    r_u, r_A, bnd = el_residual(cfg, a)
    trace.certificate.update({"el_residual_u": r_u, "el_residual_A": r_A, **{f"el_{k}": v for k, v in bnd.items()}})
    return cfg


def minimize_gl(cfg0: Configuration, a: ScalarField, params: MinimizeParams = MinimizeParams()):
    """Minimize the GL energy from ``cfg0`` (full fields); returns (configuration, trace)."""
    cfg, trace = _descend(_start(cfg0, params), a, params)
    cfg = _finish(cfg, a, trace, params.project_gauge)
    return cfg, trace


# ------------------------------------------------------------ local run


def phase_align(u: ComplexField) -> tuple[float, float]:
    """Global phase closest to u in L2 and the H1 distance from u to it."""
    g = u.grid
    s = complex(np.sum(g.weights * u.values))
    theta = float(np.angle(s)) if abs(s) > 0 else 0.0
    v = u.values - np.exp(1j * theta)
    h2 = g.h**2
    kin = float(np.sum(g.wx * np.abs(v[:, 1:] - v[:, :-1]) ** 2) + np.sum(g.wy * np.abs(v[1:, :] - v[:-1, :]) ** 2)) / h2
    mass = float(np.sum(g.weights * np.abs(v) ** 2))
    return theta, math.sqrt(kin + mass)


def split_pair(cfg: Configuration, state: MeissnerState) -> Configuration:
    """(u, A) with full fields (rho u, A + hex A0)."""
    g = cfg.grid
    return Configuration(
        ComplexField(g, cfg.u.values / state.rho.values),
        VectorField(g, cfg.A.values - cfg.hex * state.A0.values),
        cfg.eps,
        cfg.hex,
    )


def weighted_free_energy(cfg: Configuration, state: MeissnerState) -> float:
    s = split_pair(cfg, state)
    return free_energy_weighted(s.u, s.A, state.rho, cfg.eps)


def vortexless(u: ComplexField, eps: float) -> bool:
    """Empty bad set and |1 - |u|| below 1/4 on the weighted nodes."""
    g = u.grid
    act = g.weights > 0
    return not bad_set(u, eps) and float(np.abs(1 - np.abs(u.values[act])).max()) < 0.25


def local_certificate(cfg: Configuration, state: MeissnerState, a: ScalarField) -> dict:
    """The measurable items of the local-minimizer statement for a full configuration."""
    g = cfg.grid
    act = g.weights > 0
    s = split_pair(cfg, state)
    mu = vorticity(s.u, s.A)
    probes = [distance_probe(g, cap) for cap in (0.1, 0.25, 0.5)]
    lower = vorticity_estimate_check(mu, BallCollection([]), probes)
    l1 = float(np.sum(g.weights * np.abs(mu.values)))
    parts = energy_parts(g, cfg.u.values, cfg.A.x, cfg.A.y, a.values, cfg.eps, cfg.hex)
    M = meissner_energy(state, cfg.hex)
    _, dist = phase_align(s.u)
    dA = s.A.values
    ref = cfg.hex * state.A0.values
    nA = math.sqrt(float(np.sum(g.weights * (dA[0] ** 2 + dA[1] ** 2))))
    nref = math.sqrt(float(np.sum(g.weights * (ref[0] ** 2 + ref[1] ** 2))))
    return {
        "F_weighted": free_energy_weighted(s.u, s.A, state.rho, cfg.eps),
        "mu_dual_lower": lower,
        "mu_dual_upper": l1 * g.inradius,
        "gl_minus_meissner": sum(parts) - M,
        "modulus_defect": float(np.abs(1 - np.abs(s.u.values[act])).max()),
        "phase_distance_h1": dist,
        "A_distance": nA,
        "A_distance_rel": nA / nref if nref > 0 else float("nan"),
        "vortexless": vortexless(s.u, cfg.eps),
    }


def minimize_local_U(
    cfg0: Configuration,
    a: ScalarField,
    params: MinimizeParams = MinimizeParams(),
    state: MeissnerState | None = None,
):
    """Descent inside {F_rho(u, A) < eps^beta} from a full configuration.

    The iterate is moved to the Coulomb gauge at every restart.  If the
    weighted free energy reaches ``0.9 eps^beta`` the trace is flagged
    ``constraint_active``.
    """
    eps, hex = cfg0.eps, cfg0.hex
    if hex > eps ** (-params.alpha_cap) * (1 + 1e-12):
        raise ValueError(f"hex = {hex:.6g} exceeds eps^-alpha_cap = {eps ** -params.alpha_cap:.6g}")
    st = state if state is not None else build_meissner(a, eps)
    ceiling = eps**params.beta
    F0 = weighted_free_energy(cfg0, st)
    if not F0 < ceiling:
        raise ValueError(f"start outside the admissible set: F = {F0:.6g} >= eps^beta = {ceiling:.6g}")
    g = cfg0.grid
    rho = st.rho.values
    A0h = hex * st.A0.values

    def watch(x):
        u, Ax, Ay = _unpack(x, g.shape)
        k, p, f = energy_parts(g, u / rho, Ax - A0h[0], Ay - A0h[1], None, eps, 0.0, eta=rho)
        return {"F_weighted": k + p + f}

    cfg, trace = _descend(_start(cfg0, params), a, params, watch=watch)
    Fs = [r["F_weighted"] for r in trace.rows if "F_weighted" in r]
    trace.constraint_active = bool(max(Fs) >= 0.9 * ceiling)
    cfg = _finish(cfg, a, trace, params.project_gauge)
    cert = local_certificate(cfg, st, a)
    cert["ceiling"] = ceiling
    cert["within_threshold"] = cert["F_weighted"] <= 0.5 * ceiling
    trace.certificate.update(cert)
    return cfg, trace
