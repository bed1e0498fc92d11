"""Vortex-free reference state and the first critical field.

``build_meissner`` solves for the pinned density rho and the potential
xi, and assembles

    h0 = 1 - xi,   A0 = -perp_grad(xi) / rho^2,   psi = xi / rho^2,
    hc1 = |log eps| / (2 max psi).

On a disk xi is only known at nodes inside the circle, so its
derivatives use the polynomial extension of those values across the
boundary.  The stored xi is zero off the inside nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import SolveReport, rho_energy, solve_rho, solve_xi, xi_forms
from .fields import ScalarField, VectorField
from .grid import INTERIOR
from .operators import curl_array, extend, grad_array


@dataclass(frozen=True, eq=False)
class MeissnerState:
    a: ScalarField
    rho: ScalarField
    xi: ScalarField
    h0: ScalarField
    A0: VectorField
    psi: ScalarField
    eps: float
    hc1: float
    max_psi: float
    argmax: tuple
    argmax_index: tuple
    argmax_boundary_distance: float
    curl_residual: float
    curl_residual_l2: float
    rho_energy: float
    rho_report: SolveReport
    xi_report: SolveReport
    extras: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.a.grid

    @property
    def b(self) -> float:
        return float(self.a.values[self.grid.weights > 0].min())


def extended_xi(xi: ScalarField) -> np.ndarray:
    """xi with values off the inside nodes replaced by extrapolation (disk only)."""
    g = xi.grid
    if g.domain_kind != "disk":
        return xi.values
    return extend(g, xi.values, g.inside)


def _check_inputs(a: ScalarField, eps: float) -> None:
    g = a.grid
    if not 0.0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    if g.h > eps / 4 * (1 + 1e-9):
        raise ValueError(f"grid does not resolve eps: h = {g.h:.4g} > eps/4 = {eps / 4:.4g}")
    av = a.values[g.weights > 0]
    if av.min() <= 0 or av.max() > 1 + 1e-12:
        raise ValueError("pinning coefficient must lie in (0, 1]")


def build_meissner(a: ScalarField, eps: float, tol: float = 1e-10) -> MeissnerState:
    """Assemble the Meissner approximation for pinning ``a`` at parameter ``eps``."""
    _check_inputs(a, eps)
    g = a.grid
    rho, rrep = solve_rho(a, eps, tol=tol)
    xi, xrep = solve_xi(rho, tol=tol)
    xv = xi.values
    r2 = rho.values**2
    psi = xv / r2
    xe = extended_xi(xi)
    gx, gy = grad_array(g, xe)
    A0 = np.stack([gy / r2, -gx / r2])

    interior = g.node_mask == INTERIOR
    cand = np.where(interior, psi, -np.inf).reshape(-1)
    k = int(np.argmax(cand))  # first maximum in row-major order
    j, i = divmod(k, g.nx)
    max_psi = float(psi[j, i])
    px, py = float(g.x[j, i]), float(g.y[j, i])

    res = curl_array(g, A0[0], A0[1]) + xv - 1.0
    # judged on a fixed interior region: square corners make second
    # derivatives of xi blow up, and the boundary rows use one-sided stencils
    core = interior & (g.boundary_distance(g.x, g.y) > max(2.5 * g.h, 0.1 * g.inradius))
    curl_max = float(np.abs(res[core]).max()) if core.any() else 0.0
    curl_l2 = float(np.sqrt(np.sum(g.weights[core] * res[core] ** 2)))

    return MeissnerState(
        a=a,
        rho=rho,
        xi=xi,
        h0=ScalarField(g, 1.0 - xv),
        A0=VectorField(g, A0),
        psi=ScalarField(g, psi),
        eps=float(eps),
        hc1=abs(np.log(eps)) / (2.0 * max_psi),
        max_psi=max_psi,
        argmax=(px, py),
        argmax_index=(j, i),
        argmax_boundary_distance=float(g.boundary_distance(px, py)),
        curl_residual=curl_max,
        curl_residual_l2=curl_l2,
        rho_energy=rho_energy(g, rho.values, a.values, eps),
        rho_report=rrep,
        xi_report=xrep,
    )


def field_integral(state: MeissnerState) -> float:
    """int |grad xi|^2 / rho^2 + xi^2 in the solver's own discretization."""
    f = xi_forms(state.rho, state.xi)
    return f["dirichlet"] + f["mass"]


def meissner_energy(state: MeissnerState, hex: float) -> float:
    """GL energy of (rho, hex A0): E(rho) + hex^2/2 int (|grad xi|^2/rho^2 + xi^2)."""
    return state.rho_energy + 0.5 * hex * hex * field_integral(state)


def verify_state(state: MeissnerState, alpha: float = 0.5) -> dict:
    """Diagnostics: Lipschitz size of xi, its maximum, and the mismatch set X_alpha.

    ``X_alpha`` is the measure of ``{|a - rho^2| > eps^alpha}``.  The
    reference bound ``|grad a|_inf^2 eps^(2(1-alpha))`` is reported for
    comparison; it is meaningful only for smooth a.
    """
    g = state.grid
    act = g.weights > 0
    interior = g.node_mask == INTERIOR
    gx, gy = grad_array(g, extended_xi(state.xi))
    gnorm = np.hypot(gx, gy)
    mismatch = np.abs(state.a.values - state.rho.values**2)
    x_alpha = float(np.sum(g.weights[act & (mismatch > state.eps**alpha)]))
    ax, ay = grad_array(g, state.a.values)
    grad_a = float(np.hypot(ax, ay)[act].max())
    xv = state.xi.values
    max_xi = float(xv[interior].max())
    return {
        "eps": state.eps,
        "max_grad_xi": float(gnorm[interior].max()),
        "max_xi": max_xi,
        "max_psi": state.max_psi,
        "xi_psi_ratio": max_xi / state.max_psi,
        "X_alpha": x_alpha,
        "X_alpha_reference": grad_a**2 * state.eps ** (2 * (1 - alpha)),
        "alpha": alpha,
        "xi_min": float(xv.min()),
        "xi_max_all": float(xv.max()),
        "rho_min": float(state.rho.values[act].min()),
        "rho_max": float(state.rho.values[act].max()),
        "curl_residual": state.curl_residual,
        "argmax_boundary_distance": state.argmax_boundary_distance,
    }
