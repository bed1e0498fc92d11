"""Configuration constructors: Meissner, single vortex, smooth random."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_bvp, trapezoid

from .energetics import Configuration
from .fields import ComplexField, VectorField, constant_complex, zero_vector
from .grid import Grid
from .meissner import MeissnerState


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class RadialProfile:
    """Degree-one vortex modulus f on [0, R_max], sampled every dr."""

    r: np.ndarray
    f: np.ndarray
    df: np.ndarray
    R_max: float
    dr: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inner = np.interp(np.minimum(s, self.R_max), self.r, self.f)
        far = 1.0 - 0.5 / np.maximum(s, 1.0) ** 2
        return np.where(s <= self.R_max, inner, far)

    def energy(self, R: float) -> float:
        """1/2 int_0^R (f'^2 + f^2/r^2 + (1 - f^2)^2/2) 2 pi r dr."""
        if R > self.R_max:
            raise ValueError("R beyond the tabulated range")
        m = self.r <= R
        r, f, df = self.r[m], self.f[m], self.df[m]
        core = np.empty_like(r)
        core[1:] = f[1:] ** 2 / r[1:]
        core[0] = 0.0  # f^2/r -> 0 at the origin
        dens = (df**2 * r + core + 0.5 * (1 - f**2) ** 2 * r) * np.pi
        return float(trapezoid(dens, r))


def radial_profile(R_max: float = 60.0, dr: float = 0.02) -> RadialProfile:
    """Solve f'' + f'/r - f/r^2 + f(1 - f^2) = 0, f(0) = 0, f(R_max) = 1 - 1/(2 R_max^2)."""
    if R_max < 50 or dr > 0.05 or dr <= 0:
        raise ValueError("need R_max >= 50 and 0 < dr <= 0.05")
    r0 = 1e-3
    mesh = np.concatenate([np.linspace(r0, 10.0, 400), np.linspace(10.0, R_max, 200)[1:]])

    def rhs(r, y):
        f, g = y
        return np.vstack([g, -g / r + f / r**2 - f * (1 - f * f)])

    def bc(ya, yb):
        # linear core f ~ alpha r at r0, far-field value at R_max
        return np.array([ya[0] - r0 * ya[1], yb[0] - (1 - 0.5 / R_max**2)])

    guess = np.vstack([mesh / np.sqrt(mesh**2 + 2.0), 2.0 / (mesh**2 + 2.0) ** 1.5])
    sol = solve_bvp(rhs, bc, mesh, guess, tol=1e-8, max_nodes=200000)
    if not sol.success:
        raise ProfileError(f"radial profile solve failed: {sol.message}")
    r = np.arange(0.0, R_max + 0.5 * dr, dr)
    r[-1] = min(r[-1], R_max)
    y = sol.sol(np.maximum(r, r0))
    f, df = y[0], y[1]
    small = r < r0
    f[small] = r[small] * df[small]
    return RadialProfile(r, f, df, float(R_max), float(dr))


_PROFILE_CACHE: dict = {}


def default_profile() -> RadialProfile:
    if "default" not in _PROFILE_CACHE:
        _PROFILE_CACHE["default"] = radial_profile()
    return _PROFILE_CACHE["default"]


DEFAULT_M = 1.0


def vortex_fields(grid: Grid, center, eps: float, M: float = DEFAULT_M, profile: RadialProfile | None = None):
    """Split order parameter of the single-vortex competitor and its core radius.

    The phase is the polar angle about ``center``: it already satisfies
    grad(phase) = -perp_grad(log 1/|x - center|), so no harmonic
    correction is needed.
    """
    prof = profile or default_profile()
    r_eps = abs(math.log(eps)) ** (-M)
    dx = grid.x - center[0]
    dy = grid.y - center[1]
    dist = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    R_eps = r_eps / eps
    mod = np.where(dist < r_eps, prof(dist / eps) / prof(R_eps), 1.0)
    return mod * np.exp(1j * theta), r_eps


def make_vortex_config(
    state: MeissnerState,
    center=None,
    M: float = DEFAULT_M,
    hex: float = 0.0,
    profile: RadialProfile | None = None,
) -> Configuration:
    """Split pair (u, 0) with one degree-one vortex; full fields are (rho u, hex A0)."""
    g = state.grid
    c = state.argmax if center is None else (float(center[0]), float(center[1]))
    r_eps = abs(math.log(state.eps)) ** (-M)
    if g.boundary_distance(c[0], c[1]) <= r_eps:
        raise ValueError(f"vortex centre within r_eps = {r_eps:.4g} of the boundary")
    u, _ = vortex_fields(g, c, state.eps, M, profile)
    return Configuration(ComplexField(g, u), zero_vector(g), state.eps, hex)


def vortex_energy_bound(state: MeissnerState, M: float = DEFAULT_M) -> float:
    """Leading terms of the free-energy upper bound for the competitor:
    pi (rho^2(x0) |log eps| + (1 - rho^2(x0)) M log|log eps|)."""
    j, i = state.argmax_index
    r2 = float(state.rho.values[j, i] ** 2)
    le = abs(math.log(state.eps))
    return math.pi * (r2 * le + (1 - r2) * M * math.log(le))


def make_meissner_config(state: MeissnerState, hex: float) -> Configuration:
    """Split pair (1, 0); the full configuration is (rho, hex A0)."""
    g = state.grid
    return Configuration(constant_complex(g, 1.0), zero_vector(g), state.eps, hex)


def _trig(rng, X, Y, degree: int = 2):
    out = np.zeros_like(X)
    for k in range(degree + 1):
        for l in range(degree + 1):
            amp = rng.normal() / (1 + k + l)
            out += amp * np.cos(np.pi * (k * X + l * Y) + rng.uniform(0, 2 * np.pi))
    return out


def random_config(grid: Grid, eps: float, hex: float = 0.0, seed: int = 0, amplitude: float = 0.3) -> Configuration:
    """Smooth vortexless pair: u = exp(i p)(1 - amplitude bump), A a trigonometric field.

    ``bump`` takes values in [0, 1], so ``min |u| >= 1 - amplitude``.
    """
    if not 0 <= amplitude <= 0.3:
        raise ValueError("amplitude must lie in [0, 0.3]")
    rng = np.random.default_rng(seed)
    c = grid.center
    L = grid.inradius
    X = (grid.x - c[0]) / L
    Y = (grid.y - c[1]) / L
    phase = _trig(rng, X, Y)
    raw = _trig(rng, X, Y)
    bump = 0.5 * (1 + np.tanh(raw))
    A = np.stack([_trig(rng, X, Y), _trig(rng, X, Y)])
    u = np.exp(1j * phase) * (1 - amplitude * bump)
    return Configuration(ComplexField(grid, u), VectorField(grid, A), eps, hex)
