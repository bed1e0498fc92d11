import math

import numpy as np
import pytest

from pinned_gl.balls import bad_set
from pinned_gl.configs import make_meissner_config, make_vortex_config, random_config
from pinned_gl.elliptic import _edge_incidence
from pinned_gl.energetics import Configuration, assemble, deep_interior, gl_energy
from pinned_gl.fields import (
    ComplexField,
    PinningSpec,
    ScalarField,
    VectorField,
    constant_complex,
    constant_scalar,
    make_pinning,
    zero_vector,
)
from pinned_gl.grid import build_grid
from pinned_gl.meissner import build_meissner, meissner_energy
from pinned_gl.minimizer import (
    DescentError,
    MinimizeParams,
    coulomb_gauge,
    energy_gradient,
    link_gauge_transform,
    minimize_gl,
    minimize_local_U,
    phase_align,
    weighted_free_energy,
)
from pinned_gl.operators import cell_curl_adjoint, cell_weights

EPS = 0.05


def _pair(grid, gu, gA, du, dA):
    """Quadrature inner product of a gradient pair with a direction."""
    w = grid.weights
    return float(np.sum(w * (gu.values.real * du.real + gu.values.imag * du.imag)) + np.sum(w * gA.values * dA))


def _fd_mismatch(cfg, a, rng, t=1e-5):
    g = cfg.grid
    gu, gA = energy_gradient(cfg, a)
    worst = 0.0
    for _ in range(20):
        du = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        dA = rng.standard_normal((2, *g.shape))

        def E(s):
            c = Configuration(
                ComplexField(g, cfg.u.values + s * du), VectorField(g, cfg.A.values + s * dA), cfg.eps, cfg.hex
            )
            return gl_energy(c, a).total

        exact = _pair(g, gu, gA, du, dA)
        fd = (E(t) - E(-t)) / (2 * t)
        worst = max(worst, abs(exact - fd) / max(abs(exact), 1.0))
    return worst


def test_gradient_vanishes_at_trivial_critical_point():
    g = build_grid(48, 48, "disk", 1.0)
    gu, gA = energy_gradient(Configuration(constant_complex(g, 1.0), zero_vector(g), 0.1, 0.0), constant_scalar(g, 1.0))
    assert np.abs(gu.values).max() <= 1e-12
    assert np.abs(gA.values).max() <= 1e-12


@pytest.mark.parametrize("n,domain", [(32, "rectangle"), (64, "disk"), (96, "rectangle")])
def test_gradient_matches_finite_differences(n, domain, rng):
    g = build_grid(n, n, domain, 1.0)
    cfg = random_config(g, 0.1, hex=2.0, seed=n)
    a = constant_scalar(g, 0.8)
    assert _fd_mismatch(cfg, a, rng) <= 1e-6


def test_field_gradient_is_curl_adjoint():
    g = build_grid(40, 40, "rectangle", 1.0)
    _, gA = energy_gradient(Configuration(constant_complex(g, 1.0), zero_vector(g), 0.1, 1.0), constant_scalar(g, 1.0))
    ex, ey = cell_curl_adjoint(g, cell_weights(g) * (0.0 - 1.0))
    w = g.weights
    assert np.abs(gA.x - ex / w).max() <= 1e-9 * np.abs(ex / w).max()
    assert np.abs(gA.y - ey / w).max() <= 1e-9 * np.abs(ey / w).max()


def test_params_invariants():
    with pytest.raises(ValueError):
        MinimizeParams(grad_tol=0.0)
    with pytest.raises(ValueError):
        MinimizeParams(step_rule="exact")
    with pytest.raises(ValueError):
        MinimizeParams(beta=0.9, alpha_cap=0.3)
    with pytest.raises(ValueError):
        MinimizeParams(alpha_cap=0.5)


def test_trivial_start_converges_immediately():
    g = build_grid(48, 48, "rectangle", 1.0)
    cfg, trace = minimize_gl(Configuration(constant_complex(g, 1.0), zero_vector(g), 0.1, 0.0), constant_scalar(g, 1.0))
    assert trace.converged and trace.iterations == 0
    assert np.abs(cfg.u.values - 1).max() <= 1e-12


def test_oversized_fixed_step_is_reported():
    g = build_grid(48, 48, "rectangle", 1.0)
    cfg = random_config(g, 0.1, hex=1.0, seed=3)
    with pytest.raises(DescentError):
        minimize_gl(cfg, constant_scalar(g, 1.0), MinimizeParams(step_rule="fixed", fixed_step=50.0))


@pytest.fixture(scope="module")
def random_run(disk_state):
    s = disk_state
    cfg0 = random_config(s.grid, EPS, hex=0.5 * s.hc1, seed=3)
    return minimize_gl(cfg0, s.a)


def test_random_start_converges_vortexless(random_run):
    cfg, trace = random_run
    assert trace.converged
    assert bad_set(cfg.u, EPS) == []
    act = cfg.grid.weights > 0
    assert np.abs(1 - np.abs(cfg.u.values[act])).max() <= 0.1


def test_random_start_el_residual(random_run):
    _, trace = random_run
    cert = trace.certificate
    assert cert["el_residual_u"] <= 1e-5 / EPS**2
    assert cert["el_residual_A"] <= 1e-5 / EPS**2


def test_descent_is_monotone(random_run):
    _, trace = random_run
    obj = np.array([r["objective"] for r in trace.rows if r["kind"] in ("start", "step")])
    assert np.all(np.diff(obj) < 0)


def test_final_gauge_fix_is_second_order(random_run, disk_state):
    cfg, trace = random_run
    E = gl_energy(cfg, disk_state.a).total
    assert abs(trace.certificate["gauge_energy_change"]) <= cfg.grid.h**2 * abs(E)


def test_vortex_start_keeps_vortex(disk_state):
    s = disk_state
    hx = 1.5 * s.hc1
    cfg, trace = minimize_gl(assemble(make_vortex_config(s, hex=hx), s), s.a)
    assert trace.converged
    assert gl_energy(cfg, s.a).total < meissner_energy(s, hx)


def test_phase_align_constants():
    g = build_grid(40, 40, "disk", 1.0)
    theta, dist = phase_align(constant_complex(g, np.exp(1.2j)))
    assert theta == pytest.approx(1.2, abs=1e-10) and dist <= 1e-12
    theta, dist = phase_align(constant_complex(g, 1.0))
    assert theta == 0.0 and dist == 0.0


def test_phase_align_against_grid_search():
    g = build_grid(64, 64, "disk", 1.0)
    bump = np.exp(-((g.x - 0.3) ** 2 + g.y**2) / 0.05)
    u = np.exp(0.3j) * (1 + 0.01 * bump) * np.exp(0.05j * g.x)
    theta, _ = phase_align(ComplexField(g, u))
    grid_theta = np.arange(0, 2 * np.pi, 1e-4)
    s = np.sum(g.weights * u)
    # ||u - e^{it}||^2 = const - 2 Re(conj(e^{it}) s)
    best = grid_theta[np.argmax(np.real(np.exp(-1j * grid_theta) * s))]
    assert theta == pytest.approx(best, abs=1e-4)
    assert theta == pytest.approx(0.3, abs=0.01)


def test_phase_align_zero_mean():
    g = build_grid(40, 40, "rectangle", 1.0)
    theta, dist = phase_align(constant_complex(g, 0.0))
    assert theta == 0.0
    assert dist == pytest.approx(1.0, rel=1e-12)


def test_local_run_from_meissner(disk_state):
    s = disk_state
    hx = 2.0
    cfg, trace = minimize_local_U(assemble(make_meissner_config(s, hx), s), s.a, state=s)
    cert = trace.certificate
    assert not trace.constraint_active
    assert cert["within_threshold"] and cert["vortexless"]
    assert cert["modulus_defect"] <= 0.01
    assert cert["phase_distance_h1"] <= 0.01


def _perturbed(state, hx, t, seed):
    g = state.grid
    r = random_config(g, state.eps, seed=seed)
    v = np.exp(1j * t * np.angle(r.u.values)) * (1 - t * (1 - np.abs(r.u.values)))
    A = hx * state.A0.values + t * r.A.values
    return Configuration(ComplexField(g, state.rho.values * v), VectorField(g, A), state.eps, hx)


def test_local_run_from_perturbation(pinned_disk_state):
    s = pinned_disk_state
    hx = 2 * s.hc1
    cfg0 = _perturbed(s, hx, 0.05, 7)
    assert 0 < weighted_free_energy(cfg0, s) < EPS**0.5
    cfg, trace = minimize_local_U(cfg0, s.a, state=s)
    cert = trace.certificate
    assert trace.converged and not trace.constraint_active
    assert cert["F_weighted"] <= 0.5 * EPS**0.5
    assert cert["vortexless"]
    assert cert["A_distance_rel"] <= 0.05


def test_local_run_rejects_vortex(disk_state):
    s = disk_state
    with pytest.raises(ValueError, match="admissible"):
        minimize_local_U(assemble(make_vortex_config(s, hex=1.0), s), s.a, state=s)


def test_local_run_rejects_large_field(disk_state):
    s = disk_state
    with pytest.raises(ValueError, match="alpha_cap"):
        minimize_local_U(assemble(make_meissner_config(s, 3.0), s), s.a, state=s)


@pytest.mark.parametrize("domain", ["rectangle", "disk"])
def test_link_gauge_transform_preserves_energy(domain):
    g = build_grid(64, 64, domain, 1.0)
    cfg = random_config(g, 0.1, hex=3.0, seed=4)
    a = constant_scalar(g, 1.0)
    phi = ScalarField(g, np.sin(3 * g.x) * np.cos(2 * g.y) + g.x * g.y)
    E0 = gl_energy(cfg, a).total
    assert abs(gl_energy(link_gauge_transform(cfg, phi), a).total - E0) <= 1e-10 * E0


def test_coulomb_gauge_zeroes_weak_divergence(disk_state):
    s = disk_state
    g = s.grid
    cfg = coulomb_gauge(random_config(g, EPS, hex=2.0, seed=6))
    B, w, tl, hd, nxe = _edge_incidence(g)
    Ax, Ay = cfg.A.x.reshape(-1), cfg.A.y.reshape(-1)
    bar = np.concatenate([0.5 * (Ax[tl[:nxe]] + Ax[hd[:nxe]]), 0.5 * (Ay[tl[nxe:]] + Ay[hd[nxe:]])])
    div = (B.T @ (w * bar)).reshape(g.shape)
    # sliver nodes take extrapolated phases, so only the interior is exact
    inner = deep_interior(g)
    assert np.abs(div[inner]).max() <= 1e-8 * g.h**2 * np.abs(cfg.A.values).max()


@pytest.mark.slow
@pytest.mark.parametrize("n,eps", [(161, 0.05), (401, 0.02)])
def test_admissible_set_constraint_stays_inactive(n, eps):
    g = build_grid(n, n, "disk", 1.0)
    a = make_pinning(PinningSpec("two_value_step", b=0.5, radius=0.3), g)
    s = build_meissner(a, eps)
    hx = eps**-0.3
    _, trace = minimize_local_U(assemble(make_meissner_config(s, hx), s), a, state=s)
    assert not trace.constraint_active
    assert trace.certificate["F_weighted"] <= 0.5 * eps**0.5
