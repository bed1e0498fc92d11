import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinned_gl.balls import (
    BallCollection,
    LowerBoundParams,
    Lambda_eps,
    Probe,
    bad_set,
    ball_lower_bound,
    degree,
    distance_probe,
    grow_and_merge,
    initial_balls,
    lambda_eps,
    merge_rule,
    vortex_set,
    vorticity_estimate_check,
)
from pinned_gl.configs import vortex_fields
from pinned_gl.elliptic import solve_rho
from pinned_gl.energetics import vorticity
from pinned_gl.fields import ComplexField, PinningSpec, ScalarField, constant_complex, constant_scalar, make_pinning, zero_vector
from pinned_gl.grid import build_grid


def vortices(g, eps, spots):
    """Product of single-vortex fields; ``spots`` holds (x, y, sign)."""
    u = np.ones(g.shape, dtype=complex)
    for x, y, sgn in spots:
        v, _ = vortex_fields(g, (x, y), eps)
        u = u * (v if sgn > 0 else np.conj(v))
    return ComplexField(g, u)


@pytest.fixture(scope="module")
def square201():
    return build_grid(201, 201, "rectangle", 1.0)


# ------------------------------------------------------------- bad set


def test_bad_set_empty_for_unit(square201):
    assert bad_set(constant_complex(square201, 1.0), 0.02) == []


def test_bad_set_single_vortex(square201):
    comps = bad_set(vortices(square201, 0.02, [(0.5, 0.5, 1)]), 0.02)
    assert len(comps) == 1 and comps[0].degree == 1


def test_bad_set_dipole(square201):
    u = vortices(square201, 0.02, [(0.35, 0.5, 1), (0.65, 0.5, -1)])
    comps = bad_set(u, 0.02)
    assert sorted(c.degree for c in comps) == [-1, 1]
    assert len(vortex_set(comps)) == 2
    for c in comps:
        cx = c.centroid[0]
        assert (cx < 0.5) == (c.degree == 1)


def test_bad_set_threshold_range(square201):
    with pytest.raises(ValueError):
        bad_set(constant_complex(square201, 1.0), 0.02, threshold=1.0)


# ------------------------------------------------------------- degree


def _phase_oracle(f, c, r, n):
    # brute-force phase summation with numpy unwrap, independent of degree()
    t = np.linspace(0, 2 * np.pi, n + 1)
    ph = np.unwrap(np.angle(f(c[0] + r * np.cos(t), c[1] + r * np.sin(t))))
    return int(round((ph[-1] - ph[0]) / (2 * np.pi)))


@pytest.mark.parametrize("power", [1, 3, -2])
def test_degree_of_powers(square201, power):
    g = square201
    c = (0.4525, 0.5575)  # off the nodes

    def f(x, y):
        z = (x - c[0]) + 1j * (y - c[1])
        return (z / np.abs(z)) ** power

    u = ComplexField(g, f(g.x, g.y))
    d = degree(u, c, 0.2)
    n = max(16, int(math.ceil(8 * 0.2 / g.h)))
    assert d == power == _phase_oracle(f, c, 0.2, 10 * n)
    assert degree(u, c, 0.2, samples=2 * n) == d


def test_degree_of_constant(square201):
    assert degree(constant_complex(square201, np.exp(2j)), (0.5, 0.5), 0.3) == 0


def test_degree_errors(square201):
    with pytest.raises(ValueError):
        degree(constant_complex(square201, 0.0), (0.5, 0.5), 0.2)
    with pytest.raises(ValueError):
        degree(constant_complex(square201, 1.0), (0.5, 0.5), 0.7)
    with pytest.raises(ValueError):
        degree(constant_complex(square201, 1.0), (0.5, 0.5), 0.0)


# ------------------------------------------------------------- balls


def test_initial_balls_empty_when_vortexless(square201):
    g = square201
    u = ComplexField(g, 0.95 * np.exp(1j * g.x))
    assert len(initial_balls(u, zero_vector(g), constant_scalar(g, 1.0), 0.02)) == 0


def test_initial_balls_single_vortex(square201):
    g = square201
    eps = 0.02
    coll = initial_balls(vortices(g, eps, [(0.5, 0.5, 1)]), zero_vector(g), constant_scalar(g, 0.8), eps)
    assert len(coll) >= 1
    assert any(math.dist(b.center, (0.5, 0.5)) <= b.radius for b in coll.balls)
    for b in coll.balls:
        assert b.radius >= eps / b.min_weight - 1e-12
        assert b.lower_bound == pytest.approx(b.min_weight * b.radius / eps)


def test_initial_balls_two_vortices(square201):
    g = square201
    eps = 0.02
    u = vortices(g, eps, [(0.3, 0.5, 1), (0.7, 0.5, 1)])
    coll = initial_balls(u, zero_vector(g), constant_scalar(g, 1.0), eps)
    assert len(coll) == 2 and coll.disjoint()
    comps = bad_set(u, eps)
    for c in comps:
        inside = [b for b in coll.balls if all(math.dist(p, b.center) <= b.radius for p in c.points)]
        assert len(inside) == 1


def test_grow_empty_is_empty(square201):
    g = square201
    init = initial_balls(constant_complex(g, 1.0), zero_vector(g), constant_scalar(g, 1.0), 0.02)
    assert len(grow_and_merge(init, 0.2)) == 0


def test_grow_single_ball_scales(square201):
    g = square201
    eps = 0.02
    init = initial_balls(vortices(g, eps, [(0.5, 0.5, 1)]), zero_vector(g), constant_scalar(g, 1.0), eps)
    r0 = init.balls[0].radius
    s1 = 2 * r0
    a = grow_and_merge(init, s1)
    b = grow_and_merge(init, 2 * s1)
    assert a.balls[0].radius == pytest.approx(s1)
    assert b.balls[0].radius == pytest.approx(2 * a.balls[0].radius)
    assert not b.events


def test_grow_merges_colliding_pair(square201):
    g = square201
    eps = 0.02
    u = vortices(g, eps, [(0.4, 0.5, 1), (0.6, 0.5, 1)])
    init = initial_balls(u, zero_vector(g), constant_scalar(g, 1.0), eps)
    assert len(init) == 2
    out = grow_and_merge(init, 0.15)
    assert len(out) == 1
    m = out.balls[0]
    assert m.degree == 2
    # merge happened at s = 0.1 (contact at distance 0.2); afterwards radius = 2 s
    assert m.radius == pytest.approx(0.3, rel=1e-6)
    assert abs(m.center[1] - 0.5) <= 1e-6 and 0.4 <= m.center[0] <= 0.6


def test_merge_rule_formula():
    c, r = merge_rule((0.0, 0.0), 1.0, (3.0, 0.0), 2.0)
    assert r == 3.0 and c == (2.0, 0.0)


def test_grow_rejects_large_s(square201):
    g = square201
    init = initial_balls(vortices(g, 0.02, [(0.5, 0.5, 1)]), zero_vector(g), constant_scalar(g, 1.0), 0.02)
    with pytest.raises(ValueError):
        grow_and_merge(init, 0.5)


# ------------------------------------------------------------- lambda


def test_lambda_saturates():
    p = LowerBoundParams()
    assert lambda_eps(1e-9, 0.01, p) == pytest.approx(p.c2 / 0.01)


def test_lambda_closed_form():
    p = LowerBoundParams(c0=1.0, c1=2.0, c2=1.0, c3=0.25)
    expected = min(100.0, math.pi / (1 + 0.5 + 0.01 * math.pi))
    assert lambda_eps(1.0, 0.01, p) == pytest.approx(expected, rel=1e-14)
    assert lambda_eps(1.0, 0.01, p) == pytest.approx(2.0514, abs=1e-4)


@pytest.mark.parametrize("eps", [0.05, 0.01])
def test_Lambda_log_lower_bound(eps):
    p = LowerBoundParams()
    assert Lambda_eps(0.5, eps, p) >= math.pi * math.log(0.5 / eps) - p.C0


def test_Lambda_shape_on_log_grid():
    p = LowerBoundParams()
    eps = 0.02
    s = np.geomspace(1e-4, 0.499, 1000)
    L = np.array([Lambda_eps(v, eps, p) for v in s])
    assert np.all(np.diff(L) > 0)
    assert np.all(np.diff(L / s) <= 1e-12)
    assert Lambda_eps(eps, eps, p) / eps > p.c3 / eps


def test_Lambda_matches_direct_quadrature():
    from scipy.integrate import quad

    p = LowerBoundParams()
    eps = 0.05
    direct, _ = quad(lambda x: lambda_eps(x, eps, p), 0, 0.3, points=[0.1, 0.2], limit=500, epsabs=1e-12)
    assert Lambda_eps(0.3, eps, p) == pytest.approx(direct, abs=1e-9)


def test_lambda_rejects_bad_args():
    with pytest.raises(ValueError):
        lambda_eps(0.0, 0.1)
    with pytest.raises(ValueError):
        Lambda_eps(0.1, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        LowerBoundParams(c1=0.5, c2=0.5)
    with pytest.raises(ValueError):
        LowerBoundParams(c3=0.6)


# ------------------------------------------------------------- lower bound


# with the default C = 3 the window (C eps^(1-beta), 1/2) for r is empty at eps = 0.02
P_SMALL_C = LowerBoundParams(C=0.5)


def test_lower_bound_vortexless(square201):
    g = square201
    rep = ball_lower_bound(
        constant_complex(g, 1.0), zero_vector(g), constant_scalar(g, 1.0), 0.02, 0.2, beta=0.7, params=P_SMALL_C
    )
    assert rep.D_tilde == 0 and rep.aggregate_bound == 0 and rep.holds


def test_lower_bound_single_vortex(square201):
    g = square201
    eps = 0.02
    u = vortices(g, eps, [(0.5, 0.5, 1)])
    rep = ball_lower_bound(u, zero_vector(g), constant_scalar(g, 1.0), eps, 0.2, beta=0.7, params=P_SMALL_C)
    assert rep.holds
    assert rep.D_tilde == pytest.approx(1.0)
    assert rep.measured >= math.pi * (math.log(0.2 / eps) - P_SMALL_C.C)
    assert rep.degree_sum == 1


def test_lower_bound_scales_with_weight(square201):
    g = square201
    eps = 0.02
    u = vortices(g, eps, [(0.5, 0.5, 1)])
    a = make_pinning(PinningSpec("two_value_step", b=0.3, radius=0.3), g)
    rho, _ = solve_rho(a, eps)
    kw = dict(beta=0.7, params=P_SMALL_C, Cbar=2.5)
    full = ball_lower_bound(u, zero_vector(g), constant_scalar(g, 1.0), eps, 0.2, **kw)
    pinned = ball_lower_bound(u, zero_vector(g), rho, eps, 0.2, **kw)
    bf = sum(p["bound"] for p in full.per_ball)
    bp = sum(p["bound"] for p in pinned.per_ball)
    assert bf > 0 and full.holds and pinned.holds
    assert pinned.aggregate_bound == pytest.approx(bp)
    assert bp / bf == pytest.approx(0.3, rel=0.1)


def test_lower_bound_reports_violations(square201):
    g = square201
    u = vortices(g, 0.02, [(0.5, 0.5, 1)])
    with pytest.raises(ValueError, match="F = "):
        ball_lower_bound(u, zero_vector(g), constant_scalar(g, 1.0), 0.02, 0.2, beta=0.3, params=P_SMALL_C)
    with pytest.raises(ValueError, match="r = "):
        ball_lower_bound(u, zero_vector(g), constant_scalar(g, 1.0), 0.02, 0.6, beta=0.7, params=P_SMALL_C)


# ------------------------------------------------------------- Jacobian


def test_jacobian_check_trivial(square201):
    g = square201
    mu = ScalarField(g, np.zeros(g.shape))
    assert vorticity_estimate_check(mu, BallCollection([]), [distance_probe(g, 0.3)]) == 0.0


def test_jacobian_check_single_vortex():
    g = build_grid(256, 256, "disk", 1.0)
    eps = 0.02
    u = vortices(g, eps, [(0.1, 0.0, 1)])
    mu = vorticity(u, zero_vector(g))
    balls = initial_balls(u, zero_vector(g), constant_scalar(g, 1.0), eps)
    assert vorticity_estimate_check(mu, balls, [distance_probe(g, 0.5), distance_probe(g, 2.0)]) <= 0.1


def test_jacobian_check_rejects_bad_probe(square201):
    g = square201
    mu = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        vorticity_estimate_check(mu, BallCollection([]), [Probe(lambda x, y: np.ones_like(x) * 0.1, 1.0)])


# ------------------------------------------------------------- properties

_g = build_grid(121, 121, "rectangle", 1.0)
_eps = 0.03
_spot = st.tuples(st.floats(0.15, 0.85), st.floats(0.15, 0.85), st.sampled_from([-1, 1]))


def _well_separated(spots):
    return all(math.dist(a[:2], b[:2]) >= 0.08 for i, a in enumerate(spots) for b in spots[i + 1 :])


@settings(max_examples=20, deadline=None)
@given(spots=st.lists(_spot, min_size=1, max_size=4).filter(_well_separated), s=st.floats(0.02, 0.2))
def test_growth_invariants(spots, s):
    u = vortices(_g, _eps, spots)
    one = constant_scalar(_g, 1.0)
    init = initial_balls(u, zero_vector(_g), one, _eps)
    assert init.disjoint()
    comps = vortex_set(bad_set(u, _eps))
    pts = np.concatenate([c.points for c in comps]) if comps else np.zeros((0, 2))
    assert init.covers(pts)
    small = grow_and_merge(init, s)
    big = grow_and_merge(init, min(2 * s, 0.49))
    for coll in (small, big):
        assert coll.disjoint() and coll.covers(pts)
        for b in coll.balls:
            if _g.contains_ball(b.center, b.radius, margin=_eps):
                assert b.radius >= coll.s_param * abs(b.degree) - 1e-12
    for b in small.balls:
        assert any(B.contains(b, slack=1e-9) for B in big.balls)
    # degrees add up when every ball stays inside Omega_eps
    if all(_g.contains_ball(b.center, b.radius, margin=_eps) for b in big.balls):
        assert sum(b.degree for b in big.balls) == sum(b.degree for b in init.balls)
