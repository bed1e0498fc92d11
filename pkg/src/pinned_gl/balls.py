"""Vortex balls: bad sets, degrees, growth and merging, and lower bounds.

The bad set is ``{|u| <= 1/2}`` restricted to ``Omega_eps``, the nodes
farther than eps from the boundary.  A component's degree is the sum of
the lattice windings of the plaquettes around it, which equals the
winding of u along the boundary of the component grown by two nodes.

Balls grow as ``r(s) = max(r_base, s |d|)``.  Contacts and exits from
``Omega_eps`` are solved exactly for the next event; at a contact the
pair is replaced by the ball centred at ``(a1 r1 + a2 r2)/(r1 + r2)`` with
radius ``r1 + r2``.  Total radius is conserved by merging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, ndimage

from .fields import ComplexField, ScalarField, VectorField
from .grid import Grid
from .operators import _same_grid


@dataclass(frozen=True)
class LowerBoundParams:
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 0.5
    c3: float = 0.25
    C0: float = 5.0
    C: float = 3.0

    def __post_init__(self):
        for k in ("c0", "c1", "c2", "c3", "C0", "C"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if not self.c2 < self.c1:
            raise ValueError("need c2 < c1")
        if not self.c3 <= self.c2:
            raise ValueError("need c3 <= c2")


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    degree: int
    min_weight: float
    lower_bound: float = 0.0
    members: tuple = ()

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def contains(self, other: "Ball", slack: float = 1e-12) -> bool:
        d = math.dist(self.center, other.center)
        return d + other.radius <= self.radius + slack


@dataclass
class BallCollection:
    balls: list
    stage: str = "initial"
    s_param: float = 0.0
    events: list = field(default_factory=list)
    builder: object = field(default=None, repr=False)

    @property
    def total_radius(self) -> float:
        return float(sum(b.radius for b in self.balls))

    def __len__(self):
        return len(self.balls)

    def disjoint(self, slack: float = 1e-12) -> bool:
        bs = self.balls
        for i in range(len(bs)):
            for j in range(i + 1, len(bs)):
                if math.dist(bs[i].center, bs[j].center) <= bs[i].radius + bs[j].radius - slack:
                    return False
        return True

    def covers(self, points, slack: float = 1e-12) -> bool:
        for p in points:
            if not any(math.dist(p, b.center) <= b.radius + slack for b in self.balls):
                return False
        return True


@dataclass
class Component:
    label: int
    nodes: np.ndarray  # (k, 2) integer (j, i)
    points: np.ndarray  # (k, 2) coordinates (x, y)
    degree: int

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


# ---------------------------------------------------------------- degrees


def _wrap(d):
    return (d + np.pi) % (2 * np.pi) - np.pi


def plaquette_winding(u: np.ndarray) -> np.ndarray:
    """Integer winding of u around each grid cell, shape (ny-1, nx-1).

    Each edge increment is wrapped once and reused with opposite sign by
    the neighbouring cell, so windings over any union of cells telescope
    to the winding along its boundary.
    """
    th = np.angle(u)
    ex = _wrap(th[:, 1:] - th[:, :-1])
    ey = _wrap(th[1:, :] - th[:-1, :])
    s = ex[:-1, :] + ey[:, 1:] - ex[1:, :] - ey[:, :-1]
    return np.rint(s / (2 * np.pi)).astype(int)


def omega_eps(grid: Grid, eps: float) -> np.ndarray:
    return (grid.weights > 0) & (grid.boundary_distance(grid.x, grid.y) > eps)


def bad_set(u: ComplexField, eps: float, threshold: float = 0.5) -> list:
    """Connected components (4-connectivity) of ``{|u| <= threshold}`` in Omega_eps."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    g = u.grid
    bad = (np.abs(u.values) <= threshold) & omega_eps(g, eps)
    labels, n = ndimage.label(bad)
    if n == 0:
        return []
    # attach every node within two steps to its nearest component
    dist, (jj, ii) = ndimage.distance_transform_edt(labels == 0, return_indices=True)
    near = np.where(dist <= 2.0, labels[jj, ii], 0)
    wind = plaquette_winding(u.values)
    corners = np.stack([near[:-1, :-1], near[:-1, 1:], near[1:, :-1], near[1:, 1:]])
    owner = corners.max(axis=0)
    comps = []
    for lab in range(1, n + 1):
        js, is_ = np.nonzero(labels == lab)
        deg = int(wind[owner == lab].sum())
        pts = np.stack([g.x[js, is_], g.y[js, is_]], axis=1)
        comps.append(Component(lab, np.stack([js, is_], axis=1), pts, deg))
    return comps


def vortex_set(components: list) -> list:
    """S_E: the components with nonzero degree."""
    return [c for c in components if c.degree != 0]


def degree(u: ComplexField, center, radius: float, samples: int | None = None) -> int:
    """Winding number of u along the circle, by summing wrapped phase increments."""
    g = u.grid
    if not radius > 0:
        raise ValueError("radius must be positive")
    n = samples or max(16, int(math.ceil(8 * radius / g.h)))
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    px = center[0] + radius * np.cos(t)
    py = center[1] + radius * np.sin(t)
    ci = (px - g.x0) / g.h
    cj = (py - g.y0) / g.h
    if ci.min() < 0 or cj.min() < 0 or ci.max() > g.nx - 1 or cj.max() > g.ny - 1:
        raise ValueError("circle leaves the grid")
    coords = np.stack([cj, ci])
    vals = ndimage.map_coordinates(u.values.real, coords, order=1) + 1j * ndimage.map_coordinates(
        u.values.imag, coords, order=1
    )
    if np.abs(vals).min() < 1e-12:
        raise ValueError("u vanishes on the circle; degree undefined")
    ph = np.angle(vals)
    inc = _wrap(np.diff(np.append(ph, ph[0])))
    return int(np.rint(inc.sum() / (2 * np.pi)))


# ---------------------------------------------------------------- lambda


def lambda_eps(x, eps: float, params: LowerBoundParams = LowerBoundParams()):
    """min(c2/eps, (pi/x) / (1 + x/2 + pi eps/(c0 x)))."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or not eps > 0:
        raise ValueError("lambda_eps needs x > 0 and eps > 0")
    val = np.minimum(params.c2 / eps, np.pi / (x + 0.5 * x * x + np.pi * eps / params.c0))
    return float(val) if val.ndim == 0 else val


def _lambda_knee(eps: float, params: LowerBoundParams) -> float:
    # x where the two branches of the min meet: x + x^2/2 = pi eps (1/c2 - 1/c0)
    k = np.pi * eps * (1.0 / params.c2 - 1.0 / params.c0)
    if k <= 0:
        return 0.0
    return -1.0 + math.sqrt(1.0 + 2.0 * k)


def Lambda_eps(s: float, eps: float, params: LowerBoundParams = LowerBoundParams()) -> float:
    """Integral of lambda_eps over (0, s), by adaptive quadrature."""
    if not s > 0 or not eps > 0:
        raise ValueError("Lambda_eps needs s > 0 and eps > 0")
    knee = _lambda_knee(eps, params)
    if s <= knee:
        return params.c2 * s / eps
    head = params.c2 * knee / eps
    val, _ = integrate.quad(lambda x: lambda_eps(x, eps, params), knee, s, epsabs=1e-12, epsrel=1e-12, limit=200)
    return head + val


# ---------------------------------------------------------------- balls


def _weight_min(grid: Grid, eta2: np.ndarray, center, radius: float) -> float:
    inside = (np.hypot(grid.x - center[0], grid.y - center[1]) <= radius) & (grid.weights > 0)
    if inside.any():
        return float(eta2[inside].min())
    ci = (center[0] - grid.x0) / grid.h
    cj = (center[1] - grid.y0) / grid.h
    return float(ndimage.map_coordinates(eta2, [[cj], [ci]], order=1)[0])


def merge_rule(c1, r1, c2, r2):
    """Centre (a1 r1 + a2 r2)/(r1 + r2) and radius r1 + r2."""
    R = r1 + r2
    return ((c1[0] * r1 + c2[0] * r2) / R, (c1[1] * r1 + c2[1] * r2) / R), R


class _Builder:
    """Shared bookkeeping for the initial cover and the growth process."""

    def __init__(self, grid: Grid, eta2: np.ndarray, eps: float, comps: list):
        self.grid = grid
        self.eta2 = eta2
        self.eps = eps
        self.comp_deg = {c.label: c.degree for c in comps}

    def inside(self, center, radius) -> bool:
        return self.grid.contains_ball(center, radius, margin=self.eps)

    def degree_of(self, center, radius, members) -> int:
        if not self.inside(center, radius):
            return 0
        return int(sum(self.comp_deg[m] for m in members))

    def min_weight(self, center, radius) -> float:
        return _weight_min(self.grid, self.eta2, center, radius)


def _first_overlap(balls: list, slack: float = 1e-12):
    best = None
    for i in range(len(balls)):
        for j in range(i + 1, len(balls)):
            bi, bj = balls[i], balls[j]
            if math.dist(bi["c"], bj["c"]) <= bi["r"] + bj["r"] + slack:
                if best is None or i + j < best[0] + best[1]:
                    best = (i, j)
    return best


def initial_balls(
    u: ComplexField, A: VectorField | None, eta: ScalarField, eps: float, params: LowerBoundParams = LowerBoundParams()
) -> BallCollection:
    """Disjoint closed balls covering every bad component in Omega_eps.

    Each ball has ``r >= eps / min_B eta^2`` and carries the bound
    ``c1 min_B eta^2 r / eps``.  Balls inside Omega_eps get the summed
    degree of the components they hold, others degree 0.
    """
    g = _same_grid(u, eta) if A is None else _same_grid(u, A, eta)
    comps = bad_set(u, eps)
    eta2 = eta.values**2
    B = _Builder(g, eta2, eps, comps)
    balls = []
    for c in comps:
        ctr = tuple(float(v) for v in c.centroid)
        r = float(np.max(np.hypot(c.points[:, 0] - ctr[0], c.points[:, 1] - ctr[1]))) + 0.5 * g.h
        balls.append({"c": ctr, "r": r, "m": (c.label,)})

    def enforce(b):
        for _ in range(100):
            need = eps / B.min_weight(b["c"], b["r"])
            if b["r"] >= need:
                return
            b["r"] = need

    for b in balls:
        enforce(b)
    while True:
        pair = _first_overlap(balls)
        if pair is None:
            break
        i, j = pair
        c, r = merge_rule(balls[i]["c"], balls[i]["r"], balls[j]["c"], balls[j]["r"])
        merged = {"c": c, "r": r, "m": balls[i]["m"] + balls[j]["m"]}
        enforce(merged)
        balls[i] = merged
        del balls[j]
    out = []
    for b in balls:
        mw = B.min_weight(b["c"], b["r"])
        out.append(
            Ball(b["c"], b["r"], B.degree_of(b["c"], b["r"], b["m"]), mw, params.c1 * mw * b["r"] / eps, tuple(sorted(b["m"])))
        )
    return BallCollection(out, "initial", 0.0, builder=B)


def _contact_time(b1, b2, s_now):
    """Smallest s >= s_now with max(r1, s d1) + max(r2, s d2) >= distance."""
    D = math.dist(b1["c"], b2["c"])
    d1, d2 = abs(b1["d"]), abs(b2["d"])
    r1, r2 = b1["r"], b2["r"]

    def gap(s):
        return max(r1, s * d1) + max(r2, s * d2) - D

    if gap(s_now) >= 0:
        return s_now
    # gap is nondecreasing and affine between the knots r/d
    knots = sorted({s_now} | {r / d for r, d in ((r1, d1), (r2, d2)) if d > 0 and r / d > s_now})
    for lo, hi in zip(knots[:-1], knots[1:]):
        g_lo, g_hi = gap(lo), gap(hi)
        if g_hi >= 0:
            return lo + (hi - lo) * (-g_lo) / (g_hi - g_lo)
    last = knots[-1]
    slope = gap(last + 1.0) - gap(last)
    if slope <= 0:
        return math.inf
    return last - gap(last) / slope


def grow_and_merge(
    init: BallCollection, s_final: float, params: LowerBoundParams = LowerBoundParams()
) -> BallCollection:
    """Grow the initial balls to parameter ``s_final``, merging at contact."""
    if not 0 < s_final < 0.5:
        raise ValueError("s_final must lie in (0, 1/2)")
    if not init.balls:
        return BallCollection([], "grown", s_final)
    B: _Builder = init.builder
    eps = B.eps
    balls = [{"c": b.center, "r": b.radius, "d": b.degree, "m": b.members} for b in init.balls]
    nonzero = [b["r"] / abs(b["d"]) for b in balls if b["d"] != 0]
    s = min(min(nonzero), s_final) if nonzero else s_final
    events = []

    def radius(b, t):
        return max(b["r"], t * abs(b["d"]))

    while True:
        s_next, what = math.inf, None
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                t = _contact_time(balls[i], balls[j], s)
                if t < s_next:
                    s_next, what = t, ("contact", i, j)
        for i, b in enumerate(balls):
            if b["d"] != 0:
                room = B.grid.boundary_distance(*b["c"]) - eps
                t = room / abs(b["d"])
                if t >= s and t < s_next:
                    s_next, what = t, ("exit", i, i)
        if s_next > s_final:
            for b in balls:
                b["r"] = radius(b, s_final)
            s = s_final
            break
        s = s_next
        for b in balls:
            b["r"] = radius(b, s)
        kind, i, j = what
        if kind == "exit":
            balls[i]["d"] = 0
            events.append((s, "exit", i, i))
        # resolve every overlap present at this parameter, smallest index sum first
        while True:
            pair = _first_overlap(balls)
            if pair is None:
                break
            i, j = pair
            c, r = merge_rule(balls[i]["c"], balls[i]["r"], balls[j]["c"], balls[j]["r"])
            m = balls[i]["m"] + balls[j]["m"]
            balls[i] = {"c": c, "r": r, "d": B.degree_of(c, r, m), "m": m}
            del balls[j]
            events.append((s, "merge", i, j))
        for b in balls:
            if b["d"] != 0 and not B.inside(b["c"], b["r"]):
                b["d"] = 0
    lam = Lambda_eps(s_final, eps, params) / s_final
    out = []
    for b in balls:
        mw = B.min_weight(b["c"], b["r"])
        out.append(Ball(b["c"], b["r"], int(b["d"]), mw, mw * b["r"] * lam, tuple(sorted(b["m"]))))
    return BallCollection(out, "grown", s_final, events, builder=B)


def grow_to_total_radius(init: BallCollection, r_target: float, params: LowerBoundParams = LowerBoundParams(), tol=1e-10):
    """Largest s < 1/2 whose collection has total radius <= r_target (bisection)."""
    if not init.balls:
        return BallCollection([], "grown", 0.0)
    if init.total_radius > r_target:
        raise ValueError(f"initial balls already exceed the target radius: {init.total_radius:.4g} > {r_target:.4g}")
    hi = 0.5 - 1e-12
    top = grow_and_merge(init, hi, params)
    if top.total_radius <= r_target:
        return top
    lo = 1e-12
    best = grow_and_merge(init, lo, params)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        c = grow_and_merge(init, mid, params)
        if c.total_radius <= r_target:
            lo, best = mid, c
        else:
            hi = mid
    return best


# ---------------------------------------------------------------- bounds


def free_energy_density(u: ComplexField, A: VectorField, eta: ScalarField, eps: float) -> np.ndarray:
    """Nodal density of the weighted free energy; edge terms are split between endpoints."""
    from .energetics import _edges

    g = _same_grid(u, A, eta)
    h2 = g.h**2
    dens = np.zeros(g.shape)
    for k, (c, _, D, _) in enumerate(_edges(g, u.values, A.x, A.y, eta.values)):
        e = 0.25 * c * (D.real**2 + D.imag**2) / h2
        if k == 0:
            dens[:, :-1] += e
            dens[:, 1:] += e
        else:
            dens[:-1, :] += e
            dens[1:, :] += e
    m2 = np.abs(u.values) ** 2
    from .operators import curl_array

    cA = curl_array(g, A.x, A.y)
    dens += g.weights * (eta.values**4 * (1 - m2) ** 2 / (4 * eps * eps) + 0.5 * cA**2)
    return dens


def energy_in_balls(dens: np.ndarray, grid: Grid, balls) -> float:
    sel = np.zeros(grid.shape, dtype=bool)
    for b in balls:
        sel |= np.hypot(grid.x - b.center[0], grid.y - b.center[1]) <= b.radius
    return float(dens[sel].sum())


@dataclass
class BallBoundReport:
    collection: BallCollection
    r_target: float
    Cbar: float
    D_tilde: float
    per_ball: list
    aggregate_bound: float
    measured: float
    degree_sum: int
    degree_bound: float
    free_energy: float
    holds: bool
    alternative: bool

    def as_dict(self) -> dict:
        return {
            "r_target": self.r_target,
            "total_radius": self.collection.total_radius,
            "Cbar": self.Cbar,
            "D_tilde": self.D_tilde,
            "aggregate_bound": self.aggregate_bound,
            "measured": self.measured,
            "degree_sum": self.degree_sum,
            "degree_bound": self.degree_bound,
            "free_energy": self.free_energy,
            "holds": self.holds,
        }


def ball_lower_bound(
    u: ComplexField,
    A: VectorField,
    eta: ScalarField,
    eps: float,
    r_target: float,
    Cbar: float | None = None,
    beta: float = 0.5,
    params: LowerBoundParams = LowerBoundParams(),
) -> BallBoundReport:
    """Certified lower bounds on the free energy carried by the vortex balls.

    Balls are grown until their total radius reaches ``r_target``.  Each
    ball inside Omega_eps gets ``pi min_B eta^2 |d_B| (log(r/(eps Cbar)) - C)``;
    ``Cbar`` defaults to ``pi D~`` with ``D~ = sum min_B eta^2 |d_B|``.
    """
    from .energetics import free_energy_weighted

    g = _same_grid(u, A, eta)
    F = free_energy_weighted(u, A, eta, eps)
    problems = []
    if not 0 < beta < 1:
        problems.append(f"beta = {beta} not in (0, 1)")
    if F > eps**-beta:
        problems.append(f"F = {F:.6g} > eps^-beta = {eps**-beta:.6g}")
    lo = params.C * eps ** (1 - beta)
    if not lo < r_target < 0.5:
        problems.append(f"r = {r_target} not in (C eps^(1-beta), 1/2) = ({lo:.6g}, 0.5)")
    init = initial_balls(u, A, eta, eps, params)
    coll = grow_to_total_radius(init, r_target, params)
    act = g.weights > 0
    b = float((eta.values[act] ** 2).min())
    interior = [bl for bl in coll.balls if g.contains_ball(bl.center, bl.radius, margin=eps)]
    D = float(sum(bl.min_weight * abs(bl.degree) for bl in interior))
    if Cbar is None:
        Cbar = np.pi * D if D > 0 else 2 * b
    if not 2 * b - 1e-12 <= Cbar <= math.sqrt(r_target / eps):
        problems.append(f"Cbar = {Cbar:.6g} not in [2b, sqrt(r/eps)] = [{2 * b:.6g}, {math.sqrt(r_target / eps):.6g}]")
    if problems:
        raise ValueError("ball_lower_bound preconditions violated: " + "; ".join(problems))
    dens = free_energy_density(u, A, eta, eps)
    per = []
    for bl in coll.balls:
        inner = g.contains_ball(bl.center, bl.radius, margin=eps)
        bound = np.pi * bl.min_weight * abs(bl.degree) * (math.log(r_target / (eps * Cbar)) - params.C) if inner else 0.0
        per.append({"ball": bl, "bound": bound, "measured": energy_in_balls(dens, g, [bl]), "inside": inner})
    # sum of the per-ball bounds; with Cbar = pi D~ this is pi D~ (log(r/(eps D~)) - C - log pi)
    aggregate = np.pi * D * (math.log(r_target / (eps * Cbar)) - params.C) if D > 0 else 0.0
    measured = energy_in_balls(dens, g, coll.balls)
    alternative = measured >= Cbar * math.log(r_target / eps)
    holds = alternative or all(p["measured"] >= p["bound"] - 1e-12 for p in per)
    holds = holds and measured >= aggregate - 1e-12
    dsum = int(sum(abs(bl.degree) for bl in coll.balls))
    dbound = params.C * F / (beta * abs(math.log(eps)))
    return BallBoundReport(coll, r_target, float(Cbar), D, per, float(aggregate), measured, dsum, dbound, F, bool(holds), bool(alternative))


# ---------------------------------------------------------------- Jacobian


@dataclass(frozen=True)
class Probe:
    """Lipschitz test function vanishing on the boundary."""

    func: object
    lip: float
    name: str = "probe"

    def __call__(self, x, y):
        return np.asarray(self.func(x, y), dtype=float)


def _boundary_points(grid: Grid, n: int = 400):
    if grid.domain_kind == "disk":
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return grid.extent * np.cos(t), grid.extent * np.sin(t)
    x1 = grid.x0 + (grid.nx - 1) * grid.h
    y1 = grid.y0 + (grid.ny - 1) * grid.h
    t = np.linspace(0, 1, n // 4, endpoint=False)
    xs = np.concatenate([grid.x0 + t * (x1 - grid.x0), np.full_like(t, x1), x1 - t * (x1 - grid.x0), np.full_like(t, grid.x0)])
    ys = np.concatenate([np.full_like(t, grid.y0), grid.y0 + t * (y1 - grid.y0), np.full_like(t, y1), y1 - t * (y1 - grid.y0)])
    return xs, ys


def distance_probe(grid: Grid, cap: float, center=(0.0, 0.0), name: str = "distance") -> Probe:
    """min(dist(x, boundary), cap) restricted to the domain; Lipschitz constant 1."""
    return Probe(lambda x, y: np.clip(grid.boundary_distance(x, y), 0.0, cap), 1.0, name)


def vorticity_estimate_check(mu: ScalarField, balls: BallCollection, probes: list) -> float:
    """max over probes of |int mu zeta - 2 pi sum d_i zeta(a_i)| / Lip(zeta)."""
    g = mu.grid
    bx, by = _boundary_points(g)
    worst = 0.0
    for p in probes:
        if np.abs(p(bx, by)).max() > 1e-10:
            raise ValueError(f"probe {p.name!r} does not vanish on the boundary")
        z = p(g.x, g.y)
        lhs = float(np.sum(g.weights * mu.values * z))
        rhs = 2 * np.pi * sum(b.degree * float(p(np.array(b.center[0]), np.array(b.center[1]))) for b in balls.balls)
        worst = max(worst, abs(lhs - rhs) / p.lip)
    return worst
