"""Command line entry point ``pgl``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .driver import STARTS, ExperimentSpec, GridSpec, SpecError, parse_spec, report, run_sweep, spec_help, start_config
from .elliptic import NonConvergence
from .fields import PINNING_KINDS, PinningSpec, make_pinning, read_dump, write_dump

EXIT_OK, EXIT_PRECONDITION, EXIT_NONCONVERGENCE = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="spec file; flags below override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes for sweeps [1]")
    p.add_argument("--seed", type=int, help="seed for random starts [0]")
    p.add_argument("--n", type=int, help="nodes per side [161]")
    p.add_argument("--domain", choices=("disk", "rectangle"), help="domain [disk]")
    p.add_argument("--extent", type=float, help="disk radius or rectangle side [1.0]")
    p.add_argument("--pinning", choices=PINNING_KINDS, help="pinning profile [constant]")
    p.add_argument("--b", type=float, help="pinning floor [0.5]")
    p.add_argument("--radius", type=float, help="inclusion radius [0.2]")
    p.add_argument("--eps", type=float, help="eps [0.05]")
    p.add_argument("--hex", type=float, help="applied field [0]")
    p.add_argument("--hex-scale", choices=("absolute", "hc1"), help="read --hex as a multiple of hc1 [absolute]")


def _setup(args) -> ExperimentSpec:
    """Spec from --spec (if any) with flag overrides; single eps/hex taken first."""
    if args.spec:
        spec = parse_spec(args.spec)
    else:
        spec = ExperimentSpec(GridSpec(161, 161), eps=[0.05], hex=[])
    g = spec.grid
    if args.n is not None:
        g.nx = g.ny = args.n
    if args.domain is not None:
        g.domain = args.domain
    if args.extent is not None:
        g.extent = args.extent
    p = spec.pinning
    if args.pinning is not None:
        p.kind = args.pinning
    if args.b is not None:
        p.b = args.b
    if args.radius is not None:
        p.radius = args.radius
    if args.eps is not None:
        spec.eps = [args.eps]
    if getattr(args, "hex", None) is not None:
        spec.hex = [args.hex]
    if args.hex_scale is not None:
        spec.hex_scale = args.hex_scale
    if args.seed is not None:
        spec.seed = args.seed
    if args.threads is not None:
        spec.threads = args.threads
    if args.out is not None:
        spec.out = args.out
    if getattr(args, "beta", None) is not None:
        spec.beta = args.beta
    # re-run validation after overrides
    return ExperimentSpec(**{k: getattr(spec, k) for k in spec.__dataclass_fields__})


def _single(spec: ExperimentSpec):
    from .meissner import build_meissner

    if not spec.eps:
        raise SpecError("no eps given")
    grid = spec.grid.build()
    a = make_pinning(spec.pinning, grid)
    state = build_meissner(a, spec.eps[0])
    hx = spec.hex[0] if spec.hex else 0.0
    if spec.hex_scale == "hc1":
        hx *= state.hc1
    return grid, a, state, hx


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _table(header, rows, out: str | None, name: str) -> None:
    """Print a CSV table and, with an output directory, write it there too."""
    text = ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)
    print(text, end="")
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


def _dumps(out: str | None, **named) -> None:
    if not out:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, f in named.items():
        write_dump(d / f"{name}.pgl", f)


def _load_cfg(args, state, hx):
    from .energetics import Configuration

    if args.u:
        u = read_dump(args.u, state.grid)
        A = read_dump(args.A, state.grid) if args.A else None
        if A is None:
            from .fields import zero_vector

            A = zero_vector(state.grid)
        return Configuration(u, A, state.eps, hx)
    return start_config(state, args.start, hx, seed=0)


# ---------------------------------------------------------------- commands


def cmd_meissner(args) -> int:
    from .meissner import meissner_energy

    spec = _setup(args)
    _, _, st, hx = _single(spec)
    header = ["eps", "b", "max_psi", "hc1", "E_rho", "curl_residual", "rho_residual", "xi_residual"]
    header += ["hex", "meissner_energy", "argmax_x", "argmax_y"]
    row = [st.eps, st.b, st.max_psi, st.hc1, st.rho_energy, st.curl_residual]
    row += [st.rho_report.final_residual, st.xi_report.final_residual, hx, meissner_energy(st, hx), *st.argmax]
    _table(header, [row], spec.out, "meissner.csv")
    _dumps(spec.out, rho=st.rho, xi=st.xi, psi=st.psi, A0=st.A0)
    return EXIT_OK


def cmd_energy(args) -> int:
    from .energetics import gl_energy, split_energy, vorticity

    spec = _setup(args)
    _, a, st, hx = _single(spec)
    cfg = _load_cfg(args, st, hx)
    rows = [("gl", k, v) for k, v in gl_energy(cfg, a).as_dict().items()]
    if args.split:
        rows += [("split", k, v) for k, v in split_energy(cfg, st).as_dict().items()]
    _table(["report", "quantity", "value"], rows, spec.out, "energy.csv")
    if args.dump_mu:
        write_dump(args.dump_mu, vorticity(cfg.u, cfg.A))
    return EXIT_OK


def cmd_balls(args) -> int:
    from .balls import LowerBoundParams, ball_lower_bound, initial_balls
    from .minimizer import split_pair

    spec = _setup(args)
    _, _, st, hx = _single(spec)
    cfg = split_pair(_load_cfg(args, st, hx), st)
    params = LowerBoundParams(C=args.C)
    if args.target:
        rep = ball_lower_bound(cfg.u, cfg.A, st.rho, st.eps, args.target, beta=spec.beta, params=params)
        per = [(p["ball"], p["bound"]) for p in rep.per_ball]
        radius, D, bound = rep.collection.total_radius, rep.D_tilde, rep.aggregate_bound
        extra = [rep.measured, rep.holds]
    else:
        coll = initial_balls(cfg.u, cfg.A, st.rho, st.eps, params)
        per = [(bl, bl.lower_bound) for bl in coll.balls]
        radius = coll.total_radius
        D = float(sum(bl.min_weight * abs(bl.degree) for bl in coll.balls))
        bound = float(sum(bl.lower_bound for bl in coll.balls))
        extra = ["", ""]
    header = ["center_x", "center_y", "radius", "degree", "min_weight", "bound"]
    rows = [[*bl.center, bl.radius, bl.degree, bl.min_weight, bd] for bl, bd in per]
    _table(header, rows, spec.out, "balls.csv")
    print()
    summary = ["balls", "D_tilde", "total_radius", "lower_bound", "measured", "holds"]
    _table(summary, [[len(per), D, radius, bound, *extra]], spec.out, "balls_summary.csv")
    return EXIT_OK


def cmd_vortex_config(args) -> int:
    from .balls import degree
    from .configs import DEFAULT_M, make_vortex_config, vortex_energy_bound
    from .energetics import assemble, free_energy_weighted, gl_energy
    from .meissner import meissner_energy

    spec = _setup(args)
    _, a, st, hx = _single(spec)
    split = make_vortex_config(st, hex=hx)
    full = assemble(split, st)
    F = free_energy_weighted(split.u, split.A, st.rho, st.eps)
    scale = math.pi * abs(math.log(st.eps))
    r = min(2 * abs(math.log(st.eps)) ** -DEFAULT_M, 0.9 * st.argmax_boundary_distance)
    header = ["degree", "F_weighted", "F_ratio", "window_lo", "window_hi", "F_bound_leading"]
    header += ["gl_energy", "meissner_energy", "hex", "center_x", "center_y"]
    row = [degree(split.u, st.argmax, r), F, F / scale, 0.8, 1.3, vortex_energy_bound(st)]
    row += [gl_energy(full, a).total, meissner_energy(st, hx), hx, *st.argmax]
    _table(header, [row], spec.out, "vortex.csv")
    _dumps(spec.out, u=full.u, A=full.A)
    return EXIT_OK


def cmd_minimize(args) -> int:
    from .minimizer import minimize_gl, minimize_local_U

    spec = _setup(args)
    _, a, st, hx = _single(spec)
    cfg0 = start_config(st, args.start, hx, seed=spec.seed)
    params = spec.params()
    if args.local:
        cfg, trace = minimize_local_U(cfg0, a, params, state=st)
    else:
        cfg, trace = minimize_gl(cfg0, a, params)
    if spec.out:
        from .minimizer import weighted_free_energy

        d = Path(spec.out)
        d.mkdir(parents=True, exist_ok=True)
        nan = float("nan")
        lines = ["iter,energy,grad_norm,F_weighted,kind"]
        for r in trace.rows:
            lines.append(f"{r['iter']},{r['energy']:.17g},{r['grad_norm']:.17g},{r.get('F_weighted', nan):.17g},{r['kind']}")
        # F is tracked per step only in local runs; always give it for the result
        lines.append(f"{trace.iterations},{trace.rows[-1]['energy']:.17g},{nan:.17g},{weighted_free_energy(cfg, st):.17g},final")
        (d / "trace.csv").write_text("\n".join(lines) + "\n")
        _dumps(spec.out, u=cfg.u, A=cfg.A)
    summary = {"reason": trace.reason, "iterations": trace.iterations, "converged": trace.converged, "hex": hx}
    summary.update(trace.certificate)
    if args.local:
        summary["constraint_active"] = trace.constraint_active
    _table(["quantity", "value"], list(summary.items()), spec.out, "minimize.csv")
    return EXIT_OK if trace.converged else EXIT_NONCONVERGENCE


def cmd_sweep(args) -> int:
    spec = _setup(args)
    res = run_sweep(spec)
    print(report(res.rows, res.states, res.onsets))
    print(f"determinism hash {res.hash}")
    return EXIT_OK


def cmd_check(args) -> int:
    """Quick self-checks on small grids."""
    from .elliptic import solve_rho, solve_xi
    from .energetics import Configuration, energy_and_gradient
    from .configs import random_config
    from .fields import constant_scalar
    from .grid import build_grid

    results = []
    g = build_grid(64, 64, "rectangle", 1.0)
    for c in (1.0, 0.25):
        rho, _ = solve_rho(constant_scalar(g, c), 0.1)
        results.append((f"rho constant a={c}", float(np.abs(rho.values - math.sqrt(c)).max()) <= 1e-8))
    d = build_grid(129, 129, "disk", 1.0)
    xi, _ = solve_xi(constant_scalar(d, 1.0))
    from scipy.special import i0

    r = np.hypot(d.x, d.y)
    ins = d.inside
    err = float(np.abs(xi.values[ins] - (1 - i0(r[ins]) / i0(1.0))).max())
    results.append(("xi Bessel profile", err <= 4e-3))
    cfg = random_config(g, 0.1, 1.0, seed=1)
    a = constant_scalar(g, 1.0)
    rng = np.random.default_rng(0)
    du = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    dA = rng.normal(size=(2,) + g.shape)
    _, gu, gx, gy = energy_and_gradient(g, cfg.u.values, cfg.A.x, cfg.A.y, a.values, 0.1, 1.0)
    lin = float(np.sum((np.conj(gu) * du).real) + np.sum(gx * dA[0] + gy * dA[1]))
    t = 1e-5

    def E(s):
        p, *_ = energy_and_gradient(g, cfg.u.values + s * du, cfg.A.x + s * dA[0], cfg.A.y + s * dA[1], a.values, 0.1, 1.0)
        return sum(p)

    fd = (E(t) - E(-t)) / (2 * t)
    results.append(("energy gradient", abs(fd - lin) <= 1e-6 * max(1.0, abs(lin))))
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pgl",
        description="Pinned Ginzburg-Landau: Meissner state, first critical field, vortices and sweeps.",
        epilog=spec_help() + "\n\nexit codes: 0 success, 2 precondition failure, 3 solver non-convergence",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        s = sub.add_parser(name, help=help, epilog=spec_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(s)
        s.set_defaults(func=func)
        return s

    add("meissner", cmd_meissner, "solve for rho, xi, A0 and report hc1")
    s = add("energy", cmd_energy, "GL energy and splitting of a start or dumped configuration")
    s.add_argument("--start", choices=STARTS, default="meissner")
    s.add_argument("--u", help="order parameter dump (full field)")
    s.add_argument("--A", help="vector potential dump (full field)")
    s.add_argument("--split", action="store_true", help="also print the energy splitting")
    s.add_argument("--dump-mu", help="write the vorticity to this dump file")
    s = add("balls", cmd_balls, "bad set and ball construction")
    s.add_argument("--start", choices=STARTS, default="vortex")
    s.add_argument("--u", help="order parameter dump (full field)")
    s.add_argument("--A", help="vector potential dump (full field)")
    s.add_argument("--target", type=float, default=0.0, help="grow balls to this total radius and certify the bound")
    s.add_argument("--C", type=float, default=3.0, help="lower-bound constant C [3]")
    add("vortex-config", cmd_vortex_config, "write the single-vortex competitor")
    s = add("minimize", cmd_minimize, "minimize from a start; writes trace.csv and dumps")
    s.add_argument("--start", choices=STARTS, default="meissner")
    s.add_argument("--beta", type=float, help="admissible-set exponent [0.5]")
    s.add_argument("--local", action="store_true", help="local run inside {F < eps^beta}")
    add("sweep", cmd_sweep, "hex sweep with onset estimate")
    add("check", cmd_check, "quick self-checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"pgl: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (SpecError, ValueError) as exc:
        print(f"pgl: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
