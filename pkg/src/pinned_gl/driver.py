"""Experiment specs, hex sweeps and onset estimates.

Spec files are INI-style (``key = value`` under ``[grid]``, ``[pinning]``
and ``[sweep]``).  A sweep minimizes from each requested start at each
(eps, hex), analyses the result and writes one CSV row per run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .balls import bad_set, initial_balls
from .configs import make_meissner_config, make_vortex_config, random_config
from .energetics import assemble, free_energy_weighted, gl_energy
from .fields import PINNING_KINDS, PinningSpec, make_pinning
from .grid import DOMAIN_KINDS, build_grid
from .meissner import MeissnerState, build_meissner, meissner_energy
from .minimizer import MinimizeParams, minimize_gl, split_pair

CSV_VERSION = "# pgl-sweep v1"
STARTS = ("meissner", "vortex", "random")


class SpecError(ValueError):
    """Malformed or inconsistent experiment spec."""


# ---------------------------------------------------------------- spec

# (section, key) -> (default, help); None marks a required key
SPEC_KEYS = {
    ("grid", "n"): (None, "nodes per side (sets nx = ny)"),
    ("grid", "nx"): (None, "nodes along x (overrides n)"),
    ("grid", "ny"): (None, "nodes along y (overrides n)"),
    ("grid", "domain"): ("disk", "disk or rectangle"),
    ("grid", "extent"): ("1.0", "disk radius, or rectangle side length"),
    ("pinning", "kind"): ("constant", "constant, two_value_step, checkerboard, smooth_bump, seeded_random"),
    ("pinning", "b"): ("0.5", "pinning floor b in (0, 1)"),
    ("pinning", "level"): ("1.0", "value of a constant profile"),
    ("pinning", "period"): ("0.25", "checkerboard cell size"),
    ("pinning", "radius"): ("0.2", "inclusion radius"),
    ("pinning", "center"): ("", "inclusion centre 'x, y' (default: domain centre)"),
    ("pinning", "seed"): ("0", "seed of random inclusions"),
    ("pinning", "count"): ("6", "number of random inclusions"),
    ("sweep", "eps"): (None, "comma-separated eps values"),
    ("sweep", "hex"): (None, "comma-separated values or lo:hi:count (inclusive)"),
    ("sweep", "hex_scale"): ("absolute", "absolute, or hc1 to read hex as multiples of hc1"),
    ("sweep", "starts"): ("meissner, vortex", "comma-separated starts: meissner, vortex, random"),
    ("sweep", "beta"): ("0.5", "exponent of the admissible-set ceiling eps^beta"),
    ("sweep", "alpha_cap"): ("0.3", "field cap exponent, hex <= eps^-alpha_cap for local runs"),
    ("sweep", "max_iters"): ("5000", "descent iteration cap"),
    ("sweep", "grad_tol"): ("1e-6", "gradient tolerance, scaled by 1/eps^2"),
    ("sweep", "seed"): ("0", "seed for random starts"),
    ("sweep", "out"): ("", "output directory"),
    ("sweep", "threads"): ("1", "worker processes"),
}


def spec_help() -> str:
    lines = ["spec file keys (default in brackets, * required):"]
    section = None
    for (sec, key), (default, text) in SPEC_KEYS.items():
        if sec != section:
            lines.append(f"  [{sec}]")
            section = sec
        mark = "*" if default is None and key in ("eps", "hex") else " "
        d = "" if default is None else f" [{default}]"
        lines.append(f"   {mark}{key}{d}: {text}")
    lines.append("  one of n or nx/ny is required")
    return "\n".join(lines)


@dataclass
class GridSpec:
    nx: int
    ny: int
    domain: str = "disk"
    extent: float = 1.0

    @property
    def h(self) -> float:
        return (2.0 if self.domain == "disk" else 1.0) * self.extent / (self.nx - 1)

    def build(self):
        return build_grid(self.nx, self.ny, self.domain, self.extent)


@dataclass
class ExperimentSpec:
    grid: GridSpec
    pinning: PinningSpec = field(default_factory=PinningSpec)
    eps: list = field(default_factory=list)
    hex: list = field(default_factory=list)
    hex_scale: str = "absolute"
    starts: list = field(default_factory=lambda: ["meissner", "vortex"])
    beta: float = 0.5
    alpha_cap: float = 0.3
    max_iters: int = 5000
    grad_tol: float = 1e-6
    seed: int = 0
    out: str = ""
    threads: int = 1

    def __post_init__(self):
        if self.grid.domain not in DOMAIN_KINDS:
            raise SpecError(f"unknown domain {self.grid.domain!r}")
        if self.hex_scale not in ("absolute", "hc1"):
            raise SpecError("hex_scale must be 'absolute' or 'hc1'")
        if any(not v > 0 for v in self.hex):
            raise SpecError("hex values must be positive")
        if list(self.hex) != sorted(self.hex):
            raise SpecError("hex values must be sorted")
        for e in self.eps:
            if not 0 < e < 0.5:
                raise SpecError(f"eps = {e} outside (0, 0.5)")
            if self.grid.h > e / 4 * (1 + 1e-9):
                raise SpecError(f"grid spacing {self.grid.h:.4g} does not resolve eps = {e} (need h <= eps/4)")
        bad = [s for s in self.starts if s not in STARTS]
        if bad or not self.starts:
            raise SpecError(f"unknown starts {bad}; choose from {', '.join(STARTS)}")
        if self.threads < 1:
            raise SpecError("threads must be >= 1")
        MinimizeParams(max_iters=self.max_iters, grad_tol=self.grad_tol, beta=self.beta, alpha_cap=self.alpha_cap)

    def params(self) -> MinimizeParams:
        return MinimizeParams(max_iters=self.max_iters, grad_tol=self.grad_tol, beta=self.beta, alpha_cap=self.alpha_cap)


def parse_hex(text: str) -> list:
    """``lo:hi:count`` (inclusive, evenly spaced) or a comma list."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise SpecError(f"hex range must be lo:hi:count, got {text!r}")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise SpecError("hex range count must be >= 1")
        return [lo] if n == 1 else [float(v) for v in np.linspace(lo, hi, n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


_KEY_LINE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")


def _duplicates(text: str, path) -> None:
    seen = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        m = _SECTION_LINE.match(line)
        if m:
            section = m.group(1).strip()
            continue
        m = _KEY_LINE.match(line)
        if m and section is not None:
            k = (section, m.group(1).lower())
            if k in seen:
                raise SpecError(f"{path}: duplicate key {k[1]!r} in [{section}] on lines {seen[k]} and {n}")
            seen[k] = n


def parse_spec_text(text: str, path="<spec>") -> ExperimentSpec:
    _duplicates(text, path)
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise SpecError(f"{path}: line {exc.lineno}: key outside a section: {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise SpecError(f"{path}: line {lineno}: malformed line {line.strip()!r}") from None
    lines = {}
    for n, line in enumerate(text.splitlines(), 1):
        m = _KEY_LINE.match(line)
        if m:
            lines.setdefault(m.group(1).lower(), n)
    values = {}
    for sec in cp.sections():
        if sec not in ("grid", "pinning", "sweep"):
            raise SpecError(f"{path}: unknown section [{sec}]")
        for key, val in cp.items(sec):
            if (sec, key) not in SPEC_KEYS:
                raise SpecError(f"{path}: line {lines.get(key, '?')}: unknown key {key!r} in [{sec}]")
            values[(sec, key)] = val.strip()

    def get(sec, key):
        if (sec, key) in values:
            return values[(sec, key)]
        return SPEC_KEYS[(sec, key)][0]

    try:
        n = get("grid", "n")
        nx = get("grid", "nx") or n
        ny = get("grid", "ny") or n
        if nx is None or ny is None:
            raise SpecError(f"{path}: [grid] needs n or nx/ny")
        grid = GridSpec(int(nx), int(ny), get("grid", "domain"), float(get("grid", "extent")))
        kind = get("pinning", "kind")
        if kind not in PINNING_KINDS:
            raise SpecError(f"{path}: unknown pinning kind {kind!r}")
        center = get("pinning", "center")
        pin = PinningSpec(
            kind=kind,
            b=float(get("pinning", "b")),
            level=float(get("pinning", "level")),
            period=float(get("pinning", "period")),
            radius=float(get("pinning", "radius")),
            center=tuple(_floats(center)) if center else None,
            seed=int(get("pinning", "seed")),
            count=int(get("pinning", "count")),
        )
        eps = get("sweep", "eps")
        hexs = get("sweep", "hex")
        if eps is None or hexs is None:
            raise SpecError(f"{path}: [sweep] needs eps and hex")
        return ExperimentSpec(
            grid=grid,
            pinning=pin,
            eps=_floats(eps),
            hex=parse_hex(hexs),
            hex_scale=get("sweep", "hex_scale"),
            starts=[s.strip() for s in get("sweep", "starts").split(",") if s.strip()],
            beta=float(get("sweep", "beta")),
            alpha_cap=float(get("sweep", "alpha_cap")),
            max_iters=int(get("sweep", "max_iters")),
            grad_tol=float(get("sweep", "grad_tol")),
            seed=int(get("sweep", "seed")),
            out=get("sweep", "out"),
            threads=int(get("sweep", "threads")),
        )
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(f"{path}: {exc}") from None


def parse_spec(path) -> ExperimentSpec:
    p = Path(path)
    if not p.is_file():
        raise SpecError(f"spec file not found: {path}")
    return parse_spec_text(p.read_text(), p)


# ---------------------------------------------------------------- sweep


@dataclass
class SweepRow:
    eps: float
    hex: float
    start: str
    final_energy: float
    meissner_energy: float
    delta: float
    total_degree: int
    ball_count: int
    F_weighted: float
    vortexless: bool
    wall_time: float
    status: str = "ok"


COLUMNS = [f.name for f in fields(SweepRow)]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION + "\n")
    buf.write(",".join(COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(getattr(r, c)) for c in COLUMNS) + "\n")
    return buf.getvalue()


def determinism_hash(rows) -> str:
    """sha256 of the CSV without the wall_time column."""
    keep = [c for c in COLUMNS if c != "wall_time"]
    h = hashlib.sha256()
    h.update((CSV_VERSION + "\n" + ",".join(keep) + "\n").encode())
    for r in rows:
        h.update((",".join(_fmt(getattr(r, c)) for c in keep) + "\n").encode())
    return h.hexdigest()


def start_config(state: MeissnerState, start: str, hex: float, seed: int = 0):
    """Full configuration for a named start."""
    if start == "meissner":
        split = make_meissner_config(state, hex)
    elif start == "vortex":
        split = make_vortex_config(state, hex=hex)
    elif start == "random":
        split = random_config(state.grid, state.eps, hex, seed=seed)
    else:
        raise ValueError(f"unknown start {start!r}")
    return assemble(split, state)


def analyze(cfg, state: MeissnerState) -> dict:
    """Vortex content of a full configuration, read off its split pair."""
    s = split_pair(cfg, state)
    comps = bad_set(s.u, state.eps)
    balls = initial_balls(s.u, s.A, state.rho, state.eps) if comps else None
    return {
        "total_degree": int(sum(c.degree for c in comps)),
        "ball_count": len(balls.balls) if balls is not None else 0,
        "F_weighted": free_energy_weighted(s.u, s.A, state.rho, state.eps),
        "vortexless": not comps,
    }


def run_row(state: MeissnerState, a, hex: float, start: str, params: MinimizeParams, seed: int = 0) -> SweepRow:
    t0 = time.perf_counter()
    M = meissner_energy(state, hex)
    try:
        cfg, trace = minimize_gl(start_config(state, start, hex, seed), a, params)
        E = gl_energy(cfg, a).total
        info = analyze(cfg, state)
        status = "ok" if trace.converged else f"not_converged:{trace.reason}"
        return SweepRow(state.eps, hex, start, E, M, E - M, wall_time=time.perf_counter() - t0, status=status, **info)
    except Exception as exc:  # recorded, the sweep continues
        msg = re.sub(r"[,\n]", ";", f"{type(exc).__name__}: {exc}")
        nan = float("nan")
        return SweepRow(state.eps, hex, start, nan, M, nan, 0, 0, nan, False, time.perf_counter() - t0, "error:" + msg)


def _job(args):
    return run_row(*args)


@dataclass
class Onset:
    eps: float
    hc1: float
    branch: str
    lo: float | None
    hi: float | None
    hex_range: tuple

    @property
    def found(self) -> bool:
        return self.lo is not None and self.hi is not None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi) if self.found else float("nan")

    @property
    def width(self) -> float:
        return self.hi - self.lo if self.found else float("nan")

    @property
    def ratio(self) -> float:
        return self.midpoint / self.hc1 if self.found else float("nan")

    def within(self, tol: float) -> bool:
        """Both bracket ends inside [(1 - tol) hc1, (1 + tol) hc1]."""
        return self.found and (1 - tol) * self.hc1 <= self.lo and self.hi <= (1 + tol) * self.hc1


def _bracket(flags):
    """(last vortexless hex before the first vortical one, first vortical hex)."""
    for k, (hx, vortexless) in enumerate(flags):
        if not vortexless:
            if k == 0:
                return None, hx
            return flags[k - 1][0], hx
    return None, None


def onset_estimates(rows, hc1_by_eps: dict) -> list:
    """Onset brackets from the Meissner-start branch and from the lowest-energy start."""
    out = []
    for eps in sorted(hc1_by_eps):
        mine = [r for r in rows if r.eps == eps and r.status != "error" and not r.status.startswith("error")]
        hexs = sorted({r.hex for r in mine})
        rng = (hexs[0], hexs[-1]) if hexs else (float("nan"), float("nan"))
        m = [(r.hex, r.vortexless) for r in sorted(mine, key=lambda r: r.hex) if r.start == "meissner"]
        lo, hi = _bracket(m)
        out.append(Onset(eps, hc1_by_eps[eps], "meissner", lo, hi, rng))
        best = []
        for hx in hexs:
            cands = [r for r in mine if r.hex == hx and math.isfinite(r.final_energy)]
            if cands:
                b = min(cands, key=lambda r: (r.final_energy, STARTS.index(r.start)))
                best.append((hx, b.vortexless))
        lo, hi = _bracket(best)
        out.append(Onset(eps, hc1_by_eps[eps], "lowest_energy", lo, hi, rng))
    return out


@dataclass
class SweepResult:
    rows: list
    states: dict
    onsets: list
    csv: str
    hash: str


def run_sweep(spec: ExperimentSpec, threads: int | None = None) -> SweepResult:
    """Run every (eps, hex, start) of the spec; rows sorted by (eps, hex, start)."""
    grid = spec.grid.build()
    a = make_pinning(spec.pinning, grid)
    params = spec.params()
    states = {}
    jobs = []
    for eps in spec.eps:
        st = build_meissner(a, eps)
        states[eps] = st
        scale = st.hc1 if spec.hex_scale == "hc1" else 1.0
        for hx in spec.hex:
            for start in spec.starts:
                jobs.append((st, a, float(hx * scale), start, params, spec.seed))
    n = threads if threads is not None else spec.threads
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    rows.sort(key=lambda r: (r.eps, r.hex, r.start))
    onsets = onset_estimates(rows, {e: s.hc1 for e, s in states.items()})
    csv = rows_to_csv(rows)
    result = SweepResult(rows, states, onsets, csv, determinism_hash(rows))
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(csv)
        (out / "summary.txt").write_text(report(rows, states, onsets) + f"\ndeterminism hash {result.hash}\n")
    return result


def report(rows, states: dict, onsets: list | None = None) -> str:
    """Text summary: hc1, onset brackets, onset/hc1 and the trend across eps."""
    if onsets is None:
        onsets = onset_estimates(rows, {e: s.hc1 for e, s in states.items()})
    lines = []
    trend = []
    for eps in sorted(states):
        st = states[eps]
        lines.append(f"eps = {eps:g}")
        lines.append(f"  hc1 = {st.hc1:.6g}  (max psi = {st.max_psi:.6g} at ({st.argmax[0]:.4g}, {st.argmax[1]:.4g}))")
        for o in onsets:
            if o.eps != eps:
                continue
            label = "meissner start" if o.branch == "meissner" else "lowest energy "
            if o.found:
                lines.append(
                    f"  onset [{label}]: [{o.lo:.6g}, {o.hi:.6g}], midpoint {o.midpoint:.6g}, "
                    f"width {o.width:.4g}, onset/hc1 = {o.ratio:.4g}"
                )
                if o.branch == "lowest_energy":
                    trend.append((eps, o))
            elif o.hi is not None:
                lines.append(f"  onset [{label}]: at or below {o.hi:.6g} (first hex already vortical)")
            else:
                lines.append(f"  onset [{label}]: onset outside range [{o.hex_range[0]:.6g}, {o.hex_range[1]:.6g}]")
        failed = [r for r in rows if r.eps == eps and r.status != "ok"]
        if failed:
            lines.append(f"  {len(failed)} row(s) not ok")
    if len(trend) > 1:
        parts = []
        for eps, o in trend:
            llog = math.log(abs(math.log(eps)))
            parts.append(f"eps={eps:g}: (onset - hc1)/log|log eps| = {(o.midpoint - o.hc1) / llog:.4g}")
        lines.append("trend: " + "; ".join(parts))
    return "\n".join(lines)
