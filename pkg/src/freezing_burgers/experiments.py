"""Experiment drivers: long freezing runs, spatial convergence studies, CFL
violation demonstrations, physical-frame round trips and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FreezingError
from .freezing import DEFAULT_CFL, FreezingProblem
from .imex import RunResult, integrate
from .limiter import LimiterConfig
from .mesh import Grid, build_grid, cell_average_init, grid_for_spacing
from .verification import fit_order

log = logging.getLogger(__name__)

INITIALS = ("sine-bump-1d", "sine-bump-2d", "expression")
PHASE_ALIASES = {"orth": "orthogonal", "orthogonal": "orthogonal", "fixed": "fixed", "none": "none"}
DEFAULT_SNAPSHOTS = 50
BLOWUP_FACTOR = 1e6


# -- initial data --------------------------------------------------------------


def sine_bump_1d(x):
    """``sin(2x)`` on ``[-pi/2, 0)``, ``sin(x)`` on ``[0, pi]``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    left = (x >= -np.pi / 2) & (x < 0)
    right = (x >= 0) & (x <= np.pi)
    return np.where(left, np.sin(2 * x), 0.0) + np.where(right, np.sin(x), 0.0)


def sine_bump_2d(x, y):
    """The 1D profile in ``x`` times ``cos(y)`` on ``|y| < pi/2``."""
    y = np.asarray(y, dtype=float)
    return sine_bump_1d(x) * np.where(np.abs(y) < np.pi / 2, np.cos(y), 0.0)


_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "where", "pi", "e",
                 "maximum", "minimum", "sign", "heaviside")
}


def expression_initial(expr: str, dim: int):
    """Compile a numpy expression in ``x`` (and ``y``) into an initial function."""
    if not expr.strip():
        raise ConfigError("initial=expression needs a non-empty 'expression' key")
    try:
        code = compile(expr, "<expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc.msg}") from exc
    allowed = set(_EXPR_NAMES) | ({"x"} if dim == 1 else {"x", "y"})
    unknown = set(code.co_names) - allowed
    if unknown:
        raise ConfigError(f"expression uses unknown names {sorted(unknown)}")

    def func(*coords):
        env = dict(_EXPR_NAMES)
        env["x"] = coords[0]
        if dim == 2:
            env["y"] = coords[1]
        return eval(code, {"__builtins__": {}}, env)

    return func


# -- configuration -----------------------------------------------------------


@dataclass
class RunConfig:
    dim: int = 1
    nu: float = 0.4
    p: float | None = None
    a: tuple | None = None
    bounds: tuple = (-5.0, 5.0)
    nx: tuple | None = None
    dx: float = 0.05
    cfl: float | None = None
    theta: float = 1.5
    phase: str = "orthogonal"
    tau_end: float = 10.0
    initial: str | None = None
    expression: str = ""
    reference_expression: str = ""
    out: str = "out"
    snapshots: int = DEFAULT_SNAPSHOTS
    grids: tuple = (0.2, 0.1, 0.05, 0.025)
    ref_factor: int = 4
    policy: str = "hysteresis"
    stop_when_stationary: bool = False
    solver: str = "auto"
    max_steps: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if self.p is None:
            self.p = (self.dim + 1.0) / self.dim
        if self.a is None:
            self.a = (1.0,) * self.dim
        self.a = tuple(float(x) for x in np.atleast_1d(self.a))
        if self.initial is None:
            self.initial = "sine-bump-1d" if self.dim == 1 else "sine-bump-2d"
        if self.initial not in INITIALS:
            raise ConfigError(f"initial must be one of {INITIALS}, got {self.initial!r}")
        if self.phase not in PHASE_ALIASES:
            raise ConfigError(f"phase must be one of {sorted(PHASE_ALIASES)}, got {self.phase!r}")
        self.phase = PHASE_ALIASES[self.phase]
        if self.cfl is None:
            self.cfl = DEFAULT_CFL[self.dim]
        if self.tau_end < 0:
            raise ConfigError("tau_end must be non-negative")
        if self.snapshots < 1:
            raise ConfigError("snapshots must be at least 1")
        if self.ref_factor < 2:
            raise ConfigError("ref_factor must be at least 2")
        if self.policy not in ("hysteresis", "every-step"):
            raise ConfigError(f"unknown step-size policy {self.policy!r}")
        self.grids = tuple(float(g) for g in np.atleast_1d(self.grids))
        self.bounds = tuple(float(b) for b in np.atleast_1d(self.bounds))
        if len(self.bounds) not in (2, 2 * self.dim):
            raise ConfigError("bounds needs lo,hi (or lo,hi per axis)")

    def axis_bounds(self):
        b = np.asarray(self.bounds, dtype=float)
        return b.reshape(-1, 2) if b.size == 2 * self.dim else np.tile(b, (self.dim, 1))

    def grid(self, dx: float | None = None) -> Grid:
        if dx is None and self.nx is not None:
            return build_grid(self.dim, self.axis_bounds(), list(self.nx))
        return grid_for_spacing(self.dim, self.axis_bounds(), self.dx if dx is None else dx)

    def initial_function(self):
        if self.initial == "sine-bump-1d":
            if self.dim != 1:
                raise ConfigError("sine-bump-1d initial data needs dim=1")
            return sine_bump_1d
        if self.initial == "sine-bump-2d":
            if self.dim != 2:
                raise ConfigError("sine-bump-2d initial data needs dim=2")
            return sine_bump_2d
        return expression_initial(self.expression, self.dim)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}
_TUPLE_KEYS = {"a", "bounds", "nx", "grids"}
_INT_KEYS = {"dim", "snapshots", "ref_factor", "max_steps", "workers"}
_STR_KEYS = {"phase", "initial", "expression", "reference_expression", "out", "policy", "solver"}
_BOOL_KEYS = {"stop_when_stationary"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _STR_KEYS:
            return raw
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if raw.lower() in ("none", ""):
            return None
        if key in _TUPLE_KEYS:
            conv = int if key == "nx" else float
            return tuple(conv(x) for x in raw.replace(",", " ").split())
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, defaults: dict | None = None, **overrides) -> RunConfig:
    """Build a config from ``defaults``, then the file at ``path``, then ``overrides``
    (``None`` values in ``overrides`` are ignored)."""
    values = dict(defaults or {})
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        values.update(parse_config_text(text, str(path)))
    for key, val in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = val
    return RunConfig(**values)


def build_problem(config: RunConfig, grid: Grid | None = None, phase: str | None = None):
    """Problem and flattened initial cell values.

    The fixed phase uses ``reference_expression`` as reference profile, or the
    initial cell values when that is empty.
    """
    grid = config.grid() if grid is None else grid
    v0 = cell_average_init(grid, config.initial_function()).flat
    phase = config.phase if phase is None else phase
    reference = None
    if phase == "fixed":
        reference = v0
        if config.reference_expression.strip():
            reference = cell_average_init(grid, expression_initial(config.reference_expression, config.dim)).flat
    problem = FreezingProblem(
        grid=grid, nu=config.nu, p=config.p, a=config.a, limiter=LimiterConfig(config.theta),
        phase=phase, reference=reference, cfl=config.cfl,
    )
    return problem, v0


# -- output ------------------------------------------------------------------


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def scalar_header(dim: int) -> list:
    b = ["b"] if dim == 1 else [f"b{j + 1}" for j in range(dim)]
    mu = [f"mu{j + 1}" for j in range(dim + 1)]
    return ["step", "tau", "dtau", "t", "alpha", *b, *mu, "res_phase", "mass"]


def scalar_row(rec) -> list:
    return [str(rec.step), *map(_fmt, (rec.tau, rec.dtau, rec.t, rec.alpha)), *map(_fmt, rec.b),
            *map(_fmt, rec.mu), _fmt(rec.res_phase), _fmt(rec.mass)]


@dataclass
class Snapshot:
    tau: float
    step: int
    v: np.ndarray


def _write(path: Path, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def emit_outputs(records, snapshots, grid: Grid | None, out_dir, meta: dict | None = None) -> dict:
    """Write ``scalars.csv``, one CSV per snapshot and ``manifest.json``.

    Returns the manifest.  With no records only the manifest is written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out}: {exc.strerror}") from exc
    manifest = {"meta": dict(meta or {}), "scalars": None, "snapshots": []}
    if records:
        dim = len(records[0].b)
        _write(out / "scalars.csv", [scalar_header(dim)] + [scalar_row(r) for r in records])
        manifest["scalars"] = "scalars.csv"
    if snapshots and grid is not None:
        coords = [c.reshape(-1) for c in grid.mesh()]
        head = ["xi", "v"] if grid.dim == 1 else ["xi1", "xi2", "v"]
        for k, snap in enumerate(snapshots):
            name = f"snapshot_{k:04d}.csv"
            cols = [*coords, np.asarray(snap.v).reshape(-1)]
            _write(out / name, [head] + [[_fmt(x) for x in row] for row in zip(*cols)])
            manifest["snapshots"].append({"file": name, "tau": snap.tau, "step": snap.step})
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_fmt) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {out / 'manifest.json'}: {exc.strerror}") from exc
    return manifest


def read_scalars(path) -> dict:
    """Parse a scalar CSV back into float columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], rows[1:]
    return {name: np.array([float(r[k]) for r in data]) for k, name in enumerate(head)}


# -- single runs -------------------------------------------------------------


class SnapshotRecorder:
    """Keeps the first state at or after each of ``n`` evenly spaced instants."""

    def __init__(self, tau_end: float, n: int = DEFAULT_SNAPSHOTS):
        self.targets = [0.0] if tau_end == 0 else list(np.linspace(0.0, tau_end, n))
        self.snaps = []

    def __call__(self, rec, state):
        while self.targets and rec.tau >= self.targets[0] * (1 - 1e-12):
            self.targets.pop(0)
            if not self.snaps or self.snaps[-1].step != rec.step:
                self.snaps.append(Snapshot(rec.tau, rec.step, state.v.copy()))


@dataclass
class RunOutcome:
    status: int
    result: RunResult | None
    snapshots: list = field(default_factory=list)
    manifest: dict | None = None
    error: str | None = None


def run_experiment(config: RunConfig, write: bool = True) -> RunOutcome:
    """One freezing run with scalar series and field snapshots.

    Integrator failures are logged with context and reported through a
    nonzero status.
    """
    problem, v0 = build_problem(config)
    recorder = SnapshotRecorder(config.tau_end, config.snapshots)
    meta = {"config": {k: v for k, v in dataclasses.asdict(config).items()}}
    try:
        result = integrate(problem, v0, config.tau_end, callbacks=[recorder], policy=config.policy,
                           stop_when_stationary=config.stop_when_stationary, max_steps=config.max_steps,
                           solver=config.solver)
    except FreezingError as exc:
        log.error("run failed: %s", exc)
        return RunOutcome(1, None, recorder.snaps, None, str(exc))
    last = result.records[-1]
    if recorder.snaps[-1].step != last.step:
        recorder.snaps.append(Snapshot(last.tau, last.step, result.state.v.copy()))
    meta.update(n_steps=result.n_steps, reason=result.reason, alpha=result.state.alpha,
                b=list(result.state.b), t=result.state.t, mu=list(result.state.mu))
    manifest = None
    if write:
        manifest = emit_outputs(result.records, recorder.snaps, problem.grid, config.out, meta)
    return RunOutcome(0, result, recorder.snaps, manifest)


# -- convergence studies -------------------------------------------------------


def coarsen(fine: np.ndarray, fine_shape, coarse_shape) -> np.ndarray:
    """Exact cell-average aggregation of nested fine cells onto a coarse grid."""
    fine = np.asarray(fine, dtype=float).reshape(fine_shape)
    ratios = []
    for mf, mc in zip(fine_shape, coarse_shape):
        if mf % mc:
            raise ValueError(f"grids are not nested: {mf} fine cells vs {mc} coarse cells")
        ratios.append(mf // mc)
    shape = []
    for mc, r in zip(coarse_shape, ratios):
        shape += [mc, r]
    axes = tuple(range(1, 2 * len(ratios), 2))
    return fine.reshape(shape).mean(axis=axes)


@dataclass
class ConvergenceReport:
    dx: list
    errors: dict
    slopes: dict
    reference: dict
    phase: str

    def table(self) -> list:
        keys = list(self.errors)
        return [["dx", *[f"err_{k}" for k in keys]]] + [
            [_fmt(h), *[_fmt(self.errors[k][i]) for k in keys]] for i, h in enumerate(self.dx)
        ]


def _final_run(args):
    config, dx, tau_end = args
    problem, v0 = build_problem(config, config.grid(dx))
    res = integrate(problem, v0, tau_end, policy=config.policy, stop_when_stationary=False,
                    keep_records=False, solver=config.solver)
    s = res.state
    return problem.grid.shape, s.v, s.mu, s.alpha, np.asarray(s.b), s.t


def convergence_study(config: RunConfig, tau_end: float = 1.0) -> ConvergenceReport:
    """Errors at ``tau_end`` of every grid in ``config.grids`` against a run on
    ``min(grids) / ref_factor``, and their fitted orders.

    ``v`` errors use the discrete L2 norm after coarsening the reference by
    cell averages; ``mu`` the max norm; ``t`` the absolute value; ``g`` the
    larger of the ``alpha`` and ``b`` deviations.
    """
    dxs = list(config.grids)
    if len(dxs) < 2:
        raise ConfigError("a convergence study needs at least two grids")
    if any(b >= a for a, b in zip(dxs, dxs[1:])):
        raise ConfigError(f"grid list must be strictly refining, got {dxs}")
    ref_dx = min(dxs) / config.ref_factor
    jobs = [(config, ref_dx, tau_end)] + [(config, dx, tau_end) for dx in dxs]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            runs = list(pool.map(_final_run, jobs))
    else:
        runs = [_final_run(j) for j in jobs]
    (rshape, rv, rmu, ralpha, rb, rt), runs = runs[0], runs[1:]
    errors = {"v": [], "v_sq": [], "mu": [], "t": [], "g": []}
    for dx, (shape, v, mu, alpha, b, t) in zip(dxs, runs):
        vol = dx ** config.dim
        diff = v.reshape(shape) - coarsen(rv, rshape, shape)
        errors["v_sq"].append(float(vol * np.sum(diff**2)))
        errors["v"].append(math.sqrt(errors["v_sq"][-1]))
        errors["mu"].append(float(np.max(np.abs(mu - rmu))))
        errors["t"].append(abs(t - rt))
        errors["g"].append(float(max(abs(alpha - ralpha), np.max(np.abs(b - rb)))))
    slopes = {k: fit_order(dxs, e) for k, e in errors.items()}
    reference = {"dx": ref_dx, "alpha": ralpha, "b": rb.tolist(), "t": rt, "mu": rmu.tolist()}
    return ConvergenceReport(dxs, errors, slopes, reference, config.phase)


# -- CFL violation -------------------------------------------------------------


def oscillation_count(v, rel_tol: float = 1e-8) -> int:
    """Sign changes between successive nonzero cell differences (1D)."""
    d = np.diff(np.asarray(v, dtype=float).reshape(-1))
    scale = float(np.max(np.abs(v))) if np.size(v) else 0.0
    if scale == 0.0:
        return 0
    s = np.sign(d[np.abs(d) > rel_tol * scale])
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass
class CflReport:
    """Oscillation and max-norm history of a CFL experiment.

    ``max_norm`` is ``max|v|`` in the co-moving frame; ``physical_max_norm`` is
    ``max|u| = max|v| / alpha``, the quantity bounded by the maximum principle.
    """

    cfl: float
    tau: list
    oscillations: list
    max_norm: list
    physical_max_norm: list
    aborted: bool
    reason: str
    initial_count: int
    initial_max: float

    @property
    def final_count(self) -> int:
        return self.oscillations[-1]

    @property
    def peak_count(self) -> int:
        return max(self.oscillations)


class _BlowUp(Exception):
    pass


def cfl_violation_demo(cfl: float = 1.2, nu: float = 0.0, dx: float = 0.1, tau_end: float = 1.0,
                       bounds=(-5.0, 5.0), theta: float = 1.5, initial=sine_bump_1d) -> CflReport:
    """Run the 1D freezing system with a (possibly too large) CFL number.

    Blow-up (non-finite values, a failed step, or ``max|v|`` exceeding
    ``BLOWUP_FACTOR`` times its initial value) ends the run and is reported.
    """
    grid = grid_for_spacing(1, bounds, dx)
    v0 = cell_average_init(grid, initial).flat
    problem = FreezingProblem(grid=grid, nu=nu, p=2.0, a=(1.0,), limiter=LimiterConfig(theta), cfl=cfl)
    vmax0 = float(np.max(np.abs(v0)))
    taus, counts, norms, phys = [], [], [], []

    def watch(rec, state):
        vm = float(np.max(np.abs(state.v)))
        taus.append(rec.tau)
        counts.append(oscillation_count(state.v))
        norms.append(vm)
        phys.append(vm / state.alpha)
        if vm > BLOWUP_FACTOR * max(vmax0, 1e-300):
            raise _BlowUp(f"max|v| = {vm:.3e} at tau = {rec.tau:.4g}")

    aborted, reason = False, "tau_end"
    try:
        integrate(problem, v0, tau_end, callbacks=[watch], stop_when_stationary=False, keep_records=False)
    except (_BlowUp, FreezingError) as exc:
        aborted, reason = True, str(exc)
    if not taus:
        taus, counts, norms, phys = [0.0], [oscillation_count(v0)], [vmax0], [vmax0]
    return CflReport(cfl, taus, counts, norms, phys, aborted, reason, oscillation_count(v0), vmax0)


# -- physical-frame round trip -------------------------------------------------


def smooth_initial(x):
    return np.exp(-x**2)


def reconstruct(v, grid: Grid, alpha: float, b, p: float, x) -> np.ndarray:
    """``u(x) = v((x - b) / alpha^(p-1)) / alpha`` by linear interpolation (1D)."""
    xi = (np.asarray(x) - float(np.atleast_1d(b)[0])) / alpha ** (p - 1.0)
    return np.interp(xi, grid.centers(0), np.asarray(v).reshape(-1), left=0.0, right=0.0) / alpha


@dataclass
class RoundTripReport:
    dx: list
    errors: list
    slope: float
    times: list


def round_trip_study(dxs=(0.025, 0.0125, 0.00625, 0.003125), nu: float = 0.4, tau_end: float = 0.2, bounds=(-6.0, 6.0),
                     initial=smooth_initial, cfl: float = 1.0 / 3.0) -> RoundTripReport:
    """Freeze to ``tau_end``, map back to the physical frame and compare with a
    direct (``mu = 0``) run to the same physical time on the same grid."""
    errors, times = [], []
    for dx in dxs:
        grid = grid_for_spacing(1, bounds, dx)
        v0 = cell_average_init(grid, initial).flat
        frozen = FreezingProblem(grid=grid, nu=nu, p=2.0, cfl=cfl)
        res = integrate(frozen, v0, tau_end, stop_when_stationary=False, keep_records=False, policy="every-step")
        s = res.state
        direct = FreezingProblem(grid=grid, nu=nu, p=2.0, phase="none", cfl=cfl)
        plain = integrate(direct, v0, s.t, stop_when_stationary=False, keep_records=False, policy="every-step")
        x = grid.centers(0)
        u = reconstruct(s.v, grid, s.alpha, s.b, 2.0, x)
        errors.append(float(np.sqrt(dx * np.sum((u - plain.state.v) ** 2))))
        times.append(s.t)
    return RoundTripReport(list(dxs), errors, fit_order(dxs, errors), times)


def cpu_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
