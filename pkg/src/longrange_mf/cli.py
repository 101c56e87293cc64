"""Command-line front end.

    longrange-mf [--config FILE] <command> [--output PATH] [--format csv|json]
                 [--emit-plot PREFIX] [--seed N] [options]

Commands: ``phase potts``, ``phase bc``, ``infrared``, ``rp-check``,
``mc run`` and ``mc hysteresis``.  Exit status is 0 on success, 1 when an
input violates a precondition and 2 when a numerical routine fails.

Every output starts with one metadata line
``# version=... command=... config={...} seed=...``; CSV floats are written
with ``repr`` so re-parsing recovers them exactly.  A config file is an INI
file with one section per command (``[phase potts]``, ``[mc run]``, ...)
whose keys are the long option names without dashes prefix, e.g.
``h-grid = 0.01:0.1:5``.  Command-line options override the file.

The worker count for parameter sweeps is read from LONGRANGE_MF_WORKERS.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import __version__
from . import mf_blume_capel as bc
from . import mf_potts as potts
from .couplings import family_from_spec, normalize, periodize, random_half_space_function, rp_quadratic_form
from .errors import NumericalFailure, ParameterOutOfRange
from .infrared import QuadratureSpec, integral_I
from .torus_mc import BlumeCapel, Potts, build_state, check_bounds, hysteresis_scan, measure, restore, sweep

RP_TOL = 1e-10


class UsageError(ParameterOutOfRange):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# parsing helpers


def parse_grid(text: str) -> np.ndarray:
    """'a:b:n' gives n evenly spaced points from a to b inclusive; 'x,y,z' a list."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must look like a:b:n")
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise UsageError(f"grid {text!r} needs n >= 1")
        return np.array([a]) if n == 1 else np.linspace(a, b, n)
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise UsageError(f"cannot parse numeric list {text!r}") from exc


def workers() -> int:
    raw = os.environ.get("LONGRANGE_MF_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"LONGRANGE_MF_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("LONGRANGE_MF_WORKERS must be >= 1")
    return n


def _map(fn, items):
    # rows stay in parameter order regardless of completion order
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# output


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)
    plot: dict | None = None  # {"x": col, "y": [cols], "xlabel", "ylabel", "logy"}
    failed: bool = False  # output written but the check it reports did not hold


def _json_safe(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metadata_line(command: str, config: dict, seed) -> str:
    cfg = json.dumps(_json_safe(config), sort_keys=True, separators=(",", ":"))
    return f"# version={__version__} command={command} config={cfg} seed={seed}"


def render(table: Table, fmt: str, meta: str) -> str:
    if fmt == "json":
        doc = {"metadata": meta[2:], "columns": table.columns,
               "rows": _json_safe(table.rows), "summary": _json_safe(table.summary)}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write(meta + "\n")
    if table.summary:
        buf.write("# summary=" + json.dumps(_json_safe(table.summary), sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list, list]:
    """Parse CLI CSV output back into (columns, rows of floats or strings)."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader)
    rows = []
    for r in reader:
        out = []
        for v in r:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
        rows.append(out)
    return columns, rows


def _emit_plot(prefix: str, table: Table, meta: str) -> None:
    from .plotting import line_plot, write_dat

    write_dat(prefix + ".dat", table.columns, table.rows, header=meta[2:])
    spec = table.plot
    if not spec or not table.rows:
        return
    idx = {c: i for i, c in enumerate(table.columns)}
    x = np.array([r[idx[spec["x"]]] for r in table.rows], dtype=float)
    series = {c: np.array([r[idx[c]] for r in table.rows], dtype=float) for c in spec["y"]}
    line_plot(prefix + ".png", x, series, spec.get("xlabel", spec["x"]), spec.get("ylabel", ""),
              spec.get("title", ""), spec.get("logy", False))


# ---------------------------------------------------------------------------
# phase potts


def _potts_zero_field(q: int) -> list:
    ce = potts.critical_endpoint(q)
    return [q, potts.beta_mf(q), potts.m_mf_at_transition(q), ce.beta0, ce.hc, ce.hc_log_q]


def _potts_h_row(q: int, h: float) -> list:
    if h > 0:
        pt = potts.beta_plus(q, h)
    elif h < 0:
        pt = potts.beta_minus(q, h)
    else:
        b = potts.beta_mf(q)
        th = (q - 2) / (q - 1)
        xs, xa = potts.onaxis_x(q, 0.0), potts.onaxis_x(q, th)
        return [q, 0.0, b, 0.0, th, float(xs[0]), float(xa[0]), float(xs @ xs), float(xa @ xa), math.nan]
    slope = potts.clausius_clapeyron(q, pt)
    return [q, float(h), pt.beta_t, pt.theta_low, pt.theta_high, pt.x1_low, pt.x1_high, pt.e_S, pt.e_A, 1.0 / slope]


def cmd_phase_potts(a) -> Table:
    if a.q is None:
        raise UsageError("--q is required")
    if a.q < 3:
        raise UsageError("--q must be >= 3")
    if a.zero_field == (a.h_grid is not None):
        raise UsageError("give exactly one of --h-grid or --zero-field")
    if a.zero_field:
        row = _potts_zero_field(a.q)
        cols = ["q", "beta_mf", "m_mf", "beta0", "hc", "hc_log_q"]
        return Table(cols, [row], summary=potts.critical_endpoint(a.q).metadata())
    hs = parse_grid(a.h_grid)
    rows = _map(partial(_potts_h_row, a.q), [float(h) for h in hs])
    cols = ["q", "h", "beta_t", "theta_low", "theta_high", "x1_low", "x1_high", "e_S", "e_A", "dbeta_dh"]
    return Table(cols, rows, plot={"x": "h", "y": ["beta_t"], "xlabel": "h", "ylabel": "beta_t",
                                   "title": f"Potts q={a.q} coexistence line"})


# ---------------------------------------------------------------------------
# phase bc


def _bc_row(beta: float, C: float) -> list:
    lam = bc.lambda_t(beta)
    reports = {r.dominant: r for r in bc.stationary_branches(beta, lam)}
    if 0 not in reports or 1 not in reports:
        raise NumericalFailure(f"branch lost at beta={beta}")
    z, p = reports[0].minimizer, reports[1].minimizer
    gap = bc.boundary_gap(beta, lam, C)
    scale = C * math.log(C) * math.exp(-beta)
    return [beta, lam, reports[0].phi, reports[1].phi, z.x1, z.x0, z.xm1, p.x1, p.x0, p.xm1, gap, gap / scale]


def cmd_phase_bc(a) -> Table:
    if a.beta_grid is None:
        raise UsageError("--beta-grid is required")
    betas = parse_grid(a.beta_grid)
    if np.any(betas < 8):
        raise UsageError("--beta-grid values must be >= 8")
    rows = _map(partial(_bc_row, C=a.gap_C), [float(b) for b in betas])
    cols = ["beta", "lambda_t", "phi0", "phi1", "x0_branch_x1", "x0_branch_x0", "x0_branch_xm1",
            "x1_branch_x1", "x1_branch_x0", "x1_branch_xm1", "boundary_gap", "gap_ratio"]
    for r in rows:
        r.append(r[1] * math.exp(r[0]))
    cols.append("lambda_t_scaled")
    return Table(cols, rows, plot={"x": "beta", "y": ["lambda_t_scaled"], "xlabel": "beta",
                                   "ylabel": "lambda_t e^beta", "title": "Blume-Capel transition line"})


# ---------------------------------------------------------------------------
# couplings


_FAMILY_PARAMS = {"yukawa": ("mu",), "powerlaw": ("s",), "nn": ("lam", "kappa")}


def _family_key(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    if key in ("nnn", "nearest"):
        key = "nn"
    if key == "power":
        key = "powerlaw"
    if key not in _FAMILY_PARAMS:
        raise UsageError(f"unknown family {name!r}; use nn, yukawa or powerlaw")
    return key


def _param_sets(a) -> list[dict]:
    key = _family_key(a.family)
    if key == "nn":
        lams = parse_grid(a.lam) if a.lam else np.array([1.0])
        kappas = parse_grid(a.kappa) if a.kappa else np.array([0.0])
        return [{"lam": float(l), "kappa": float(k)} for l in lams for k in kappas]
    name = _FAMILY_PARAMS[key][0]
    raw = getattr(a, name) or a.param_grid
    if raw is None:
        raise UsageError(f"--{name} (or --param-grid) is required for family {key}")
    return [{name: float(v)} for v in parse_grid(raw)]


def _infrared_row(job) -> list:
    key, d, params, spec = job
    nc = normalize(family_from_spec(key, d, **params))
    rep = integral_I(nc, spec)
    vals = [params.get(p, math.nan) for p in ("mu", "s", "lam", "kappa")]
    return [key, d, *vals, rep.I_value, rep.W_value, rep.error_estimate, rep.smallness_delta, rep.smallness_C, rep.l2_norm]


def cmd_infrared(a) -> Table:
    if a.family is None or a.d is None:
        raise UsageError("--family and --d are required")
    key = _family_key(a.family)
    spec = QuadratureSpec(grid_points_per_axis=a.grid_points, refinement_levels=a.levels)
    jobs = [(key, a.d, p, spec) for p in _param_sets(a)]
    rows = _map(_infrared_row, jobs)
    cols = ["family", "d", "mu", "s", "lam", "kappa", "I_value", "W_value", "error_estimate",
            "smallness_delta", "smallness_C", "l2_norm"]
    xcol = {"yukawa": "mu", "powerlaw": "s", "nn": "kappa"}[key]
    return Table(cols, rows, plot={"x": xcol, "y": ["I_value"], "xlabel": xcol, "ylabel": "I",
                                   "title": f"infrared integral, {key}, d={a.d}", "logy": True})


def cmd_rp_check(a) -> Table:
    if a.family is None or a.d is None:
        raise UsageError("--family and --d are required")
    if a.trials < 1:
        raise UsageError("--trials must be >= 1")
    key = _family_key(a.family)
    rows = []
    worst = math.inf
    for params in _param_sets(a):
        nc = normalize(family_from_spec(key, a.d, **params))
        for direction in range(1, a.d + 1):
            rng = np.random.default_rng([a.seed, direction])
            vals = [rp_quadratic_form(nc, random_half_space_function(a.d, direction, rng), direction)
                    for _ in range(a.trials)]
            lo = float(min(vals))
            worst = min(worst, lo)
            rows.append([key, a.d, *[params.get(p, math.nan) for p in ("mu", "s", "lam", "kappa")],
                         direction, a.trials, lo, int(lo >= -RP_TOL)])
    cols = ["family", "d", "mu", "s", "lam", "kappa", "direction", "trials", "min_form", "passed"]
    return Table(cols, rows, summary={"min_form": worst, "tolerance": -RP_TOL}, failed=worst < -RP_TOL)


# ---------------------------------------------------------------------------
# monte carlo


def _kind(a):
    if a.model == "potts":
        if a.q is None:
            raise UsageError("--q is required for the Potts model")
        return Potts(a.q)
    return BlumeCapel()


def _kernel(a):
    if a.L is None:
        raise UsageError("--L is required")
    key = _family_key(a.family)
    params = _param_sets(a)
    if len(params) != 1:
        raise UsageError("Monte Carlo needs a single coupling parameter set")
    nc = normalize(family_from_spec(key, a.d, **params[0]))
    return periodize(nc, a.L)


def cmd_mc_run(a) -> Table:
    if a.beta is None:
        raise UsageError("--beta is required")
    kind = _kind(a)
    kernel = _kernel(a)
    if a.restore:
        state = restore(a.restore, kernel)
        if state.kind != kind:
            raise UsageError(f"dump holds {state.kind}, not {kind}")
    else:
        state = build_state(kernel, kind, a.init, a.seed)
    if a.sweeps > 0:
        sweep(state, a.beta, a.field, a.sweeps)
    rep = measure(state, a.beta, a.field, a.samples, a.thin)
    if a.dump:
        state.dump(a.dump)
    n = kind.n
    start = state.sweep_count - a.samples * a.thin
    rows = []
    ms, es, vs = rep.series["m"], rep.series["e"], rep.series["var_m0"]
    for i in range(rep.samples):
        rows.append([start + (i + 1) * a.thin, *[float(c) for c in ms[i]], float(es[i]), float(vs[i])])
    cols = ["sweep", *[f"m{c + 1}" for c in range(n)], "e", "var_m0"]
    summary = {
        "m_star": rep.m_star, "e_star": rep.e_star, "var_m0": rep.var_m0, "samples": rep.samples,
        "stderr": rep.stderr, "tau_e": rep.tau_e, "acceptance": rep.acceptance,
        "mean_sq_spin": rep.mean_sq_spin, "final_sweep": state.sweep_count,
    }
    if a.check_bounds:
        v = check_bounds(rep, kind, a.beta, a.field, kernel)
        summary["bounds"] = {"fluctuation_lhs": v.fluctuation_lhs, "fluctuation_rhs": v.fluctuation_rhs,
                             "fluctuation_ok": v.fluctuation_ok, "phi_excess": v.phi_excess,
                             "phi_rhs": v.phi_rhs, "phi_ok": v.phi_ok, "I_torus": v.I_torus}
    return Table(cols, rows, summary=summary,
                 plot={"x": "sweep", "y": ["e", "var_m0"], "xlabel": "sweep", "ylabel": "",
                       "title": "Monte Carlo time series"})


def cmd_mc_hysteresis(a) -> Table:
    kind = _kind(a)
    kernel = _kernel(a)
    if a.scan == "beta":
        if a.beta_grid is None:
            raise UsageError("--beta-grid is required for a beta scan")
        grid = parse_grid(a.beta_grid)
        tab = hysteresis_scan(kernel, kind, grid, a.field, a.sweeps_per_point, a.seed, "beta")
    else:
        if a.field_grid is None or a.beta is None:
            raise UsageError("--field-grid and --beta are required for a field scan")
        grid = parse_grid(a.field_grid)
        tab = hysteresis_scan(kernel, kind, grid, 0.0, a.sweeps_per_point, a.seed, "field", fixed_beta=a.beta)
    up, lo = tab.branch("upper"), tab.branch("lower")
    rows = []
    for i, g in enumerate(tab.grid):
        ru, rl = tab.upper[i], tab.lower[i]
        rows.append([float(g), float(up[i]), float(lo[i]), ru.e_star, rl.e_star, float(abs(up[i] - lo[i])),
                     ru.acceptance, rl.acceptance])
    obs = tab.observable
    cols = ["grid", f"upper_{obs}", f"lower_{obs}", "upper_e", "lower_e", "gap", "upper_acceptance",
            "lower_acceptance"]
    return Table(cols, rows, summary={"max_gap": tab.max_gap, "location": tab.max_gap_location, "observable": obs},
                 plot={"x": "grid", "y": [f"upper_{obs}", f"lower_{obs}"], "xlabel": a.scan, "ylabel": obs,
                       "title": "hysteresis scan"})


# ---------------------------------------------------------------------------
# parser


def _add_family(p):
    p.add_argument("--family", default=None, help="nn | yukawa | powerlaw")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--mu", default=None, help="Yukawa decay rate(s), list or a:b:n")
    p.add_argument("--s", default=None, help="power-law exponent(s), list or a:b:n")
    p.add_argument("--lam", default=None, help="nearest-neighbour weight(s)")
    p.add_argument("--kappa", default=None, help="next-nearest weight(s)")
    p.add_argument("--param-grid", default=None, help="grid for the family's main parameter")


def _add_mc(p):
    p.add_argument("--model", choices=["potts", "bc"], default="potts")
    p.add_argument("--q", type=int, default=None)
    _add_family(p)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--field", type=float, default=0.0, help="Potts h or Blume-Capel lam")
    p.set_defaults(d=1, family="powerlaw")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    root = _Parser(prog="longrange-mf", description="Mean-field phase diagrams and torus Monte Carlo "
                                                    "for long-range Potts and Blume-Capel models.")
    root.add_argument("--version", action="version", version=__version__)
    root.add_argument("--config", default=None, help="INI file with one section per command")
    common = _Parser(add_help=False)
    common.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--emit-plot", default=None, metavar="PREFIX", help="also write PREFIX.dat and PREFIX.png")
    common.add_argument("--seed", type=int, default=0)
    sub = root.add_subparsers(dest="group", parser_class=_Parser)
    commands = {}

    phase = sub.add_parser("phase", help="mean-field phase lines")
    psub = phase.add_subparsers(dest="which", parser_class=_Parser)
    pp = psub.add_parser("potts", parents=[common], help="Potts coexistence line")
    pp.add_argument("--q", type=int, default=None)
    pp.add_argument("--h-grid", default=None)
    pp.add_argument("--zero-field", action="store_true")
    pp.set_defaults(func=cmd_phase_potts)
    commands["phase potts"] = pp
    pb = psub.add_parser("bc", parents=[common], help="Blume-Capel transition line")
    pb.add_argument("--beta-grid", default=None)
    pb.add_argument("--gap-C", type=float, default=50.0, help="C in the boundary-gap diagnostic")
    pb.set_defaults(func=cmd_phase_bc)
    commands["phase bc"] = pb

    ir = sub.add_parser("infrared", parents=[common], help="infrared integral over a parameter grid")
    _add_family(ir)
    ir.add_argument("--grid-points", type=int, default=10)
    ir.add_argument("--levels", type=int, default=40)
    ir.set_defaults(func=cmd_infrared)
    commands["infrared"] = ir

    rp = sub.add_parser("rp-check", parents=[common], help="reflection-positivity quadratic forms")
    _add_family(rp)
    rp.add_argument("--trials", type=int, default=100)
    rp.set_defaults(func=cmd_rp_check)
    commands["rp-check"] = rp

    mc = sub.add_parser("mc", help="torus Monte Carlo")
    msub = mc.add_subparsers(dest="which", parser_class=_Parser)
    mr = msub.add_parser("run", parents=[common], help="single chain with time series output")
    _add_mc(mr)
    mr.add_argument("--beta", type=float, default=None)
    mr.add_argument("--sweeps", type=int, default=1000, help="relaxation sweeps before sampling")
    mr.add_argument("--samples", type=int, default=1000)
    mr.add_argument("--thin", type=int, default=1)
    mr.add_argument("--init", choices=["ordered", "disordered", "zero"], default="disordered")
    mr.add_argument("--dump", default=None, help="write the final configuration here")
    mr.add_argument("--restore", default=None, help="start from a dumped configuration")
    mr.add_argument("--check-bounds", action="store_true")
    mr.set_defaults(func=cmd_mc_run)
    commands["mc run"] = mr
    mh = msub.add_parser("hysteresis", parents=[common], help="two annealed chains across a grid")
    _add_mc(mh)
    mh.add_argument("--scan", choices=["beta", "field"], default="beta")
    mh.add_argument("--beta-grid", default=None)
    mh.add_argument("--field-grid", default=None)
    mh.add_argument("--beta", type=float, default=None, help="fixed beta for a field scan")
    mh.add_argument("--sweeps-per-point", type=int, default=200)
    mh.set_defaults(func=cmd_mc_hysteresis)
    commands["mc hysteresis"] = mh
    return root, commands


def _command_name(ns) -> str:
    return " ".join(p for p in (ns.group, getattr(ns, "which", None)) if p)


def _apply_config(path: str, command: str, sub: argparse.ArgumentParser) -> None:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path!r}")
    if not cp.has_section(command):
        return
    actions = {opt: act for act in sub._actions for opt in act.option_strings}
    defaults = {}
    for key, raw in cp.items(command):
        act = actions.get("--" + key)
        if act is None:
            raise UsageError(f"unknown key {key!r} in section [{command}]")
        if isinstance(act, argparse._StoreTrueAction):
            value = cp.getboolean(command, key)
        elif act.type is not None:
            try:
                value = act.type(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
        else:
            value = raw
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"{key} must be one of {list(act.choices)}")
        defaults[act.dest] = value
    sub.set_defaults(**defaults)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        root, commands = build_parser()
        ns = root.parse_args(argv)
        name = _command_name(ns)
        if name not in commands:
            raise UsageError("missing command; see --help")
        if ns.config:
            _apply_config(ns.config, name, commands[name])
            ns = root.parse_args(argv)
        table = ns.func(ns)
        config = {k: v for k, v in sorted(vars(ns).items()) if k not in ("func", "group", "which", "output", "emit_plot")}
        meta = metadata_line(name, config, ns.seed)
        text = render(table, ns.format, meta)
        if ns.output:
            with open(ns.output, "w") as fh:
                fh.write(text)
        else:
            stdout.write(text)
        if ns.emit_plot:
            _emit_plot(ns.emit_plot, table, meta)
        if table.failed:
            print("error: reflection-positivity form below tolerance", file=stderr)
            return 2
        return 0
    except ParameterOutOfRange as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except SystemExit as exc:
        # --help and --version
        return exc.code if isinstance(exc.code, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
