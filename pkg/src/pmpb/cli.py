"""Command line driver.

Subcommands: `solve` runs one molecule end to end, `converge` repeats a
solve over a ladder of grid spacings and prints the order table,
`kirkwood-check` runs the built-in spherical-cavity verification suite
against the analytic series.  Every run writes `manifest.json` before any
table so each emitted row traces back to the exact config and inputs.

Default moments for the built-in suite: q = 1, d = (0, 0, 0.343),
traceless axial quadrupole diag(0.242469, 0.242469, -0.484938).  These are
conventions of the suite, chosen to reproduce the reference energies.
"""

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .energy import kirkwood_order_table, solvation_energy
from .errors import ConvergenceError, GeometryError, InputError, PmpbError
from .fileio import load_config, parse_multipole_pqr, parse_xyzr
from .geometry import InterfaceGeometry
from .kirkwood import default_case, energies
from .multipole import MultipoleSite
from .polarization import site_reaction_data
from .solver import reaction_field, solve_molecule, thread_budget

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONVERGENCE = 2
EXIT_GEOMETRY = 3

# pass thresholds for kirkwood-check, evaluated at the finest level and the
# final consecutive order in the ladder
CHECK_ENERGY_RTOL = 0.005
CHECK_ORDER_ENERGY = 1.8
CHECK_ORDER_INTERFACE = 1.5

DEFAULT_CHECK_LEVELS = (0.5, 0.25, 0.125)
KIRKWOOD_CASES = ("monopole", "dipole", "quadrupole", "multipole")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for
    # non-convergence, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    """Provenance record written before any table."""
    command: str
    version: str
    created: str
    config: dict
    inputs: dict
    extra: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: str = "running"

    def as_dict(self) -> dict:
        return {"command": self.command, "version": self.version,
                "created": self.created, "config": self.config,
                "inputs": self.inputs, "extra": self.extra,
                "timings": self.timings, "status": self.status}


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text(text + "\n")


def _write_csv(path, header, rows) -> None:
    # rows arrive pre-formatted; fixed order and formatting keep reruns
    # byte-identical
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _g6(x) -> str:
    """6 significant digits for CSV cells; blank for missing."""
    return "" if x is None else f"{float(x):.6g}"


def _f4(x) -> str:
    return f"{float(x):.4f}"


def _e3(x) -> str:
    return "" if x is None else f"{float(x):.2e}"


def _ord(x) -> str:
    return "--" if x is None else f"{float(x):.2f}"


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args, **forced):
    strict = not getattr(args, "lenient_config", False)
    overrides = dict(forced)
    if getattr(args, "h", None) is not None:
        overrides["grid_spacing"] = args.h
    return load_config(getattr(args, "config", None), strict=strict,
                       **overrides)


def _input_digests(args) -> dict:
    digests = {}
    for attr in ("pqr", "xyzr", "config"):
        path = getattr(args, attr, None)
        if path is not None:
            digests[str(path)] = _sha256(path)
    return digests


def _new_manifest(command: str, cfg, args, extra=None) -> RunManifest:
    return RunManifest(
        command=command, version=__version__,
        created=datetime.now(timezone.utc).isoformat(),
        config=cfg.as_dict(), inputs=_input_digests(args),
        extra=dict(extra or {}))


def _geometry(args, mol) -> InterfaceGeometry:
    if getattr(args, "xyzr", None) is not None:
        return InterfaceGeometry(parse_xyzr(args.xyzr))
    return InterfaceGeometry(
        [(s.position, s.radius) for s in mol.sites])


def _report_dicts(reports):
    return [{"iterations": r.iterations, "residual": r.residual,
             "wall_time": r.wall_time, "converged": r.converged}
            for r in reports]


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    cfg = _load_cfg(args)
    mol = parse_multipole_pqr(args.pqr, quad_scale=cfg.quad_scale)
    geometry = _geometry(args, mol)
    outdir = _outdir(args)

    manifest = _new_manifest("solve", cfg, args,
                             extra={"n_sites": len(mol.sites),
                                    "threads": thread_budget()})
    _write_json(outdir / "manifest.json", manifest.as_dict())

    try:
        result = solve_molecule(mol.sites, geometry, cfg)
    except ConvergenceError as exc:
        manifest.status = f"failed: {exc}"
        _write_json(outdir / "manifest.json", manifest.as_dict())
        _write_json(outdir / "summary.json",
                    {"error": str(exc), "converged": False})
        print(f"pmpb solve: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE

    manifest.status = "ok"
    manifest.timings = dict(result.timings)
    _write_json(outdir / "manifest.json", manifest.as_dict())

    summary = {
        "e_sol": result.e_sol,
        "e_vacuum": result.e_vacuum,
        "per_site": list(result.per_site),
        "h": result.h,
        "n_sites": len(mol.sites),
        "mu_solvent": result.mu_solvent,
        "mu_vacuum": result.mu_vacuum,
        "scf": {"cycles": result.scf.iteration,
                "last_rms": result.scf.last_rms,
                "converged": result.scf.converged,
                "history": list(result.scf.history)},
        "solves": _report_dicts(result.solve_reports),
        "timings": dict(result.timings),
        "converged": True,
    }
    _write_json(outdir / "summary.json", summary)

    rows = [(str(i), _g6(p[0]), _g6(p[1]), _g6(p[2]), _g6(e))
            for i, (p, e) in enumerate(
                zip((s.position for s in mol.sites), result.per_site))]
    rows.append(("total", "", "", "", _g6(result.e_sol)))
    _write_csv(outdir / "energy.csv", ("site", "x", "y", "z", "e_site"),
               rows)

    if args.dump_mu:
        _write_csv(outdir / "mu.csv", ("site", "mu_x", "mu_y", "mu_z"),
                   [(str(i), _g6(m[0]), _g6(m[1]), _g6(m[2]))
                    for i, m in enumerate(result.mu_solvent)])

    iters = sum(r.iterations for r in result.solve_reports)
    print(f"sites {len(mol.sites)}  h {_g6(result.h)}  "
          f"SCF cycles {result.scf.iteration}  solver iterations {iters}")
    print(f"E_sol    {_f4(result.e_sol):>12} kcal/mol")
    print(f"E_vacuum {_f4(result.e_vacuum):>12} kcal/mol")
    return EXIT_OK


# -------------------------------------------------------------- converge

def _case_sites(case):
    site = MultipoleSite((0.0, 0.0, 0.0), case.a, case.q,
                         d=np.array(case.d, dtype=float),
                         Q=np.array(case.Q, dtype=float))
    return [site]


def _kirkwood_phi_rf(case, pts, inside):
    """Analytic reaction potential on grid nodes, both sides."""
    r2 = np.einsum("ij,ij->i", pts, pts)
    r = np.where(r2 < 1e-24, 1.0, np.sqrt(r2))
    dq = pts @ np.asarray(case.d, dtype=float)
    qq = 0.5 * np.einsum("ij,jk,ik->i", pts, np.asarray(case.Q, float), pts)
    phi_in = case._A(0) * case.q + case._A(1) * dq + case._A(2) * qq
    inv = 1.0 / case.eps1
    phi_out = ((case._B(0) - inv) * case.q / r
               + (case._B(1) - inv) * dq / r ** 3
               + (case._B(2) - inv) * qq / r ** 5)
    return np.where(inside, phi_in, phi_out)


def _kirkwood_level(case, sites, geometry, cfg):
    """One grid level of the analytic suite: energy plus interface error."""
    t0 = time.perf_counter()
    phi, system, reports = reaction_field(sites, geometry, cfg)
    grid = system.grid
    data = site_reaction_data(phi, grid, sites)
    zeros = np.zeros(3)
    e_sol, _ = solvation_energy(sites, data,
                                [(0.0, zeros, np.zeros((3, 3)))])
    exact = _kirkwood_phi_rf(case, grid.positions_flat(),
                             grid.inside.ravel())
    err = np.abs(phi - exact)
    err[grid.boundary.ravel()] = 0.0
    return {"h": cfg.grid_spacing, "e_sol": e_sol,
            "e_int": float(err.max()),
            "wall": time.perf_counter() - t0,
            "solves": _report_dicts(reports)}


def _molecule_level(sites, geometry, cfg):
    t0 = time.perf_counter()
    result = solve_molecule(sites, geometry, cfg)
    return {"h": cfg.grid_spacing, "e_sol": result.e_sol, "e_int": None,
            "wall": time.perf_counter() - t0,
            "scf_cycles": result.scf.iteration,
            "solves": _report_dicts(result.solve_reports)}


def _run_levels(fn, levels):
    """fn(h) per level, failures captured per level, ordered coarse to
    fine."""
    workers = min(thread_budget(), len(levels))
    out = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(fn, h): h for h in levels}
            for fut in as_completed(futures):
                h = futures[fut]
                try:
                    out[h] = fut.result()
                except PmpbError as exc:
                    out[h] = exc
    else:
        for h in levels:
            try:
                out[h] = fn(h)
            except PmpbError as exc:
                out[h] = exc
    return [out[h] for h in levels]


def _order_columns(levels, values):
    """Consecutive-pair orders; None where a value is missing or zero."""
    orders = [None]
    for i in range(1, len(levels)):
        a, b = values[i - 1], values[i]
        if a is None or b is None or a <= 0 or b <= 0:
            orders.append(None)
        else:
            orders.append(np.log(a / b) / np.log(levels[i - 1] / levels[i]))
    return orders


def _converge_rows(levels, results, exact):
    """Table rows (dicts) from per-level results; exceptions mark FAILED."""
    good = [(h, r["e_sol"]) for h, r in zip(levels, results)
            if not isinstance(r, Exception)]
    err_by_h, order_by_h = {}, {}
    if len(good) >= 2:
        for row in kirkwood_order_table(good, exact=exact):
            err_by_h[row["h"]] = row["error"]
            order_by_h[row["h"]] = row["order"]
    ints = [None if isinstance(r, Exception) else r["e_int"]
            for r in results]
    int_orders = _order_columns(levels, ints)
    rows = []
    for i, (h, r) in enumerate(zip(levels, results)):
        if isinstance(r, Exception):
            rows.append({"h": h, "failed": str(r)})
            continue
        rows.append({"h": h, "failed": None, "e_sol": r["e_sol"],
                     "e_err": err_by_h.get(h), "order_e": order_by_h.get(h),
                     "e_int": r["e_int"], "order_int": int_orders[i],
                     "wall": r["wall"]})
    return rows


def _print_table(rows, err_label):
    head = (f"{'h':>8} {'e_int':>10} {'order':>6} "
            f"{'E_sol':>12} {err_label:>10} {'order':>6}")
    print(head)
    print("-" * len(head))
    for row in rows:
        if row["failed"] is not None:
            print(f"{row['h']:>8.4g} {'FAILED':>10}  ({row['failed']})")
            continue
        print(f"{row['h']:>8.4g} {_e3(row['e_int']):>10} "
              f"{_ord(row['order_int']):>6} {_f4(row['e_sol']):>12} "
              f"{_e3(row['e_err']):>10} {_ord(row['order_e']):>6}")


def _csv_rows(rows, case_name=""):
    out = []
    for row in rows:
        if row["failed"] is not None:
            cells = [case_name, _g6(row["h"]), "FAILED", "", "", "", ""]
        else:
            cells = [case_name, _g6(row["h"]), _g6(row["e_sol"]),
                     _g6(row["e_err"]), _g6(row["order_e"]),
                     _g6(row["e_int"]), _g6(row["order_int"])]
        out.append(cells if case_name else cells[1:])
    return out


def _parse_levels(text: str):
    try:
        levels = sorted({float(tok) for tok in text.split(",") if tok},
                        reverse=True)
    except ValueError as exc:
        raise InputError(f"bad --levels value: {exc}") from None
    if len(levels) < 2:
        raise InputError("need at least 2 grid levels")
    if levels[-1] <= 0:
        raise InputError("grid levels must be positive")
    return levels


def cmd_converge(args) -> int:
    levels = _parse_levels(args.levels)
    outdir = _outdir(args)

    if args.case == "kirkwood":
        case = default_case(args.which)
        sites = _case_sites(case)
        geometry = InterfaceGeometry.sphere((0.0, 0.0, 0.0), case.a)
        # MDH is the exact exterior series for the centered sphere
        cfg = _load_cfg(args, eps_in=case.eps1, eps_out=case.eps2,
                        ionic_strength=0.0, boundary_condition="MDH")
        exact = energies(case)[3]
        level_fn = lambda h: _kirkwood_level(
            case, sites, geometry, replace(cfg, grid_spacing=h))
        err_label = "|E-exact|"
    else:
        if args.pqr is None:
            raise InputError("--case files requires --pqr")
        cfg = _load_cfg(args)
        mol = parse_multipole_pqr(args.pqr, quad_scale=cfg.quad_scale)
        sites = mol.sites
        geometry = _geometry(args, mol)
        exact = None
        level_fn = lambda h: _molecule_level(
            sites, geometry, replace(cfg, grid_spacing=h))
        err_label = "e_E %"

    manifest = _new_manifest("converge", cfg, args,
                             extra={"case": args.case, "which": args.which,
                                    "levels": levels,
                                    "threads": thread_budget()})
    _write_json(outdir / "manifest.json", manifest.as_dict())

    results = _run_levels(level_fn, levels)
    rows = _converge_rows(levels, results, exact)

    failed = any(r["failed"] is not None for r in rows)
    manifest.status = "ok" if not failed else "failed: level errors"
    manifest.timings = {f"h={r['h']:g}": r.get("wall") for r in rows
                        if r["failed"] is None}
    _write_json(outdir / "manifest.json", manifest.as_dict())
    _write_json(outdir / "summary.json",
                {"levels": rows, "exact": exact, "case": args.case,
                 "which": args.which})
    _write_csv(outdir / "converge.csv",
               ("h", "e_sol", "e_err", "order_e", "e_int", "order_int"),
               _csv_rows(rows))
    _print_table(rows, err_label)
    return EXIT_CONVERGENCE if failed else EXIT_OK


# -------------------------------------------------------- kirkwood-check

def _check_block(which, levels, cfg_base):
    case = default_case(which)
    sites = _case_sites(case)
    geometry = InterfaceGeometry.sphere((0.0, 0.0, 0.0), case.a)
    exact = energies(case)[3]
    fn = lambda h: _kirkwood_level(case, sites, geometry,
                                   replace(cfg_base, grid_spacing=h))
    results = _run_levels(fn, levels)
    rows = _converge_rows(levels, results, exact)
    return case, exact, rows


def _endpoint_order(h0, e0, h1, e1):
    """Order over the whole ladder span, robust to the noise that hits
    consecutive-pair slopes once errors reach the accuracy floor."""
    if None in (e0, e1) or e0 <= 0 or e1 <= 0:
        return None
    return float(np.log(e0 / e1) / np.log(h0 / h1))


def _check_verdict(which, rows, exact):
    """Threshold check: energy at the finest level, orders over the
    coarse-to-fine endpoints; returns list of failures."""
    problems = []
    for row in rows:
        if row["failed"] is not None:
            problems.append(f"{which}: level h={row['h']:g} failed "
                            f"({row['failed']})")
    clean = [r for r in rows if r["failed"] is None]
    if len(clean) < 2:
        return problems
    first, last = clean[0], clean[-1]
    rel = abs(last["e_sol"] - exact) / abs(exact)
    if rel > CHECK_ENERGY_RTOL:
        problems.append(
            f"{which}: energy off by {rel * 100:.3g}% at h={last['h']:g} "
            f"(limit {CHECK_ENERGY_RTOL * 100:g}%)")
    order_e = _endpoint_order(first["h"], first["e_err"],
                              last["h"], last["e_err"])
    if order_e is not None and order_e < CHECK_ORDER_ENERGY:
        problems.append(
            f"{which}: energy order {order_e:.2f} < {CHECK_ORDER_ENERGY}")
    order_int = _endpoint_order(first["h"], first["e_int"],
                                last["h"], last["e_int"])
    if order_int is not None and order_int < CHECK_ORDER_INTERFACE:
        problems.append(
            f"{which}: interface order {order_int:.2f} < "
            f"{CHECK_ORDER_INTERFACE}")
    return problems


def cmd_kirkwood_check(args) -> int:
    levels = _parse_levels(args.levels)
    cases = KIRKWOOD_CASES if args.which == "all" else (args.which,)
    cfg = _load_cfg(args, eps_in=1.0, eps_out=80.0, ionic_strength=0.0,
                    boundary_condition="MDH")
    outdir = _outdir(args)

    manifest = _new_manifest("kirkwood-check", cfg, args,
                             extra={"which": list(cases), "levels": levels,
                                    "threads": thread_budget()})
    _write_json(outdir / "manifest.json", manifest.as_dict())

    all_rows, summary_blocks, problems = [], {}, []
    for which in cases:
        case, exact, rows = _check_block(which, levels, cfg)
        block_problems = _check_verdict(which, rows, exact)
        problems.extend(block_problems)
        all_rows.extend(_csv_rows(rows, case_name=which))
        summary_blocks[which] = {"exact": exact, "levels": rows,
                                 "pass": not block_problems}
        print(f"[{which}]  exact E_sol = {_f4(exact)} kcal/mol")
        _print_table(rows, "|E-exact|")
        print(f"{'PASS' if not block_problems else 'FAIL'}  {which}")
        print()

    manifest.status = "ok" if not problems else "failed: thresholds"
    _write_json(outdir / "manifest.json", manifest.as_dict())
    _write_json(outdir / "summary.json",
                {"blocks": summary_blocks, "problems": problems})
    _write_csv(outdir / "kirkwood.csv",
               ("case", "h", "e_sol", "e_err", "order_e",
                "e_int", "order_int"), all_rows)

    for line in problems:
        print(f"FAIL {line}", file=sys.stderr)
    return EXIT_CONVERGENCE if problems else EXIT_OK


# ------------------------------------------------------------------ main

def _add_common(sp) -> None:
    sp.add_argument("--config", help="key=value config file")
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--lenient-config", action="store_true",
                    help="warn on unknown config keys instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmpb",
                     description="Multipole Poisson-Boltzmann solver")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one molecule")
    sp.add_argument("--pqr", required=True,
                    help="extended PQR with multipoles and polarizability")
    sp.add_argument("--xyzr", help="override interface spheres")
    sp.add_argument("--h", type=float, help="grid spacing override")
    sp.add_argument("--dump-mu", action="store_true",
                    help="write converged induced dipoles to mu.csv")
    _add_common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("converge", help="grid refinement study")
    sp.add_argument("--case", choices=("kirkwood", "files"),
                    default="kirkwood")
    sp.add_argument("--which", choices=KIRKWOOD_CASES, default="monopole",
                    help="moments for --case kirkwood")
    sp.add_argument("--pqr", help="molecule for --case files")
    sp.add_argument("--xyzr", help="override interface spheres")
    sp.add_argument("--levels", required=True,
                    help="comma-separated grid spacings, e.g. 1,0.5,0.25")
    _add_common(sp)
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("kirkwood-check",
                        help="verify against the analytic sphere series")
    sp.add_argument("--which", choices=KIRKWOOD_CASES + ("all",),
                    default="all")
    sp.add_argument("--levels",
                    default=",".join(str(h) for h in DEFAULT_CHECK_LEVELS))
    _add_common(sp)
    sp.set_defaults(func=cmd_kirkwood_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"pmpb: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pmpb: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GeometryError as exc:
        print(f"pmpb: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ConvergenceError as exc:
        print(f"pmpb: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
