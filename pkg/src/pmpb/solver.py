"""End-to-end orchestration: grid, rules, SCF cycles, energies."""
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .energy import SolvationResult, g_delta, solvation_energy, vacuum_energy
from .linsolve import defect_refine, solve
from .mibgrid import assemble, build_grid, fictitious_rules, jump_data
from .polarization import site_reaction_data, sor_solvated, sor_vacuum


@dataclass
class PdeResult:
    phi: np.ndarray
    site_data: list
    site_gradients: np.ndarray
    reports: list


def build_system(sites, geometry, config, induced=None):
    """Grid + rules + assembled operator, with stage timings attached."""
    timings = {}
    t = time.perf_counter()
    grid = build_grid(geometry, sites, config)
    timings["grid"] = time.perf_counter() - t
    t = time.perf_counter()
    rules = fictitious_rules(grid, geometry, config.eps_in, config.eps_out)
    timings["rules"] = time.perf_counter() - t
    t = time.perf_counter()
    if induced is None:
        induced = np.zeros((len(sites), 3))
    system = assemble(grid, rules, jump_data, sites, induced, config)
    timings["assemble"] = time.perf_counter() - t
    return system, timings


def solve_system(system, config, sites, induced, warm=None):
    """One reaction-field solve at fixed induced dipoles."""
    system.b = system.rhs(sites, induced)
    x0 = warm.get("phi") if warm else None
    phi, rep = solve(system, config, x0=x0)
    reports = [rep]
    if warm is not None:
        warm["phi"] = phi.copy()
    if config.defect_correction:
        phi, rep2 = defect_refine(system, phi, config)
        reports.append(rep2)
    return phi, reports


def solve_molecule(sites, geometry, config) -> SolvationResult:
    """Vacuum SCF, solvated SCF with reaction-field coupling, energies."""
    system, timings = build_system(sites, geometry, config)
    grid = system.grid
    n = len(sites)
    polar = any(s.alpha > 0 for s in sites)

    t = time.perf_counter()
    mu_v = sor_vacuum(sites, config).mu if polar else np.zeros((n, 3))
    timings["vacuum_scf"] = time.perf_counter() - t

    warm = {}
    all_reports = []

    def pde(mu):
        phi, reports = solve_system(system, config, sites, mu, warm)
        all_reports.extend(reports)
        data = site_reaction_data(phi, grid, sites)
        grads = np.array([g for _, g, _ in data])
        return PdeResult(phi=phi, site_data=data, site_gradients=grads,
                         reports=reports)

    t = time.perf_counter()
    state, out = sor_solvated(sites, geometry, config, pde, mu0=mu_v)
    timings["solvated_scf"] = time.perf_counter() - t

    t = time.perf_counter()
    gd = [g_delta(sites, state.mu, mu_v, i) for i in range(n)]
    e_sol, per_site = solvation_energy(sites, out.site_data, gd)
    e_vac = vacuum_energy(sites, mu_v)
    timings["energy"] = time.perf_counter() - t

    return SolvationResult(e_sol=e_sol, per_site=per_site, e_vacuum=e_vac,
                           h=config.grid_spacing, mu_solvent=state.mu,
                           mu_vacuum=mu_v, scf=state,
                           solve_reports=all_reports, timings=timings)


def reaction_field(sites, geometry, config, induced=None):
    """Single fixed-moment solve; returns (phi, system, reports)."""
    if induced is None:
        induced = np.zeros((len(sites), 3))
    system, timings = build_system(sites, geometry, config, induced)
    phi, reports = solve_system(system, config, sites, induced)
    return phi, system, reports


def thread_budget() -> int:
    try:
        v = int(os.environ.get("PMPB_THREADS", "1"))
    except ValueError:
        v = 1
    return max(1, v)


def converge_study(sites, geometry, config, levels):
    """solve_molecule per grid level (coarse to fine); levels may run in
    parallel under PMPB_THREADS but results are ordered by h descending."""
    levels = sorted(set(levels), reverse=True)
    configs = [replace(config, grid_spacing=h) for h in levels]
    nw = min(thread_budget(), len(levels))
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(
                lambda c: solve_molecule(sites, geometry, c), configs))
    else:
        results = [solve_molecule(sites, geometry, c) for c in configs]
    return results
