"""Electrostatic solvation free energy from reaction-field data and the
induced-dipole difference term; vacuum electrostatic energy; convergence
tables."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .multipole import (MultipoleSite, Units, green_gradient, green_hessian,
                        green_potential)


@dataclass
class SolvationResult:
    e_sol: float                     # kcal/mol
    per_site: np.ndarray             # kcal/mol, sums to e_sol
    e_vacuum: float                  # kcal/mol
    h: float
    mu_solvent: np.ndarray
    mu_vacuum: np.ndarray
    scf: object = None               # InducedDipoleState
    solve_reports: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def g_delta(sites, mu_solvent, mu_vacuum, n: int):
    """(value, gradient, Hessian) at site n of the dipole fields carried by
    the solvent-vacuum induced differences of all other sites."""
    r_n = sites[n].position
    dmu = np.asarray(mu_solvent) - np.asarray(mu_vacuum)
    val = 0.0
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    for m, site in enumerate(sites):
        if m == n or not np.any(dmu[m]):
            continue
        ghost = MultipoleSite(site.position, site.radius, 0.0, dmu[m])
        val += green_potential(ghost, r_n)
        grad += green_gradient(ghost, r_n)
        hess += green_hessian(ghost, r_n)
    return val, grad, hess


def _contract(site, data) -> float:
    value, grad, hess = data
    return (site.q * value + float(site.d @ grad)
            + float(np.sum(site.Q * hess)))


def solvation_energy(sites, reaction_data, g_delta_data):
    """E_sol = (C/2) sum_n [q psi + d.grad psi + Q : hess psi](r_n) with
    psi = phi_RF + G_delta and permanent moments only.  Returns
    (total kcal/mol, per-site contributions)."""
    if reaction_data is None or len(reaction_data) != len(sites):
        raise InputError("reaction-field data missing for some sites")
    if g_delta_data is None or len(g_delta_data) != len(sites):
        raise InputError("induced-difference data missing for some sites")
    per = np.zeros(len(sites))
    for n, site in enumerate(sites):
        v1, g1, h1 = reaction_data[n]
        v2, g2, h2 = g_delta_data[n]
        per[n] = 0.5 * Units.coulomb_constant * _contract(
            site, (v1 + v2, np.asarray(g1) + g2, np.asarray(h1) + h2))
    return float(per.sum()), per


def vacuum_energy(sites, mu_vacuum=None) -> float:
    """(C/2) sum_n [q phi + d.grad phi + Q : hess phi](r_n) with phi the
    self-excluded field of the other sites' permanent moments plus their
    vacuum induced dipoles."""
    if mu_vacuum is None:
        mu_vacuum = np.zeros((len(sites), 3))
    total = 0.0
    for n, sn in enumerate(sites):
        val = 0.0
        grad = np.zeros(3)
        hess = np.zeros((3, 3))
        for m, sm in enumerate(sites):
            if m == n:
                continue
            val += green_potential(sm, sn.position, induced=mu_vacuum[m])
            grad += green_gradient(sm, sn.position, induced=mu_vacuum[m])
            hess += green_hessian(sm, sn.position, induced=mu_vacuum[m])
        total += 0.5 * Units.coulomb_constant * _contract(sn, (val, grad, hess))
    return float(total)


def kirkwood_order_table(levels, exact=None):
    """Rows (h, e_sol, error, order) from coarse to fine.

    With `exact`, error is |E - exact| (kcal/mol).  Without it, the
    reference is the linear-in-h extrapolation of the two finest levels,
    E_ex = 2 E(h_min) - E(2 h_min), and error is percent relative.  Order
    is the slope between consecutive levels; blank (None) where undefined.
    """
    if len(levels) < 2:
        raise InputError("need at least 2 grid levels for a table")
    levels = sorted(levels, key=lambda t: -t[0])
    hs = [h for h, _ in levels]
    es = [e for _, e in levels]
    if exact is None:
        ref = 2.0 * es[-1] - es[-2]
        if ref == 0.0:
            raise InputError("extrapolated reference energy is zero")
        errors = [abs(e - ref) / abs(ref) * 100.0 for e in es]
    else:
        errors = [abs(e - exact) for e in es]
    rows = []
    for i, (h, e) in enumerate(levels):
        order = None
        if i > 0 and errors[i] > 0 and errors[i - 1] > 0 \
                and abs(hs[i - 1] - hs[i]) > 0:
            order = (math.log(errors[i - 1] / errors[i])
                     / math.log(hs[i - 1] / hs[i]))
        rows.append({"h": h, "e_sol": e, "error": errors[i], "order": order})
    return rows
