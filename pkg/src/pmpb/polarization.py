"""Self-consistent induced dipoles: site-site SOR in vacuum, and the outer
cycle coupling SOR sweeps to reaction-field solves in solvent.

Sign convention: the physical field is E = -grad(potential), so
mu = alpha (-grad G_others - grad phi_RF + T mu); site-site terms use the
bare (unscaled) Coulomb kernels.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InputError
from .multipole import green_gradient, interaction_tensor


@dataclass
class InducedDipoleState:
    mu: np.ndarray               # (n, 3) e_c Angstrom
    iteration: int
    last_rms: float
    converged: bool
    history: list = field(default_factory=list)


def direct_field(sites, n: int, mask=None) -> np.ndarray:
    """Field of all other sites' permanent multipoles at site n."""
    r_n = sites[n].position
    e = np.zeros(3)
    for m, site in enumerate(sites):
        if m == n or (mask is not None and (n, m) in mask):
            continue
        e -= green_gradient(site, r_n)
    return e


def _pair_tensors(sites, mask=None):
    n = len(sites)
    T = np.zeros((n, n, 3, 3))
    for i in range(n):
        for j in range(n):
            if i == j or (mask is not None and (i, j) in mask):
                continue
            T[i, j] = interaction_tensor(sites[i], sites[j])
    return T


def _rms(dmu: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(dmu * dmu, axis=1))))


def _sor_sweeps(sites, e_ext, config, mu0, max_iters, T=None, mask=None):
    """Gauss-Seidel SOR to the fixed point mu = alpha (e_ext + T mu)."""
    n = len(sites)
    alpha = np.array([s.alpha for s in sites])
    if T is None:
        T = _pair_tensors(sites, mask)
    mu = mu0.copy()
    omega = config.scf_omega
    tol = config.scf_tolerance
    history = []
    for it in range(1, max_iters + 1):
        prev = mu.copy()
        for i in range(n):
            if alpha[i] == 0.0:
                continue
            f = e_ext[i] + np.einsum("mjk,mk->j", T[i], mu)
            mu[i] = (1.0 - omega) * mu[i] + omega * alpha[i] * f
        rms = _rms(mu - prev)
        history.append(rms)
        if rms <= tol:
            return InducedDipoleState(mu=mu, iteration=it, last_rms=rms,
                                      converged=True, history=history)
    state = InducedDipoleState(mu=mu, iteration=max_iters,
                               last_rms=history[-1] if history else 0.0,
                               converged=False, history=history)
    raise ConvergenceError(
        f"induced-dipole SOR did not reach {tol:.1e} rms in {max_iters} "
        f"sweeps (last change {state.last_rms:.3e}); alpha may be too "
        f"large for the site spacing", report=state)


def sor_vacuum(sites, config, mask=None) -> InducedDipoleState:
    """Vacuum fixed point mu = alpha (E_direct + T mu)."""
    n = len(sites)
    e_dir = np.array([direct_field(sites, i, mask) for i in range(n)])
    return _sor_sweeps(sites, e_dir, config, np.zeros((n, 3)),
                       config.scf_max_iters, mask=mask)


def dense_vacuum(sites, mask=None) -> np.ndarray:
    """Direct dense solve of (I - diag(alpha) T) mu = alpha E_direct;
    test oracle for the SOR fixed point."""
    n = len(sites)
    alpha = np.array([s.alpha for s in sites])
    T = _pair_tensors(sites, mask)
    M = np.eye(3 * n)
    M -= (alpha[:, None, None, None] * T).transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    g = (alpha[:, None]
         * np.array([direct_field(sites, i, mask) for i in range(n)]))
    return np.linalg.solve(M, g.reshape(-1)).reshape(n, 3)


def sor_solvated(sites, geometry, config, pde, mu0=None, mask=None):
    """Outer induction cycle in solvent.

    pde: callback mapping the current induced dipoles to the solved
    reaction field; must expose per-site gradients as
    pde(mu).site_gradients (n, 3).  Each cycle re-solves the PDE at the
    current mu, then relaxes mu to the fixed point of the site-site system
    with the reaction term frozen.  Returns (state, last pde result).
    """
    n = len(sites)
    if mu0 is None:
        mu0 = sor_vacuum(sites, config, mask).mu if any(
            s.alpha > 0 for s in sites) else np.zeros((n, 3))
    mu = np.asarray(mu0, dtype=float).copy()
    e_dir = np.array([direct_field(sites, i, mask) for i in range(n)])
    T = _pair_tensors(sites, mask)
    polar = any(s.alpha > 0 for s in sites)
    history = []
    out = None
    for cycle in range(1, config.scf_outer_max + 1):
        out = pde(mu)
        if not polar:
            return (InducedDipoleState(mu=mu, iteration=cycle, last_rms=0.0,
                                       converged=True, history=[0.0]), out)
        e_ext = e_dir - np.asarray(out.site_gradients)
        inner = _sor_sweeps(sites, e_ext, config, mu,
                            config.scf_max_iters, T=T, mask=mask)
        rms = _rms(inner.mu - mu)
        mu = inner.mu
        history.append(rms)
        if rms <= config.scf_tolerance:
            return (InducedDipoleState(mu=mu, iteration=cycle, last_rms=rms,
                                       converged=True, history=history), out)
    state = InducedDipoleState(mu=mu, iteration=config.scf_outer_max,
                               last_rms=history[-1], converged=False,
                               history=history)
    raise ConvergenceError(
        f"solvated induction did not converge in {config.scf_outer_max} "
        f"cycles (last change {state.last_rms:.3e})", report=state)


_QUAD_EXPOS = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
               (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1),
               (0, 0, 2)]


def site_reaction_data(phi_rf, grid, sites):
    """Value, gradient, and Hessian of the reaction field at each site
    center, from a quadratic least-squares fit over the 4^3 node block
    around the site restricted to inside nodes."""
    vals = np.asarray(phi_rf).ravel()
    out = []
    for site in sites:
        base = np.floor((site.position - grid.origin) / grid.h).astype(int)
        lo = base - 1
        hi = base + 3   # exclusive
        if np.any(lo < 0) or np.any(hi > np.array(grid.dims)):
            raise InputError(
                "site too close to the domain boundary for reaction-field "
                "reconstruction")
        ii, jj, kk = np.meshgrid(*[np.arange(lo[d], hi[d]) for d in range(3)],
                                 indexing="ij")
        ins = grid.inside[ii, jj, kk].ravel()
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)[ins]
        if len(idx) < 10:
            raise InputError(
                f"only {len(idx)} inside nodes near site at "
                f"{site.position}; refine the grid")
        pos = np.stack([grid.axes[d][idx[:, d]] for d in range(3)], axis=1)
        eta = (pos - site.position) / grid.h
        B = np.stack([eta[:, 0] ** a * eta[:, 1] ** b * eta[:, 2] ** c
                      for a, b, c in _QUAD_EXPOS], axis=1)
        f = vals[(idx[:, 0] * grid.dims[1] + idx[:, 1]) * grid.dims[2]
                 + idx[:, 2]]
        coef, _, rank, _ = np.linalg.lstsq(B, f, rcond=None)
        if rank < len(_QUAD_EXPOS):
            raise InputError(
                f"inside-node neighborhood of site at {site.position} is "
                "degenerate for a quadratic fit; refine the grid")
        h = grid.h
        value = coef[0]
        grad = coef[1:4] / h
        cxx, cxy, cxz, cyy, cyz, czz = coef[4:10]
        hess = np.array([[2 * cxx, cxy, cxz],
                         [cxy, 2 * cyy, cyz],
                         [cxz, cyz, 2 * czz]]) / h ** 2
        out.append((float(value), grad, hess))
    return out
