"""Point-multipole potentials, derivatives, and interaction tensors.

Potentials are in e_c/Angstrom throughout; conversion to kcal/mol happens
once, at the energy/reporting boundary, via Units.coulomb_constant.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SingularEvaluation


class Units:
    """Fixed unit-conversion constants. Never read from config."""

    coulomb_constant = 332.06364        # (kcal/mol/e_c) * (A/e_c)
    kappa_bar_coeff = 8.486902807       # A^-2 per molar ionic strength


# evaluation closer than this to a site center is a hard error
SINGULAR_EPS = 1e-12

_SYM_TOL = 1e-10
_TRACE_WARN = 1e-8


@dataclass
class MultipoleSite:
    """One atom: center, radius, permanent moments, polarizability.

    position A, radius A, q e_c, d e_c*A, Q e_c*A^2 (symmetric 3x3),
    alpha A^3 (isotropic).
    """

    position: np.ndarray
    radius: float
    q: float = 0.0
    d: np.ndarray = None
    Q: np.ndarray = None
    alpha: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.radius = float(self.radius)
        self.q = float(self.q)
        self.d = (np.zeros(3) if self.d is None
                  else np.asarray(self.d, dtype=float).reshape(3))
        self.Q = (np.zeros((3, 3)) if self.Q is None
                  else np.asarray(self.Q, dtype=float).reshape(3, 3))
        self.alpha = float(self.alpha)
        if not self.radius > 0:
            raise InputError("site radius must be positive")
        if self.alpha < 0:
            raise InputError("polarizability must be nonnegative")
        if np.abs(self.Q - self.Q.T).max() > _SYM_TOL:
            raise InputError("quadrupole tensor must be symmetric")

    def detraced(self):
        """Copy with the quadrupole trace removed (traceless convention)."""
        tr = np.trace(self.Q)
        Q = self.Q - (tr / 3.0) * np.eye(3)
        return MultipoleSite(self.position, self.radius, self.q,
                             self.d.copy(), Q, self.alpha)


def _sep(site, r):
    s = np.asarray(r, dtype=float).reshape(3) - site.position
    sn = float(np.linalg.norm(s))
    if sn < SINGULAR_EPS:
        raise SingularEvaluation(
            f"evaluation at site center {site.position}")
    return s, sn


def green_potential(site, r, induced=None):
    """G(r) of one site: q/|s| + (d.s)/|s|^3 + (s^T Q s)/(2|s|^5).

    induced: optional extra dipole added to d (the induced moment).
    """
    s, sn = _sep(site, r)
    d = site.d if induced is None else site.d + induced
    return (site.q / sn + (d @ s) / sn ** 3
            + (s @ site.Q @ s) / (2.0 * sn ** 5))


def green_gradient(site, r, induced=None):
    """Analytic gradient of green_potential with respect to r."""
    s, sn = _sep(site, r)
    d = site.d if induced is None else site.d + induced
    Qs = site.Q @ s
    return (-site.q * s / sn ** 3
            + d / sn ** 3 - 3.0 * (d @ s) * s / sn ** 5
            + Qs / sn ** 5 - 2.5 * (s @ Qs) * s / sn ** 7)


def green_hessian(site, r, induced=None):
    """Analytic second-derivative tensor of green_potential. Symmetric."""
    s, sn = _sep(site, r)
    d = site.d if induced is None else site.d + induced
    I = np.eye(3)
    ss = np.outer(s, s)
    H = site.q * (3.0 * ss - sn ** 2 * I) / sn ** 5
    ds = d @ s
    H += (-3.0 * (np.outer(d, s) + np.outer(s, d) + ds * I) / sn ** 5
          + 15.0 * ds * ss / sn ** 7)
    Qs = site.Q @ s
    f = 0.5 * (s @ Qs)
    H += (site.Q / sn ** 5
          - 5.0 * (np.outer(Qs, s) + np.outer(s, Qs)) / sn ** 7
          - 5.0 * f * I / sn ** 7 + 35.0 * f * ss / sn ** 9)
    return H


def total_coulomb(sites, r, induced=None, eps_in=None):
    """Superposition of green_potential over all sites.

    induced: per-site induced dipoles folded into each d (total dipole
    p = d + mu). eps_in: when given, the sum is divided by it (the
    regularization convention for the singular component).
    """
    tot = 0.0
    for n, site in enumerate(sites):
        mu = None if induced is None else induced[n]
        tot += green_potential(site, r, induced=mu)
    if eps_in is not None:
        tot /= eps_in
    return tot


class IdentityDamping:
    """No-op damping rule for the dipole interaction tensor."""

    def apply(self, T, s):
        return T


class ScaledDamping:
    """Damping hook: multiplies T by a user function of the separation."""

    def __init__(self, fn):
        self.fn = fn

    def apply(self, T, s):
        return T * float(self.fn(np.linalg.norm(s)))


def interaction_tensor(site_n, site_m, damping=None):
    """Dipole-field tensor T_nm = (3 s_hat s_hat^T - I)/|s|^3, s = r_n - r_m.

    T mu equals the field at r_n of a point dipole mu at r_m (so that the
    mutual-induction term is +T mu under the adopted sign convention).
    """
    s = site_n.position - site_m.position
    sn = float(np.linalg.norm(s))
    if sn < SINGULAR_EPS:
        raise SingularEvaluation("coincident site centers")
    sh = s / sn
    T = (3.0 * np.outer(sh, sh) - np.eye(3)) / sn ** 3
    if damping is not None:
        T = damping.apply(T, s)
    return T


# ---------------------------------------------------------------------------
# vectorized many-point evaluation (assembly, boundary data, rule profiles)

def _moment_arrays(sites, induced=None):
    pos = np.array([s.position for s in sites])
    q = np.array([s.q for s in sites])
    d = np.array([s.d for s in sites])
    if induced is not None:
        d = d + np.asarray(induced, dtype=float)
    Q = np.array([s.Q for s in sites])
    return pos, q, d, Q


def potential_many(sites, pts, induced=None, eps_in=None, chunk=262144):
    """total_coulomb evaluated at pts (m,3), vectorized. Returns (m,)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    pos, q, d, Q = _moment_arrays(sites, induced)
    out = np.zeros(len(pts))
    for lo in range(0, len(pts), max(1, chunk // max(len(sites), 1))):
        hi = min(lo + max(1, chunk // max(len(sites), 1)), len(pts))
        s = pts[lo:hi, None, :] - pos[None, :, :]          # (m,n,3)
        r2 = np.einsum("mnc,mnc->mn", s, s)
        if (r2 < SINGULAR_EPS ** 2).any():
            raise SingularEvaluation("grid point coincides with a site")
        inv = 1.0 / np.sqrt(r2)
        ds = np.einsum("nc,mnc->mn", d, s)
        sQs = np.einsum("mnc,ncd,mnd->mn", s, Q, s)
        out[lo:hi] = ((q[None, :] * inv + ds * inv ** 3
                       + 0.5 * sQs * inv ** 5).sum(axis=1))
    if eps_in is not None:
        out /= eps_in
    return out


def gradient_many(sites, pts, induced=None, eps_in=None, chunk=262144):
    """Gradient of the superposition at pts (m,3). Returns (m,3)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    pos, q, d, Q = _moment_arrays(sites, induced)
    out = np.zeros((len(pts), 3))
    step = max(1, chunk // max(len(sites), 1))
    for lo in range(0, len(pts), step):
        hi = min(lo + step, len(pts))
        s = pts[lo:hi, None, :] - pos[None, :, :]
        r2 = np.einsum("mnc,mnc->mn", s, s)
        if (r2 < SINGULAR_EPS ** 2).any():
            raise SingularEvaluation("grid point coincides with a site")
        inv = 1.0 / np.sqrt(r2)
        inv3 = inv ** 3
        inv5 = inv3 * inv * inv
        ds = np.einsum("nc,mnc->mn", d, s)
        Qs = np.einsum("ncd,mnd->mnc", Q, s)
        sQs = np.einsum("mnc,mnc->mn", s, Qs)
        g = (-q[None, :, None] * s * inv3[..., None]
             + d[None, :, :] * inv3[..., None]
             - 3.0 * ds[..., None] * s * inv5[..., None]
             + Qs * inv5[..., None]
             - 2.5 * sQs[..., None] * s * (inv5 * inv * inv)[..., None])
        out[lo:hi] = g.sum(axis=1)
    if eps_in is not None:
        out /= eps_in
    return out
