"""Dielectric interface: side classification, mesh-line crossings, normals.

The interface is a sphere or a union of spheres with level set
phi(r) = min_k(|r - c_k| - r_k), negative inside the solute.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import GeometryError

# nodes with |level_set| below this count as Inside (deterministic tie-break)
TIE_EPS = 1e-12
# crossings closer than this to a union seam get nudged off it
SEAM_EPS = 1e-8
_AXIS_NAMES = ("x", "y", "z")


@dataclass
class Crossing:
    point: np.ndarray        # on Gamma
    axis: int                # mesh-line direction, 0/1/2
    normal: np.ndarray       # unit, outward
    frac: float              # fractional position from node_a toward node_b
    index_lo: tuple = None   # flanking grid indices, filled by the grid builder
    index_hi: tuple = None

    @property
    def axis_name(self) -> str:
        return _AXIS_NAMES[self.axis]


class InterfaceGeometry:
    """Union-of-spheres interface; a single sphere is the analytic case."""

    def __init__(self, spheres):
        spheres = [(np.asarray(c, dtype=float), float(r)) for c, r in spheres]
        if not spheres:
            raise GeometryError("no spheres")
        if any(r <= 0 for _, r in spheres):
            raise GeometryError("sphere radii must be positive")
        self.centers = np.array([c for c, _ in spheres])
        self.radii = np.array([r for _, r in spheres])

    @classmethod
    def sphere(cls, center, radius):
        return cls([(center, radius)])

    @property
    def is_single_sphere(self) -> bool:
        return len(self.radii) == 1

    def level_set(self, r) -> float:
        d = np.linalg.norm(np.asarray(r, dtype=float) - self.centers, axis=1)
        return float(np.min(d - self.radii))

    def level_set_many(self, pts, chunk=1 << 20):
        pts = np.asarray(pts, dtype=float)
        out = np.empty(len(pts))
        step = max(1, chunk // max(1, len(self.radii)))
        for s in range(0, len(pts), step):
            blk = pts[s:s + step]
            d = np.linalg.norm(blk[:, None, :] - self.centers[None], axis=2)
            out[s:s + step] = np.min(d - self.radii[None], axis=1)
        return out

    def nearest_sphere(self, r) -> int:
        # argmin takes the lowest index on ties
        d = np.linalg.norm(np.asarray(r, dtype=float) - self.centers, axis=1)
        return int(np.argmin(d - self.radii))

    def seam_gap(self, r) -> float:
        """Distance gap between the two closest sphere level sets (inf for one)."""
        d = np.linalg.norm(np.asarray(r, dtype=float) - self.centers, axis=1)
        v = np.sort(d - self.radii)
        return float(v[1] - v[0]) if len(v) > 1 else np.inf

    def bounding_box(self):
        lo = np.min(self.centers - self.radii[:, None], axis=0)
        hi = np.max(self.centers + self.radii[:, None], axis=0)
        return lo, hi


def classify(geometry: InterfaceGeometry, r) -> bool:
    """True for Inside (solute side). Ties |phi| < 1e-12 resolve Inside."""
    return geometry.level_set(r) < TIE_EPS


def surface_normal(geometry: InterfaceGeometry, p) -> np.ndarray:
    """Outward unit normal at an interface point (nearest sphere owns it)."""
    p = np.asarray(p, dtype=float)
    k = geometry.nearest_sphere(p)
    v = p - geometry.centers[k]
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise GeometryError("normal undefined at sphere center")
    return v / n


def find_crossing(geometry: InterfaceGeometry, node_a, node_b):
    """Interface crossing on the segment between two adjacent mesh nodes.

    Returns None when both endpoints are on the same side and no sub-grid
    feature is detected; raises GeometryError when the level set changes
    sign more than once on the segment (grid too coarse).
    """
    a = np.asarray(node_a, dtype=float)
    b = np.asarray(node_b, dtype=float)
    diff = np.abs(b - a)
    axis = int(np.argmax(diff))
    if np.sum(diff > 1e-14) != 1:
        raise GeometryError("nodes are not on a common mesh line")

    def f(t):
        return geometry.level_set(a + t * (b - a))

    ts = np.linspace(0.0, 1.0, 9)
    vals = np.array([f(t) for t in ts])
    ins = vals < TIE_EPS
    flips = np.nonzero(ins[:-1] != ins[1:])[0]
    if len(flips) == 0:
        return None
    if len(flips) > 1:
        raise GeometryError(
            "interface crosses one mesh segment more than once; refine the grid")
    lo, hi = ts[flips[0]], ts[flips[0] + 1]
    flo, fhi = vals[flips[0]], vals[flips[0] + 1]
    if flo == 0.0:
        t_root = float(lo)
    elif fhi == 0.0:
        t_root = float(hi)
    elif flo * fhi > 0:
        # tie-break classified one endpoint against its sign; snap there
        t_root = float(lo if abs(flo) <= abs(fhi) else hi)
    else:
        t_root = brentq(f, lo, hi, xtol=1e-12)
    p = a + t_root * (b - a)

    if not geometry.is_single_sphere and geometry.seam_gap(p) < SEAM_EPS:
        dt = 1e-6 if ins[0] else -1e-6  # nudge toward the outside endpoint
        t_root = min(max(t_root + dt, 0.0), 1.0)
        p = a + t_root * (b - a)

    return Crossing(point=p, axis=axis,
                    normal=surface_normal(geometry, p), frac=float(t_root))
