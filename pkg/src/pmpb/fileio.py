"""Input parsing: extended-PQR multipole files, .xyzr spheres, run config.

Extended-PQR record layout (whitespace-separated, one atom per line):

    ATOM idx name resname resid x y z q r dx dy dz Qxx Qxy Qxz Qyy Qyz Qzz

A trailing 20th numeric token is read as the polarizability alpha (A^3).
Plain PQR lines (stopping after r) parse with zero higher moments. Lines
starting with '#' (and REMARK/TER/END records) are ignored. Moments are
taken as already rotated to the lab frame.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .multipole import MultipoleSite, Units, _TRACE_WARN


@dataclass
class MoleculeInput:
    sites: list
    source_path: str = "<stream>"
    convention_flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sites:
            raise InputError(f"{self.source_path}: no sites")
        centers = np.array([s.position for s in self.sites])
        if len(centers) > 1:
            dmin = min(np.linalg.norm(centers[i] - centers[j])
                       for i in range(len(centers))
                       for j in range(i + 1, len(centers)))
            if dmin == 0.0:
                raise InputError(f"{self.source_path}: duplicate site centers")


_CONFIG_DEFAULTS = {
    "eps_in": 1.0,
    "eps_out": 78.3,
    "ionic_strength": 0.0,          # molar; kappa_bar^2 = 8.486902807 * I_s
    "grid_spacing": 0.5,
    "domain_padding": 3.0,
    "boundary_condition": "SDH",
    "bc_sphere_radius": 60.0,
    "scf_omega": 0.7,
    "scf_tolerance": 1e-6,
    "scf_max_iters": 200,
    "scf_outer_max": 100,
    "solver_tolerance": 1e-8,
    "solver_max_iters": 0,          # 0 -> derived from grid size
    "defect_correction": True,
    "node_budget": 40_000_000,
    "quad_scale": 1.0,              # CLI scale flag for imported quadrupoles
}


@dataclass
class RunConfig:
    eps_in: float = 1.0
    eps_out: float = 78.3
    ionic_strength: float = 0.0
    grid_spacing: float = 0.5
    domain_padding: float = 3.0
    boundary_condition: str = "SDH"
    bc_sphere_radius: float = 60.0
    scf_omega: float = 0.7
    scf_tolerance: float = 1e-6
    scf_max_iters: int = 200
    scf_outer_max: int = 100
    solver_tolerance: float = 1e-8
    solver_max_iters: int = 0
    defect_correction: bool = True
    node_budget: int = 40_000_000
    quad_scale: float = 1.0

    def __post_init__(self):
        if self.eps_in <= 0 or self.eps_out <= 0:
            raise InputError("dielectric constants must be positive")
        if self.grid_spacing <= 0:
            raise InputError("grid_spacing must be positive")
        if self.domain_padding < 0:
            raise InputError("domain_padding must be nonnegative")
        if self.bc_sphere_radius <= 0:
            raise InputError("bc_sphere_radius must be positive")
        if self.ionic_strength < 0:
            raise InputError("ionic_strength must be nonnegative")
        if not 0.0 < self.scf_omega < 2.0:
            raise InputError("scf_omega must lie in (0, 2)")
        if self.boundary_condition not in ("SDH", "MDH"):
            raise InputError("boundary_condition must be SDH or MDH")

    @property
    def kappa_bar2(self) -> float:
        return Units.kappa_bar_coeff * self.ionic_strength

    @property
    def kappa_bar(self) -> float:
        return math.sqrt(self.kappa_bar2)

    def as_dict(self):
        d = {k: getattr(self, k) for k in _CONFIG_DEFAULTS}
        d["kappa_bar"] = self.kappa_bar
        return d


def _open(path_or_stream):
    if hasattr(path_or_stream, "read"):
        return path_or_stream, "<stream>", False
    return open(path_or_stream, "r", encoding="utf-8"), str(path_or_stream), True


def _float(tok, path, ln):
    try:
        v = float(tok)
    except ValueError:
        raise InputError(f"{path}:{ln}: non-numeric token {tok!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{path}:{ln}: non-finite value {tok!r}")
    return v


def parse_multipole_pqr(path_or_stream, detrace=True, quad_scale=1.0):
    """Parse an extended-PQR file into a MoleculeInput.

    detrace: subtract trace/3 * I from quadrupoles, warning when the trace
    exceeds 1e-8 (imported tensors may carry rounding).
    """
    f, path, close = _open(path_or_stream)
    sites = []
    try:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if (not line or line.startswith("#")
                    or line.split(None, 1)[0] in ("REMARK", "TER", "END")):
                continue
            toks = line.split()
            if toks[0] not in ("ATOM", "HETATM"):
                raise InputError(f"{path}:{ln}: unrecognized record {toks[0]!r}")
            body = toks[1:]
            if len(body) not in (9, 18, 19):
                raise InputError(
                    f"{path}:{ln}: expected 9, 18, or 19 fields after "
                    f"{toks[0]}, got {len(body)}")
            nums = [_float(t, path, ln) for t in body[4:]]
            x, y, z, q, r = nums[:5]
            if r <= 0:
                raise InputError(f"{path}:{ln}: radius must be positive")
            d = np.zeros(3)
            Q = np.zeros((3, 3))
            alpha = 0.0
            if len(nums) >= 14:
                d = np.array(nums[5:8])
                qxx, qxy, qxz, qyy, qyz, qzz = nums[8:14]
                Q = quad_scale * np.array([[qxx, qxy, qxz],
                                           [qxy, qyy, qyz],
                                           [qxz, qyz, qzz]])
                if len(nums) == 15:
                    alpha = nums[14]
            site = MultipoleSite((x, y, z), r, q, d, Q, alpha)
            tr = float(np.trace(site.Q))
            if detrace:
                if abs(tr) > _TRACE_WARN:
                    warnings.warn(
                        f"{path}:{ln}: quadrupole trace {tr:.3e} removed")
                site = site.detraced()
            sites.append(site)
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8 text") from None
    finally:
        if close:
            f.close()
    return MoleculeInput(sites, source_path=path,
                         convention_flags={"traceless": detrace,
                                           "global_frame": True})


def serialize_multipole_pqr(mol: MoleculeInput) -> str:
    """Inverse of parse_multipole_pqr, full float precision."""
    out = []
    for i, s in enumerate(mol.sites, start=1):
        Q = s.Q
        fields = [f"{float(v)!r}" for v in (
            *s.position, s.q, s.radius, *s.d,
            Q[0, 0], Q[0, 1], Q[0, 2], Q[1, 1], Q[1, 2], Q[2, 2], s.alpha)]
        out.append(f"ATOM {i} X UNK 1 " + " ".join(fields))
    return "\n".join(out) + "\n"


def parse_xyzr(path_or_stream):
    """Parse x y z r lines into an ordered list of (center, radius)."""
    f, path, close = _open(path_or_stream)
    spheres = []
    try:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) != 4:
                raise InputError(f"{path}:{ln}: expected 4 fields, got {len(toks)}")
            x, y, z, r = (_float(t, path, ln) for t in toks)
            if r <= 0:
                raise InputError(f"{path}:{ln}: radius must be positive")
            spheres.append((np.array([x, y, z]), r))
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8 text") from None
    finally:
        if close:
            f.close()
    if not spheres:
        raise InputError(f"{path}: no spheres")
    return spheres


def load_config(path_or_stream=None, strict=True, **overrides):
    """Read a flat `key = value` config file; absent keys take defaults."""
    values = dict(_CONFIG_DEFAULTS)
    if path_or_stream is not None:
        f, path, close = _open(path_or_stream)
        try:
            for ln, raw in enumerate(f, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{ln}: expected key = value")
                key, _, val = line.partition("=")
                key, val = key.strip(), val.strip()
                if key not in _CONFIG_DEFAULTS:
                    if strict:
                        raise InputError(f"{path}:{ln}: unknown key {key!r}")
                    warnings.warn(f"{path}:{ln}: ignoring unknown key {key!r}")
                    continue
                ref = _CONFIG_DEFAULTS[key]
                if isinstance(ref, bool):
                    values[key] = val.lower() in ("1", "true", "yes", "on")
                elif isinstance(ref, int):
                    try:
                        values[key] = int(val)
                    except ValueError:
                        raise InputError(
                            f"{path}:{ln}: expected integer, got {val!r}"
                        ) from None
                elif isinstance(ref, float):
                    values[key] = _float(val, path, ln)
                else:
                    values[key] = val
        except UnicodeDecodeError:
            raise InputError(f"{path}: not valid UTF-8 text") from None
        finally:
            if close:
                f.close()
    values.update(overrides)
    return RunConfig(**values)
