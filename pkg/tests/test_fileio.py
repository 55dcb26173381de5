import io
import warnings

import numpy as np
import pytest
from pytest import approx

from pmpb import InputError, RunConfig, load_config
from pmpb.fileio import (MoleculeInput, parse_multipole_pqr, parse_xyzr,
                         serialize_multipole_pqr)

PLAIN = "ATOM 1 O HOH 1 0.0 0.0 0.0 -0.834 1.52\n"
FULL = ("ATOM 1 O HOH 1 0.1 -0.2 0.3 -0.5 1.5 "
        "0.01 0.02 -0.03 0.2 0.0 0.0 -0.1 0.0 -0.1\n")
POLAR = FULL.rstrip("\n") + " 0.837\n"


def test_plain_pqr_line():
    mol = parse_multipole_pqr(io.StringIO(PLAIN))
    s = mol.sites[0]
    assert s.q == approx(-0.834)
    assert s.radius == approx(1.52)
    assert np.all(s.d == 0.0)
    assert np.all(s.Q == 0.0)
    assert s.alpha == 0.0


def test_full_multipole_line():
    mol = parse_multipole_pqr(io.StringIO(FULL))
    s = mol.sites[0]
    assert s.position == approx(np.array([0.1, -0.2, 0.3]))
    assert s.d == approx(np.array([0.01, 0.02, -0.03]))
    assert s.Q[0, 0] == approx(0.2)
    assert s.Q[1, 1] == approx(-0.1)
    assert s.Q == approx(s.Q.T)
    assert s.alpha == 0.0


def test_polarizability_field():
    mol = parse_multipole_pqr(io.StringIO(POLAR))
    assert mol.sites[0].alpha == approx(0.837)


def test_hetatm_comments_and_pdb_noise():
    text = ("# a comment\n"
            "REMARK generated\n"
            "\n"
            "HETATM 1 NA ION 2 1.0 2.0 3.0 1.0 1.8\n"
            "TER\n"
            "END\n")
    mol = parse_multipole_pqr(io.StringIO(text))
    assert len(mol.sites) == 1
    assert mol.sites[0].position == approx(np.array([1.0, 2.0, 3.0]))


def test_round_trip_is_exact():
    rng = np.random.default_rng(5)
    lines = []
    for i in range(6):
        x, y, z = (float(v) for v in rng.uniform(-8, 8, 3))
        q = float(rng.uniform(-1, 1))
        d = [float(v) for v in rng.normal(0, 0.3, 3)]
        qxx, qxy, qxz, qyy, qyz = (float(v) for v in rng.normal(0, 0.2, 5))
        qzz = -qxx - qyy
        a = float(rng.uniform(0, 1))
        lines.append(f"ATOM {i+1} X UNK 1 {x!r} {y!r} {z!r} {q!r} 1.5 "
                     f"{d[0]!r} {d[1]!r} {d[2]!r} "
                     f"{qxx!r} {qxy!r} {qxz!r} {qyy!r} {qyz!r} {qzz!r} {a!r}")
    mol = parse_multipole_pqr(io.StringIO("\n".join(lines)))
    again = parse_multipole_pqr(io.StringIO(serialize_multipole_pqr(mol)))
    for a, b in zip(mol.sites, again.sites):
        assert np.array_equal(a.position, b.position)
        assert a.q == b.q and a.radius == b.radius and a.alpha == b.alpha
        assert np.array_equal(a.d, b.d)
        assert np.array_equal(a.Q, b.Q)


def test_detrace_small_trace_is_silent():
    line = ("ATOM 1 O HOH 1 0 0 0 0.0 1.5 0 0 0 "
            "1e-9 0 0 1e-9 0 1e-9\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mol = parse_multipole_pqr(io.StringIO(line))
    assert np.trace(mol.sites[0].Q) == approx(0.0, abs=1e-18)


def test_detrace_large_trace_warns():
    line = ("ATOM 1 O HOH 1 0 0 0 0.0 1.5 0 0 0 "
            "1e-8 0 0 1e-8 0 1e-8\n")
    with pytest.warns(UserWarning, match="trace"):
        mol = parse_multipole_pqr(io.StringIO(line))
    assert np.trace(mol.sites[0].Q) == approx(0.0, abs=1e-18)


def test_detrace_false_keeps_trace():
    line = ("ATOM 1 O HOH 1 0 0 0 0.0 1.5 0 0 0 "
            "0.3 0 0 0.3 0 0.3\n")
    mol = parse_multipole_pqr(io.StringIO(line), detrace=False)
    assert np.trace(mol.sites[0].Q) == approx(0.9)


def test_quad_scale():
    mol = parse_multipole_pqr(io.StringIO(FULL), quad_scale=3.0)
    assert mol.sites[0].Q[0, 0] == approx(0.6)


def test_empty_file_means_no_sites():
    with pytest.raises(InputError, match="no sites"):
        MoleculeInput([])


def test_duplicate_centers_rejected():
    text = PLAIN + "ATOM 2 H HOH 1 0.0 0.0 0.0 0.417 1.2\n"
    with pytest.raises(InputError, match="duplicate"):
        parse_multipole_pqr(io.StringIO(text))


@pytest.mark.parametrize("line,msg", [
    ("ATOM 1 O HOH 1 0.0 0.0 0.0 -0.834\n", "expected 9, 18, or 19"),
    ("ATOM 1 O HOH 1 0.0 zero 0.0 -0.834 1.52\n", "non-numeric"),
    ("ATOM 1 O HOH 1 0.0 nan 0.0 -0.834 1.52\n", "non-finite"),
    ("ATOM 1 O HOH 1 0.0 inf 0.0 -0.834 1.52\n", "non-finite"),
    ("ATOM 1 O HOH 1 0.0 0.0 0.0 -0.834 0.0\n", "radius"),
    ("CONECT 1 2\n", "unrecognized record"),
])
def test_malformed_pqr_lines(line, msg):
    with pytest.raises(InputError, match=msg):
        parse_multipole_pqr(io.StringIO(line))


def test_error_reports_line_number():
    text = PLAIN + "ATOM 2 H HOH 1 a b c 0.4 1.2\n"
    with pytest.raises(InputError, match=":2:"):
        parse_multipole_pqr(io.StringIO(text))


def test_xyzr_basic():
    spheres = parse_xyzr(io.StringIO("# solute\n0 0 0 2.0\n1.5 0 0 1.0\n"))
    assert len(spheres) == 2
    assert spheres[0][1] == approx(2.0)
    assert spheres[1][0] == approx(np.array([1.5, 0.0, 0.0]))


@pytest.mark.parametrize("text,msg", [
    ("0 0 0\n", "expected 4 fields"),
    ("0 0 0 -1.0\n", "radius"),
    ("", "no spheres"),
    ("0 0 x 1.0\n", "non-numeric"),
])
def test_xyzr_errors(text, msg):
    with pytest.raises(InputError, match=msg):
        parse_xyzr(io.StringIO(text))


def test_config_defaults():
    cfg = load_config(io.StringIO(""))
    assert cfg.eps_in == 1.0
    assert cfg.eps_out == 78.3
    assert cfg.boundary_condition == "SDH"
    assert cfg.bc_sphere_radius == 60.0
    assert cfg.ionic_strength == 0.0
    assert load_config() == cfg


def test_config_kappa_arithmetic():
    cfg = load_config(ionic_strength=0.015625 / 8.486902807)
    assert cfg.kappa_bar2 == approx(0.015625, rel=1e-15)
    assert cfg.kappa_bar == approx(0.125, rel=1e-15)


def test_config_parsing_and_overrides():
    text = ("eps_out = 80.0   # water\n"
            "grid_spacing = 0.25\n"
            "defect_correction = off\n"
            "scf_max_iters = 50\n")
    cfg = load_config(io.StringIO(text), eps_out=40.0)
    assert cfg.eps_out == 40.0          # kwargs beat the file
    assert cfg.grid_spacing == 0.25
    assert cfg.defect_correction is False
    assert cfg.scf_max_iters == 50


def test_config_bool_coercion():
    for token, expect in (("true", True), ("1", True), ("YES", True),
                          ("on", True), ("false", False), ("0", False)):
        cfg = load_config(io.StringIO(f"defect_correction = {token}\n"))
        assert cfg.defect_correction is expect


@pytest.mark.parametrize("text,msg", [
    ("grid_spacing\n", "key = value"),
    ("mesh = 0.5\n", "unknown key"),
    ("scf_max_iters = 2.5\n", "expected integer"),
    ("eps_in = soup\n", "non-numeric"),
])
def test_config_errors(text, msg):
    with pytest.raises(InputError, match=msg):
        load_config(io.StringIO(text))


def test_config_lenient_unknown_key_warns():
    with pytest.warns(UserWarning, match="unknown key"):
        cfg = load_config(io.StringIO("mesh = 0.5\n"), strict=False)
    assert cfg.grid_spacing == 0.5 or cfg.grid_spacing == 0.5  # defaults kept


@pytest.mark.parametrize("kw", [
    {"eps_in": 0.0},
    {"eps_out": -2.0},
    {"grid_spacing": 0.0},
    {"domain_padding": -0.1},
    {"bc_sphere_radius": 0.0},
    {"ionic_strength": -1e-3},
    {"scf_omega": 0.0},
    {"scf_omega": 2.0},
    {"boundary_condition": "PBC"},
])
def test_runconfig_validation(kw):
    with pytest.raises(InputError):
        RunConfig(**kw)


def test_binary_blob_is_input_error(tmp_path):
    p = tmp_path / "junk.pqr"
    p.write_bytes(b"ATOM \xff\xfe\x00junk")
    with pytest.raises(InputError, match="UTF-8"):
        parse_multipole_pqr(p)


def test_pqr_fuzz_never_crashes(rng):
    alphabet = list("ATOMHE 0123456789.eE+-\n#RMKTND\t")
    for _ in range(200):
        n = int(rng.integers(0, 200))
        text = "".join(rng.choice(alphabet) for _ in range(n))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mol = parse_multipole_pqr(io.StringIO(text))
            assert mol.sites
        except InputError:
            pass


def test_config_fuzz_never_crashes(rng):
    alphabet = list("abcdefgh_= 0123456789.#\n")
    for _ in range(200):
        n = int(rng.integers(0, 120))
        text = "".join(rng.choice(alphabet) for _ in range(n))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cfg = load_config(io.StringIO(text))
            assert isinstance(cfg, RunConfig)
        except InputError:
            pass
