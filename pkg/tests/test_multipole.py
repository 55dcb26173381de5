import numpy as np
import pytest
from pytest import approx

from pmpb import (IdentityDamping, InputError, MultipoleSite, ScaledDamping,
                  SingularEvaluation, Units, green_gradient, green_hessian,
                  green_potential, interaction_tensor, total_coulomb)
from pmpb.multipole import gradient_many, potential_many


def unit_site(**kw):
    return MultipoleSite(np.zeros(3), 1.0, **kw)


def test_units_constants():
    assert Units.coulomb_constant == 332.06364
    assert Units.kappa_bar_coeff == 8.486902807


def test_monopole_potential():
    s = unit_site(q=1.0)
    assert green_potential(s, np.array([2.0, 0.0, 0.0])) == approx(0.5)


def test_dipole_potential():
    s = unit_site(d=np.array([1.0, 0.0, 0.0]))
    assert green_potential(s, np.array([2.0, 0.0, 0.0])) == approx(0.25)


def test_quadrupole_potential():
    Q = np.zeros((3, 3))
    Q[0, 0] = 1.0
    s = unit_site(Q=Q)
    # s^T Q s / (2 |s|^5) = 4 / 64
    assert green_potential(s, np.array([2.0, 0.0, 0.0])) == approx(0.0625)


def test_monopole_gradient():
    s = unit_site(q=1.0)
    assert green_gradient(s, np.array([2.0, 0.0, 0.0])) == approx(
        np.array([-0.25, 0.0, 0.0]))
    assert green_gradient(s, np.array([0.0, 0.0, 2.0])) == approx(
        np.array([0.0, 0.0, -0.25]))


def test_monopole_hessian_xx():
    s = unit_site(q=1.0)
    H = green_hessian(s, np.array([2.0, 0.0, 0.0]))
    assert H[0, 0] == approx(0.25)
    assert H == approx(H.T)


def test_hessian_is_traceless():
    rng = np.random.default_rng(7)
    s = unit_site(q=0.3, d=np.array([0.2, -0.1, 0.4]),
                  Q=np.diag([0.2, 0.1, -0.3]))
    for _ in range(100):
        r = rng.uniform(-5.0, 5.0, 3)
        if np.linalg.norm(r) < 0.5:
            continue
        H = green_hessian(s, r)
        assert abs(np.trace(H)) <= 1e-10 * max(1.0, np.abs(H).max())


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    s = MultipoleSite(np.array([0.4, -0.2, 0.9]), 1.0, q=-0.7,
                      d=np.array([0.3, 0.1, -0.2]),
                      Q=np.array([[0.2, 0.05, 0.0],
                                  [0.05, -0.1, 0.02],
                                  [0.0, 0.02, -0.1]]))
    for dist in (0.5, 1.0, 3.0, 10.0, 50.0):
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        r = s.position + dist * u
        step = 1e-5 * dist
        g = green_gradient(s, r)
        gfd = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = step
            gfd[k] = (green_potential(s, r + e)
                      - green_potential(s, r - e)) / (2 * step)
        assert np.abs(g - gfd).max() <= 1e-5 * max(1.0, np.abs(g).max())


def test_hessian_matches_finite_differences():
    s = MultipoleSite(np.array([0.4, -0.2, 0.9]), 1.0, q=-0.7,
                      d=np.array([0.3, 0.1, -0.2]),
                      Q=np.array([[0.2, 0.05, 0.0],
                                  [0.05, -0.1, 0.02],
                                  [0.0, 0.02, -0.1]]))
    r = s.position + np.array([1.1, -0.7, 0.4])
    step = 1e-5
    H = green_hessian(s, r)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        col = (green_gradient(s, r + e) - green_gradient(s, r - e)) / (2 * step)
        assert np.abs(H[:, k] - col).max() <= 1e-5 * max(1.0, np.abs(H).max())


def test_singular_evaluation_is_a_hard_error():
    s = unit_site(q=1.0)
    with pytest.raises(SingularEvaluation):
        green_potential(s, np.zeros(3))
    with pytest.raises(SingularEvaluation):
        green_gradient(s, s.position + 1e-13)
    with pytest.raises(SingularEvaluation):
        potential_many([s], np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(SingularEvaluation):
        gradient_many([s], np.zeros((1, 3)))


def test_total_coulomb_pair():
    sites = [MultipoleSite(np.array([1.0, 0.0, 0.0]), 1.0, q=1.0),
             MultipoleSite(np.array([-1.0, 0.0, 0.0]), 1.0, q=1.0)]
    v = total_coulomb(sites, np.array([0.0, 2.0, 0.0]))
    assert v == approx(2.0 / np.sqrt(5.0))


def test_total_coulomb_empty():
    assert total_coulomb([], np.array([1.0, 2.0, 3.0])) == 0.0


def test_induced_equals_permanent_dipole():
    r = np.array([1.3, -0.4, 2.2])
    mu = np.array([[0.11, -0.23, 0.07]])
    bare = [MultipoleSite(np.zeros(3), 1.0, q=0.5)]
    perm = [MultipoleSite(np.zeros(3), 1.0, q=0.5, d=mu[0])]
    assert total_coulomb(bare, r, induced=mu) == total_coulomb(perm, r)


def test_superposition_append_single_site():
    rng = np.random.default_rng(12)
    sites = [MultipoleSite(rng.uniform(-2, 2, 3), 1.0, q=rng.uniform(-1, 1),
                           d=rng.normal(0, 0.2, 3)) for _ in range(4)]
    extra = MultipoleSite(np.array([3.0, 3.0, 3.0]), 1.0, q=-0.4)
    r = np.array([0.3, 5.0, -1.0])
    total = total_coulomb(sites + [extra], r)
    assert total == total_coulomb(sites, r) + total_coulomb([extra], r)


def test_superposition_general():
    rng = np.random.default_rng(13)
    a = [MultipoleSite(rng.uniform(-2, 2, 3), 1.0, q=rng.uniform(-1, 1))
         for _ in range(3)]
    b = [MultipoleSite(rng.uniform(-2, 2, 3) + 5.0, 1.0, q=rng.uniform(-1, 1))
         for _ in range(3)]
    r = np.array([-4.0, 1.0, 2.5])
    lhs = total_coulomb(a + b, r)
    rhs = total_coulomb(a, r) + total_coulomb(b, r)
    assert abs(lhs - rhs) <= 5e-15 * max(abs(lhs), abs(rhs), 1.0)


def test_moment_scaling_is_exact():
    s = MultipoleSite(np.zeros(3), 1.0, q=0.3, d=np.array([0.1, 0.2, -0.3]),
                      Q=np.diag([0.2, -0.1, -0.1]))
    s2 = MultipoleSite(np.zeros(3), 1.0, q=0.6, d=2 * s.d, Q=2 * s.Q)
    r = np.array([1.7, 0.4, -0.8])
    assert green_potential(s2, r) == 2.0 * green_potential(s, r)


def test_interaction_tensor_unit_separation():
    a = MultipoleSite(np.zeros(3), 1.0)
    b = MultipoleSite(np.array([1.0, 0.0, 0.0]), 1.0)
    T = interaction_tensor(a, b)
    assert T == approx(np.diag([2.0, -1.0, -1.0]))


def test_interaction_tensor_symmetric_traceless():
    a = MultipoleSite(np.array([0.3, 0.2, -0.9]), 1.0)
    b = MultipoleSite(np.array([-1.2, 0.8, 0.4]), 1.0)
    T = interaction_tensor(a, b)
    assert T == approx(T.T)
    assert abs(np.trace(T)) <= 1e-13


def test_interaction_tensor_is_dipole_field():
    # T mu must equal minus the gradient of a point-dipole potential
    a = MultipoleSite(np.array([1.4, -0.3, 0.7]), 1.0)
    mu = np.array([0.2, -0.5, 0.1])
    b = MultipoleSite(np.array([-0.8, 1.1, -0.2]), 1.0, d=mu)
    T = interaction_tensor(a, b)
    g = green_gradient(b, a.position)
    assert T @ mu == approx(-g, abs=1e-14)


def test_interaction_tensor_coincident_error():
    a = MultipoleSite(np.zeros(3), 1.0)
    with pytest.raises(SingularEvaluation):
        interaction_tensor(a, a)


def test_damping_hooks():
    a = MultipoleSite(np.zeros(3), 1.0)
    b = MultipoleSite(np.array([2.0, 0.0, 0.0]), 1.0)
    T = interaction_tensor(a, b)
    assert np.array_equal(interaction_tensor(a, b, IdentityDamping()), T)
    scaled = interaction_tensor(a, b, ScaledDamping(lambda s: 0.5))
    assert scaled == approx(0.5 * T)


def test_site_validation():
    with pytest.raises(InputError, match="radius"):
        MultipoleSite(np.zeros(3), -1.0)
    with pytest.raises(InputError, match="polarizability"):
        MultipoleSite(np.zeros(3), 1.0, alpha=-0.1)
    with pytest.raises(InputError, match="symmetric"):
        MultipoleSite(np.zeros(3), 1.0,
                      Q=np.array([[0.0, 1.0, 0.0],
                                  [0.0, 0.0, 0.0],
                                  [0.0, 0.0, 0.0]]))


def test_detraced_removes_trace():
    s = MultipoleSite(np.zeros(3), 1.0, Q=np.diag([1.0, 1.0, 1.0]))
    t = s.detraced()
    assert np.trace(t.Q) == approx(0.0, abs=1e-15)
    assert np.trace(s.Q) == approx(3.0)


def test_many_point_evaluators_match_loops():
    rng = np.random.default_rng(21)
    sites = [MultipoleSite(rng.uniform(-2, 2, 3), 1.0, q=rng.uniform(-1, 1),
                           d=rng.normal(0, 0.2, 3),
                           Q=np.diag(rng.normal(0, 0.1, 3)))
             for _ in range(5)]
    pts = rng.uniform(3.0, 6.0, (40, 3))
    v = potential_many(sites, pts)
    g = gradient_many(sites, pts)
    for i, p in enumerate(pts):
        vi = sum(green_potential(s, p) for s in sites)
        gi = sum(green_gradient(s, p) for s in sites)
        assert abs(v[i] - vi) <= 1e-13 * max(1.0, abs(vi))
        assert np.abs(g[i] - gi).max() <= 1e-13 * max(1.0, np.abs(gi).max())


def test_eps_scaling_in_many_point_evaluators():
    sites = [MultipoleSite(np.zeros(3), 1.0, q=1.0)]
    pts = np.array([[2.0, 0.0, 0.0]])
    assert potential_many(sites, pts, eps_in=4.0)[0] == approx(0.125)
    assert gradient_many(sites, pts, eps_in=4.0)[0] == approx(
        np.array([-0.0625, 0.0, 0.0]))
