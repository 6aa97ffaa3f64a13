import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cycle, path2, random_connected_graph, star, triangle
from hdtwalk.analysis import (
    KernelMatrix,
    NotReversibleError,
    OdeInstabilityError,
    build_mh_kernel,
    build_srrw_kernel,
    cost_scaled_comparison,
    covariance_base,
    covariance_hdt,
    covariance_srrw,
    iid_empirical_measures,
    jacobian_at_mu,
    jacobian_fd_check,
    lyapunov,
    lyapunov_descent_check,
    ode_integrate,
    reversible_spectrum,
    scaled_error_covariance,
    write_spectral_csv,
)
from hdtwalk.graph import from_edges


def fundamental_covariance(P, mu):
    """Asymptotic covariance of the empirical measure via the fundamental matrix."""
    n = len(mu)
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), mu))
    D = np.diag(mu)
    return D @ Z + Z.T @ D - D - np.outer(mu, mu)


def test_triangle_kernel():
    K = build_mh_kernel(triangle(), np.ones(3))
    np.testing.assert_array_equal(K.entries, (np.ones((3, 3)) - np.eye(3)) / 2)


def test_star_kernel():
    # detailed balance fixes P_leaf,center = mu_c P_c,leaf / mu_leaf = 1/5
    K = build_mh_kernel(star(5), np.ones(6)).entries
    assert K[0, 0] == 0 and np.allclose(K[0, 1:], 0.2)
    assert np.isclose(K[1, 0], 0.2) and np.isclose(K[1, 1], 0.8)
    assert K.sum(axis=1) == pytest.approx(np.ones(6))


def test_triangle_covariances():
    rep = reversible_spectrum(build_mh_kernel(triangle(), np.ones(3)))
    assert rep.eigenvalues.tolist() == pytest.approx([1.0, -0.5, -0.5])
    np.testing.assert_allclose(np.diag(rep.v_base()), 2 / 27, atol=1e-12)
    np.testing.assert_allclose(np.diag(rep.v_hdt(1.0)), 2 / 81, atol=1e-12)
    np.testing.assert_allclose(np.diag(rep.v_srrw(1.0)), 1 / 27, atol=1e-12)


def test_path2_base_is_zero():
    rep = reversible_spectrum(build_mh_kernel(path2(), np.ones(2)))
    assert rep.eigenvalues.tolist() == [1.0, -1.0]
    assert np.all(rep.v_base() == 0.0)


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_base_covariance_matches_fundamental_matrix(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 15))
    g = random_connected_graph(n, int(rng.integers(0, 2 * n)), rng)
    mu = rng.uniform(0.1, 3, n)
    K = build_mh_kernel(g, mu)
    rep = reversible_spectrum(K)
    V = rep.v_base()
    np.testing.assert_allclose(V, fundamental_covariance(K.entries, K.target), atol=1e-9)
    # spectral invariants: u_1 = mu, v_1 = 1, u_i^T v_j = delta_ij
    np.testing.assert_allclose(rep.left[:, 0], K.target, atol=1e-15)
    np.testing.assert_allclose(rep.left.T @ rep.right, np.eye(n), atol=1e-9)
    # V 1 = 0 and V is PSD
    np.testing.assert_allclose(V.sum(axis=1), 0, atol=1e-9)
    assert np.linalg.eigvalsh(V).min() > -1e-9
    alpha = float(rng.uniform(0, 6))
    np.testing.assert_allclose(rep.v_hdt(alpha), V / (2 * alpha + 1), rtol=1e-15)
    # both self-repellent covariances are dominated by the base one
    assert np.linalg.eigvalsh(V - rep.v_srrw(alpha)).min() > -1e-9
    assert np.linalg.eigvalsh(V - rep.v_hdt(alpha)).min() > -1e-9


def test_iid_kernel_covariance():
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    rep = reversible_spectrum(KernelMatrix(np.tile(mu, (4, 1)), mu))
    np.testing.assert_allclose(rep.v_base(), np.diag(mu) - np.outer(mu, mu), atol=1e-14)
    # Monte Carlo cross-check of the scaled-error estimator on i.i.d. draws
    m = iid_empirical_measures(mu, 500, 4000, np.random.default_rng(0))
    V = scaled_error_covariance(m, mu, 500)
    assert abs(np.trace(V) - np.trace(rep.v_base())) / np.trace(rep.v_base()) < 0.05


def test_srrw_kernel_stationary(rng):
    g = random_connected_graph(12, 10, rng)
    mu = rng.uniform(0.2, 2, 12)
    x = rng.uniform(0.2, 2, 12)
    K, pi = build_srrw_kernel(g, mu, x, 2.0)
    np.testing.assert_allclose(pi @ K.entries, pi, atol=1e-14)
    assert K.reversibility_residual() < 1e-14
    _, pi_mu = build_srrw_kernel(g, mu, mu, 2.0)
    np.testing.assert_allclose(pi_mu, mu / mu.sum(), atol=1e-14)


def test_not_reversible():
    P = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    with pytest.raises(NotReversibleError):
        reversible_spectrum(KernelMatrix(P, np.ones(3) / 3))


def test_disconnected_has_no_base_covariance():
    K = build_mh_kernel(from_edges([(0, 1), (2, 3)]), np.ones(4))
    with pytest.raises(ValueError, match="reducible"):
        covariance_base(reversible_spectrum(K))


def test_cost_comparison_triangle():
    g = triangle()
    rep = reversible_spectrum(build_mh_kernel(g, np.ones(3)))
    cmp = cost_scaled_comparison(rep, g, np.ones(3) / 3, 1.0)
    assert cmp.expected_neighborhood == pytest.approx(3.0)
    np.testing.assert_allclose(np.diag(cmp.hdt_scaled), 4 / 81)
    np.testing.assert_allclose(np.diag(cmp.srrw_scaled), 4 / 27)
    assert cmp.min_eigenvalue >= -1e-12


def test_ode_converges_and_descends(rng):
    mu = rng.dirichlet(np.ones(6))
    x0 = rng.dirichlet(np.ones(6))
    for alpha in (0.0, 1.0, 5.0):
        traj = ode_integrate(mu, alpha, x0, 0.05, 500)
        assert traj.shape == (501, 6)
        np.testing.assert_allclose(traj.sum(axis=1), 1.0, atol=1e-12)
        assert lyapunov_descent_check(traj, mu, alpha)
        assert np.abs(traj[-1] - mu).sum() < 1e-6
    with pytest.raises(ValueError):
        ode_integrate(mu, 1.0, np.r_[x0[:-1], 0.0], 0.1, 5)
    with pytest.raises(OdeInstabilityError):
        ode_integrate(mu, 50.0, x0, 1.0, 50)


def test_jacobian(rng):
    mu = rng.dirichlet(np.ones(7))
    for alpha in (0.0, 0.5, 3.0):
        assert jacobian_fd_check(mu, alpha, 1e-5) < 1e-6
        ev = np.linalg.eigvals(jacobian_at_mu(mu, alpha)).real
        assert ev.max() <= -1 + 1e-9
        assert np.sort(ev)[0] == pytest.approx(-(alpha + 1))


def test_spectral_csv():
    g = cycle(4)
    rep = reversible_spectrum(build_mh_kernel(g, np.ones(4)))
    buf = io.StringIO()
    write_spectral_csv(rep, g, 2.0, buf)
    lines = buf.getvalue().splitlines()
    meta = json.loads(lines[0][2:])
    assert meta["nodes"] == 4 and meta["alpha"] == 2.0
    blocks = [l for l in lines if l.startswith("# block:")]
    assert blocks == ["# block: eigenvalues", "# block: V_base", "# block: V_hdt", "# block: V_srrw"]
    start = lines.index("# block: V_base") + 1
    V = np.array([[float(v) for v in l.split(",")] for l in lines[start : start + 4]])
    np.testing.assert_array_equal(V, rep.v_base())


def test_dense_cap():
    g = cycle(2001)
    with pytest.raises(ValueError, match="capped"):
        build_mh_kernel(g, np.ones(2001))


def test_negative_alpha_rejected():
    rep = reversible_spectrum(build_mh_kernel(triangle(), np.ones(3)))
    with pytest.raises(ValueError):
        covariance_hdt(rep.v_base(), -1)
    with pytest.raises(ValueError):
        covariance_srrw(rep, -1)


def test_ode_fixed_point_and_linear_case():
    mu = np.array([0.2, 0.3, 0.5])
    traj = ode_integrate(mu, 3.0, mu, 0.1, 50)
    np.testing.assert_allclose(traj, np.tile(mu, (51, 1)), atol=1e-15)
    x0 = np.array([0.6, 0.3, 0.1])
    for h in (0.2, 0.1):
        traj = ode_integrate(mu, 0.0, x0, h, int(round(2 / h)))
        exact = mu + np.exp(-2.0) * (x0 - mu)
        err = np.abs(traj[-1] - exact).max()
        assert err < 5e-6 * h**4 / 0.1**4
    # halving h cuts the error by about 2^4
    e1 = np.abs(ode_integrate(mu, 0.0, x0, 0.2, 10)[-1] - exact).max()
    e2 = np.abs(ode_integrate(mu, 0.0, x0, 0.1, 20)[-1] - exact).max()
    assert 12 < e1 / e2 < 20


def test_lyapunov_values():
    mu = np.ones(3) / 3
    assert lyapunov(mu, 1.0, mu) == pytest.approx(1.0)
    assert lyapunov(mu, 1.0, [0.5, 0.25, 0.25]) == pytest.approx(10 / 9)
    grid = [(a, b, 1 - a - b) for a in np.linspace(0.01, 0.98, 40) for b in np.linspace(0.01, 0.98, 40) if a + b < 0.99]
    assert min(lyapunov(mu, 2.0, x) for x in grid) >= 1 - 1e-12


def test_jacobian_examples():
    assert np.array_equal(jacobian_at_mu(np.ones(4) / 4, 0.0), -np.eye(4))
    J = jacobian_at_mu(np.ones(3) / 3, 1.0)
    np.testing.assert_allclose(J, np.ones((3, 3)) / 3 - 2 * np.eye(3))
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(J).real), [-2, -2, -1])


def test_jacobian_fd_error_is_second_order(rng):
    mu = rng.dirichlet(np.ones(15))
    e1 = jacobian_fd_check(mu, 5.0, 1e-5)
    e2 = jacobian_fd_check(mu, 5.0, 5e-6)
    assert 3 < e1 / e2 < 5
