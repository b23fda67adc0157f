import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stockloan.errors import InvalidGrid, PsorDivergence
from stockloan.lcp import (
    LcpProblem,
    PsorSettings,
    assemble_operator,
    build_grid,
    psor,
    solve_lcp,
)


def test_uniform_grid_examples():
    g = build_grid(400, 5, 1, 2)
    np.testing.assert_array_equal(g.v_nodes, [0, 100, 200, 300, 400])
    np.testing.assert_array_equal(g.t_nodes, [0, 1])
    g = build_grid(400, 401, 5, 1001)
    assert np.allclose(np.diff(g.v_nodes), 1.0)
    assert np.allclose(np.diff(g.t_nodes), 0.005)
    assert (g.nv, g.nt, g.v_max, g.T) == (401, 1001, 400.0, 5.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(10, 1e4), st.integers(3, 500), st.floats(0.05, 0.95), st.floats(0.05, 2.0))
def test_geometric_grid_invariants(v_max, nv, frac, stretch):
    g = build_grid(v_max, nv, 1.0, 3, spacing="geometric", center=frac * v_max, stretch=stretch)
    assert g.v_nodes[0] == 0.0 and g.v_nodes[-1] == v_max
    assert np.all(np.diff(g.v_nodes) > 0)


def test_geometric_grid_concentrates_near_center():
    g = build_grid(500, 201, 1, 2, spacing="geometric", center=100)
    h = np.diff(g.v_nodes)
    near = h[np.argmin(np.abs(g.v_nodes[:-1] - 100))]
    assert near < 500 / 200 < h[-1]


@pytest.mark.parametrize(
    "args",
    [(0, 5, 1, 2), (100, 2, 1, 2), (100, 5, 1, 1), (100, 5, 0, 2), (-1, 5, 1, 2)],
)
def test_invalid_grid(args):
    with pytest.raises(InvalidGrid):
        build_grid(*args)


def test_invalid_spacing_and_center():
    with pytest.raises(InvalidGrid):
        build_grid(100, 5, 1, 2, spacing="chebyshev")
    with pytest.raises(InvalidGrid):
        build_grid(100, 5, 1, 2, spacing="geometric", center=150)


def test_operator_keeps_m_matrix_sign_pattern():
    v = np.linspace(0, 10, 11)
    vi = v[1:-1]
    a, b, c = assemble_operator(v, -5.0 * vi, 1e-3 * vi**2, 0.1)
    assert np.all(a >= 0) and np.all(c >= 0)
    assert np.allclose(a + b + c, -0.1)


def test_operator_is_central_when_diffusion_dominates():
    v = np.linspace(0, 1, 11)
    a, b, c = assemble_operator(v, np.full(9, 0.3), np.full(9, 1.0), 0.0)
    h = 0.1
    np.testing.assert_allclose(a, 1 / h**2 - 0.3 / (2 * h))
    np.testing.assert_allclose(c, 1 / h**2 + 0.3 / (2 * h))


def _heat(obstacle=None, terminal=lambda v: np.ones_like(v), left=lambda t: 1.0, side="upper", **kw):
    return LcpProblem(
        drift=lambda v, t: 0.0 * v,
        diffusion=lambda v, t: 0.5 * 0.16 * v**2,
        terminal=terminal,
        left_boundary=left,
        obstacle=obstacle,
        side=side,
        **kw,
    )


def test_constant_solution():
    g = build_grid(400, 81, 1.0, 51)
    sol = solve_lcp(_heat(obstacle=lambda v, t: np.ones_like(v)), g)
    np.testing.assert_allclose(sol.surface, 1.0, atol=1e-12)
    assert sol.max_residual < 1e-9


def _dense_theta(problem, grid, theta, rannacher):
    """Reference theta-scheme built from full matrices and numpy.linalg.solve."""
    v, t = grid.v_nodes, grid.t_nodes
    n = v.size
    u = problem.terminal(v).astype(float)
    out = [u]

    def full(tk):
        h = np.diff(v)
        A = np.zeros((n, n))
        for i in range(1, n - 1):
            hm, hp = h[i - 1], h[i]
            mu, D = problem.drift(v[i], tk), problem.diffusion(v[i], tk)
            A[i, i - 1] = 2 * D / (hm * (hm + hp)) - mu * hp / (hm * (hm + hp))
            A[i, i + 1] = 2 * D / (hp * (hm + hp)) + mu * hm / (hp * (hm + hp))
            A[i, i] = -A[i, i - 1] - A[i, i + 1] - problem.discount(tk)
        return A

    for m in range(len(t) - 2, -1, -1):
        dt = t[m + 1] - t[m]
        th = 1.0 if len(t) - 2 - m < rannacher else theta
        M = np.eye(n) - th * dt * full(t[m])
        rhs = u + (1 - th) * dt * full(t[m + 1]) @ u
        M[0, :] = 0
        M[0, 0] = 1
        rhs[0] = problem.left_boundary(t[m])
        M[-1, :] = 0
        M[-1, -1] = 1
        rhs[-1] = problem.right_boundary(t[m])
        u = np.linalg.solve(M, rhs)
        out.append(u)
    return np.array(out[::-1])


@pytest.mark.parametrize("theta, rannacher", [(0.5, 4), (1.0, 0), (0.0, 0), (0.7, 2)])
def test_unconstrained_matches_dense_theta_scheme(theta, rannacher):
    L, T, r = 100.0, 1.0, 0.03
    problem = LcpProblem(
        drift=lambda v, t: 0.01 * v,
        diffusion=lambda v, t: 0.5 * 0.3**2 * v**2,
        terminal=lambda v: np.maximum(v - L, 0.0),
        left_boundary=lambda t: 0.0,
        discount=lambda t: r,
        right_boundary=lambda t: 300.0 - L * math.exp(-r * (T - t)),
    )
    nt = 41 if theta else 2001
    g = build_grid(300, 61, T, nt)
    sol = solve_lcp(problem, g, theta=theta, rannacher_steps=rannacher)
    ref = _dense_theta(problem, g, theta, rannacher)
    assert np.max(np.abs(sol.surface - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))
    assert sol.obstacle is None and not sol.active_mask.any()


def _exact_problem(a=1.0, mu=0.5, D=0.5, T=1.0, v_max=1.0):
    c = a * mu + D * a * a
    exact = lambda v, t: np.exp(a * v + c * (T - t))
    p = LcpProblem(
        drift=lambda v, t: np.full_like(v, mu),
        diffusion=lambda v, t: np.full_like(v, D),
        terminal=lambda v: exact(v, T),
        left_boundary=lambda t: float(exact(0.0, t)),
        right_boundary=lambda t: float(exact(v_max, t)),
    )
    return p, exact


def _errors(theta, sizes):
    p, exact = _exact_problem()
    out = []
    for n in sizes:
        g = build_grid(1.0, n + 1, 1.0, n + 1)
        sol = solve_lcp(p, g, theta=theta, rannacher_steps=0)
        out.append(np.max(np.abs(sol.surface[0] - exact(g.v_nodes, 0.0))))
    return np.array(out)


@pytest.mark.parametrize("theta, order", [(1.0, 1.0), (0.5, 2.0)])
def test_convergence_order_against_closed_form(theta, order):
    err = _errors(theta, [20, 40, 80, 160])
    q = np.log2(err[:-1] / err[1:])
    assert np.all(np.abs(q - order) < 0.15), q


def test_complementarity_audit_on_american_put():
    K, r, s, T = 100.0, 0.05, 0.3, 1.0
    problem = LcpProblem(
        drift=lambda v, t: r * v,
        diffusion=lambda v, t: 0.5 * s * s * v**2,
        terminal=lambda v: np.maximum(K - v, 0.0),
        left_boundary=lambda t: K,
        discount=lambda t: r,
        obstacle=lambda v, t: np.maximum(K - v, 0.0),
        side="lower",
    )
    g = build_grid(400, 401, T, 201)
    sol = solve_lcp(problem, g)
    assert sol.max_residual < 1e-7
    assert np.all(sol.surface >= sol.obstacle - 1e-12)
    # tree reference for the American put
    n = 4000
    dt = T / n
    u = math.exp(s * math.sqrt(dt))
    p = (math.exp(r * dt) - 1 / u) / (u - 1 / u)
    disc = math.exp(-r * dt)
    vals = np.maximum(K - K * u ** (2.0 * np.arange(n + 1) - n), 0)
    for i in range(n - 1, -1, -1):
        S = K * u ** (2.0 * np.arange(i + 1) - i)
        vals = np.maximum(disc * (p * vals[1:] + (1 - p) * vals[:-1]), K - S)
    assert sol.at(0, K) == pytest.approx(vals[0], abs=0.01)


def test_upper_obstacle_respected_and_active_region():
    k, L = 0.05, 100.0
    problem = LcpProblem(
        drift=lambda v, t: -0.05 * v,
        diffusion=lambda v, t: 0.5 * 0.16 * v**2,
        terminal=lambda v: np.exp(-k * np.maximum(v - L, 0.0)),
        left_boundary=lambda t: 1.0,
        obstacle=lambda v, t: np.exp(-k * np.maximum(v - L, 0.0)),
    )
    g = build_grid(600, 301, 2.0, 201)
    sol = solve_lcp(problem, g)
    assert np.all(sol.surface <= sol.obstacle + 1e-12)
    assert sol.max_residual < 1e-7
    assert sol.active_mask[0, -5] and not sol.active_mask[0, 10]
    assert sol.psor_iterations[:-1].min() >= 1


def _random_system(n, seed):
    rng = np.random.default_rng(seed)
    lower = -rng.uniform(0.1, 1.0, n)
    upper = -rng.uniform(0.1, 1.0, n)
    diag = -(lower + upper) + rng.uniform(0.01, 1.0, n)
    rhs = rng.normal(size=n)
    bound = rng.normal(size=n)
    return lower, diag, upper, rhs, bound


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2**32 - 1))
def test_psor_updates_nonincreasing_for_gauss_seidel(n, seed):
    lower, diag, upper, rhs, bound = _random_system(n, seed)
    x, sweeps, hist = psor(lower, diag, upper, rhs, bound, np.zeros(n),
                           settings=PsorSettings(omega=1.0, tol=1e-13), history=True)
    assert np.all(np.diff(hist) <= 1e-15 + 1e-12 * hist[:-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2**32 - 1), st.sampled_from(["upper", "lower"]))
def test_psor_solution_satisfies_lcp(n, seed, side):
    lower, diag, upper, rhs, bound = _random_system(n, seed)
    x, _ = psor(lower, diag, upper, rhs, bound, np.zeros(n), side=side,
                settings=PsorSettings(tol=1e-13))
    mx = diag * x
    mx[1:] += lower[1:] * x[:-1]
    mx[:-1] += upper[:-1] * x[1:]
    sgn = 1.0 if side == "upper" else -1.0
    row = sgn * (rhs - mx)
    gap = sgn * (bound - x)
    assert np.all(gap >= -1e-12)
    assert np.all(row >= -1e-9)
    assert np.all(np.abs(np.minimum(row, gap)) < 1e-9)


def test_psor_divergence_raised():
    lower, diag, upper, rhs, bound = _random_system(50, 3)
    with pytest.raises(PsorDivergence):
        psor(lower, diag, upper, rhs, bound + 10, np.zeros(50), settings=PsorSettings(max_iter=2, tol=1e-14))


@pytest.mark.parametrize("omega", [0.0, 2.0, -1.0])
def test_psor_rejects_bad_omega(omega):
    with pytest.raises(ValueError):
        psor(np.zeros(3), np.ones(3), np.zeros(3), np.ones(3), np.ones(3), np.zeros(3), settings=PsorSettings(omega=omega))


def test_solve_lcp_rejects_bad_theta():
    g = build_grid(1, 5, 1, 3)
    with pytest.raises(ValueError):
        solve_lcp(_heat(), g, theta=1.5)


def test_deterministic():
    p, _ = _exact_problem()
    g = build_grid(1.0, 41, 1.0, 41)
    a = solve_lcp(p, g).surface
    b = solve_lcp(p, g).surface
    assert np.array_equal(a, b)
