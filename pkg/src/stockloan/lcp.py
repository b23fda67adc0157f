"""One-dimensional parabolic obstacle problems on a (v, t) grid.

Backward θ-scheme in time, three-point differences in space and projected
SOR for the discrete linear complementarity problem at every step.  The
obstacle may bound the solution from above (``F <= kappa``, the stock-loan
orientation) or from below (``F >= payoff``, the American-option one).
Without an obstacle each step is a plain tridiagonal solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numba
import numpy as np
from scipy.linalg import solve_banded

from .errors import InvalidGrid, PsorDivergence

__all__ = [
    "Grid",
    "LcpProblem",
    "LcpSolution",
    "PsorSettings",
    "build_grid",
    "solve_lcp",
    "assemble_operator",
    "psor",
]


@dataclass(frozen=True)
class Grid:
    v_nodes: np.ndarray
    t_nodes: np.ndarray

    @property
    def nv(self) -> int:
        return self.v_nodes.size

    @property
    def nt(self) -> int:
        return self.t_nodes.size

    @property
    def v_max(self) -> float:
        return float(self.v_nodes[-1])

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])


def build_grid(
    v_max: float,
    nv: int,
    T: float,
    nt: int,
    spacing: str = "uniform",
    center: Optional[float] = None,
    stretch: float = 0.2,
) -> Grid:
    """Space-time grid with ``nv`` price nodes on ``[0, v_max]`` and ``nt`` times on ``[0, T]``.

    ``spacing="geometric"`` clusters nodes around ``center`` with a sinh
    map; ``stretch`` is the clustering width as a fraction of ``center``.
    """
    if not (v_max > 0 and T > 0):
        raise InvalidGrid("v_max and T must be positive")
    if nv < 3 or nt < 2:
        raise InvalidGrid(f"need nv >= 3 and nt >= 2, got nv={nv}, nt={nt}")
    t = np.linspace(0.0, T, nt)
    if spacing == "uniform":
        v = np.linspace(0.0, v_max, nv)
    elif spacing == "geometric":
        c = v_max / 2.0 if center is None else float(center)
        if not 0 < c < v_max:
            raise InvalidGrid("center must lie strictly inside (0, v_max)")
        w = stretch * c
        lo, hi = np.arcsinh(-c / w), np.arcsinh((v_max - c) / w)
        v = c + w * np.sinh(np.linspace(lo, hi, nv))
        v[0], v[-1] = 0.0, v_max
    else:
        raise InvalidGrid(f"unknown spacing {spacing!r}")
    if np.any(np.diff(v) <= 0):
        raise InvalidGrid("price nodes are not strictly increasing")
    return Grid(v, t)


CoefFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class LcpProblem:
    """``F_t + drift F_v + diffusion F_vv - discount F`` with an obstacle.

    ``obstacle`` is ``None`` for a linear problem.  ``right_boundary`` is
    either ``"linear"`` (zero second derivative at ``v_max``) or a callable
    ``t -> value`` giving Dirichlet data.
    """

    drift: CoefFn
    diffusion: CoefFn
    terminal: Callable[[np.ndarray], np.ndarray]
    left_boundary: Callable[[float], float]
    discount: Callable[[float], float] = lambda t: 0.0
    obstacle: Optional[CoefFn] = None
    side: str = "upper"
    right_boundary: Union[str, Callable[[float], float]] = "linear"


@dataclass(frozen=True)
class PsorSettings:
    omega: float = 1.4
    tol: float = 1e-9
    max_iter: int = 10_000


@dataclass(frozen=True)
class LcpSolution:
    grid: Grid
    surface: np.ndarray
    active_mask: np.ndarray
    psor_iterations: np.ndarray
    max_residual: float
    obstacle: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def at(self, t_index: int, v: float) -> float:
        return float(np.interp(v, self.grid.v_nodes, self.surface[t_index]))


def assemble_operator(v, drift, diffusion, discount):
    """Tridiagonal coefficients ``(a, b, c)`` of the spatial operator at interior nodes.

    ``v`` holds all nodes; ``drift`` and ``diffusion`` are evaluated at the
    interior ones.

    ``(A u)_i = a_i u_{i-1} + b_i u_i + c_i u_{i+1}`` for ``i = 1..n-2``.
    Central differences are used for the drift unless that would make an
    off-diagonal negative, in which case the node falls back to upwinding.
    """
    hm = v[1:-1] - v[:-2]
    hp = v[2:] - v[1:-1]
    hs = hm + hp
    d2m = 2.0 / (hm * hs)
    d2p = 2.0 / (hp * hs)
    a = diffusion * d2m - drift * hp / (hm * hs)
    c = diffusion * d2p + drift * hm / (hp * hs)
    bad = (a < 0) | (c < 0)
    if np.any(bad):
        up = np.maximum(drift, 0.0)
        dn = np.minimum(drift, 0.0)
        a = np.where(bad, diffusion * d2m - dn / hm, a)
        c = np.where(bad, diffusion * d2p + up / hp, c)
    b = -(a + c) - discount
    return a, b, c


@numba.njit(cache=True)
def _psor_kernel(lower, diag, upper, rhs, bound, sign, x, omega, tol, max_iter, hist):
    # sign = +1: x <= bound, sign = -1: x >= bound
    n = x.size
    for it in range(max_iter):
        err = 0.0
        for i in range(n):
            s = rhs[i]
            if i > 0:
                s -= lower[i] * x[i - 1]
            if i < n - 1:
                s -= upper[i] * x[i + 1]
            y = x[i] + omega * (s / diag[i] - x[i])
            if sign > 0:
                if y > bound[i]:
                    y = bound[i]
            elif y < bound[i]:
                y = bound[i]
            d = abs(y - x[i])
            if d > err:
                err = d
            x[i] = y
        if hist.size > it:
            hist[it] = err
        if err < tol:
            return it + 1, True
    return max_iter, False


def psor(lower, diag, upper, rhs, bound, x0, side="upper", settings=PsorSettings(), history=False):
    """Projected SOR for ``M x (<=|>=) rhs`` with ``x (<=|>=) bound`` and complementarity.

    ``M`` is tridiagonal with sub-, main and super-diagonals ``lower``,
    ``diag``, ``upper`` (``lower[0]`` and ``upper[-1]`` are ignored).
    Convergence is declared when a full sweep moves no entry by more than
    ``settings.tol``.  Returns ``(x, sweeps)`` or ``(x, sweeps, updates)``
    when ``history`` is set.
    """
    if not 0 < settings.omega < 2:
        raise ValueError("omega must lie in (0, 2)")
    sign = 1 if side == "upper" else -1
    x = np.array(x0, dtype=float, copy=True)
    x = np.minimum(x, bound) if sign > 0 else np.maximum(x, bound)
    hist = np.zeros(settings.max_iter if history else 0)
    sweeps, ok = _psor_kernel(
        np.ascontiguousarray(lower, dtype=float),
        np.ascontiguousarray(diag, dtype=float),
        np.ascontiguousarray(upper, dtype=float),
        np.ascontiguousarray(rhs, dtype=float),
        np.ascontiguousarray(bound, dtype=float),
        sign,
        x,
        settings.omega,
        settings.tol,
        settings.max_iter,
        hist,
    )
    if not ok:
        raise PsorDivergence(
            f"PSOR did not reach tol={settings.tol:g} in {settings.max_iter} sweeps"
        )
    if history:
        return x, sweeps, hist[:sweeps]
    return x, sweeps


def _tridiag_solve(lower, diag, upper, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def solve_lcp(
    problem: LcpProblem,
    grid: Grid,
    theta: float = 0.5,
    psor_settings: PsorSettings = PsorSettings(),
    rannacher_steps: int = 4,
) -> LcpSolution:
    """March the obstacle problem backward from ``t = T`` to ``t = 0``.

    The first ``rannacher_steps`` steps are fully implicit regardless of
    ``theta``.  Every step is audited: the largest
    ``|min(row residual, gap to obstacle)|`` over interior nodes and steps
    is returned as ``max_residual`` (row residuals are scaled by the
    diagonal, so both terms carry the units of the solution).
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    v, t = grid.v_nodes, grid.t_nodes
    nv, nt = grid.nv, grid.nt
    linear_right = isinstance(problem.right_boundary, str)
    if linear_right and problem.right_boundary != "linear":
        raise ValueError(f"unknown right boundary {problem.right_boundary!r}")
    sign = 1.0 if problem.side == "upper" else -1.0
    has_obstacle = problem.obstacle is not None

    surface = np.empty((nt, nv))
    active = np.zeros((nt, nv), dtype=bool)
    kappa = np.empty((nt, nv)) if has_obstacle else None
    iters = np.zeros(nt, dtype=np.int64)

    vi = v[1:-1]
    h_last = v[-1] - v[-2]
    h_prev = v[-2] - v[-3]

    def operator(tk):
        return assemble_operator(
            v,
            np.broadcast_to(problem.drift(vi, tk), vi.shape),
            np.broadcast_to(problem.diffusion(vi, tk), vi.shape),
            problem.discount(tk),
        )

    def right_value(tk, u):
        if linear_right:
            # extrapolate with the local slope (zero second derivative)
            return u[-2] + (u[-2] - u[-3]) * h_last / h_prev
        return problem.right_boundary(tk)

    u = np.asarray(problem.terminal(v), dtype=float).copy()
    surface[-1] = u
    if has_obstacle:
        kappa[-1] = problem.obstacle(v, t[-1])
        active[-1] = (sign * (u - kappa[-1])) >= 0
    max_res = 0.0
    ops_next = operator(t[-1])

    for n in range(nt - 2, -1, -1):
        tk = t[n]
        dt = t[n + 1] - tk
        th = 1.0 if (nt - 2 - n) < rannacher_steps else theta
        a1, b1, c1 = ops_next
        a0, b0, c0 = operator(tk)
        ops_next = (a0, b0, c0)

        # explicit half from the later time level
        rhs = u[1:-1] + (1.0 - th) * dt * (a1 * u[:-2] + b1 * u[1:-1] + c1 * u[2:])
        lower = -th * dt * a0
        diag = 1.0 - th * dt * b0
        upper = -th * dt * c0

        left = problem.left_boundary(tk)
        rhs[0] -= lower[0] * left
        if linear_right:
            # u_N = u_{N-1} + (u_{N-1} - u_{N-2}) h_last / h_prev
            q = h_last / h_prev
            diag[-1] += upper[-1] * (1.0 + q)
            lower[-1] -= upper[-1] * q
        else:
            rhs[-1] -= upper[-1] * problem.right_boundary(tk)

        if has_obstacle:
            kap = np.asarray(problem.obstacle(v, tk), dtype=float)
            kappa[n] = kap
            bound = kap[1:-1]
            x0 = u[1:-1]
            x, sweeps = psor(
                lower, diag, upper, rhs, bound, x0, problem.side, psor_settings
            )
            iters[n] = sweeps
        else:
            x = _tridiag_solve(lower, diag, upper, rhs)

        new = np.empty(nv)
        new[0] = left
        new[1:-1] = x
        new[-1] = right_value(tk, new)
        if has_obstacle:
            if sign > 0:
                new[-1] = min(new[-1], kap[-1])
            else:
                new[-1] = max(new[-1], kap[-1])

        # complementarity audit on the system actually solved
        mx = diag * x
        mx[1:] += lower[1:] * x[:-1]
        mx[:-1] += upper[:-1] * x[1:]
        row = sign * (rhs - mx) / diag
        if has_obstacle:
            gap = sign * (bound - x)
            active[n, 1:-1] = gap <= 0.0
            step_res = np.max(np.abs(np.minimum(row, gap)))
        else:
            step_res = np.max(np.abs(row))
        max_res = max(max_res, float(step_res))

        surface[n] = new
        u = new

    return LcpSolution(
        grid=grid,
        surface=surface,
        active_mask=active,
        psor_iterations=iters,
        max_residual=max_res,
        obstacle=kappa,
        diagnostics={
            "theta": theta,
            "rannacher_steps": rannacher_steps,
            "omega": psor_settings.omega,
            "tol": psor_settings.tol,
            "max_psor_iterations": int(iters.max()) if nt > 1 else 0,
        },
    )
