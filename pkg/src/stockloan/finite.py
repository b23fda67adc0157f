"""Finite-maturity stock loans.

The borrower's problem reduces to an obstacle problem for
``F(t, v) = exp(-k p(t, v))`` with ``k = gamma (1 - rho**2)``:

    F_t - delta v F_v + sigma2**2 v**2 / 2 F_vv >= 0,   F <= kappa,

    kappa(t, v) = exp(-k (v - exp((alpha - r) t) L)^+),

with ``F(T, .) = kappa(T, .)`` and ``F(t, 0) = 1``.  The exercise boundary
``V*(t)`` is where ``F`` first touches ``kappa`` above the strike.  The bank
then prices a knock-out call paying ``(V* - L)^+`` at the boundary, which is
a linear PDE in the variable ``exp((r - alpha) t) V``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import BoundaryNotFound, InvalidBoundary, NegativeFee, ParameterError
from .lcp import Grid, LcpProblem, LcpSolution, PsorSettings, build_grid, solve_lcp
from .model import (
    CollateralModel,
    FeeQuote,
    LoanTerms,
    MarketModel,
    RiskPreference,
)

log = logging.getLogger(__name__)

SWEEP_AXES = ("gamma", "delta", "rho", "sigma2", "v0", "L", "T", "alpha")


@dataclass(frozen=True)
class GridConfig:
    nv: int = 800
    nt: int = 2000
    v_max_factor: float = 5.0
    theta: float = 0.5
    rannacher_steps: int = 4
    psor: PsorSettings = PsorSettings()
    detection_tol: float = 1e-7
    v_max: Optional[float] = None

    def refined(self, factor: int = 2) -> "GridConfig":
        return replace(self, nv=(self.nv - 1) * factor + 1, nt=(self.nt - 1) * factor + 1)


@dataclass(frozen=True)
class ObstacleSpec:
    """Exercise utility in ``F`` units, ``exp(-k (v - exp(g t) L)^+)``."""

    k: float
    strike_growth: float
    L: float

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ParameterError("obstacle needs k = gamma (1 - rho^2) > 0")

    def strike(self, t):
        return self.L * np.exp(self.strike_growth * np.asarray(t, dtype=float))

    def __call__(self, v, t):
        return np.exp(-self.k * np.maximum(np.asarray(v, dtype=float) - self.strike(t), 0.0))


@dataclass(frozen=True)
class ExerciseBoundary:
    """Repayment boundary ``V*(t)``; ``inf`` where it lies beyond the grid."""

    times: np.ndarray
    levels: np.ndarray
    detection_tol: float = 1e-7

    def at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation in time (``inf`` propagates)."""
        t = np.asarray(t, dtype=float)
        lv = self.levels
        if np.all(np.isfinite(lv)):
            return np.interp(t, self.times, lv)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, lv.size - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = (t - t0) / (t1 - t0)
        a, b = lv[idx], lv[idx + 1]
        with np.errstate(invalid="ignore"):
            out = np.where(np.isfinite(a) & np.isfinite(b), a + w * (b - a), np.inf)
        return out

    def hatted(self, r_hat: float) -> np.ndarray:
        """Boundary in the variable ``exp(r_hat t) V`` at the stored times."""
        return np.exp(r_hat * self.times) * self.levels

    @classmethod
    def infinite(cls, times) -> "ExerciseBoundary":
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.size, np.inf), 0.0)


def default_v_max(loan: LoanTerms, collateral: CollateralModel, factor: float = 5.0) -> float:
    return factor * max(loan.v0, loan.L) * math.exp(abs(loan.alpha - collateral.r) * loan.T)


def make_grid(loan: LoanTerms, collateral: CollateralModel, cfg: GridConfig) -> Grid:
    """Uniform grid on which ``v0`` falls exactly on a node."""
    v_max = cfg.v_max or default_v_max(loan, collateral, cfg.v_max_factor)
    dv = v_max / (cfg.nv - 1)
    dv = loan.v0 / max(1, round(loan.v0 / dv))
    return build_grid(dv * (cfg.nv - 1), cfg.nv, loan.T, cfg.nt)


def obstacle_for(loan: LoanTerms, collateral: CollateralModel, pref: RiskPreference) -> ObstacleSpec:
    k = pref.gamma * (1.0 - collateral.rho**2)
    return ObstacleSpec(k=k, strike_growth=loan.alpha - collateral.r, L=loan.L)


def indifference_problem(collateral: CollateralModel, obstacle: ObstacleSpec, T: float) -> LcpProblem:
    drift_coef = collateral.q0_drift
    half_var = 0.5 * collateral.sigma2**2
    return LcpProblem(
        drift=lambda v, t: drift_coef * v,
        diffusion=lambda v, t: half_var * v * v,
        terminal=lambda v: obstacle(v, T),
        left_boundary=lambda t: 1.0,
        obstacle=obstacle,
        side="upper",
        right_boundary="linear",
    )


def _require_finite(loan: LoanTerms, collateral: CollateralModel, pref: RiskPreference) -> None:
    if loan.perpetual:
        raise ParameterError("finite-horizon solver needs a maturity T")
    if abs(collateral.rho) >= 1.0:
        raise ParameterError("finite-horizon solver needs |rho| < 1")


def solve_indifference(
    loan: LoanTerms,
    collateral: CollateralModel,
    pref: RiskPreference,
    grid_cfg: GridConfig = GridConfig(),
):
    """Solve the borrower's obstacle problem.

    Returns ``(solution, boundary, p0)`` where ``p0 = -log F(0, v0) / k``.
    """
    _require_finite(loan, collateral, pref)
    obstacle = obstacle_for(loan, collateral, pref)
    grid = make_grid(loan, collateral, grid_cfg)
    sol = solve_lcp(
        indifference_problem(collateral, obstacle, loan.T),
        grid,
        theta=grid_cfg.theta,
        psor_settings=grid_cfg.psor,
        rannacher_steps=grid_cfg.rannacher_steps,
    )
    boundary = extract_boundary(sol, obstacle, grid_cfg.detection_tol)
    p0 = -math.log(sol.at(0, loan.v0)) / obstacle.k
    return sol, boundary, p0


def indifference_surface(sol: LcpSolution, obstacle: ObstacleSpec) -> np.ndarray:
    """``p(t, v) = -log F(t, v) / k`` on the solver grid."""
    return -np.log(sol.surface) / obstacle.k


def extract_boundary(
    sol: LcpSolution,
    obstacle: ObstacleSpec,
    detection_tol: float = 1e-7,
    strict: bool = False,
) -> ExerciseBoundary:
    """Lowest price above the strike where ``F`` meets the obstacle, per time step.

    The first node with ``kappa - F <= detection_tol`` is refined by linear
    interpolation of the gap against its lower neighbour.  When no node
    qualifies the level is ``inf`` (or :class:`BoundaryNotFound` is raised
    with ``strict=True``).
    """
    v = sol.grid.v_nodes
    t = sol.grid.t_nodes
    kappa = sol.obstacle if sol.obstacle is not None else obstacle(v[None, :], t[:, None])
    gap = kappa - sol.surface
    levels = np.full(t.size, np.inf)
    for n, tn in enumerate(t):
        k_n = float(obstacle.strike(tn))
        cand = np.nonzero((gap[n] <= detection_tol) & (v > k_n))[0]
        if cand.size == 0:
            if strict:
                raise BoundaryNotFound(f"no exercise node at t={tn:g}")
            continue
        j = cand[0]
        g1 = gap[n, j - 1]
        if g1 <= detection_tol:
            # contact reaches down to the strike
            levels[n] = max(k_n, v[j - 1])
            continue
        g2 = gap[n, j]
        w = (g1 - detection_tol) / (g1 - g2)
        levels[n] = max(k_n, v[j - 1] + w * (v[j] - v[j - 1]))
    return ExerciseBoundary(t.copy(), levels, detection_tol)


def _solve_tridiag(lower, diag, upper, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def bank_cost_pde(
    boundary: ExerciseBoundary,
    loan: LoanTerms,
    collateral: CollateralModel,
    grid_cfg: GridConfig = GridConfig(),
    return_surface: bool = False,
):
    """Bank's cost of the repayment option, exercised at ``boundary``.

    Works in ``u = exp((r - alpha) t) V`` where the claim solves

        C_t + (r_hat - delta) u C_u + sigma2**2 u**2 / 2 C_uu = r_hat C

    below the boundary, with ``C(t, 0) = 0``, ``C = (u* - L)^+`` on the
    boundary and ``C(T, u) = (u - L)^+``.  Time stepping is fully implicit;
    the moving edge enters through a non-uniform three-point stencil
    anchored at the exact boundary point, and nodes beyond it carry the
    exercise value.
    Where the boundary is beyond the grid a zero-curvature condition holds
    at ``v_max``.
    """
    r = collateral.r
    r_hat = r - loan.alpha
    L, v0 = loan.L, loan.v0
    b0 = float(boundary.at(0.0))
    if v0 >= b0:
        return (v0 - L, None) if return_surface else v0 - L

    grid = make_grid(loan, collateral, grid_cfg)
    v, t = grid.v_nodes, grid.t_nodes
    hat = np.exp(r_hat * t) * boundary.at(t)
    if np.any(hat <= 0) or np.any(np.isnan(hat)):
        raise InvalidBoundary("hatted boundary must be positive")

    drift = (r_hat - collateral.delta) * v
    diff = 0.5 * collateral.sigma2**2 * v * v
    intrinsic = np.maximum(v - L, 0.0)
    nv = v.size
    h = np.diff(v)

    def stencil(b):
        """Operator rows for nodes 1..m-1 below boundary ``b`` (or the whole grid)."""
        if np.isfinite(b) and b < v[-1]:
            m = int(np.searchsorted(v, b, side="left"))  # first node >= b
            if m < 2:
                return None
            # drop a node sitting too close to the boundary
            if b - v[m - 1] < 1e-3 * h[m - 2]:
                m -= 1
            if m < 2:
                return None
            idx = np.arange(1, m)
            hm = v[idx] - v[idx - 1]
            hp = np.append(v[idx[:-1] + 1] - v[idx[:-1]], b - v[m - 1])
            edge = ("dirichlet", max(b - L, 0.0))
        else:
            idx = np.arange(1, nv - 1)
            hm = v[idx] - v[idx - 1]
            hp = v[idx + 1] - v[idx]
            edge = ("linear", None)
        hs = hm + hp
        mu, dd = drift[idx], diff[idx]
        a = dd * 2.0 / (hm * hs) - mu * hp / (hm * hs)
        c = dd * 2.0 / (hp * hs) + mu * hm / (hp * hs)
        bad = (a < 0) | (c < 0)
        if np.any(bad):
            a = np.where(bad, dd * 2.0 / (hm * hs) - np.minimum(mu, 0) / hm, a)
            c = np.where(bad, dd * 2.0 / (hp * hs) + np.maximum(mu, 0) / hp, c)
        bb = -(a + c) - r_hat
        return idx, a, bb, c, edge

    C = intrinsic.copy()
    surface = np.empty((t.size, nv)) if return_surface else None
    if return_surface:
        surface[-1] = C
    for n in range(t.size - 2, -1, -1):
        dt = t[n + 1] - t[n]
        op = stencil(hat[n])
        new = intrinsic.copy()
        if op is not None:
            idx, a, bb, c, edge = op
            rhs = C[idx].copy()
            lower = -dt * a
            diag = 1.0 - dt * bb
            upper = -dt * c
            if edge[0] == "dirichlet":
                rhs[-1] -= upper[-1] * edge[1]
            else:
                q = h[-1] / h[-2]
                diag[-1] += upper[-1] * (1.0 + q)
                lower[-1] -= upper[-1] * q
            new[0] = 0.0
            new[idx] = _solve_tridiag(lower, diag, upper, rhs)
            if edge[0] == "linear":
                new[-1] = new[-2] + (new[-2] - new[-3]) * h[-1] / h[-2]
        C = new
        if return_surface:
            surface[n] = C

    cost = float(np.interp(v0, v, C))
    return (cost, surface) if return_surface else cost


def fee_finite(
    loan: LoanTerms,
    collateral: CollateralModel,
    pref: RiskPreference,
    grid_cfg: GridConfig = GridConfig(),
) -> FeeQuote:
    """Finite-maturity fee ``c = L + C(0, v0) - v0``.

    Negative fees within half a percent of ``L`` are discretisation noise
    and are clamped to zero; anything larger raises :class:`NegativeFee`.
    """
    sol, boundary, p0 = solve_indifference(loan, collateral, pref, grid_cfg)
    cost = bank_cost_pde(boundary, loan, collateral, grid_cfg)
    c = loan.L + cost - loan.v0
    diagnostics = {
        "max_residual": sol.max_residual,
        "psor_max_iters": int(sol.psor_iterations.max()),
        "psor_total_iters": int(sol.psor_iterations.sum()),
        "nv": sol.grid.nv,
        "nt": sol.grid.nt,
        "v_max": sol.grid.v_max,
        "v_star_at_0": float(boundary.levels[0]),
        "branch": "immediate-exercise" if loan.v0 >= boundary.levels[0] else "continuation",
        "raw_fee": c,
        "clamped": False,
    }
    if c < 0:
        if c < -0.005 * loan.L:
            raise NegativeFee(f"computed fee {c:.6g} is below the clamping allowance")
        log.warning("clamping negative fee %.3g to zero", c)
        diagnostics["clamped"] = True
        c = 0.0
    return FeeQuote(
        fee=c,
        bank_cost=cost,
        boundary=boundary,
        p0=p0,
        L=loan.L,
        v0=loan.v0,
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class Scenario:
    """Flat parameter set used by sweeps and the command line."""

    r: float = 0.05
    mu1: float = 0.10
    sigma1: float = 0.20
    sigma2: float = 0.4
    delta: float = 0.05
    rho: float = 0.4
    gamma: float = 0.01
    L: float = 100.0
    alpha: float = 0.07
    v0: float = 100.0
    T: Optional[float] = 5.0

    @property
    def market(self) -> MarketModel:
        return MarketModel(self.r, self.mu1, self.sigma1)

    @property
    def collateral(self) -> CollateralModel:
        return CollateralModel(self.market, self.sigma2, self.delta, self.rho)

    @property
    def loan(self) -> LoanTerms:
        return LoanTerms(self.L, self.alpha, self.v0, self.T)

    @property
    def pref(self) -> RiskPreference:
        return RiskPreference(self.gamma)

    def with_param(self, name: str, value) -> "Scenario":
        return replace(self, **{name: value})


SWEEP_COLUMNS = ("axis_value", "fee", "cost", "p0", "v_star_at_0", "psor_max_iters", "error")


def _sweep_row(args):
    base, axis, value, grid_cfg, mode = args
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row["axis_value"] = value
    try:
        sc = base.with_param(axis, value)
        if mode == "perpetual":
            from . import perpetual

            q = perpetual.fee(sc.loan, sc.collateral, sc.pref)
            row.update(fee=q.fee, cost=q.bank_cost, p0=q.p0, v_star_at_0=q.boundary, psor_max_iters=0)
        else:
            q = fee_finite(sc.loan, sc.collateral, sc.pref, grid_cfg)
            row.update(
                fee=q.fee,
                cost=q.bank_cost,
                p0=q.p0,
                v_star_at_0=q.diagnostics["v_star_at_0"],
                psor_max_iters=q.diagnostics["psor_max_iters"],
            )
    except Exception as exc:  # recorded per row, sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(
    base: Scenario,
    axis: str,
    values: Sequence[float],
    grid_cfg: GridConfig = GridConfig(),
    mode: str = "finite",
    workers: int = 1,
) -> list:
    """Independent solves along one parameter axis, rows in input order."""
    if axis not in SWEEP_AXES:
        raise ParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    jobs = [(base, axis, float(x), grid_cfg, mode) for x in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(j) for j in jobs]
