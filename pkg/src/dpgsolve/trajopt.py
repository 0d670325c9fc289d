"""Finite-horizon trajectory optimization and equilibrium certification.

The control problem is solved over the action sequence only: states are
recovered from the initial condition through the transition, and the
objective gradient is propagated backward through the rollout (adjoint
recursion).  Box bounds on actions are handled by projection; coupled
linear inequalities and state box bounds by an augmented-Lagrangian
outer loop with multiplier updates mu <- max(0, mu + rho g).

Equilibrium certification is by best-response deviation search: each
player re-optimizes its own action block against the others held fixed,
with the same machinery, and the achieved improvement is compared to a
relative tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

import scipy.optimize

from .errors import NumericalDomainError, SpecificationError
from .game import (DynamicGameSpec, MocpSpec, Trajectory, evaluate_returns,
                   rollout)


@dataclass(frozen=True)
class SolverOptions:
    """Inner-solver and augmented-Lagrangian parameters.

    ``inner_method`` selects the box-constrained subproblem solver:
    "lbfgs" (quasi-Newton, default; needed for the nearly-flat
    log-of-sum objectives) or "spg" (spectral projected gradient with
    Armijo backtracking, monotone in the subproblem objective).
    """

    max_outer_iterations: int = 25
    penalty_growth: float = 10.0
    initial_penalty: float = 10.0
    penalty_cap: float = 1e8
    gradient_tolerance: float = 1e-6
    feasibility_tolerance: float = 1e-6
    armijo_shrink: float = 0.5
    armijo_constant: float = 1e-4
    max_inner_iterations: int = 4000
    inner_method: str = "lbfgs"
    rng_seed: int = 0

    def __post_init__(self):
        if self.penalty_growth <= 1 or self.initial_penalty <= 0:
            raise SpecificationError("penalty parameters must be positive, growth > 1")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise SpecificationError("armijo_shrink must lie in (0, 1)")
        if self.gradient_tolerance <= 0 or self.armijo_constant <= 0:
            raise SpecificationError("tolerances must be positive")
        if self.inner_method not in ("lbfgs", "spg"):
            raise SpecificationError("inner_method must be 'lbfgs' or 'spg'")


@dataclass(frozen=True)
class FiniteHorizonProblem:
    """A truncated control problem ready for the trajectory solver.

    ``coupled_inequalities`` is a pair (M, c) imposing M u_t <= c at every
    step; c may be one vector or one row per step.  ``state_lower`` and
    ``state_upper`` bound x_1 .. x_T.  ``integrator_matrix`` E marks the
    common special case x_{t+1} = x_t + E u_t, which the solver evaluates
    in closed form.
    """

    mocp: MocpSpec
    horizon: int
    linear_dynamics: bool = False
    coupled_inequalities: Optional[tuple[np.ndarray, np.ndarray]] = None
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    integrator_matrix: Optional[np.ndarray] = None
    # Declares that every state coordinate moves monotonically along any
    # feasible trajectory (e.g. batteries that only drain), so the state
    # box binds at the terminal state only.  The feasible set is
    # unchanged; the solver then penalizes just x_T, which removes the
    # dual degeneracy of stacked per-step bounds.
    monotone_drain: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise SpecificationError("horizon must be >= 1")
        if self.coupled_inequalities is not None:
            M, c = self.coupled_inequalities
            M = np.asarray(M, dtype=float)
            c = np.asarray(c, dtype=float)
            if M.shape[1] != self.mocp.total_action_dim:
                raise SpecificationError("coupling matrix column count mismatch")
            if c.ndim == 1:
                c = np.broadcast_to(c, (self.horizon, c.size)).copy()
            if c.shape != (self.horizon, M.shape[0]):
                raise SpecificationError("coupling rhs shape mismatch")
            object.__setattr__(self, "coupled_inequalities", (M, c))

    @property
    def num_coupled_rows(self) -> int:
        return 0 if self.coupled_inequalities is None else \
            self.coupled_inequalities[0].shape[0]


@dataclass(frozen=True)
class SolveResult:
    """Converged (or best-effort) solution of a finite-horizon problem."""

    trajectory: Trajectory
    objective: float
    kkt_residual: float
    constraint_violation: float
    converged: bool
    iterations: int
    dual_estimates: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NeReport:
    """Outcome of a best-response deviation search over all players."""

    per_player_improvement: np.ndarray
    per_player_return: np.ndarray
    max_relative_improvement: float
    certified: bool
    tolerance: float
    search_description: dict


# ---------------------------------------------------------------------------
# objective evaluation


def _try_batch(fn, X, U, tvec):
    try:
        out = fn(X, U, tvec)
    except Exception:
        return None
    return out


class _Evaluator:
    """Rollout, stage values and adjoint gradients for one problem.

    Uses vectorized evaluation when the problem has integrator dynamics
    and batch-capable callables; falls back to per-step loops otherwise.
    Stage gradients come from the problem's analytic callables when
    present and from central differences otherwise.
    """

    FD_STEP = 1e-6

    def __init__(self, prob: FiniteHorizonProblem):
        self.prob = prob
        self.mocp = prob.mocp
        self.T = prob.horizon
        self.S = self.mocp.state_dim
        self.A = self.mocp.total_action_dim
        self.betas = self.mocp.discount ** np.arange(self.T)
        self.tvec = np.arange(self.T)
        self._batch_ok = None  # decided on first use

    # -- states ------------------------------------------------------------

    def states(self, U: np.ndarray) -> np.ndarray:
        x0 = self.mocp.initial_state
        if self.prob.integrator_matrix is not None:
            E = self.prob.integrator_matrix
            out = np.empty((self.T + 1, self.S))
            out[0] = x0
            out[1:] = x0 + np.cumsum(U @ E.T, axis=0)
            return out
        out = np.empty((self.T + 1, self.S))
        out[0] = x0
        for t in range(self.T):
            out[t + 1] = self.mocp.transition(out[t], U[t], t)
        return out

    # -- stage values --------------------------------------------------------

    def stage_values(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        if self._batch_ok is not False:
            vals = _try_batch(self.mocp.potential, X[:-1], U, self.tvec)
            if vals is not None:
                vals = np.asarray(vals, dtype=float)
                if vals.shape == (self.T,):
                    self._batch_ok = True
                    return vals
            self._batch_ok = False
        return np.array([float(self.mocp.potential(X[t], U[t], t))
                         for t in range(self.T)])

    def objective(self, X: np.ndarray, U: np.ndarray) -> float:
        return float(self.betas @ self.stage_values(X, U))

    # -- stage gradients -----------------------------------------------------

    def _fd_stage_grad(self, x, u, t):
        h = self.FD_STEP
        gx = np.empty(self.S)
        gu = np.empty(self.A)
        for m in range(self.S):
            xp, xm = x.copy(), x.copy()
            xp[m] += h
            xm[m] -= h
            gx[m] = (self.mocp.potential(xp, u, t)
                     - self.mocp.potential(xm, u, t)) / (2 * h)
        for a in range(self.A):
            up, um = u.copy(), u.copy()
            up[a] += h
            um[a] -= h
            gu[a] = (self.mocp.potential(x, up, t)
                     - self.mocp.potential(x, um, t)) / (2 * h)
        return gx, gu

    def stage_grads(self, X, U):
        """(T,S) and (T,A) gradients of the stage potential."""
        pg = self.mocp.potential_gradient
        if pg is not None:
            out = _try_batch(pg, X[:-1], U, self.tvec)
            if out is not None:
                gx, gu = out
                gx = np.asarray(gx, dtype=float)
                gu = np.asarray(gu, dtype=float)
                if gx.shape == (self.T, self.S) and gu.shape == (self.T, self.A):
                    return gx, gu
            gx = np.empty((self.T, self.S))
            gu = np.empty((self.T, self.A))
            for t in range(self.T):
                a, b = pg(X[t], U[t], t)
                gx[t], gu[t] = a, b
            return gx, gu
        gx = np.empty((self.T, self.S))
        gu = np.empty((self.T, self.A))
        for t in range(self.T):
            gx[t], gu[t] = self._fd_stage_grad(X[t], U[t], t)
        return gx, gu

    def _fd_jacobians(self, x, u, t):
        h = self.FD_STEP
        fx = np.empty((self.S, self.S))
        fu = np.empty((self.S, self.A))
        for m in range(self.S):
            xp, xm = x.copy(), x.copy()
            xp[m] += h
            xm[m] -= h
            fx[:, m] = (np.asarray(self.mocp.transition(xp, u, t), dtype=float)
                        - np.asarray(self.mocp.transition(xm, u, t), dtype=float)) / (2 * h)
        for a in range(self.A):
            up, um = u.copy(), u.copy()
            up[a] += h
            um[a] -= h
            fu[:, a] = (np.asarray(self.mocp.transition(x, up, t), dtype=float)
                        - np.asarray(self.mocp.transition(x, um, t), dtype=float)) / (2 * h)
        return fx, fu

    def jacobians(self, x, u, t):
        tj = self.mocp.transition_jacobians
        if tj is not None:
            fx, fu = tj(x, u, t)
            return np.asarray(fx, dtype=float), np.asarray(fu, dtype=float)
        return self._fd_jacobians(x, u, t)

    # -- adjoint gradient ------------------------------------------------------

    def gradient(self, X, U, m_cap, bound_grad):
        """dL/dU via one backward sweep.

        m_cap: (T, L) multiplier estimates of the coupled rows (or None);
        bound_grad: (T, S) gradient of the state-bound penalty terms,
        attached to x_{t+1} for stage t.
        """
        gx, gu = self.stage_grads(X, U)
        gx = gx * self.betas[:, None]
        gu = gu * self.betas[:, None]
        G = gu
        if m_cap is not None:
            M, _ = self.prob.coupled_inequalities
            G = G - m_cap @ M
        if self.prob.integrator_matrix is not None:
            E = self.prob.integrator_matrix
            # With f_x = I the adjoint telescopes:
            # dL/dx_{t+1} = bound_grad[t] + gx[t+1] + dL/dx_{t+2}
            D = np.zeros((self.T, self.S))
            D[self.T - 1] = bound_grad[self.T - 1]
            for t in range(self.T - 2, -1, -1):
                D[t] = bound_grad[t] + gx[t + 1] + D[t + 1]
            return G + D @ E
        lam = np.zeros(self.S)
        out = np.empty_like(G)
        for t in range(self.T - 1, -1, -1):
            lam_next = lam + bound_grad[t]
            fx, fu = self.jacobians(X[t], U[t], t)
            out[t] = G[t] + fu.T @ lam_next
            lam = gx[t] + fx.T @ lam_next
        return out


def trajectory_gradient(prob: FiniteHorizonProblem, U: np.ndarray) -> np.ndarray:
    """Gradient of the discounted potential return with respect to U.

    Exposed for gradient-correctness checks against finite differences.
    """
    ev = _Evaluator(prob)
    U = np.asarray(U, dtype=float).reshape(prob.horizon, ev.A)
    X = ev.states(U)
    return ev.gradient(X, U, None, np.zeros((prob.horizon, ev.S)))


# ---------------------------------------------------------------------------
# augmented Lagrangian machinery


class _Penalty:
    """Multiplier and penalty state for one AL outer iteration."""

    def __init__(self, prob: FiniteHorizonProblem, rho: float):
        self.prob = prob
        self.rho = rho
        T, S = prob.horizon, prob.mocp.state_dim
        L = prob.num_coupled_rows
        rows = 1 if prob.monotone_drain else T
        self.mu_cap = np.zeros((T, L)) if L else None
        self.mu_lo = np.zeros((rows, S)) if prob.state_lower is not None else None
        self.mu_hi = np.zeros((rows, S)) if prob.state_upper is not None else None

    def _bounded_states(self, X):
        return X[-1:] if self.prob.monotone_drain else X[1:]

    def constraint_values(self, X, U):
        """Raw g values (feasible iff <= 0) per family."""
        prob = self.prob
        out = {}
        if self.mu_cap is not None:
            M, c = prob.coupled_inequalities
            out["capacity"] = U @ M.T - c
        if self.mu_lo is not None:
            out["state_lower"] = prob.state_lower[None, :] - self._bounded_states(X)
        if self.mu_hi is not None:
            out["state_upper"] = self._bounded_states(X) - prob.state_upper[None, :]
        return out

    def violation(self, X, U) -> float:
        vals = self.constraint_values(X, U)
        if not vals:
            return 0.0
        return max(float(np.maximum(g, 0.0).max()) for g in vals.values())

    @staticmethod
    def _term(g, mu, rho):
        m = np.maximum(0.0, mu + rho * g)
        return float(np.sum(m * m - mu * mu)) / (2.0 * rho)

    def value(self, base: float, X, U) -> float:
        vals = self.constraint_values(X, U)
        total = base
        for key, mu in (("capacity", self.mu_cap),
                        ("state_lower", self.mu_lo),
                        ("state_upper", self.mu_hi)):
            if mu is not None:
                total -= self._term(vals[key], mu, self.rho)
        return total

    def multiplier_estimates(self, X, U):
        vals = self.constraint_values(X, U)
        out = {}
        for key, mu in (("capacity", self.mu_cap),
                        ("state_lower", self.mu_lo),
                        ("state_upper", self.mu_hi)):
            if mu is not None:
                out[key] = np.maximum(0.0, mu + self.rho * vals[key])
        return out

    def gradient_pieces(self, X, U):
        """(m_cap, bound_grad) used by the adjoint sweep.

        bound_grad[t] is attached to x_{t+1}; with monotone_drain the
        only nonzero row is the terminal one.
        """
        est = self.multiplier_estimates(X, U)
        T, S = self.prob.horizon, self.prob.mocp.state_dim
        bound = np.zeros((T, S))
        rows = slice(T - 1, T) if self.prob.monotone_drain else slice(0, T)
        if self.mu_lo is not None:
            bound[rows] += est["state_lower"]
        if self.mu_hi is not None:
            bound[rows] -= est["state_upper"]
        return est.get("capacity"), bound

    def update_multipliers(self, X, U):
        est = self.multiplier_estimates(X, U)
        if self.mu_cap is not None:
            self.mu_cap = est["capacity"]
        if self.mu_lo is not None:
            self.mu_lo = est["state_lower"]
        if self.mu_hi is not None:
            self.mu_hi = est["state_upper"]


def _project(U, lo, hi, active):
    out = np.clip(U, lo, hi)
    if active is not None:
        out[:, ~active] = U[:, ~active]
    return out


def _pgd(ev: _Evaluator, pen: _Penalty, U0, opts: SolverOptions, active,
         tol: float):
    """Projected gradient ascent with Armijo backtracking on the AL value.

    The trial step is the spectral (Barzilai-Borwein) length, which makes
    the method usable on badly scaled problems; each accepted step still
    satisfies the monotone sufficient-increase condition.  Returns
    (U, projected-gradient residual, accepted iterations).
    """
    prob = ev.prob
    lo = prob.mocp.action_bounds[:, 0]
    hi = prob.mocp.action_bounds[:, 1]
    U = _project(U0.copy(), lo, hi, None)
    if active is not None:
        U[:, ~active] = U0[:, ~active]

    X = ev.states(U)
    L = pen.value(ev.objective(X, U), X, U)
    if not np.isfinite(L):
        raise NumericalDomainError("objective non-finite at the starting point")

    m_cap, bound = pen.gradient_pieces(X, U)
    g = ev.gradient(X, U, m_cap, bound)
    if active is not None:
        g[:, ~active] = 0.0
    step = 1.0
    res = np.inf
    it = 0
    for it in range(1, opts.max_inner_iterations + 1):
        gmap = _project(U + g, lo, hi, active) - U
        res = float(np.max(np.abs(gmap)))
        if res <= tol:
            break
        accepted = False
        trial = step
        while trial > 1e-18:
            U_new = _project(U + trial * g, lo, hi, active)
            d = U_new - U
            X_new = ev.states(U_new)
            L_new = pen.value(ev.objective(X_new, U_new), X_new, U_new)
            if np.isfinite(L_new) and \
                    L_new >= L + opts.armijo_constant * float(np.sum(g * d)):
                accepted = True
                break
            trial *= opts.armijo_shrink
        if not accepted:
            break
        m_cap, bound = pen.gradient_pieces(X_new, U_new)
        g_new = ev.gradient(X_new, U_new, m_cap, bound)
        if active is not None:
            g_new[:, ~active] = 0.0
        # BB1 spectral step for the next trial (ascent: s'y <= 0)
        s = U_new - U
        y = g_new - g
        sy = float(np.sum(s * y))
        if sy < -1e-30:
            step = min(max(-float(np.sum(s * s)) / sy, 1e-10), 1e10)
        else:
            step = min(trial / opts.armijo_shrink, 1e10)
        U, X, L, g = U_new, X_new, L_new, g_new
    return U, res, it


def _inner_lbfgsb(ev: _Evaluator, pen: _Penalty, U0, opts: SolverOptions,
                  active, tol: float):
    """Box-constrained AL subproblem via L-BFGS-B (maximization)."""
    prob = ev.prob
    shape = U0.shape
    lo = np.broadcast_to(prob.mocp.action_bounds[:, 0], shape).copy()
    hi = np.broadcast_to(prob.mocp.action_bounds[:, 1], shape).copy()
    U_start = np.clip(U0, lo, hi)
    if active is not None:
        frozen = np.broadcast_to(~active, shape)
        lo[frozen] = U0[frozen]
        hi[frozen] = U0[frozen]
        U_start[frozen] = U0[frozen]
    bounds = np.stack([lo.ravel(), hi.ravel()], axis=1)
    bounds[~np.isfinite(bounds[:, 0]), 0] = -np.inf
    bounds[~np.isfinite(bounds[:, 1]), 1] = np.inf

    first_eval = [True]

    def neg(z):
        U = z.reshape(shape)
        X = ev.states(U)
        val = pen.value(ev.objective(X, U), X, U)
        if not np.isfinite(val):
            if first_eval[0]:
                raise NumericalDomainError(
                    "objective non-finite at the starting point")
            return np.inf, np.zeros(z.size)
        first_eval[0] = False
        m_cap, bound = pen.gradient_pieces(X, U)
        G = ev.gradient(X, U, m_cap, bound)
        if active is not None:
            G[:, ~active] = 0.0
        return -val, -G.ravel()

    out = scipy.optimize.minimize(
        neg, U_start.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": opts.max_inner_iterations, "ftol": 0.0,
                 "gtol": 0.3 * tol, "maxcor": 20, "maxls": 60})
    U = out.x.reshape(shape)
    X = ev.states(U)
    m_cap, bound = pen.gradient_pieces(X, U)
    g = ev.gradient(X, U, m_cap, bound)
    if active is not None:
        g[:, ~active] = 0.0
    gmap = _project(U + g, prob.mocp.action_bounds[:, 0],
                    prob.mocp.action_bounds[:, 1], active) - U
    return U, float(np.max(np.abs(gmap))), int(out.nit)


def _inner_solve(ev, pen, U, opts, active, tol):
    if opts.inner_method == "lbfgs":
        return _inner_lbfgsb(ev, pen, U, opts, active, tol)
    return _pgd(ev, pen, U, opts, active, tol)


def default_warm_start(prob: FiniteHorizonProblem) -> np.ndarray:
    """Midpoint of the action box, zero on unbounded coordinates."""
    lo = prob.mocp.action_bounds[:, 0]
    hi = prob.mocp.action_bounds[:, 1]
    mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
    mid = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo, mid)
    mid = np.where(~np.isfinite(lo) & np.isfinite(hi), hi, mid)
    return np.tile(mid, (prob.horizon, 1))


def solve_finite_horizon(prob: FiniteHorizonProblem,
                         opts: Optional[SolverOptions] = None,
                         warm_start: Optional[np.ndarray] = None,
                         active_columns: Optional[np.ndarray] = None) -> SolveResult:
    """Maximize the discounted potential over the action sequence.

    Deterministic given the warm start.  Non-convergence is reported in
    the result (converged = False), never silently.
    """
    opts = opts or SolverOptions()
    ev = _Evaluator(prob)
    U = default_warm_start(prob) if warm_start is None else \
        np.array(warm_start, dtype=float).reshape(prob.horizon, ev.A)
    active = None if active_columns is None else np.asarray(active_columns, bool)

    pen = _Penalty(prob, opts.initial_penalty)
    has_constraints = (pen.mu_cap is not None or pen.mu_lo is not None
                       or pen.mu_hi is not None)

    total_iters = 0
    res = np.inf
    viol = np.inf
    prev_viol = np.inf
    outer_budget = opts.max_outer_iterations if has_constraints else 1
    for outer in range(outer_budget):
        # loose inner solves while the multipliers are far off, tight later
        inner_tol = max(opts.gradient_tolerance, 1e-4 * 0.1 ** outer)
        U, res, inner = _inner_solve(ev, pen, U, opts, active, inner_tol)
        total_iters += inner
        X = ev.states(U)
        viol = pen.violation(X, U)
        if res <= opts.gradient_tolerance and viol <= opts.feasibility_tolerance:
            break
        pen.update_multipliers(X, U)
        # grow the penalty only while actually infeasible, and only when
        # the violation is not shrinking fast enough on its own
        if viol > opts.feasibility_tolerance and viol > 0.25 * prev_viol \
                and np.isfinite(prev_viol):
            pen.rho = min(pen.rho * opts.penalty_growth, opts.penalty_cap)
        prev_viol = viol

    X = ev.states(U)
    objective = ev.objective(X, U)
    duals = pen.multiplier_estimates(X, U)
    converged = bool(res <= opts.gradient_tolerance
                     and viol <= opts.feasibility_tolerance)
    traj = Trajectory(states=X, actions=U, potential_return=objective)
    return SolveResult(trajectory=traj, objective=objective,
                       kkt_residual=res, constraint_violation=viol,
                       converged=converged, iterations=total_iters,
                       dual_estimates=duals)


# ---------------------------------------------------------------------------
# best responses and equilibrium certification


def _single_player_problem(game: DynamicGameSpec, traj: Trajectory, player: int,
                           structure: Optional[FiniteHorizonProblem]):
    """Build player `player`'s OCP with the other players' actions frozen."""
    blk = game.action_block(player)
    frozen = traj.actions.copy()
    T = traj.horizon
    A_i = game.action_dims[player]
    idx = list(game.player_state_indices[player])

    def embed(u_sub, t):
        full = frozen[t].copy()
        full[blk] = u_sub
        return full

    def potential(x, u_sub, t):
        return game.utility(player, x, embed(u_sub, t), t)

    def transition(x, u_sub, t):
        return game.transition(x, embed(u_sub, t), t)

    grad = None
    if game.utility_gradients is not None:
        def grad(x, u_sub, t):
            gs, gu = game.utility_gradients[player](
                np.asarray(x, dtype=float)[idx], embed(u_sub, t), t)
            full = np.zeros(game.state_dim)
            full[idx] = gs
            return full, np.asarray(gu, dtype=float)[blk]

    jac = None
    if structure is not None and structure.mocp.transition_jacobians is not None:
        base_jac = structure.mocp.transition_jacobians

        def jac(x, u_sub, t):
            fx, fu = base_jac(x, embed(u_sub, t), t)
            return fx, np.asarray(fu, dtype=float)[:, blk]

    mocp = MocpSpec(
        state_dim=game.state_dim,
        action_dims=(A_i,),
        potential=potential,
        transition=transition,
        inequality_constraints=None,
        action_bounds=game.action_bounds[blk],
        discount=game.discount,
        initial_state=game.initial_state,
        potential_gradient=grad,
        transition_jacobians=jac,
    )

    coupled = None
    state_lower = state_upper = None
    integrator = None
    if structure is not None:
        if structure.coupled_inequalities is not None:
            M, c = structure.coupled_inequalities
            others = np.ones(M.shape[1], bool)
            others[blk] = False
            c_sub = c - frozen[:, others] @ M[:, others].T
            coupled = (M[:, blk], c_sub)
        state_lower = structure.state_lower
        state_upper = structure.state_upper
        if structure.integrator_matrix is not None:
            # x' = x + E u with frozen columns folded in would add a
            # time-varying offset; keep the generic path instead.
            integrator = None

    return FiniteHorizonProblem(
        mocp=mocp, horizon=T,
        linear_dynamics=structure.linear_dynamics if structure else False,
        coupled_inequalities=coupled,
        state_lower=state_lower, state_upper=state_upper,
        integrator_matrix=integrator,
        monotone_drain=structure.monotone_drain if structure else False), blk


def best_response_deviation(game: DynamicGameSpec, traj: Trajectory, player: int,
                            opts: Optional[SolverOptions] = None,
                            structure: Optional[FiniteHorizonProblem] = None) -> float:
    """Best unilateral improvement player `player` can find from traj.

    Warm-started at the player's own current actions, so the reported
    improvement is nonnegative up to solver tolerance.
    """
    opts = opts or SolverOptions()
    sub, blk = _single_player_problem(game, traj, player, structure)
    current = float(evaluate_returns(game, traj)[player])
    warm = traj.actions[:, blk]
    result = solve_finite_horizon(sub, opts, warm_start=warm)
    return result.objective - current


def verify_ne(game: DynamicGameSpec, traj: Trajectory, tol: float = 1e-3,
              opts: Optional[SolverOptions] = None,
              structure: Optional[FiniteHorizonProblem] = None) -> NeReport:
    """Certify a trajectory as an open-loop Nash equilibrium.

    Runs the best-response search for every player; certified iff the
    largest improvement, relative to max(1, |player return|), is <= tol.
    """
    opts = opts or SolverOptions()
    returns = evaluate_returns(game, traj)
    improvements = np.array([
        best_response_deviation(game, traj, i, opts, structure)
        for i in range(game.num_players)
    ])
    rel = improvements / np.maximum(1.0, np.abs(returns))
    max_rel = float(rel.max())
    return NeReport(
        per_player_improvement=improvements,
        per_player_return=returns,
        max_relative_improvement=max_rel,
        certified=bool(max_rel <= tol),
        tolerance=tol,
        search_description={
            "method": "projected-gradient augmented-Lagrangian best response",
            "warm_start": "trajectory actions",
            "normalization": "improvement / max(1, |return|)",
            "gradient_tolerance": opts.gradient_tolerance,
        },
    )
