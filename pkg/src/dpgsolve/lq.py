"""Linear-quadratic dynamic games solved in closed form.

The resource-allocation game with quadratic unsatisfied-demand and
unbalanced-resources costs becomes a standard LQ control problem after
augmenting the state with its one-step delay and replacing each player's
action by its demand-mismatch coefficient.  The optimal value matrix is
the fixed point of a discrete algebraic Riccati iteration; the optimal
policy is linear state feedback.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (ConditioningError, InstabilityError, NonConvergenceError,
                     SpecificationError, ValidationError)
from .game import Trajectory, action_offsets

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class LqGameParams:
    """Raw matrices of the linear-quadratic resource allocation game."""

    num_players: int
    state_dim: int
    action_dims: tuple[int, ...]
    C_matrix: np.ndarray
    B_list: tuple[np.ndarray, ...]
    D_list: tuple[np.ndarray, ...]
    Q_list: tuple[np.ndarray, ...]
    R_matrix: np.ndarray
    discount: float
    initial_state: np.ndarray

    def __post_init__(self):
        Q, S = self.num_players, self.state_dim
        if len(self.action_dims) != Q:
            raise SpecificationError("action_dims must have one entry per player")
        if self.C_matrix.shape != (S, S):
            raise SpecificationError("C_matrix must be S x S")
        for i, (B, D, Qi) in enumerate(zip(self.B_list, self.D_list, self.Q_list)):
            Ai = self.action_dims[i]
            if B.shape != (S, Ai) or D.shape != (Ai, S) or Qi.shape != (Ai, Ai):
                raise SpecificationError(f"matrix shapes inconsistent for player {i}")
            if np.max(np.linalg.eigvalsh(0.5 * (Qi + Qi.T))) >= 0:
                raise ValidationError(f"Q_list[{i}] is not negative definite")
        if self.R_matrix.shape != (S, S):
            raise SpecificationError("R_matrix must be S x S")
        if np.max(np.linalg.eigvalsh(0.5 * (self.R_matrix + self.R_matrix.T))) > 1e-12:
            raise ValidationError("R_matrix is not negative semidefinite")
        if not 0.0 < self.discount < 1.0:
            raise SpecificationError("discount must lie in (0, 1)")
        if np.asarray(self.initial_state).shape != (S,):
            raise SpecificationError("initial_state has wrong dimension")


@dataclass(frozen=True)
class LqProblem:
    """Augmented LQ control problem max sum beta^t (u'Qu + x'Rx)."""

    A: np.ndarray
    B: np.ndarray
    R_tilde: np.ndarray
    Q_block: np.ndarray
    action_dims: tuple[int, ...]
    discount: float
    initial_state: np.ndarray
    D_list: Optional[tuple[np.ndarray, ...]] = None

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def total_action_dim(self) -> int:
        return self.B.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        return action_offsets(self.action_dims)


@dataclass(frozen=True)
class RiccatiSolution:
    """Converged quadratic value matrix and derived feedback gain."""

    P: np.ndarray
    gain: np.ndarray
    iterations: int
    residual: float
    dare_residual: float
    spectral_radius_A: float


def augment_lq(params: LqGameParams) -> LqProblem:
    """Build the delay-augmented LQ problem from raw game matrices.

    The augmented action of player i is its demand mismatch
    D_i x_t - u_t^i, so original actions are recoverable from the
    augmented trajectory as u_t^i = D_i x_t - mismatch.
    """
    S = params.state_dim
    top = params.C_matrix + sum(B @ D for B, D in zip(params.B_list, params.D_list))
    A = np.block([
        [top, np.zeros((S, S))],
        [np.eye(S), np.zeros((S, S))],
    ])
    B = np.hstack([np.vstack([Bi, np.zeros((S, Bi.shape[1]))])
                   for Bi in params.B_list])
    R = params.R_matrix
    R_tilde = np.block([[R, -R], [-R, R]])
    Q_block = scipy.linalg.block_diag(*params.Q_list)
    # No separate pre-initial state is given; seeding the delay slot with
    # x_0 makes the initial unbalanced-resources cost exactly zero.
    x0 = np.concatenate([params.initial_state, params.initial_state])
    return LqProblem(A=A, B=B, R_tilde=R_tilde, Q_block=Q_block,
                     action_dims=tuple(params.action_dims),
                     discount=params.discount, initial_state=x0,
                     D_list=params.D_list)


def _sym_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(M, rhs, assume_a="sym")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, ValueError) as exc:
        raise ConditioningError(
            f"inner matrix Q + beta B'PB numerically singular: {exc}") from exc


def riccati_fixed_point(prob: LqProblem, tol: float = 1e-10,
                        max_iter: int = 10000) -> RiccatiSolution:
    """Iterate the Riccati map from P = 0 until the sup-norm change <= tol.

    Each iterate is symmetrized to suppress asymmetry drift from the
    linear solve.  A warning is emitted when the open-loop spectral
    radius is >= 1; convergence is still attempted (stabilizability can
    hold regardless).
    """
    if tol <= 0:
        raise SpecificationError("tol must be positive")
    A, B = prob.A, prob.B
    R, Qb, beta = prob.R_tilde, prob.Q_block, prob.discount
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho >= 1.0:
        warnings.warn(
            f"open-loop spectral radius {rho:.3f} >= 1; Riccati iteration "
            "is not guaranteed to contract", stacklevel=2)

    P = np.zeros_like(R)
    residual = np.inf
    for n in range(1, max_iter + 1):
        PA = P @ A
        PB = P @ B
        inner = Qb + beta * (B.T @ PB)
        gain_term = _sym_solve(inner, B.T @ PA)
        P_next = R + beta * (A.T @ PA) - beta ** 2 * (A.T @ PB) @ gain_term
        P_next = 0.5 * (P_next + P_next.T)
        residual = float(np.max(np.abs(P_next - P)))
        P = P_next
        if residual <= tol:
            break
    else:
        raise NonConvergenceError(
            f"Riccati iteration did not reach {tol} in {max_iter} iterations",
            residual=residual, iterations=max_iter)

    K = lq_optimal_gain(prob, P)
    dare = dare_residual(prob, P)
    return RiccatiSolution(P=P, gain=K, iterations=n, residual=residual,
                           dare_residual=dare, spectral_radius_A=rho)


def dare_residual(prob: LqProblem, P: np.ndarray) -> float:
    """Sup-norm defect of P in the discrete algebraic Riccati equation."""
    A, B = prob.A, prob.B
    beta = prob.discount
    inner = prob.Q_block + beta * (B.T @ P @ B)
    rhs = prob.R_tilde + beta * A.T @ P @ A \
        - beta ** 2 * (A.T @ P @ B) @ _sym_solve(inner, B.T @ P @ A)
    return float(np.max(np.abs(P - rhs)))


def lq_optimal_gain(prob: LqProblem, P: np.ndarray) -> np.ndarray:
    """Feedback gain K with u_t = K x_t maximizing the quadratic Bellman RHS."""
    beta = prob.discount
    inner = prob.Q_block + beta * (prob.B.T @ P @ prob.B)
    return beta * _sym_solve(inner, prob.B.T @ P @ prob.A)


def lq_simulate(prob: LqProblem, K: np.ndarray, horizon: int) -> "LqSimulation":
    """Closed-loop rollout x_{t+1} = (A - BK) x_t with stage diagnostics."""
    if horizon < 1:
        raise SpecificationError("horizon must be >= 1")
    A_cl = prob.A - prob.B @ K
    n = prob.state_dim
    states = np.empty((horizon + 1, n))
    actions = np.empty((horizon, prob.total_action_dim))
    stage_potentials = np.empty(horizon)
    states[0] = prob.initial_state
    for t in range(horizon):
        u = K @ states[t]
        actions[t] = u
        stage_potentials[t] = float(u @ prob.Q_block @ u
                                    + states[t] @ prob.R_tilde @ states[t])
        states[t + 1] = A_cl @ states[t]
        if np.linalg.norm(states[t + 1]) > DIVERGENCE_NORM:
            rho_cl = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
            raise InstabilityError(
                f"closed loop diverged at t={t}", spectral_radius=rho_cl)
    return LqSimulation(problem=prob,
                        trajectory=Trajectory(states=states, actions=actions),
                        stage_potentials=stage_potentials)


@dataclass(frozen=True)
class LqSimulation:
    """Closed-loop LQ run: augmented trajectory plus per-step diagnostics."""

    problem: LqProblem
    trajectory: Trajectory
    stage_potentials: np.ndarray

    def mismatch_norms(self) -> np.ndarray:
        """Per-step norm of each player's demand-mismatch coefficients."""
        off = self.problem.offsets
        acts = self.trajectory.actions
        return np.stack([np.linalg.norm(acts[:, off[i]:off[i + 1]], axis=1)
                         for i in range(len(self.problem.action_dims))], axis=1)

    def original_actions(self) -> np.ndarray:
        """Recover u_t^i = D_i x_t - mismatch_t^i from augmented data."""
        if self.problem.D_list is None:
            raise SpecificationError("problem carries no demand matrices")
        S = self.problem.state_dim // 2
        off = self.problem.offsets
        x = self.trajectory.states[:-1, :S]
        out = np.empty_like(self.trajectory.actions)
        for i, D in enumerate(self.problem.D_list):
            out[:, off[i]:off[i + 1]] = x @ D.T - self.trajectory.actions[:, off[i]:off[i + 1]]
        return out


def player_return(prob: LqProblem, traj: Trajectory, player: int) -> float:
    """Discounted x'Rx + u_i'Q_i u_i along a recorded trajectory."""
    off = prob.offsets
    blk = slice(int(off[player]), int(off[player + 1]))
    Qi = prob.Q_block[blk, blk]
    X, U = traj.states[:-1], traj.actions[:, blk]
    stage = (np.einsum("ti,ij,tj->t", X, prob.R_tilde, X)
             + np.einsum("ti,ij,tj->t", U, Qi, U))
    return float(prob.discount ** np.arange(traj.horizon) @ stage)


def lq_best_response(prob: LqProblem, traj: Trajectory, player: int) -> float:
    """Exact unilateral improvement for one player via backward recursion.

    The open-loop plant may be unstable (spectral radius of A well above
    one), so re-optimizing an action sequence by forward rollout is
    numerically meaningless; instead the player's best response against
    the others' recorded actions is an affine-quadratic control problem
    solved exactly by a backward value recursion, which never iterates
    the unstable dynamics open loop.  Returns (best value) - (recorded
    value); nonnegative up to roundoff whenever the recorded actions are
    a best response.
    """
    A, beta = prob.A, prob.discount
    off = prob.offsets
    blk = slice(int(off[player]), int(off[player + 1]))
    others = np.ones(prob.total_action_dim, bool)
    others[blk] = False
    Bi = prob.B[:, blk]
    Qi = prob.Q_block[blk, blk]
    R = prob.R_tilde
    T = traj.horizon
    # known drift from the other players' recorded actions
    W = traj.actions[:, others] @ prob.B[:, others].T

    # value-to-go V_t(x) = x'Px + 2q'x + c (stage-normalized by beta^-t)
    n = prob.state_dim
    P = np.zeros((n, n))
    q = np.zeros(n)
    c = 0.0
    for t in range(T - 1, -1, -1):
        w = W[t]
        H = Qi + beta * (Bi.T @ P @ Bi)
        F = beta * (Bi.T @ P @ A)
        Y = q - P @ w
        h = beta * (Bi.T @ Y)
        HinvF = _sym_solve(H, F)
        Hinvh = _sym_solve(H, h)
        P_new = R + beta * (A.T @ P @ A) - F.T @ HinvF
        P_new = 0.5 * (P_new + P_new.T)
        q_new = beta * (A.T @ (Y - P @ (Bi @ Hinvh)))
        c_new = beta * (float(w @ P @ w) - 2.0 * float(q @ w) + c) \
            - float(h @ Hinvh)
        P, q, c = P_new, q_new, c_new
    x0 = traj.states[0]
    best = float(x0 @ P @ x0) + 2.0 * float(q @ x0) + c
    return best - player_return(prob, traj, player)


def lq_verify_ne(prob: LqProblem, traj: Trajectory, tol: float = 1e-3):
    """Equilibrium certification for LQ trajectories via exact best responses.

    Same report contract as the trajectory-optimization certifier, but
    each deviation search is the closed-form backward recursion above.
    """
    from .trajopt import NeReport

    Q = len(prob.action_dims)
    returns = np.array([player_return(prob, traj, i) for i in range(Q)])
    improvements = np.array([lq_best_response(prob, traj, i) for i in range(Q)])
    rel = improvements / np.maximum(1.0, np.abs(returns))
    max_rel = float(rel.max())
    return NeReport(
        per_player_improvement=improvements,
        per_player_return=returns,
        max_relative_improvement=max_rel,
        certified=bool(max_rel <= tol),
        tolerance=tol,
        search_description={
            "method": "exact backward affine-quadratic best response",
            "normalization": "improvement / max(1, |return|)",
        },
    )
