"""Core game and control-problem representations.

A dynamic game is a set of players acting on a shared discrete-time
dynamical system.  Every quantity the solvers need is an evaluable
callable with the uniform signature ``(state, action_profile, time)``;
utilities receive only the state coordinates their player observes.
Action profiles are stored flat, with a per-player offset table derived
from the per-player action dimensions, so scalar and vector actions are
handled uniformly.

All types are immutable after construction and all operations here are
pure functions, so objects can be shared freely across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FeasibilityError, NumericalDomainError, SpecificationError

# Transitions are composed at most a few hundred times in double
# precision, so per-coordinate residuals beyond this indicate a bug.
DEFAULT_DYNAMICS_TOL = 1e-9


def action_offsets(action_dims: Sequence[int]) -> np.ndarray:
    """Start offset of each player's block in the flat action vector."""
    return np.concatenate(([0], np.cumsum(action_dims))).astype(int)


def _as_bounds(bounds, total_dim: int) -> np.ndarray:
    arr = np.asarray(bounds, dtype=float)
    if arr.shape != (total_dim, 2):
        raise SpecificationError(
            f"action_bounds must have shape ({total_dim}, 2), got {arr.shape}"
        )
    if np.any(arr[:, 0] > arr[:, 1]):
        raise SpecificationError("action_bounds has lower > upper")
    return arr


@dataclass(frozen=True)
class DynamicGameSpec:
    """A constrained nonstationary dynamic game.

    Attributes:
        num_players: number of players Q.
        state_dim: dimension S of the shared state vector.
        action_dims: per-player action dimensions; scalar actions use 1.
        player_state_indices: per-player tuple of 0-based state coordinates
            the player's utility may depend on.
        utilities: per-player callables ``(state_slice, actions, t) -> float``
            where ``state_slice`` contains only the player's coordinates.
        transition: ``(state, actions, t) -> next state``.
        inequality_constraints: optional ``(state, actions, t) -> vector``;
            a point is feasible iff every component is <= 0.
        action_bounds: (total_action_dim, 2) array of closed intervals;
            +-inf entries mean unbounded.
        discount: discount factor in (0, 1).
        initial_state: state at t = 0.
        utility_gradients: optional per-player callables
            ``(state_slice, actions, t) -> (d/dstate_slice, d/dactions)``
            used by gradient-based solvers when present.
    """

    num_players: int
    state_dim: int
    action_dims: tuple[int, ...]
    player_state_indices: tuple[tuple[int, ...], ...]
    utilities: tuple[Callable, ...]
    transition: Callable
    inequality_constraints: Optional[Callable]
    action_bounds: np.ndarray
    discount: float
    initial_state: np.ndarray
    utility_gradients: Optional[tuple[Callable, ...]] = None

    def __post_init__(self):
        q = self.num_players
        if q <= 0 or self.state_dim <= 0:
            raise SpecificationError("num_players and state_dim must be positive")
        if len(self.action_dims) != q or any(a <= 0 for a in self.action_dims):
            raise SpecificationError("action_dims must hold Q positive integers")
        if len(self.player_state_indices) != q or len(self.utilities) != q:
            raise SpecificationError("per-player fields must have length Q")
        for i, idx in enumerate(self.player_state_indices):
            if len(idx) == 0:
                raise SpecificationError(f"player {i} observes no state coordinate")
            if any(m < 0 or m >= self.state_dim for m in idx):
                raise SpecificationError(f"player {i} state indices out of range")
        if not 0.0 < self.discount < 1.0:
            raise SpecificationError("discount must lie strictly inside (0, 1)")
        object.__setattr__(self, "action_bounds",
                           _as_bounds(self.action_bounds, self.total_action_dim))
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.shape != (self.state_dim,):
            raise SpecificationError("initial_state has wrong dimension")
        object.__setattr__(self, "initial_state", x0)

    @property
    def total_action_dim(self) -> int:
        return int(sum(self.action_dims))

    @property
    def offsets(self) -> np.ndarray:
        return action_offsets(self.action_dims)

    def action_block(self, i: int) -> slice:
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    def utility(self, i: int, state, actions, t: int):
        """Player i's stage utility; slices the state to X(i).

        ``state``/``actions`` may carry leading batch dimensions when the
        underlying callable is vectorized.
        """
        idx = list(self.player_state_indices[i])
        state = np.asarray(state, dtype=float)
        return self.utilities[i](state[..., idx], np.asarray(actions, dtype=float), t)

    def utility_gradient(self, i: int, state, actions, t: int):
        """(dpi/dstate_full, dpi/dactions) for player i, or None.

        The state gradient is scattered back to full state coordinates;
        off-slice entries are exactly zero.
        """
        if self.utility_gradients is None:
            return None
        idx = list(self.player_state_indices[i])
        gs, gu = self.utility_gradients[i](
            np.asarray(state, dtype=float)[..., idx], np.asarray(actions, dtype=float), t)
        full = np.zeros(self.state_dim)
        full[idx] = np.asarray(gs, dtype=float)
        return full, np.asarray(gu, dtype=float)


@dataclass(frozen=True)
class MocpSpec:
    """The single control problem equivalent to a dynamic potential game.

    Same shape conventions as :class:`DynamicGameSpec`, with the per-player
    utilities replaced by one scalar potential.
    """

    state_dim: int
    action_dims: tuple[int, ...]
    potential: Callable
    transition: Callable
    inequality_constraints: Optional[Callable]
    action_bounds: np.ndarray
    discount: float
    initial_state: np.ndarray
    potential_gradient: Optional[Callable] = None
    transition_jacobians: Optional[Callable] = None

    def __post_init__(self):
        if self.state_dim <= 0 or any(a <= 0 for a in self.action_dims):
            raise SpecificationError("dimensions must be positive")
        if not 0.0 < self.discount < 1.0:
            raise SpecificationError("discount must lie strictly inside (0, 1)")
        object.__setattr__(self, "action_bounds",
                           _as_bounds(self.action_bounds, self.total_action_dim))
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.shape != (self.state_dim,):
            raise SpecificationError("initial_state has wrong dimension")
        object.__setattr__(self, "initial_state", x0)

    @property
    def total_action_dim(self) -> int:
        return int(sum(self.action_dims))

    @property
    def offsets(self) -> np.ndarray:
        return action_offsets(self.action_dims)


@dataclass(frozen=True)
class Trajectory:
    """A rolled-out path: T+1 states, T flat action profiles, returns."""

    states: np.ndarray
    actions: np.ndarray
    per_player_returns: Optional[np.ndarray] = None
    potential_return: Optional[float] = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        actions = np.asarray(self.actions, dtype=float)
        if actions.size == 0:
            actions = actions.reshape(0, 0)
        actions = np.atleast_2d(actions)
        if states.shape[0] != actions.shape[0] + 1:
            raise SpecificationError(
                f"states ({states.shape[0]}) must be one longer than "
                f"actions ({actions.shape[0]})")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of checking a trajectory against constraints and dynamics."""

    feasible: bool
    worst_violation: float
    violating_indices: tuple[tuple[int, int], ...]
    dynamics_residual: float
    tolerance: float = DEFAULT_DYNAMICS_TOL


def _check_dims(obj, traj: Trajectory):
    if traj.states.shape[1] != obj.state_dim:
        raise SpecificationError(
            f"trajectory state dim {traj.states.shape[1]} != spec {obj.state_dim}")
    if traj.horizon > 0 and traj.actions.shape[1] != obj.total_action_dim:
        raise SpecificationError(
            f"trajectory action dim {traj.actions.shape[1]} != "
            f"spec {obj.total_action_dim}")


def evaluate_returns(game: DynamicGameSpec, traj: Trajectory) -> np.ndarray:
    """Discounted utility sum per player along a trajectory.

    Component i is sum_{t=0}^{T-1} beta^t pi_i(x_t, u_t, t).
    """
    _check_dims(game, traj)
    out = np.zeros(game.num_players)
    for t in range(traj.horizon):
        w = game.discount ** t
        for i in range(game.num_players):
            v = float(game.utility(i, traj.states[t], traj.actions[t], t))
            if not np.isfinite(v):
                raise NumericalDomainError(
                    f"utility of player {i} non-finite at t={t}",
                    player=i, time=t)
            out[i] += w * v
    return out


def evaluate_potential_return(mocp: MocpSpec, traj: Trajectory) -> float:
    """Discounted potential sum along a trajectory."""
    _check_dims(mocp, traj)
    total = 0.0
    for t in range(traj.horizon):
        v = float(mocp.potential(traj.states[t], traj.actions[t], t))
        if not np.isfinite(v):
            raise NumericalDomainError(
                f"potential non-finite at t={t}", time=t)
        total += mocp.discount ** t * v
    return total


def rollout(obj, actions, horizon: Optional[int] = None,
            check_bounds: bool = True) -> Trajectory:
    """Iterate the transition from the initial state under given actions.

    ``obj`` is a DynamicGameSpec or MocpSpec.  Actions must respect the
    box bounds; the returned trajectory carries per-player returns for
    games and the potential return for control problems.
    """
    actions = np.asarray(actions, dtype=float)
    if actions.ndim == 1:
        actions = actions.reshape(-1, obj.total_action_dim)
    if horizon is None:
        horizon = actions.shape[0]
    if actions.shape[0] != horizon:
        raise SpecificationError(
            f"got {actions.shape[0]} action profiles for horizon {horizon}")
    if horizon > 0 and actions.shape[1] != obj.total_action_dim:
        raise SpecificationError(
            f"action profile dim {actions.shape[1]} != {obj.total_action_dim}")

    if check_bounds and horizon > 0:
        lo, hi = obj.action_bounds[:, 0], obj.action_bounds[:, 1]
        bad = (actions < lo - 1e-12) | (actions > hi + 1e-12)
        if np.any(bad):
            t_bad, c_bad = np.argwhere(bad)[0]
            player = int(np.searchsorted(obj.offsets, c_bad, side="right") - 1)
            raise FeasibilityError(
                f"action out of bounds at t={t_bad}, player {player} "
                f"(coordinate {c_bad})", time=int(t_bad), player=player)

    states = np.empty((horizon + 1, obj.state_dim))
    states[0] = obj.initial_state
    for t in range(horizon):
        nxt = np.asarray(obj.transition(states[t], actions[t], t), dtype=float)
        if nxt.shape != (obj.state_dim,):
            raise SpecificationError(
                f"transition returned shape {nxt.shape} at t={t}")
        if not np.all(np.isfinite(nxt)):
            raise NumericalDomainError(
                f"transition produced non-finite state at t={t}", time=t)
        states[t + 1] = nxt

    traj = Trajectory(states=states, actions=actions)
    if isinstance(obj, DynamicGameSpec):
        returns = evaluate_returns(obj, traj)
        return Trajectory(states=states, actions=actions,
                          per_player_returns=returns)
    pot = evaluate_potential_return(obj, traj)
    return Trajectory(states=states, actions=actions, potential_return=pot)


def check_feasibility(obj, traj: Trajectory,
                      tol: float = DEFAULT_DYNAMICS_TOL) -> FeasibilityReport:
    """Report the worst constraint violation and dynamics residual.

    Pure function: evaluates g(x_t, u_t, t) for all t < T and the
    per-coordinate transition residual |x_{t+1} - f(x_t, u_t, t)|.
    """
    if tol <= 0:
        raise SpecificationError("tol must be positive")
    _check_dims(obj, traj)

    worst = -np.inf
    violating = []
    dyn_res = 0.0
    for t in range(traj.horizon):
        nxt = np.asarray(obj.transition(traj.states[t], traj.actions[t], t),
                         dtype=float)
        dyn_res = max(dyn_res, float(np.max(np.abs(traj.states[t + 1] - nxt))))
        if obj.inequality_constraints is not None:
            g = np.atleast_1d(np.asarray(
                obj.inequality_constraints(traj.states[t], traj.actions[t], t),
                dtype=float))
            worst = max(worst, float(g.max()))
            for c in np.flatnonzero(g > tol):
                violating.append((t, int(c)))
    if not np.isfinite(worst):
        worst = 0.0

    feasible = worst <= tol and dyn_res <= tol
    return FeasibilityReport(
        feasible=feasible,
        worst_violation=worst,
        violating_indices=tuple(violating),
        dynamics_residual=dyn_res,
        tolerance=tol,
    )
