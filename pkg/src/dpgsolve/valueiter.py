"""Grid value iteration for nonstationary control problems.

Nonstationarity is removed by augmenting the state with a periodically
wrapped time coordinate; the augmented problem is then solved on a
uniform grid by Jacobi value-iteration sweeps (each sweep improves the
policy by exhaustive argmax over the discrete action set, then updates
the value from a snapshot of the previous table).  Deterministic: fixed
sweep order, argmax ties broken toward the lowest action index, nearest
grid snapping with ties toward the lower index.

Grid time points are {0, ..., time_period - 1}; pair a grid of period P
with ``augment_time(f, P - 1)`` so the wrapped transition never leaves
the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergenceError, NumericalDomainError, SpecificationError
from .game import MocpSpec, Trajectory


@dataclass(frozen=True)
class GridSpec:
    """Uniform discretization of the augmented state and action spaces.

    state_axes: per spatial coordinate (lower, upper, point count);
    action_axes: per action coordinate (lower, upper, level count);
    time_period: number of time points, {0 .. time_period-1}.
    """

    state_axes: tuple[tuple[float, float, int], ...]
    action_axes: tuple[tuple[float, float, int], ...]
    time_period: int = 1

    def __post_init__(self):
        for lo, hi, n in list(self.state_axes) + list(self.action_axes):
            if n < 1:
                raise SpecificationError("axis point counts must be >= 1")
            if n > 1 and not lo < hi:
                raise SpecificationError("axis bounds must be ordered")
        if self.time_period < 1:
            raise SpecificationError("time_period must be >= 1")

    @property
    def num_augmented_states(self) -> int:
        n = self.time_period
        for _, _, c in self.state_axes:
            n *= c
        return n


class Grid:
    """Realized grid: point values per axis plus snapping operators."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.axes = [np.linspace(lo, hi, n) if n > 1 else np.array([lo])
                     for lo, hi, n in spec.state_axes]
        self.steps = [(hi - lo) / (n - 1) if n > 1 else 1.0
                      for lo, hi, n in spec.state_axes]
        self.counts = np.array([n for _, _, n in spec.state_axes], dtype=int)
        self.time_period = spec.time_period
        self.num_spatial = int(np.prod(self.counts))
        self.num_augmented = self.num_spatial * self.time_period
        levels = [np.linspace(lo, hi, n) if n > 1 else np.array([lo])
                  for lo, hi, n in spec.action_axes]
        self.action_table = np.array(list(product(*levels)), dtype=float)

    @property
    def num_actions(self) -> int:
        return self.action_table.shape[0]

    def spatial_points(self) -> np.ndarray:
        """All grid points, C-order consistent with flat indices."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def snap_spatial(self, X: np.ndarray):
        """Nearest-point indices, exact-half ties toward the lower index.

        Returns (indices, clamped) where clamped flags points outside
        the grid box.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = np.empty(X.shape, dtype=int)
        clamped = np.zeros(X.shape[0], dtype=bool)
        for k, (ax, step, n) in enumerate(zip(self.axes, self.steps, self.counts)):
            v = (X[:, k] - ax[0]) / step
            j = np.ceil(v - 0.5).astype(int)
            clamped |= (j < 0) | (j > n - 1)
            idx[:, k] = np.clip(j, 0, n - 1)
        return idx, clamped

    def spatial_flat(self, idx: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.atleast_2d(idx).T), tuple(self.counts))

    def augmented_index(self, spatial_flat, t_idx):
        return np.asarray(t_idx, dtype=int) * self.num_spatial + spatial_flat

    def point(self, spatial_flat: int) -> np.ndarray:
        idx = np.unravel_index(spatial_flat, tuple(self.counts))
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])


def build_grid(spec: GridSpec) -> Grid:
    """Materialize the uniform grid; snapping is idempotent on grid points."""
    return Grid(spec)


def augment_time(transition: Callable, wrap_at: int) -> Callable:
    """Fold time into the state with periodic wrap.

    Returns f_aug(x_aug, u, t_unused) where x_aug = (x, t); the next time
    coordinate is t + 1 while t < wrap_at and 0 at t = wrap_at, so the
    period is wrap_at + 1.
    """
    if wrap_at < 1:
        raise SpecificationError("wrap_at must be >= 1")

    def f_aug(x_aug, u, _t=0):
        x_aug = np.asarray(x_aug, dtype=float)
        x, t = x_aug[..., :-1], x_aug[..., -1]
        nxt = np.asarray(transition(x, u, t), dtype=float)
        t_next = np.where(t < wrap_at, t + 1, 0.0)
        return np.concatenate([nxt, np.asarray(t_next)[..., None].reshape(nxt.shape[:-1] + (1,))], axis=-1)

    return f_aug


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray
    bellman_delta: float
    sweeps: int
    epsilon: float


@dataclass(frozen=True)
class PolicyTable:
    action_indices: np.ndarray


def _batch_or_loop(fn, X, U, t, expect_rows, vector_out):
    try:
        out = np.asarray(fn(X, U, t), dtype=float)
        if vector_out and out.shape == (expect_rows, X.shape[1]):
            return out
        if not vector_out and out.shape == (expect_rows,):
            return out
    except Exception:
        pass
    rows = [np.asarray(fn(X[k], U[k], t), dtype=float) for k in range(expect_rows)]
    return np.stack(rows) if vector_out else np.array([float(r) for r in rows])


def _precompute(grid: Grid, mocp: MocpSpec):
    """Stage utilities and snapped successor indices for all (state, action)."""
    S = len(grid.axes)
    Ns, Na, P = grid.num_spatial, grid.num_actions, grid.time_period
    pts = grid.spatial_points()
    R = np.empty((grid.num_augmented, Na))
    SUCC = np.empty((grid.num_augmented, Na), dtype=np.int64)
    for ti in range(P):
        X = np.hstack([pts, np.full((Ns, 1), float(ti))])
        base = ti * Ns
        for a in range(Na):
            U = np.broadcast_to(grid.action_table[a], (Ns, grid.action_table.shape[1]))
            stage = _batch_or_loop(mocp.potential, X, U, ti, Ns, False)
            if not np.all(np.isfinite(stage)):
                s_bad = int(np.flatnonzero(~np.isfinite(stage))[0])
                raise NumericalDomainError(
                    f"non-finite stage value at grid state {X[s_bad]} "
                    f"action {grid.action_table[a]}", time=ti,
                    point=(X[s_bad].copy(), grid.action_table[a].copy()))
            nxt = _batch_or_loop(mocp.transition, X, U, ti, Ns, True)
            sidx, _ = grid.snap_spatial(nxt[:, :S])
            t_next = np.clip(np.rint(nxt[:, S]).astype(int), 0, P - 1)
            R[base:base + Ns, a] = stage
            SUCC[base:base + Ns, a] = grid.augmented_index(
                grid.spatial_flat(sidx), t_next)
    return R, SUCC


def value_iterate(grid: Grid, mocp: MocpSpec, epsilon: float = 1e-4,
                  max_sweeps: int = 100000):
    """Jacobi value iteration to sup-norm change <= epsilon.

    ``mocp`` must be time-augmented: its state vector ends with the
    wrapped time coordinate and its transition is the augmented one.
    Returns (ValueTable, PolicyTable).
    """
    if epsilon <= 0:
        raise SpecificationError("epsilon must be positive")
    R, SUCC = _precompute(grid, mocp)
    beta = mocp.discount
    V = np.zeros(grid.num_augmented)
    delta = np.inf
    policy = np.zeros(grid.num_augmented, dtype=np.int64)
    for sweep in range(1, max_sweeps + 1):
        Qv = R + beta * V[SUCC]
        policy = np.argmax(Qv, axis=1)
        V_next = Qv[np.arange(grid.num_augmented), policy]
        delta = float(np.max(np.abs(V_next - V)))
        V = V_next
        if delta <= epsilon:
            return (ValueTable(values=V, bellman_delta=delta,
                               sweeps=sweep, epsilon=epsilon),
                    PolicyTable(action_indices=policy))
    raise NonConvergenceError(
        f"value iteration did not reach {epsilon} in {max_sweeps} sweeps",
        residual=delta, iterations=max_sweeps)


@dataclass(frozen=True)
class GreedyRollout:
    """Continuous-dynamics rollout under a grid policy.

    States are the true continuous augmented states; grid snapping is
    used only to look actions up.  ``clamp_events`` lists the steps at
    which the continuous state left the grid box.
    """

    trajectory: Trajectory
    times: np.ndarray
    action_indices: np.ndarray
    snapped_indices: np.ndarray
    stage_values: np.ndarray
    clamp_events: tuple[int, ...]

    @property
    def discounted_return(self) -> float:
        return self.trajectory.potential_return


def greedy_policy_rollout(policy: PolicyTable, grid: Grid, mocp: MocpSpec,
                          x0_aug, horizon: int) -> GreedyRollout:
    """Roll the true dynamics forward, snapping only for policy lookups."""
    S = len(grid.axes)
    x = np.asarray(x0_aug, dtype=float).copy()
    if x.size != S + 1:
        raise SpecificationError("initial augmented state has wrong dimension")
    states = np.empty((horizon + 1, S))
    times = np.empty(horizon + 1)
    actions = np.empty((horizon, grid.action_table.shape[1]))
    a_idx = np.empty(horizon, dtype=np.int64)
    s_idx = np.empty(horizon, dtype=np.int64)
    stage = np.empty(horizon)
    clamps = []
    ret = 0.0
    for t in range(horizon):
        states[t] = x[:S]
        times[t] = x[S]
        sidx, clamped = grid.snap_spatial(x[:S][None, :])
        if clamped[0]:
            clamps.append(t)
        ti = int(np.clip(round(x[S]), 0, grid.time_period - 1))
        aug = int(grid.augmented_index(grid.spatial_flat(sidx)[0], ti))
        s_idx[t] = aug
        a = int(policy.action_indices[aug])
        a_idx[t] = a
        u = grid.action_table[a]
        actions[t] = u
        stage[t] = float(mocp.potential(x, u, ti))
        ret += mocp.discount ** t * stage[t]
        x = np.asarray(mocp.transition(x, u, ti), dtype=float)
    states[horizon] = x[:S]
    times[horizon] = x[S]
    traj = Trajectory(states=states, actions=actions, potential_return=ret)
    return GreedyRollout(trajectory=traj, times=times, action_indices=a_idx,
                         snapped_indices=s_idx, stage_values=stage,
                         clamp_events=tuple(clamps))
