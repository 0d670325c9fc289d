"""Numerical detection and construction of potential functions.

``check_potential_conditions`` samples the cross-derivative symmetry
conditions that certify a dynamic game admits a potential; it is a
sampled falsification/corroboration, not a proof.  The three condition
families compare, for every player pair (i, j), every m in X(i) and
n in X(j):

  state-action   d2 pi_i / dx_m du_j   vs  d2 pi_j / dx_n du_i
  state-state    d2 pi_i / dx_m dx_n   vs  d2 pi_j / dx_n dx_m
  action-action  d2 pi_i / du_i du_j   vs  d2 pi_j / du_j du_i

``build_potential_line_integral`` constructs the potential by
integrating the utility-gradient field from an anchor point to the
query point with Gauss-Legendre quadrature.  The state-gradient terms
are integrated along the state path with the action held at the query
profile, and the action-gradient terms along the action path with the
state held at the query state; each state coordinate contributes once,
through its lowest-index observing player (all observers' gradients
coincide on a potential game).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import NumericalDomainError, SpecificationError
from .game import DynamicGameSpec

CONDITION_IDS = ("state-action", "state-state", "action-action")


@dataclass(frozen=True)
class SamplePlan:
    """Seeded sampling plan over a state/action box at given times."""

    num_samples: int
    state_box: np.ndarray
    action_box: np.ndarray
    time_points: tuple[int, ...] = (0,)
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise SpecificationError("num_samples must be >= 1")
        sb = np.atleast_2d(np.asarray(self.state_box, dtype=float))
        ab = np.atleast_2d(np.asarray(self.action_box, dtype=float))
        for box, name in ((sb, "state_box"), (ab, "action_box")):
            if box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
                raise SpecificationError(f"{name} intervals must be nondegenerate")
        if len(self.time_points) == 0 or any(t < 0 for t in self.time_points):
            raise SpecificationError("time_points must be nonnegative and nonempty")
        object.__setattr__(self, "state_box", sb)
        object.__setattr__(self, "action_box", ab)

    def draw(self, fd_step: float = 0.0):
        """Yield (state, actions, t) samples strictly inside the box.

        Points are inset by fd_step so central-difference stencils stay
        in-domain.  Deterministic given rng_seed.
        """
        rng = np.random.default_rng(self.rng_seed)
        slo = self.state_box[:, 0] + fd_step
        shi = self.state_box[:, 1] - fd_step
        alo = self.action_box[:, 0] + fd_step
        ahi = self.action_box[:, 1] - fd_step
        if np.any(slo >= shi) or np.any(alo >= ahi):
            raise SpecificationError("fd_step too large for the sampling box")
        for k in range(self.num_samples):
            x = rng.uniform(slo, shi)
            u = rng.uniform(alo, ahi)
            t = self.time_points[k % len(self.time_points)]
            yield x, u, int(t)


@dataclass(frozen=True)
class WorstCase:
    state: np.ndarray
    actions: np.ndarray
    time: int
    pair: tuple[int, int]
    condition: str
    residual: float


@dataclass(frozen=True)
class ConservativityReport:
    """Result of a sampled cross-derivative or gradient comparison."""

    passed: bool
    max_residual: float
    worst_case: Optional[WorstCase]
    per_condition_max: dict
    tolerance: float
    num_samples: int


def _eval_player_batch(game: DynamicGameSpec, i: int, X, U, t: int) -> np.ndarray:
    """Evaluate player i's utility on a batch, slicing the state.

    Tries one vectorized call first; falls back to a plain loop for
    callables that do not broadcast.
    """
    idx = list(game.player_state_indices[i])
    Xs = np.asarray(X, dtype=float)[:, idx]
    U = np.asarray(U, dtype=float)
    fn = game.utilities[i]
    out = None
    try:
        cand = np.asarray(fn(Xs, U, t), dtype=float)
        if cand.shape == (Xs.shape[0],):
            out = cand
    except Exception:
        out = None
    if out is None:
        out = np.array([float(fn(Xs[k], U[k], t)) for k in range(Xs.shape[0])])
    if not np.all(np.isfinite(out)):
        k = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NumericalDomainError(
            f"utility of player {i} non-finite at stencil point "
            f"x={np.asarray(X)[k]}, u={U[k]}, t={t}",
            player=i, time=t, point=(np.asarray(X)[k].copy(), U[k].copy()))
    return out


def _mixed_block(game, i, x, u, t, rows, row_in_state, cols, col_in_state, h):
    """Central-difference block of second derivatives for player i.

    rows/cols are coordinate indices; the *_in_state flags say whether
    they index the state or the action vector.  The four-point stencil
    handles repeated coordinates (diagonal second derivatives) exactly.
    """
    nr, nc = len(rows), len(cols)
    S, A = x.size, u.size
    X = np.broadcast_to(x, (nr, nc, 4, S)).copy()
    U = np.broadcast_to(u, (nr, nc, 4, A)).copy()
    row_sign = np.array([+1.0, +1.0, -1.0, -1.0]) * h
    col_sign = np.array([+1.0, -1.0, +1.0, -1.0]) * h
    for a, m in enumerate(rows):
        tgt = X if row_in_state else U
        tgt[a, :, :, m] += row_sign
    for b, n in enumerate(cols):
        tgt = X if col_in_state else U
        tgt[:, b, :, n] += col_sign
    vals = _eval_player_batch(game, i, X.reshape(-1, S), U.reshape(-1, A), t)
    vals = vals.reshape(nr, nc, 4)
    return (vals[:, :, 0] - vals[:, :, 1] - vals[:, :, 2] + vals[:, :, 3]) / (4.0 * h * h)


def check_potential_conditions(game: DynamicGameSpec, plan: SamplePlan,
                               fd_step: float = 1e-4,
                               tol: float = 1e-5) -> ConservativityReport:
    """Sampled test of the potential-game cross-derivative conditions."""
    if fd_step <= 0 or tol <= 0:
        raise SpecificationError("fd_step and tol must be positive")
    Q, S = game.num_players, game.state_dim
    A = game.total_action_dim
    blocks = [game.action_block(i) for i in range(Q)]
    slices = [list(game.player_state_indices[i]) for i in range(Q)]

    per_cond = {c: 0.0 for c in CONDITION_IDS}
    worst = None
    max_res = 0.0

    for x, u, t in plan.draw(fd_step):
        d_xu, d_xx, d_uu = [], [], []
        for i in range(Q):
            mi = slices[i]
            d_xu.append(_mixed_block(game, i, x, u, t,
                                     mi, True, list(range(A)), False, fd_step))
            # pi_i cannot depend on coordinates outside X(i): those
            # columns are exactly zero without evaluation.
            blk = np.zeros((len(mi), S))
            blk[:, mi] = _mixed_block(game, i, x, u, t, mi, True, mi, True, fd_step)
            d_xx.append(blk)
            own = list(range(blocks[i].start, blocks[i].stop))
            d_uu.append(_mixed_block(game, i, x, u, t,
                                     own, False, list(range(A)), False, fd_step))

        for i in range(Q):
            for j in range(i, Q):
                # state-action: both sides quantified independently over
                # m in X(i), n in X(j); worst pairwise mismatch recorded.
                lhs = d_xu[i][:, blocks[j]]
                rhs = d_xu[j][:, blocks[i]]
                r1 = max(abs(lhs.max() - rhs.min()), abs(rhs.max() - lhs.min()))
                # state-state: same (m, n) variables on both sides.
                lhs = d_xx[i][:, slices[j]]
                rhs = d_xx[j][:, slices[i]]
                r2 = float(np.max(np.abs(lhs - rhs.T))) if lhs.size else 0.0
                # action-action: own-block rows against the transpose.
                lhs = d_uu[i][:, blocks[j]]
                rhs = d_uu[j][:, blocks[i]]
                r3 = float(np.max(np.abs(lhs - rhs.T)))
                for cond, r in zip(CONDITION_IDS, (float(r1), r2, r3)):
                    per_cond[cond] = max(per_cond[cond], r)
                    if r > max_res:
                        max_res = r
                        worst = WorstCase(state=x.copy(), actions=u.copy(),
                                          time=t, pair=(i, j),
                                          condition=cond, residual=r)

    return ConservativityReport(
        passed=max_res <= tol,
        max_residual=max_res,
        worst_case=worst,
        per_condition_max=per_cond,
        tolerance=tol,
        num_samples=plan.num_samples,
    )


@lru_cache(maxsize=32)
def _gl_nodes(order: int):
    """Gauss-Legendre nodes/weights mapped to [0, 1]."""
    z, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (z + 1.0), 0.5 * w


def _state_owner_map(game: DynamicGameSpec):
    """Lowest-index observing player per state coordinate, -1 if none."""
    owner = np.full(game.state_dim, -1, dtype=int)
    for i in reversed(range(game.num_players)):
        for m in game.player_state_indices[i]:
            owner[m] = i
    return owner


@dataclass(frozen=True)
class PotentialFn:
    """Potential evaluator built from the line integral of the gradient field.

    Zero at the anchor by construction.  ``path`` selects the integration
    path shape for both the state and action legs: "straight" joins the
    anchor to the query directly, "axis" ramps one coordinate at a time.
    """

    game: DynamicGameSpec
    anchor_state: np.ndarray
    anchor_actions: np.ndarray
    quadrature_order: int = 32
    grad_step: float = 1e-5
    path: str = "straight"
    adapt_tol: float = 1e-9
    max_order: int = 512

    def __post_init__(self):
        if self.quadrature_order < 1:
            raise SpecificationError("quadrature_order must be positive")
        if self.path not in ("straight", "axis"):
            raise SpecificationError(f"unknown path shape {self.path!r}")
        object.__setattr__(self, "anchor_state",
                           np.asarray(self.anchor_state, dtype=float))
        object.__setattr__(self, "anchor_actions",
                           np.asarray(self.anchor_actions, dtype=float))

    # -- internals ---------------------------------------------------------

    def _grad_sum(self, coords, owners, points, fixed, t, wrt_state):
        """Sum over coords of owner-gradient components at path points.

        points: (K, dim_moving) path positions of the moving block;
        fixed: the frozen block value.  Returns (K, len(coords)).
        """
        game, h = self.game, self.grad_step
        K = points.shape[0]
        out = np.zeros((K, len(coords)))
        by_owner = {}
        for col, (m, o) in enumerate(zip(coords, owners)):
            by_owner.setdefault(o, []).append((col, m))
        for o, items in by_owner.items():
            cols = [c for c, _ in items]
            ms = [m for _, m in items]
            nm = len(ms)
            if wrt_state:
                X = np.broadcast_to(points[:, None, None, :], (K, nm, 2, points.shape[1])).copy()
                U = np.broadcast_to(fixed, (K, nm, 2, fixed.size)).copy()
                var = X
            else:
                U = np.broadcast_to(points[:, None, None, :], (K, nm, 2, points.shape[1])).copy()
                X = np.broadcast_to(fixed, (K, nm, 2, fixed.size)).copy()
                var = U
            for a, m in enumerate(ms):
                var[:, a, 0, m] += h
                var[:, a, 1, m] -= h
            vals = _eval_player_batch(
                game, o, X.reshape(-1, X.shape[-1]), U.reshape(-1, U.shape[-1]), t)
            vals = vals.reshape(K, nm, 2)
            grad = (vals[:, :, 0] - vals[:, :, 1]) / (2.0 * h)
            if not np.all(np.isfinite(grad)):
                raise NumericalDomainError(
                    "non-finite gradient along the integration path", time=t)
            out[:, cols] = grad
        return out

    def _leg(self, order, target, anchor, coords, owners, fixed, t, wrt_state):
        """One leg (state or action) of the integral at a fixed order."""
        delta = target - anchor
        if not np.any(delta) or len(coords) == 0:
            return 0.0
        lam, w = _gl_nodes(order)
        if self.path == "straight":
            pts = anchor + lam[:, None] * delta[None, :]
            grads = self._grad_sum(coords, owners, pts, fixed, t, wrt_state)
            return float(np.sum(w[:, None] * grads * delta[coords][None, :]))
        # axis-aligned: one coordinate ramps per segment, in coord order.
        total = 0.0
        base = anchor.copy()
        for m, o in zip(coords, owners):
            if delta[m] == 0.0:
                base[m] = target[m]
                continue
            pts = np.broadcast_to(base, (order, base.size)).copy()
            pts[:, m] = base[m] + lam * delta[m]
            grads = self._grad_sum([m], [o], pts, fixed, t, wrt_state)
            total += float(np.sum(w * grads[:, 0] * delta[m]))
            base[m] = target[m]
        return total

    def _evaluate(self, order, x, u, t):
        game = self.game
        owner = _state_owner_map(game)
        coords = [m for m in range(game.state_dim) if owner[m] >= 0]
        owners = [int(owner[m]) for m in coords]
        state_part = self._leg(order, x, self.anchor_state,
                               coords, owners, u, t, wrt_state=True)
        acts = list(range(game.total_action_dim))
        act_owner = [int(np.searchsorted(game.offsets, a, side="right") - 1)
                     for a in acts]
        action_part = self._leg(order, u, self.anchor_actions,
                                acts, act_owner, x, t, wrt_state=False)
        return state_part + action_part

    def __call__(self, x, u, t: int = 0) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        order = self.quadrature_order
        val = self._evaluate(order, x, u, t)
        while order < self.max_order:
            order *= 2
            nxt = self._evaluate(order, x, u, t)
            if abs(nxt - val) < self.adapt_tol:
                return nxt
            val = nxt
        return val


def build_potential_line_integral(game: DynamicGameSpec, anchor,
                                  quadrature_order: int = 32,
                                  grad_step: float = 1e-5,
                                  path: str = "straight",
                                  conditions_checked: bool = False) -> PotentialFn:
    """Construct the potential evaluator for a (presumed) potential game.

    ``anchor`` is a (state, actions) pair at which the potential is zero.
    The caller is responsible for having run check_potential_conditions;
    a warning is emitted otherwise.
    """
    if not conditions_checked:
        warnings.warn(
            "building a potential for a game whose conservativity conditions "
            "have not been checked", stacklevel=2)
    ax, au = anchor
    ax = np.asarray(ax, dtype=float)
    au = np.asarray(au, dtype=float)
    if ax.shape != (game.state_dim,) or au.shape != (game.total_action_dim,):
        raise SpecificationError("anchor dimensions do not match the game")
    return PotentialFn(game=game, anchor_state=ax, anchor_actions=au,
                       quadrature_order=quadrature_order,
                       grad_step=grad_step, path=path)


def verify_potential_gradients(game: DynamicGameSpec, pot: Callable,
                               plan: SamplePlan, fd_step: float = 1e-4,
                               tol: float = 1e-5) -> ConservativityReport:
    """Compare potential gradients against player utility gradients.

    At each sample, checks dPi/dx_m == dpi_i/dx_m for every m in X(i)
    and dPi/du_i == dpi_i/du_i, all by central differences.
    """
    if fd_step <= 0 or tol <= 0:
        raise SpecificationError("fd_step and tol must be positive")
    Q, S, A = game.num_players, game.state_dim, game.total_action_dim
    per_cond = {"state-gradient": 0.0, "action-gradient": 0.0}
    worst = None
    max_res = 0.0
    h = fd_step

    for x, u, t in plan.draw(fd_step):
        for i in range(Q):
            mi = list(game.player_state_indices[i])
            own = list(range(game.action_block(i).start, game.action_block(i).stop))
            # player-side gradients, batched central differences
            X = np.broadcast_to(x, (len(mi), 2, S)).copy()
            for a, m in enumerate(mi):
                X[a, 0, m] += h
                X[a, 1, m] -= h
            vals = _eval_player_batch(game, i, X.reshape(-1, S),
                                      np.broadcast_to(u, (2 * len(mi), A)), t)
            gpx = (vals[0::2] - vals[1::2]) / (2 * h)
            U = np.broadcast_to(u, (len(own), 2, A)).copy()
            for a, m in enumerate(own):
                U[a, 0, m] += h
                U[a, 1, m] -= h
            vals = _eval_player_batch(game, i, np.broadcast_to(x, (2 * len(own), S)),
                                      U.reshape(-1, A), t)
            gpu = (vals[0::2] - vals[1::2]) / (2 * h)

            for cond, coords, gref, in_state in (
                    ("state-gradient", mi, gpx, True),
                    ("action-gradient", own, gpu, False)):
                for a, m in enumerate(coords):
                    xp, xm = x.copy(), x.copy()
                    up, um = u.copy(), u.copy()
                    if in_state:
                        xp[m] += h
                        xm[m] -= h
                    else:
                        up[m] += h
                        um[m] -= h
                    gpi = (float(pot(xp, up, t)) - float(pot(xm, um, t))) / (2 * h)
                    r = abs(gpi - gref[a])
                    per_cond[cond] = max(per_cond[cond], r)
                    if r > max_res:
                        max_res = r
                        worst = WorstCase(state=x.copy(), actions=u.copy(),
                                          time=t, pair=(i, i),
                                          condition=cond, residual=r)

    return ConservativityReport(
        passed=max_res <= tol,
        max_residual=max_res,
        worst_case=worst,
        per_condition_max=per_cond,
        tolerance=tol,
        num_samples=plan.num_samples,
    )
