"""Core game representation: rollout, returns, feasibility."""

import numpy as np
import pytest

import dpgsolve as d
from dpgsolve.errors import (FeasibilityError, NumericalDomainError,
                             SpecificationError)


def make_game(utilities, num_players=2, state_dim=1, action_dims=(1, 1),
              indices=None, transition=None, bounds=None, discount=0.9,
              x0=None):
    if indices is None:
        indices = tuple(tuple(range(state_dim)) for _ in range(num_players))
    if transition is None:
        transition = lambda x, u, t: x
    total = sum(action_dims)
    if bounds is None:
        bounds = np.tile([-10.0, 10.0], (total, 1))
    if x0 is None:
        x0 = np.zeros(state_dim)
    return d.DynamicGameSpec(
        num_players=num_players, state_dim=state_dim, action_dims=action_dims,
        player_state_indices=indices, utilities=utilities,
        transition=transition, inequality_constraints=None,
        action_bounds=bounds, discount=discount, initial_state=x0)


class TestEvaluateReturns:
    def test_zero_utilities(self):
        game = make_game((lambda xs, u, t: 0.0 * u[..., 0],) * 2)
        traj = d.rollout(game, np.zeros((4, 2)))
        assert np.array_equal(traj.per_player_returns, np.zeros(2))

    def test_geometric_sum(self):
        game = make_game((lambda xs, u, t: 1.0 + 0.0 * u[..., 0],),
                         num_players=1, action_dims=(1,), discount=0.95)
        traj = d.rollout(game, np.zeros((3, 1)))
        assert traj.per_player_returns[0] == pytest.approx(2.8525, abs=1e-12)

    def test_mac_idle_battery(self):
        # all powers zero: each return is alpha * B_max * sum_t beta^t
        b = d.build_mac()
        T = 12
        traj = d.rollout(b.game, np.zeros((T, 4)))
        expected = 0.001 * 33.0 * sum(0.95 ** t for t in range(T))
        assert np.allclose(traj.per_player_returns, expected, rtol=1e-12)

    def test_nonfinite_utility_identifies_player_and_time(self):
        def bad(xs, u, t):
            return np.where(np.asarray(t) >= 2, np.inf, 1.0) + 0.0 * u[..., 0]
        game = make_game((lambda xs, u, t: 0.0 * u[..., 0], bad))
        traj = d.Trajectory(states=np.zeros((5, 1)), actions=np.zeros((4, 2)))
        with pytest.raises(NumericalDomainError) as exc:
            d.evaluate_returns(game, traj)
        assert exc.value.player == 1
        assert exc.value.time == 2


class TestRollout:
    def test_network_flow_idle(self):
        b = d.build_network_flow()
        traj = d.rollout(b.game, np.zeros((10, 8)))
        assert np.array_equal(traj.states, np.ones((11, 4)))

    def test_empty_horizon(self):
        b = d.build_mac()
        traj = d.rollout(b.game, np.zeros((0, 4)))
        assert traj.horizon == 0
        assert np.array_equal(traj.states, [b.game.initial_state])

    def test_mac_linear_recurrence(self):
        b = d.build_mac()
        traj = d.rollout(b.game, np.full((6, 4), 5.0))
        for t in range(7):
            assert np.allclose(traj.states[t], 33.0 - 5.0 * t)

    def test_out_of_bounds_action(self):
        b = d.build_mac()
        acts = np.zeros((3, 4))
        acts[1, 2] = 7.0
        with pytest.raises(FeasibilityError) as exc:
            d.rollout(b.game, acts)
        assert exc.value.time == 1
        assert exc.value.player == 2

    def test_nonfinite_transition(self):
        game = make_game((lambda xs, u, t: 0.0 * u[..., 0],) * 2,
                         transition=lambda x, u, t: x / 0.0)
        with pytest.raises(NumericalDomainError):
            d.rollout(game, np.zeros((2, 2)))

    def test_dimension_mismatch(self):
        b = d.build_mac()
        with pytest.raises(SpecificationError):
            d.rollout(b.game, np.zeros((3, 5)))


class TestCheckFeasibility:
    def test_capacity_violation_reported(self):
        b = d.build_network_flow()
        acts = np.zeros((3, 8))
        acts[1] = 0.4  # L5 row sums player-1 paths: 1.6 > 0.4
        traj = d.rollout(b.game, acts)
        rep = d.check_feasibility(b.game, traj, tol=1e-9)
        assert not rep.feasible
        assert any(t == 1 for t, _ in rep.violating_indices)

    def test_rollout_dynamics_residual(self):
        b = d.build_mac()
        rng = np.random.default_rng(0)
        traj = d.rollout(b.game, rng.uniform(0, 1, (8, 4)))
        rep = d.check_feasibility(b.game, traj, tol=1e-9)
        assert rep.dynamics_residual <= 1e-12

    def test_mac_battery_floor(self):
        # 7 steps at full power drain 35 > 33: the step at t=6 overdraws
        b = d.build_mac()
        acts6 = np.full((6, 4), 5.0)
        rep6 = d.check_feasibility(b.game, d.rollout(b.game, acts6), tol=1e-9)
        assert rep6.feasible
        acts7 = np.full((7, 4), 5.0)
        rep7 = d.check_feasibility(b.game, d.rollout(b.game, acts7), tol=1e-9)
        assert not rep7.feasible
        assert rep7.worst_violation == pytest.approx(2.0)
        assert all(t == 6 for t, _ in rep7.violating_indices)


class TestInvariants:
    def test_rollout_then_check(self):
        rng = np.random.default_rng(3)
        for b in (d.build_mac(), d.build_network_flow()):
            lo = b.game.action_bounds[:, 0]
            hi = np.minimum(b.game.action_bounds[:, 1], 1.0)
            acts = rng.uniform(lo, hi, (15, b.game.total_action_dim))
            traj = d.rollout(b.game, acts)
            rep = d.check_feasibility(b.game, traj, tol=1e-9)
            assert rep.dynamics_residual <= 1e-12

    def test_return_linearity(self):
        base = lambda xs, u, t: u[..., 0] * u[..., 1] + xs[..., 0]
        scaled = lambda xs, u, t: 3.5 * (u[..., 0] * u[..., 1] + xs[..., 0])
        g1 = make_game((base, base), x0=np.array([1.0]))
        g2 = make_game((scaled, scaled), x0=np.array([1.0]))
        rng = np.random.default_rng(1)
        acts = rng.uniform(-1, 1, (6, 2))
        r1 = d.rollout(g1, acts).per_player_returns
        r2 = d.rollout(g2, acts).per_player_returns
        assert np.allclose(r2, 3.5 * r1, rtol=0, atol=0)

    def test_state_slice_locality(self):
        # perturbing a coordinate outside X(i) changes pi_i by exactly 0
        b = d.build_mac()
        x = np.array([10.0, 20.0, 30.0, 5.0])
        u = np.array([1.0, 2.0, 3.0, 4.0])
        for i in range(4):
            v0 = float(b.game.utility(i, x, u, 0))
            for m in range(4):
                if m == i:
                    continue
                xp = x.copy()
                xp[m] += 17.3
                assert float(b.game.utility(i, xp, u, 0)) == v0

    def test_discount_monotonicity(self):
        b = d.build_mac()
        acts = np.full((12, 4), 1.0)
        prev = np.zeros(4)
        for T in range(1, 13):
            r = d.rollout(b.game, acts[:T]).per_player_returns
            assert np.all(r >= prev - 1e-15)
            prev = r

    def test_returns_recompute(self):
        b = d.build_mac()
        rng = np.random.default_rng(5)
        traj = d.rollout(b.game, rng.uniform(0, 2, (10, 4)))
        again = d.evaluate_returns(b.game, traj)
        assert np.allclose(again, traj.per_player_returns, rtol=1e-10)


class TestValidation:
    def test_discount_bounds(self):
        with pytest.raises(SpecificationError):
            make_game((lambda xs, u, t: 0.0,) * 2, discount=1.0)

    def test_state_indices_range(self):
        with pytest.raises(SpecificationError):
            make_game((lambda xs, u, t: 0.0,) * 2,
                      indices=((0,), (5,)))

    def test_empty_slice(self):
        with pytest.raises(SpecificationError):
            make_game((lambda xs, u, t: 0.0,) * 2, indices=((0,), ()))
