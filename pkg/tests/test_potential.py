"""Conservativity checks and line-integral potential construction."""

import numpy as np
import pytest

import dpgsolve as d


def counterexample_game(swap=False):
    """pi_1 = u1*u2, pi_2 = 0: asymmetric action cross-derivatives."""
    cross = lambda xs, u, t: u[..., 0] * u[..., 1]
    zero = lambda xs, u, t: 0.0 * u[..., 0]
    utils = (zero, cross) if swap else (cross, zero)
    return d.DynamicGameSpec(
        num_players=2, state_dim=1, action_dims=(1, 1),
        player_state_indices=((0,), (0,)),
        utilities=utils, transition=lambda x, u, t: x,
        inequality_constraints=None,
        action_bounds=np.tile([-2.0, 2.0], (2, 1)),
        discount=0.9, initial_state=np.zeros(1))


def small_plan(game, lo, hi, n=20, seed=11):
    return d.SamplePlan(
        num_samples=n,
        state_box=np.tile([lo, hi], (game.state_dim, 1)),
        action_box=np.tile([lo, hi], (game.total_action_dim, 1)),
        rng_seed=seed)


class TestCheckConditions:
    def test_mac_passes_and_matches_closed_form(self):
        b = d.build_mac()
        rep = d.check_potential_conditions(b.game, b.sample_plan)
        assert rep.passed
        # the action-action cross derivative has the closed form
        # -g_i g_j / (1 + sum g_p u_p)^2; at u = 0 for players (1, 2)
        # both sides are -(2.019^2)(1.002^2)
        g = b.extras["channel_gains_sq"]
        expected = -g[0] * g[1]
        assert expected == pytest.approx(-4.0927, abs=5e-4)
        h = 1e-4
        x = np.full(4, 10.0)
        u = np.zeros(4)

        def fd_cross(i, j):
            vals = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                up = u.copy()
                up[i] += si * h
                up[j] += sj * h
                vals.append(float(b.game.utility(i, x, up, 0)))
            return (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h * h)

        assert fd_cross(0, 1) == pytest.approx(expected, abs=1e-5)
        assert fd_cross(1, 0) == pytest.approx(expected, abs=1e-5)

    def test_counterexample_fails(self):
        game = counterexample_game()
        rep = d.check_potential_conditions(game, small_plan(game, -1.0, 1.0))
        assert not rep.passed
        assert rep.max_residual >= 0.99
        assert rep.worst_case.condition == "action-action"

    def test_counterexample_symmetric_in_players(self):
        r1 = d.check_potential_conditions(
            counterexample_game(), small_plan(counterexample_game(), -1, 1))
        r2 = d.check_potential_conditions(
            counterexample_game(swap=True),
            small_plan(counterexample_game(), -1, 1))
        assert r1.max_residual == pytest.approx(r2.max_residual, rel=1e-12)

    def test_lq_quadratic_passes(self):
        b = d.build_smart_grid()
        rep = d.check_potential_conditions(b.game, b.sample_plan)
        assert rep.passed

    def test_fd_step_convergence(self):
        # on a smooth game with nonzero truncation error, halving the
        # step shrinks the truncation component about fourfold
        b = d.build_mac()
        plan = d.SamplePlan(num_samples=5,
                            state_box=np.tile([0.0, 33.0], (4, 1)),
                            action_box=np.tile([0.0, 5.0], (4, 1)),
                            rng_seed=2)
        r_coarse = d.check_potential_conditions(b.game, plan, fd_step=4e-3)
        r_fine = d.check_potential_conditions(b.game, plan, fd_step=2e-3)
        ratio = r_coarse.max_residual / r_fine.max_residual
        assert 2.5 <= ratio <= 6.0


class TestLineIntegral:
    def test_mac_log3(self):
        b = d.build_mac({"num_players": 2, "gains": (1.0, 1.0), "alpha": 0.0})
        pot = d.build_potential_line_integral(
            b.game, (np.zeros(2), np.zeros(2)), conditions_checked=True)
        assert pot(np.zeros(2), np.ones(2), 0) == pytest.approx(
            np.log(3.0), abs=1e-6)

    def test_anchor_is_zero(self):
        b = d.build_mac()
        anchor = (np.full(4, 3.0), np.full(4, 1.0))
        pot = d.build_potential_line_integral(b.game, anchor,
                                              conditions_checked=True)
        assert pot(*anchor, 0) == 0.0

    def test_equal_rate_field_value(self):
        b = d.build_equal_rate()
        pot = d.build_potential_line_integral(
            b.game, (np.zeros(2), np.zeros(2)), conditions_checked=True)
        assert pot(np.array([1.0, 0.0]), np.zeros(2), 0) == pytest.approx(
            -0.9, abs=1e-8)

    def test_path_independence(self):
        b = d.build_mac()
        anchor = (np.zeros(4), np.zeros(4))
        straight = d.build_potential_line_integral(
            b.game, anchor, conditions_checked=True)
        axis = d.build_potential_line_integral(
            b.game, anchor, path="axis", conditions_checked=True)
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = rng.uniform(0, 33, 4)
            u = rng.uniform(0, 5, 4)
            assert straight(x, u, 0) == pytest.approx(axis(x, u, 0), abs=1e-8)

    def test_anchor_shift_is_constant(self):
        b = d.build_mac()
        p_a = d.build_potential_line_integral(
            b.game, (np.zeros(4), np.zeros(4)), conditions_checked=True)
        p_b = d.build_potential_line_integral(
            b.game, (np.full(4, 5.0), np.full(4, 1.0)),
            conditions_checked=True)
        rng = np.random.default_rng(4)
        pts = [(rng.uniform(0, 33, 4), rng.uniform(0, 5, 4)) for _ in range(8)]
        diffs = [p_a(x, u, 0) - p_b(x, u, 0) for x, u in pts]
        assert max(diffs) - min(diffs) < 1e-7

    def test_unchecked_game_warns(self):
        b = d.build_mac()
        with pytest.warns(UserWarning):
            d.build_potential_line_integral(b.game,
                                            (np.zeros(4), np.zeros(4)))


class TestVerifyGradients:
    def test_mac_constructed_potential(self):
        b = d.build_mac()
        pot = d.build_potential_line_integral(
            b.game, (np.zeros(4), np.zeros(4)), conditions_checked=True)
        plan = d.SamplePlan(num_samples=8,
                            state_box=np.tile([0.0, 33.0], (4, 1)),
                            action_box=np.tile([0.0, 5.0], (4, 1)),
                            rng_seed=6)
        rep = d.verify_potential_gradients(b.game, pot, plan,
                                           fd_step=1e-4, tol=1e-5)
        assert rep.passed

    def test_zero_potential_fails_with_expected_residual(self):
        b = d.build_mac()
        g = b.extras["channel_gains_sq"]
        plan = d.SamplePlan(num_samples=8,
                            state_box=np.tile([0.0, 33.0], (4, 1)),
                            action_box=np.tile([0.0, 5.0], (4, 1)),
                            rng_seed=6)
        rep = d.verify_potential_gradients(b.game, lambda x, u, t: 0.0,
                                           plan, fd_step=1e-4, tol=1e-5)
        assert not rep.passed
        expected = max(max(g / (1.0 + g @ u))
                       for _, u, _ in plan.draw(1e-4))
        assert rep.max_residual == pytest.approx(expected, rel=1e-4)

    def test_zero_game_zero_potential(self):
        zero = lambda xs, u, t: 0.0 * u[..., 0]
        game = d.DynamicGameSpec(
            num_players=2, state_dim=1, action_dims=(1, 1),
            player_state_indices=((0,), (0,)),
            utilities=(zero, zero), transition=lambda x, u, t: x,
            inequality_constraints=None,
            action_bounds=np.tile([-1.0, 1.0], (2, 1)),
            discount=0.9, initial_state=np.zeros(1))
        plan = small_plan(game, -0.5, 0.5, n=5)
        rep = d.verify_potential_gradients(game, lambda x, u, t: 0.0, plan,
                                           fd_step=1e-4, tol=1e-5)
        assert rep.passed
        assert rep.max_residual == 0.0
