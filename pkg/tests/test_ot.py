import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mproto.ot import ContractError, hard_assign, sinkhorn, transport_cost

from oracles import integral_assignments, lp_transport


def random_instance(rng, n, m):
    cost = rng.uniform(0, 2, (n, m))
    a = rng.uniform(0.5, 2, n)
    b = rng.uniform(0.5, 2, m)
    b *= a.sum() / b.sum()
    return cost, a, b


class TestSinkhornExamples:
    def test_zero_cost_gives_uniform_plan(self):
        plan = sinkhorn(np.zeros((2, 2)), [1, 1], [1, 1], 0.001)
        np.testing.assert_allclose(plan.gamma, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)
        assert plan.converged

    def test_diagonal_cost_picks_identity(self):
        # feasible plans are [[t, 1-t], [1-t, t]] with cost 2(1-t): minimized at t=1
        ts = np.linspace(0, 1, 1001)
        assert ts[np.argmin(2 * (1 - ts))] == 1.0
        plan = sinkhorn([[0, 1], [1, 0]], [1, 1], [1, 1], 0.001)
        np.testing.assert_allclose(plan.gamma, np.eye(2), atol=1e-6)

    def test_three_by_two_matches_lp(self):
        rng = np.random.default_rng(3)
        cost = rng.uniform(0, 2, (3, 2))
        a, b = np.ones(3), np.array([1.5, 1.5])
        exact, _ = lp_transport(cost, a, b)
        plan = sinkhorn(cost, a, b, 1e-4, max_iters=10000, reg_schedule="auto")
        assert plan.converged
        assert abs(transport_cost(plan, cost) - exact) <= 0.01 * exact

    def test_log_domain_survives_paper_regularization(self):
        # exp(-2 / 1e-3) underflows to zero in the plain kernel
        assert np.exp(-2 / 1e-3) == 0.0
        cost = np.full((3, 3), 2.0)
        cost[0, 0] = 1.9
        plan = sinkhorn(cost, np.ones(3), np.ones(3), 1e-3)
        assert np.all(np.isfinite(plan.gamma))
        np.testing.assert_allclose(plan.gamma.sum(axis=1), 1.0, atol=1e-6)


class TestSinkhornContract:
    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            sinkhorn(np.zeros((2, 3)), [1, 1], [1, 1], 0.1)

    def test_non_finite_cost(self):
        with pytest.raises(ValueError, match="not finite"):
            sinkhorn([[0, np.nan], [1, 0]], [1, 1], [1, 1], 0.1)

    def test_nonpositive_reg(self):
        with pytest.raises(ContractError):
            sinkhorn(np.zeros((2, 2)), [1, 1], [1, 1], 0.0)

    def test_unbalanced_mass_rejected(self):
        with pytest.raises(ValueError, match="different mass"):
            sinkhorn(np.zeros((2, 2)), [1, 1], [1, 2], 0.1)

    def test_nonconvergence_is_reported_not_raised(self):
        rng = np.random.default_rng(0)
        cost, a, b = random_instance(rng, 4, 4)
        plan = sinkhorn(cost, a, b, 1e-4, max_iters=1)
        assert not plan.converged
        assert plan.n_iterations_run == 1

    def test_zero_weight_rows_and_columns(self):
        cost = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.5], [0.3, 0.3, 0.3]])
        plan = sinkhorn(cost, [1, 1, 0], [1, 0, 1], 0.01, max_iters=2000)
        assert np.all(plan.gamma[2] == 0) and np.all(plan.gamma[:, 1] == 0)
        np.testing.assert_allclose(plan.gamma.sum(axis=1), [1, 1, 0], atol=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        cost, a, b = random_instance(rng, 3, 4)
        p1 = sinkhorn(cost, a, b, 0.01, 500)
        p2 = sinkhorn(cost, a, b, 0.01, 500)
        assert np.array_equal(p1.gamma, p2.gamma)


class TestSinkhornProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
    def test_feasible_and_nonnegative(self, n, m, seed):
        rng = np.random.default_rng(seed)
        cost, a, b = random_instance(rng, n, m)
        plan = sinkhorn(cost, a, b, 0.05, max_iters=5000)
        assert np.all(plan.gamma >= 0)
        assert plan.converged
        assert np.abs(plan.gamma.sum(axis=1) - a).max() < 1e-6
        assert np.abs(plan.gamma.sum(axis=0) - b).max() < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_oracle_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(2, 5, size=2)
        cost, a, b = random_instance(rng, n, m)
        exact, _ = lp_transport(cost, a, b)
        plan = sinkhorn(cost, a, b, 1e-4, max_iters=10000, reg_schedule="auto")
        assert abs(transport_cost(plan, cost) - exact) <= 0.01 * exact

    @pytest.mark.parametrize("seed", range(5))
    def test_cost_monotone_in_regularization(self, seed):
        rng = np.random.default_rng(100 + seed)
        cost, a, b = random_instance(rng, 4, 3)
        costs = [
            transport_cost(sinkhorn(cost, a, b, reg, max_iters=10000, reg_schedule="auto"), cost)
            for reg in (1.0, 0.3, 0.1, 0.03, 0.01, 0.001)
        ]
        assert all(lo <= hi + 1e-9 for hi, lo in zip(costs, costs[1:]))

    @pytest.mark.parametrize("seed", range(5))
    def test_row_permutation_equivariance(self, seed):
        rng = np.random.default_rng(200 + seed)
        cost, a, b = random_instance(rng, 4, 3)
        perm = rng.permutation(4)
        plan = sinkhorn(cost, a, b, 0.05, 2000)
        permuted = sinkhorn(cost[perm], a[perm], b, 0.05, 2000)
        np.testing.assert_allclose(permuted.gamma, plan.gamma[perm], atol=1e-9)

    def test_integral_optimum_recovered(self):
        # four tokens in two tight pairs, two prototypes of capacity 2
        cost = np.array([[0.0, 1.0], [0.1, 0.9], [1.0, 0.0], [0.8, 0.05]])
        choice, _ = integral_assignments(cost, np.array([2, 2]))
        plan = sinkhorn(cost, np.ones(4), np.full(2, 2.0), 1e-3)
        assert np.array_equal(hard_assign(plan), choice)


class TestHardAssign:
    def test_row_argmax(self):
        assert hard_assign(np.array([[0.9, 0.1], [0.2, 0.8]])).tolist() == [0, 1]

    def test_tie_lowest_index(self):
        assert hard_assign(np.array([[0.5, 0.5]])).tolist() == [0]

    def test_identity(self):
        assert hard_assign(np.eye(3)).tolist() == [0, 1, 2]

    def test_empty(self):
        with pytest.raises(ContractError):
            hard_assign(np.zeros((2, 0)))


class TestLpOracle:
    def test_hand_solved_two_by_two(self):
        # x11 = t leaves cost 7 - 3t on t in [0, 1]
        value, plan = lp_transport(np.array([[1.0, 2.0], [3.0, 1.0]]), np.array([2.0, 1.0]), np.array([1.0, 2.0]))
        assert value == pytest.approx(4.0)
        np.testing.assert_allclose(plan, [[1.0, 1.0], [0.0, 1.0]], atol=1e-12)

    def test_single_row(self):
        value, plan = lp_transport(np.array([[2.0, 5.0]]), np.array([3.0]), np.array([1.0, 2.0]))
        assert value == pytest.approx(12.0)
        np.testing.assert_allclose(plan, [[1.0, 2.0]])
