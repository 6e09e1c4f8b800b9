import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matchkit.errors import ConfigurationError
from matchkit.geometry import DensityMeasure, Domain, Measure1D
from matchkit.oracle import (DiscreteProblem, check_s_monotonicity,
                             compare_to_continuum, purity_report, sample_atoms,
                             solve_exact)
from matchkit.surplus import parse_surplus_expression

SEG = DensityMeasure(Domain.box([0.0], [1.0]), resolution=256)
UNIT = Measure1D.uniform(0.0, 1.0)
BILINEAR = parse_surplus_expression("x1*y", 1)


def small_problem(mat: np.ndarray) -> DiscreteProblem:
    n = mat.shape[0]
    return DiscreteProblem(x_atoms=np.arange(n, dtype=float)[:, None],
                           y_atoms=np.arange(n, dtype=float),
                           surplus_matrix=np.asarray(mat, dtype=float))


class TestSampling:
    def test_quantile_atoms_two(self):
        prob = sample_atoms(SEG, UNIT, 2, seed=0)
        np.testing.assert_allclose(prob.y_atoms, [0.25, 0.75])

    def test_quantile_atoms_four(self):
        prob = sample_atoms(SEG, Measure1D.uniform(0.5, 1.0), 4, seed=0)
        np.testing.assert_allclose(prob.y_atoms, [0.5625, 0.6875, 0.8125, 0.9375])

    def test_seed_determinism(self):
        a = sample_atoms(SEG, UNIT, 64, seed=9, s=BILINEAR)
        b = sample_atoms(SEG, UNIT, 64, seed=9, s=BILINEAR)
        np.testing.assert_array_equal(a.x_atoms, b.x_atoms)
        np.testing.assert_array_equal(a.surplus_matrix, b.surplus_matrix)

    def test_unbalanced_rejected(self):
        with pytest.raises(ConfigurationError):
            DiscreteProblem(x_atoms=np.zeros((3, 1)), y_atoms=np.zeros(2),
                            surplus_matrix=np.zeros((3, 2)))


class TestSolveExact:
    def test_single_atom(self):
        prob = sample_atoms(SEG, UNIT, 1, seed=0, s=BILINEAR)
        cup = solve_exact(prob)
        assert cup.assignment.tolist() == [0]
        assert cup.duality_gap == pytest.approx(0.0, abs=1e-15)

    def test_supermodular_sorts(self):
        prob = sample_atoms(SEG, UNIT, 50, seed=3, s=BILINEAR)
        cup = solve_exact(prob)
        order = np.argsort(prob.x_atoms[:, 0])
        partners = prob.y_atoms[cup.assignment[order]]
        assert np.all(np.diff(partners) >= 0)

    def test_duals_feasible_and_tight(self):
        prob = sample_atoms(SEG, UNIT, 80, seed=1, s=BILINEAR)
        cup = solve_exact(prob)
        mat = prob.surplus_matrix
        slack = cup.dual_u[:, None] + cup.dual_v[None, :] - mat
        assert slack.min() >= -1e-9
        on_support = slack[np.arange(prob.n), cup.assignment]
        assert np.max(np.abs(on_support)) <= 1e-9
        assert abs(cup.duality_gap) <= 1e-9 * max(1.0, abs(cup.total_surplus))

    def test_additive_surplus_indifferent(self):
        # s = f(x) + g(y): every coupling achieves the same total
        rng = np.random.default_rng(0)
        f = rng.random(30)
        g = rng.random(30)
        prob = small_problem(f[:, None] + g[None, :])
        cup = solve_exact(prob)
        assert cup.total_surplus == pytest.approx(f.mean() + g.mean(), abs=1e-12)
        assert cup.duality_gap <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_weak_duality_random_matrices(self, n, seed):
        rng = np.random.default_rng(seed)
        prob = small_problem(rng.normal(size=(n, n)))
        cup = solve_exact(prob)
        # feasible duals dominate every coupling, equality at the optimum
        assert cup.feasibility_violation <= 1e-9
        assert (cup.dual_u.mean() + cup.dual_v.mean()
                >= cup.total_surplus - 1e-9)
        assert cup.duality_gap <= 1e-9 * max(1.0, abs(cup.total_surplus))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        mat = rng.normal(size=(25, 25))
        cup = solve_exact(small_problem(mat))
        perm = rng.permutation(25)
        cup2 = solve_exact(small_problem(mat[perm][:, perm]))
        assert cup2.total_surplus == pytest.approx(cup.total_surplus, abs=1e-12)

    def test_additive_shift_preserves_optimizers(self):
        rng = np.random.default_rng(3)
        mat = rng.normal(size=(12, 12))
        cup = solve_exact(small_problem(mat))
        f = rng.normal(size=12)
        g = rng.normal(size=12)
        cup2 = solve_exact(small_problem(mat + f[:, None] + g[None, :]))
        assert np.array_equal(cup.assignment, cup2.assignment)
        assert cup2.total_surplus == pytest.approx(
            cup.total_surplus + f.mean() + g.mean(), abs=1e-12)


class TestCertificates:
    def test_optimal_coupling_s_monotone(self):
        prob = sample_atoms(SEG, UNIT, 100, seed=4, s=BILINEAR)
        cup = solve_exact(prob)
        assert check_s_monotonicity(cup)["min_delta"] >= -1e-9

    def test_swapped_pair_violates(self):
        # hand-built 2-atom supermodular problem with the pairing crossed
        mat = np.array([[0.0, 0.0], [0.0, 1.0]])   # s = x*y on {0,1}^2
        prob = small_problem(mat)
        cup = solve_exact(prob)
        swapped = DiscreteCoupling = type(cup)(
            problem=cup.problem, assignment=np.array([1, 0]),
            total_surplus=0.0, dual_u=cup.dual_u, dual_v=cup.dual_v,
            duality_gap=0.0, feasibility_violation=0.0)
        assert check_s_monotonicity(swapped)["min_delta"] == pytest.approx(-1.0)

    def test_purity_generic(self):
        prob = sample_atoms(SEG, UNIT, 40, seed=5, s=BILINEAR)
        rep = purity_report(solve_exact(prob))
        assert rep["max_partners_per_x"] == 1
        assert rep["split_x_atoms"] == []
        assert rep["distinct_partner_values"] == 40

    def test_concentrated_nu_shares_value(self):
        x = np.linspace(0, 1, 16)[:, None]
        y = np.full(16, 0.7)
        mat = x * y[None, :]
        prob = DiscreteProblem(x_atoms=x, y_atoms=y, surplus_matrix=mat)
        rep = purity_report(solve_exact(prob))
        assert rep["max_partners_per_x"] == 1
        assert rep["distinct_partner_values"] == 1


class TestContinuumComparison:
    def test_single_atom_ratio_one(self):
        from matchkit.levelset import SolverConfig, build_matching
        mu = DensityMeasure(Domain.box([0.0, 0.5], [1.0, 1.0]), resolution=96)
        nu = Measure1D.uniform(0.5, 1.0)
        from matchkit.surplus import income_fertility_surplus
        s = income_fertility_surplus()
        sol = build_matching(s, mu, nu, SolverConfig(y_grid=33))
        prob = sample_atoms(mu, nu, 1, seed=0, s=s)
        prob = DiscreteProblem(x_atoms=prob.x_atoms,
                               y_atoms=np.array([float(sol.F(prob.x_atoms)[0])]),
                               surplus_matrix=np.asarray(
                                   s.value(prob.x_atoms[:, None, :],
                                           np.array([float(sol.F(prob.x_atoms)[0])])[None, :])))
        cup = solve_exact(prob)
        comp = compare_to_continuum(cup, sol)
        assert comp["surplus_ratio"] == pytest.approx(1.0, abs=1e-12)
        assert comp["matched_y_rmse"] == pytest.approx(0.0, abs=1e-12)
