import numpy as np
import pytest

from matchkit.errors import ConfigurationError
from matchkit.geometry import DensityMeasure, Domain, Measure1D
from matchkit.hedonic import (HedonicProblem, equilibrium_goods, no_bunching_check,
                              price_schedule, quadratic_disks_problem, rc_problem,
                              reduce_to_matching, solve_quadratic_disks)
from matchkit.levelset import SolverConfig, build_matching
from matchkit.oracle import DiscreteProblem, sample_atoms, solve_exact
from matchkit.surplus import rc_index_surplus


@pytest.fixture(scope="module")
def rc_small():
    prob = rc_problem(n=2)
    mu = DensityMeasure(Domain.disk_sector([0.0, 0.0], 1.0, (1, 1)), resolution=192)
    nu = Measure1D.uniform(1.0, 2.0)
    s = reduce_to_matching(prob)
    sol = build_matching(s, mu, nu, SolverConfig(y_grid=129))
    return prob, mu, nu, sol


class TestReduction:
    def test_rc_closed_form(self):
        prob = rc_problem(n=2)
        s = reduce_to_matching(prob)
        x = np.array([[0.3, 0.4], [0.8, 0.1]])
        np.testing.assert_allclose(s.value(x, 1.5),
                                   0.75 * (x ** 2).sum(axis=1), atol=1e-14)
        np.testing.assert_allclose(prob.goods(x, 1.5), 1.5 * x)

    def test_numeric_ascent_agrees_with_closed_form(self):
        prob = rc_problem(n=2)
        from dataclasses import replace
        numeric = replace(prob, z_solver="numeric_ascent")
        s_num = reduce_to_matching(numeric)
        s_ref = reduce_to_matching(prob)
        x = np.array([[0.5, 0.25], [0.9, 0.6]])
        for y in (1.2, 1.9):
            np.testing.assert_allclose(s_num.value(x, y), s_ref.value(x, y),
                                       atol=1e-5)

    def test_zero_buyer_utility(self):
        # U = 0: the surplus is -min_z c, independent of x
        prob = HedonicProblem(
            buyer_utility=lambda x, z: np.zeros(np.broadcast(
                np.asarray(x)[..., 0], np.asarray(z)[..., 0]).shape),
            producer_cost=lambda y, z: np.einsum("...d,...d->...", z, z)
            / (2 * np.asarray(y)),
            product_dim=2, y_dim=1, z_solver="numeric_ascent",
            z_box=(np.zeros(2), np.ones(2)), name="flat")
        s = reduce_to_matching(prob)
        x = np.array([[0.2, 0.8], [0.7, 0.1]])
        vals = s.value(x, 1.3)
        np.testing.assert_allclose(vals, 0.0, atol=1e-9)     # min c = c(0) = 0
        assert np.ptp(vals) < 1e-9

    def test_vector_y_requires_coordinatewise(self):
        with pytest.raises(ConfigurationError):
            reduce_to_matching(quadratic_disks_problem(2))


class TestGoodsAndPrices:
    def test_equilibrium_goods_rc(self, rc_small):
        prob, mu, _, sol = rc_small
        xs = mu.stratified_sample(120, np.random.default_rng(0))
        z = equilibrium_goods(sol, prob, xs)
        ref = xs * ((xs ** 2).sum(axis=1) + 1.0)[:, None]
        assert np.max(np.abs(z - ref)) < 5e-3

    def test_origin_buys_nothing(self, rc_small):
        prob, _, _, sol = rc_small
        z = equilibrium_goods(sol, prob, np.array([[0.0, 0.0]]))
        assert np.max(np.abs(z)) < 5e-3

    def test_traded_curve_endpoints(self, rc_small):
        prob, mu, _, sol = rc_small
        xs = np.array([[0.02, 0.02], [np.sqrt(0.45), np.sqrt(0.45)]])
        ps = price_schedule(sol, prob, xs, y_env_points=sol.y_grid[:, None])
        zz = (ps.traded_z ** 2).sum(axis=1)
        # near y = 1 the traded point approaches (Z, P) = (0, 0)
        assert zz[0] < 1e-2 and abs(ps.traded_price[0]) < 1e-2
        # the interior point sits on the parametric curve (y^2(y-1), ...)
        y1 = ps.traded_y[1]
        assert zz[1] == pytest.approx(y1 ** 2 * (y1 - 1), abs=5e-3)
        assert ps.traded_price[1] == pytest.approx(
            0.25 * (3 * y1 - 1) * (y1 - 1), abs=2e-3)

    def test_split_identities(self, rc_small):
        prob, mu, _, sol = rc_small
        xs = mu.stratified_sample(200, np.random.default_rng(1))
        ps = price_schedule(sol, prob, xs, y_env_points=sol.y_grid[:, None])
        # buyer side checked inside price_schedule; check the seller side
        seller = ps.traded_price - np.asarray(
            prob.producer_cost(ps.traded_y, ps.traded_z))
        np.testing.assert_allclose(seller, sol.v(ps.traded_y), atol=1e-3)

    def test_squeeze_band(self, rc_small):
        prob, mu, _, sol = rc_small
        xs = mu.stratified_sample(150, np.random.default_rng(2))
        ps = price_schedule(sol, prob, xs, y_env_points=sol.y_grid[:, None])
        lo = ps.lower_env(ps.traded_z)
        hi = ps.upper_env(ps.traded_z)
        assert np.all(hi - lo >= -1e-3)
        assert np.all(ps.traded_price >= lo - 1e-3)
        assert np.all(ps.traded_price <= hi + 1e-3)


class TestQuadraticDisks:
    def test_translation_map_and_price(self):
        prob = quadratic_disks_problem(2)
        a = np.array([2.0, 2.0])
        b = np.array([3.0, 3.0])
        mu = DensityMeasure(Domain.disk_sector(a, 1.0, None), resolution=192)
        nu2 = DensityMeasure(Domain.disk_sector(b, 1.0, None), resolution=192)
        pm = solve_quadratic_disks(prob, mu, nu2, SolverConfig(y_grid=129))
        assert all(r.verdict == "nested" for r in pm.reports)
        xs = mu.stratified_sample(200, np.random.default_rng(3))
        keep = np.all(np.abs(xs - a) <= 0.9, axis=1)
        err = np.abs(pm.F(xs[keep]) - (xs[keep] - a + b))
        assert err.max() < 1e-3
        zs = prob.goods(xs[keep], pm.F(xs[keep]))
        np.testing.assert_allclose(zs, xs[keep] * (xs[keep] + 1.0), atol=5e-3)

    def test_equal_centers_power_law_price(self):
        # a = b: the schedule collapses to (2/3) sum z_i^(3/2) + const
        prob = quadratic_disks_problem(2)
        a = np.array([2.5, 2.5])
        mu = DensityMeasure(Domain.disk_sector(a, 1.0, None), resolution=160)
        nu2 = DensityMeasure(Domain.disk_sector(a, 1.0, None), resolution=160)
        pm = solve_quadratic_disks(prob, mu, nu2, SolverConfig(y_grid=97))
        xs = mu.stratified_sample(120, np.random.default_rng(4))
        keep = np.all(np.abs(xs - a) <= 0.85, axis=1)
        ps = price_schedule(pm, prob, xs[keep])
        ref = (2.0 / 3.0) * (ps.traded_z ** 1.5).sum(axis=1)
        dev = ps.traded_price - ref
        assert np.max(np.abs(dev - dev.mean())) < 2e-3


class TestNoBunching:
    def test_uniform_square_near_dirac(self):
        prob = rc_problem(n=2)
        s = reduce_to_matching(prob)
        mu = DensityMeasure(Domain.box([0.0, 0.0], [1.0, 1.0]), resolution=128)
        nu = Measure1D.uniform(1.0 - 1e-3, 1.0 + 1e-3)
        atoms = sample_atoms(mu, nu, 300, seed=0, s=s)
        cup = solve_exact(atoms)
        rep = no_bunching_check(cup, prob)
        assert rep["collisions"] == []

    def test_identical_atoms_flagged(self):
        prob = rc_problem(n=2)
        x = np.array([[0.5, 0.5], [0.5, 0.5], [0.2, 0.7]])
        y = np.array([1.0, 1.0, 1.0])
        s = reduce_to_matching(prob)
        mat = np.asarray(s.value(x[:, None, :], y[None, :]))
        cup = solve_exact(DiscreteProblem(x_atoms=x, y_atoms=y, surplus_matrix=mat))
        rep = no_bunching_check(cup, prob)
        assert len(rep["collisions"]) == 1
        assert rep["collisions"][0]["identical_x"] is True
