import math
import os

import numpy as np
import pytest

from matchkit.errors import InfeasibleError
from matchkit.geometry import DensityMeasure, Domain, Measure1D
from matchkit.levelset import (BlockSpec, SolverConfig, build_matching,
                               compatibility_check, envelope_check, h_value,
                               iso_husband_set, local_match_construction,
                               match_point, solve_split)
from matchkit.surplus import (cross_difference, income_fertility_surplus,
                              parse_surplus_expression, pseudo_index_surplus,
                              rc_index_surplus)
from matchkit.applications import IncomeFertilityReference as REF

INC = income_fertility_surplus()
RC = rc_index_surplus()
Y_BREAK = REF.y_break


@pytest.fixture(scope="module")
def ex1():
    mu = DensityMeasure(Domain.box([0.0, 0.5], [1.0, 1.0]), resolution=192)
    nu = Measure1D.uniform(0.5, 1.0)
    sol = build_matching(INC, mu, nu, SolverConfig(y_grid=129))
    return mu, nu, sol


@pytest.fixture(scope="module")
def rc_sol():
    mu = DensityMeasure(Domain.disk_sector([0.0, 0.0], 1.0, (1, 1)), resolution=192)
    nu = Measure1D.uniform(1.0, 2.0)
    sol = build_matching(RC, mu, nu, SolverConfig(y_grid=129))
    return mu, nu, sol


@pytest.fixture(scope="module")
def ex2_raw():
    mu = DensityMeasure(Domain.box([0.0, 0.0], [1.0, 1.0]), resolution=192)
    nu = Measure1D.uniform(0.0, 1.0)
    sol = build_matching(INC, mu, nu, SolverConfig(y_grid=97))
    return mu, nu, sol


class TestHValue:
    def test_extreme_thresholds(self, ex1):
        mu, nu, _ = ex1
        y = 0.7
        assert h_value(INC, mu, nu, y, -100.0) == pytest.approx(-nu.cdf(y), abs=1e-9)
        assert h_value(INC, mu, nu, y, +100.0) == pytest.approx(1 - nu.cdf(y), abs=1e-9)

    def test_closed_form_spot_at_break(self, ex1):
        # at the break, coeff = 1/(2(e-1)); quadrature noise bounds |h|
        mu, nu, _ = ex1
        k = 1.0 + REF.coeff(Y_BREAK) / 2.0
        assert abs(h_value(INC, mu, nu, Y_BREAK, k)) <= 1e-4

    def test_monotone_in_k(self, ex1):
        mu, nu, _ = ex1
        rng = np.random.default_rng(3)
        for _ in range(10):
            y = float(rng.uniform(0.5, 1.0))
            k1, k2 = sorted(rng.uniform(0.9, 1.6, size=2))
            assert (h_value(INC, mu, nu, y, k2)
                    >= h_value(INC, mu, nu, y, k1) - 1e-12)


class TestSolveSplit:
    def test_lower_endpoint_is_infimum(self, ex1):
        mu, nu, _ = ex1
        km, kp = solve_split(INC, mu, nu, 0.5)
        inf_sy = float(np.min(INC.d_y(mu.cell_centers[mu.occupied_cell], 0.5)))
        assert km <= inf_sy + 1e-6
        assert kp <= inf_sy + 5e-3     # zero-mass threshold sits at the infimum

    def test_closed_form_below_break(self, ex1):
        mu, nu, _ = ex1
        km, kp = solve_split(INC, mu, nu, 0.6)
        assert 2 * (kp - 1) == pytest.approx(REF.coeff(0.6), abs=2e-4)
        assert kp == pytest.approx(1.0279056, abs=2e-4)

    def test_closed_form_above_break(self, ex1):
        mu, nu, _ = ex1
        km, kp = solve_split(INC, mu, nu, 0.9)
        assert 2 * (kp - 1) == pytest.approx(REF.coeff(0.9), abs=2e-4)

    def test_bracket_order(self, ex1):
        _, _, sol = ex1
        assert np.all(sol.split.k_minus <= sol.split.k_plus + 1e-15)

    def test_interior_plateaus_are_thin(self, ex1):
        _, _, sol = ex1
        widths = sol.split.plateau_width()[1:-1]
        assert np.median(widths) <= 1e-6
        assert np.mean(widths > 1e-4) < 0.05

    def test_plateau_detection_on_mass_gap(self):
        # two separated slabs: thresholds between them split 50/50 for the
        # median husband, so the bracket must report the whole gap
        dom = Domain.box_union([Domain.box([0.0, 0.0], [0.4, 1.0]),
                                Domain.box([0.6, 0.0], [1.0, 1.0])])
        mu = DensityMeasure(dom, resolution=128)
        nu = Measure1D.uniform(0.0, 1.0)
        s = parse_surplus_expression("x1*y", 2)
        km, kp = solve_split(s, mu, nu, 0.5)
        assert kp - km > 1e-6
        assert km == pytest.approx(0.4, abs=0.02)
        assert kp == pytest.approx(0.6, abs=0.02)


class TestMatchPoint:
    def test_on_iso_curve(self, ex1):
        mu, nu, _ = ex1
        y0 = 0.6
        p = 0.4
        x = np.array([p, 1 - y0 + REF.coeff(y0) / p])
        res = match_point(INC, mu, nu, x)
        assert res["y"] == pytest.approx(y0, abs=1e-3)
        assert len(res["roots"]) == 1

    def test_rc_radius_extremes(self, rc_sol):
        mu, nu, _ = rc_sol
        top = match_point(RC, mu, nu, np.array([1.0, 0.0]))
        assert top["y"] == pytest.approx(2.0, abs=1e-3)
        origin = match_point(RC, mu, nu, np.array([0.0, 0.0]))
        assert origin["y"] == pytest.approx(1.0, abs=1e-3)


class TestBuildMatching:
    def test_example1_nested(self, ex1):
        _, _, sol = ex1
        rep = sol.nested
        assert rep.verdict == "nested"
        assert rep.dynamic_criterion_min >= 0
        assert not rep.monotone_inclusion_violations
        assert not rep.unique_splitting_failures
        assert not rep.transversality_flags

    def test_example1_matches_reference_map(self, ex1):
        mu, _, sol = ex1
        rng = np.random.default_rng(1)
        xs = mu.stratified_sample(200, rng)
        ref = np.array([REF.match(p, x) for p, x in xs])
        assert np.max(np.abs(sol.F(xs) - ref)) < 2e-3

    def test_pseudo_index_nested_for_random_measures(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 0.8, size=2)
        mu = DensityMeasure(Domain.box([0, 0], [1, 1]),
                            density=lambda x: 1 + a[0] * x[..., 0] + a[1] * x[..., 1],
                            resolution=128)
        nu = Measure1D.from_density(lambda y: 1 + 0.7 * y, 0.1, 0.9)
        sol = build_matching(pseudo_index_surplus(), mu, nu, SolverConfig(y_grid=65))
        assert sol.nested.verdict == "nested"

    def test_example2_not_nested_with_failures(self, ex2_raw):
        _, _, sol = ex2_raw
        assert sol.nested.verdict == "not_nested"
        assert len(sol.nested.unique_splitting_failures) >= 1
        x0, roots = sol.nested.unique_splitting_failures[0]
        assert len(roots) > 1

    def test_pushforward_balance(self, ex1):
        _, _, sol = ex1
        assert sol.pushforward_gap() <= 5e-4

    def test_stability_sample(self, ex1):
        _, _, sol = ex1
        assert sol.stability_sample(4000, seed=2) >= -1e-3

    def test_support_s_monotone(self, ex1):
        mu, _, sol = ex1
        xs = mu.stratified_sample(60, np.random.default_rng(4))
        fy = sol.F(xs)
        delta = cross_difference(INC, xs[:, None, :], fy[:, None],
                                 xs[None, :, :], fy[None, :])
        assert float(np.min(delta)) >= -1e-3

    def test_block_mass_mismatch_raises(self):
        mu = DensityMeasure(Domain.box([0, 0], [1, 1]), resolution=64)
        nu = Measure1D.uniform(0.0, 1.0)
        cfg = SolverConfig(y_grid=33, blocks=(
            BlockSpec(x_lo=(0.0, 0.0), x_hi=(1.0, 0.4), y_lo=0.0, y_hi=0.5),
            BlockSpec(x_lo=(0.0, 0.4), x_hi=(1.0, 1.0), y_lo=0.5, y_hi=1.0),
        ))
        with pytest.raises(InfeasibleError):
            build_matching(INC, mu, nu, cfg)

    def test_thread_count_does_not_change_results(self):
        mu = DensityMeasure(Domain.box([0.0, 0.5], [1.0, 1.0]), resolution=96)
        nu = Measure1D.uniform(0.5, 1.0)
        old = os.environ.get("MATCHKIT_THREADS")
        try:
            os.environ["MATCHKIT_THREADS"] = "1"
            a = build_matching(INC, mu, nu, SolverConfig(y_grid=33))
            os.environ["MATCHKIT_THREADS"] = "3"
            b = build_matching(INC, mu, nu, SolverConfig(y_grid=33))
        finally:
            if old is None:
                os.environ.pop("MATCHKIT_THREADS", None)
            else:
                os.environ["MATCHKIT_THREADS"] = old
        np.testing.assert_array_equal(a.split.k, b.split.k)
        np.testing.assert_array_equal(a.v_grid, b.v_grid)


class TestIsoHusbandSets:
    def test_example1_hyperbola(self, ex1):
        _, _, sol = ex1
        lines = iso_husband_set(sol, 0.6)
        pts = np.concatenate(lines)
        dev = pts[:, 1] - REF.iso_curve_income(0.6, pts[:, 0])
        assert np.max(np.abs(dev)) < 5e-4
        assert pts[:, 1].min() >= 0.5 - 1e-9 and pts[:, 1].max() <= 1.0 + 1e-9

    def test_rc_circular_arc(self, rc_sol):
        _, _, sol = rc_sol
        lines = iso_husband_set(sol, 1.5)
        pts = np.concatenate(lines)
        assert np.max(np.abs(pts[:, 0] ** 2 + pts[:, 1] ** 2 - 0.5)) < 1e-3

    def test_zero_coeff_vertical_line(self, ex2_raw):
        # at the median husband the square model's iso set is income = 1/2
        _, _, sol = ex2_raw
        lines = iso_husband_set(sol, 0.5)
        pts = np.concatenate(lines)
        assert np.max(np.abs(pts[:, 1] - 0.5)) < 5e-3
        assert pts[:, 0].max() - pts[:, 0].min() > 0.8


class TestPayoffChecks:
    def test_envelope_example1(self, ex1):
        mu, _, sol = ex1
        xs = mu.stratified_sample(300, np.random.default_rng(7))
        rep = envelope_check(sol, xs)
        assert rep["max_rel_error"] < 1e-3
        assert rep["n_used"] > 200

    def test_envelope_rc_gradient(self, rc_sol):
        # fixture runs at a reduced grid; the 1e-3 bound holds at full
        # resolution and is asserted by the acceptance suite
        mu, _, sol = rc_sol
        xs = mu.stratified_sample(200, np.random.default_rng(8))
        rep = envelope_check(sol, xs)
        assert rep["max_rel_error"] < 2.5e-3
        # the envelope gradient is x(1 + |x|^2) for this market
        inner = xs[mu.domain.contains(xs + 0.01) & mu.domain.contains(xs - 0.01)]
        h = 1e-3
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (sol.u(inner + e) - sol.u(inner - e)) / (2 * h)
            ref = inner[:, d] * (1 + (inner ** 2).sum(axis=1))
            assert np.max(np.abs(fd - ref)) < 5e-3

    def test_envelope_excludes_discontinuity(self, ex2_raw):
        mu, nu, _ = ex2_raw
        cfg = SolverConfig(y_grid=97, blocks=(
            BlockSpec(x_lo=(0.0, 0.0), x_hi=(1.0, 0.5), y_lo=0.0, y_hi=0.5),
            BlockSpec(x_lo=(0.0, 0.5), x_hi=(1.0, 1.0), y_lo=0.5, y_hi=1.0),
        ))
        sol = build_matching(INC, mu, nu, cfg)
        band = np.stack([np.linspace(0.2, 0.9, 12), np.full(12, 0.5)], axis=1)
        rep = envelope_check(sol, band)
        assert rep["n_excluded"] >= 10    # straddles the jump; must not be scored

    def test_compatibility_rc(self, rc_sol):
        mu, _, sol = rc_sol
        xs = mu.stratified_sample(200, np.random.default_rng(9))
        rep = compatibility_check(sol, xs, partner_margin=0.02)
        assert rep["max_cross_residual"] < 1e-3
        assert rep["max_gradient_residual"] < 1.5e-3

    def test_index_surplus_cross_identity(self, rc_sol):
        # for an index surplus both cross terms are proportional to the
        # index gradient, so the identity holds wherever F is smooth
        mu, _, sol = rc_sol
        xs = mu.stratified_sample(100, np.random.default_rng(10))
        rep = compatibility_check(sol, xs, partner_margin=0.02)
        assert rep["max_cross_residual"] < 1e-3


class TestLocalMatch:
    def test_couple_pinned_exactly(self):
        lm = local_match_construction(INC, [0.75, 0.75], 0.7, 0.15)
        assert float(lm.F(np.array([[0.75, 0.75]]))[0]) == pytest.approx(0.7, abs=1e-12)
        assert lm.v_curvature > float(np.asarray(INC.d_yy(np.array([[0.75, 0.75]]), 0.7))[0])

    def test_map_has_nonvanishing_gradient(self):
        lm = local_match_construction(INC, [1.0, 0.75], 0.7, 0.12)
        probe = lm.mu_local.cell_centers[lm.mu_local.occupied_cell][::29]
        h = 1e-5
        grads = []
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            grads.append((lm.F(probe + e) - lm.F(probe - e)) / (2 * h))
        norms = np.linalg.norm(np.stack(grads, axis=1), axis=1)
        assert norms.min() > 1e-3

    def test_induced_model_is_nested(self):
        lm = local_match_construction(INC, [0.75, 0.75], 0.7, 0.15)
        sol = build_matching(INC, lm.mu_local, lm.nu_local, SolverConfig(y_grid=49))
        assert sol.nested.verdict == "nested"
        assert float(sol.F(np.array([[0.75, 0.75]]))[0]) == pytest.approx(0.7, abs=5e-3)
