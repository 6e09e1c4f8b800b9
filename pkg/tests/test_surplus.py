import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matchkit.expressions import ParseError
from matchkit.surplus import (catalog_surplus, check_nondegeneracy, check_twist,
                              coordinate_quadratic_surplus, cross_difference,
                              diagonal_separable_surplus, fd_consistency,
                              income_fertility_surplus, parse_surplus_expression,
                              pseudo_index_surplus, rc_index_surplus, with_additive)

INC = income_fertility_surplus()
RC = rc_index_surplus()
SAMPLES = np.array([[0.2, 0.6], [0.8, 0.55], [0.5, 0.95], [0.97, 0.72]])


class TestCatalog:
    @pytest.mark.parametrize("s,ys", [
        (INC, [0.55, 0.8, 1.0]),
        (RC, [1.1, 1.7, 2.0]),
        (pseudo_index_surplus(), [0.2, 0.6, 0.9]),
        (coordinate_quadratic_surplus(1, 2), [2.2, 3.1]),
        (diagonal_separable_surplus([(("square", (0.5,)), ("identity", ())),
                                     (("identity", ()), ("affine", (2.0, 1.0)))]),
         [0.3, 0.8]),
    ])
    def test_fd_consistency(self, s, ys):
        # analytic first derivatives vs central differences, relative 1e-5
        assert fd_consistency(s, SAMPLES, ys) < 1e-5

    def test_mixed_hessian_is_grad_x_dy_column(self):
        h = INC.mixed_hessian(SAMPLES, 0.7)
        g = np.asarray(INC.grad_x_dy(SAMPLES, 0.7))
        assert h.shape == (4, 2, 1)
        np.testing.assert_allclose(h[..., 0], g)

    def test_unknown_catalog_name(self):
        from matchkit.errors import ConfigurationError
        with pytest.raises(ConfigurationError):
            catalog_surplus("nope")


class TestExpressionSurplus:
    def test_matches_catalog_income_fertility(self):
        s = parse_surplus_expression("0.25*p*(x+y+1)^2 + (1-p)*(x+y)", 2,
                                     aliases={"p": "x1", "x": "x2"})
        for y in (0.55, 0.75, 1.0):
            np.testing.assert_allclose(s.value(SAMPLES, y), INC.value(SAMPLES, y),
                                       atol=1e-12)

    def test_linear_derivative_exact(self):
        s = parse_surplus_expression("x1*y", 1)
        xs = np.array([[0.3], [1.7]])
        np.testing.assert_allclose(s.d_y(xs, 0.9), xs[:, 0], atol=1e-8)

    def test_syntax_error_position(self):
        with pytest.raises(ParseError) as err:
            parse_surplus_expression("ln(x1", 2)
        assert err.value.position == 6


class TestCrossDifference:
    def test_zero_on_diagonal(self):
        for s in (INC, RC):
            got = cross_difference(s, SAMPLES, 0.8, SAMPLES, 0.8)
            np.testing.assert_allclose(got, 0.0, atol=1e-14)

    def test_bilinear_hand_expansion(self):
        # s = x*y in one dimension: delta = (x - x0)(y - y0) = 1 for unit gaps
        s = parse_surplus_expression("x1*y", 1)
        got = cross_difference(s, np.array([2.0]), 3.0, np.array([1.0]), 2.0)
        assert got == pytest.approx(1.0, abs=1e-12)

    def test_identical_x_types(self):
        x = np.array([1.0, 1.0])
        assert cross_difference(INC, x, 1.0, x, 0.5) == pytest.approx(0.0, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.5, 1.0), st.floats(0.5, 1.0))
    def test_additive_shift_invariance(self, y, y0):
        shifted = with_additive(INC, f=lambda x: np.sin(x[..., 0]) + x[..., 1] ** 3,
                                g=lambda t: np.cos(3 * t))
        d0 = cross_difference(INC, SAMPLES[0], y, SAMPLES[1], y0)
        d1 = cross_difference(shifted, SAMPLES[0], y, SAMPLES[1], y0)
        assert d1 == pytest.approx(d0, abs=1e-10)


class TestTwist:
    def test_rc_holds_off_origin(self):
        rep = check_twist(RC, [[1.0, 0.0]], [(1.0, 2.0)])
        assert rep.holds
        assert rep.min_separation == pytest.approx(1.0)   # |D_x s| gap = |y-y0||x|

    def test_rc_fails_at_origin(self):
        rep = check_twist(RC, [[0.0, 0.0]], [(1.0, 2.0)])
        assert not rep.holds
        assert rep.witnesses[0][3] == 0.0

    def test_additive_fails_everywhere(self):
        s = parse_surplus_expression("x1^2 + x2 + y^2", 2)
        rep = check_twist(s, SAMPLES, [(0.5, 0.9), (0.2, 0.7)])
        assert not rep.holds
        assert len(rep.witnesses) == SAMPLES.shape[0] * 2

    def test_diagonal_separable_interior(self):
        # strictly monotone g_k and nonvanishing f_k' twist the family
        s = diagonal_separable_surplus([(("exp", (1.0,)), ("identity", ())),
                                        (("affine", (2.0, 0.0)), ("affine", (3.0, 1.0)))])
        pairs = [(a, b) for a in (0.2, 0.5, 0.8) for b in (0.3, 0.9) if a != b]
        rep = check_twist(s, SAMPLES, pairs)
        assert rep.holds


class TestNondegeneracy:
    def test_income_fertility_corner(self):
        rep = check_nondegeneracy(INC, [[0.0, 0.5]], [0.5])
        assert rep.min_norm == 0.0
        assert len(rep.degenerate_points) == 1

    def test_income_fertility_interior(self):
        rep = check_nondegeneracy(INC, [[1.0, 1.0]], [1.0])
        assert rep.min_norm == pytest.approx(np.sqrt(2) / 2)
        assert not rep.degenerate_points

    def test_rc_norm_is_radius(self):
        rep = check_nondegeneracy(RC, [[0.3, 0.4]], [1.5])
        assert rep.min_norm == pytest.approx(0.5)
