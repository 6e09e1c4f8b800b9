import numpy as np
import pytest

from matchkit.expressions import ParseError, compile_expression, parse_ast


def ev(text, **env):
    fn = compile_expression(text, list(env))
    return fn(**env)


class TestGrammar:
    def test_precedence(self):
        assert ev("1 + 2*3", ) == 7
        assert ev("2*3^2") == 18
        assert ev("(1+2)*3") == 9

    def test_power_right_associative(self):
        assert ev("2^3^2") == 512

    def test_unary_minus(self):
        assert ev("-2^2") == -4
        assert ev("3 - -2") == 5

    def test_functions(self):
        assert ev("ln(exp(2))") == pytest.approx(2.0)
        assert ev("sqrt(9)") == 3
        assert ev("min(2, 3) + max(2, 3)") == 5

    def test_constants(self):
        assert ev("pi") == pytest.approx(np.pi)
        assert ev("e") == pytest.approx(np.e)

    def test_vectorized(self):
        x = np.linspace(0, 1, 7)
        fn = compile_expression("x1^2 + 0.5", ["x1"])
        np.testing.assert_allclose(fn(x1=x), x ** 2 + 0.5)


class TestErrors:
    def test_unbalanced_paren_position(self):
        with pytest.raises(ParseError) as err:
            parse_ast("ln(x1", ["x1"])
        assert err.value.position == 6

    def test_unknown_identifier(self):
        with pytest.raises(ParseError, match="unknown identifier"):
            parse_ast("x1 + bogus", ["x1"])

    def test_unknown_function(self):
        with pytest.raises(ParseError, match="unknown function"):
            parse_ast("tan(x1)", ["x1"])

    def test_arity_mismatch(self):
        with pytest.raises(ParseError, match="expects 2"):
            parse_ast("min(x1)", ["x1"])
        with pytest.raises(ParseError, match="expects 1"):
            parse_ast("ln(x1, x1)", ["x1"])

    def test_trailing_input(self):
        with pytest.raises(ParseError, match="trailing"):
            parse_ast("1 + 2 3", [])

    def test_bad_character(self):
        with pytest.raises(ParseError, match="unexpected character"):
            parse_ast("1 + $", [])

    def test_empty_value(self):
        with pytest.raises(ParseError):
            parse_ast("1 + ", [])

    def test_error_carries_token(self):
        with pytest.raises(ParseError) as err:
            parse_ast("x1 + zz", ["x1"])
        assert err.value.token == "zz"
