"""Tests of the expression parser."""

import math

import pytest

from stochsym.exceptions import ParseError, UnknownVariableError
from stochsym.expr import Func, Neg, Num, Pow, Var, VariableSpace, evaluate, to_text
from stochsym.parsing import parse, tokenize


class TestTokenize:
    """Tests of the tokenizer."""

    def test_positions_are_one_based(self):
        tokens = list(tokenize("x1 +\n  2.5e-1"))
        assert [(tok.kind, tok.text, tok.line, tok.column) for tok in tokens[:3]] == [
            ("ident", "x1", 1, 1),
            ("op", "+", 1, 4),
            ("number", "2.5e-1", 2, 3),
        ]


class TestParse:
    """Tests of the parse function."""

    def test_precedence(self, expr):
        assert evaluate(expr("1 + 2*3^2"), {}) == 19.0

    def test_left_associative_subtraction_and_division(self, expr):
        assert evaluate(expr("8 - 4 - 2"), {}) == 2.0
        assert evaluate(expr("8/4/2"), {}) == 1.0

    def test_unary_minus_binds_looser_than_power(self, expr):
        e = expr("-x1^2")
        assert e == Neg(Pow(Var("x1"), Num(2.0)))
        assert evaluate(e, {"x1": 3.0}) == -9.0

    def test_negative_literal_is_folded(self, expr):
        assert expr("-2") == Num(-2.0)

    def test_function_calls(self, expr):
        assert expr("exp(x1)") == Func("exp", Var("x1"))
        assert evaluate(expr("sqrt(4) + log(1) + sin(0) + cos(0)"), {}) == 3.0

    def test_exp_of_negative_square(self, expr):
        assert evaluate(expr("exp(-x1^2)"), {"x1": 1.0}) == pytest.approx(math.exp(-1.0))

    def test_whitespace_and_newlines_are_ignored(self, expr):
        assert evaluate(expr(" x1 *\n t "), {"x1": 2.0, "t": 3.0}) == 6.0

    def test_unknown_variable_raises_error_with_position(self, expr):
        with pytest.raises(UnknownVariableError) as exc_info:
            expr("x1 + y")
        assert exc_info.value.name == "y"
        assert exc_info.value.column == 6

    def test_variable_outside_space_is_unknown(self):
        with pytest.raises(UnknownVariableError):
            parse("x2 + w1", VariableSpace(1, 1))

    def test_unbalanced_parenthesis_raises_error(self, expr):
        with pytest.raises(ParseError):
            expr("exp(x1")

    def test_trailing_input_raises_error(self, expr):
        with pytest.raises(ParseError) as exc_info:
            expr("x1 x1")
        assert exc_info.value.column == 4

    def test_chained_power_is_rejected(self, expr):
        with pytest.raises(ParseError):
            expr("2^x1^2")

    def test_variable_called_like_function_is_rejected(self, expr):
        with pytest.raises(ParseError):
            expr("x1(2)")

    def test_unknown_function_is_an_unknown_name(self, expr):
        with pytest.raises(UnknownVariableError):
            expr("tan(x1)")

    def test_signed_base_prints_with_parentheses(self, expr):
        e = Pow(Neg(Var("x1")), Num(2.0))
        assert evaluate(expr(to_text(e)), {"x1": 3.0}) == 9.0
