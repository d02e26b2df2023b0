import math

import numpy as np
import pytest

from diffmart.expr import (
    Bin, DomainFault, Lit, Neg, ParseError, Var,
    candidate_singularities, evaluate, evaluate_array, is_zero_expr,
    leading_exponent, parse, to_source,
)


def test_parse_div():
    assert parse("1/x") == Bin("/", Lit(1.0), Var())


def test_parse_pow_with_fractional_exponent():
    e = parse("exp(-2*x) * x^(-3/2)")
    assert e.op == "*"
    # unary minus binds tighter than /, so -3/2 is (-3)/2
    assert e.right == Bin("^", Var(), Bin("/", Neg(Lit(3.0)), Lit(2.0)))
    assert evaluate(e.right, 4.0) == 0.125


def test_parse_error_offset():
    with pytest.raises(ParseError) as exc:
        parse("1/+x")
    assert exc.value.offset == 3


def test_parse_pow_right_assoc():
    assert parse("x^2^3") == Bin("^", Var(), Bin("^", Lit(2.0), Lit(3.0)))


def test_parse_precedence():
    assert parse("1+2*x") == Bin("+", Lit(1.0), Bin("*", Lit(2.0), Var()))
    assert parse("-x^2") == Neg(Bin("^", Var(), Lit(2.0)))


def test_parse_whitespace_insensitive():
    assert parse(" 1 + 2 * x ") == parse("1+2*x")


def test_parse_pow_function_normalizes():
    assert parse("pow(x, 2)") == parse("x^2")


def test_parse_unknown_identifier():
    with pytest.raises(ParseError):
        parse("y + 1")
    with pytest.raises(ParseError):
        parse("foo(x)")


def test_parse_arity_mismatch():
    with pytest.raises(ParseError):
        parse("exp(x, 1)")


def test_eval_simple():
    assert evaluate(parse("1/x"), 2.0) == 0.5
    assert evaluate(parse("x^(-3/2)"), 4.0) == 0.125


def test_eval_division_by_zero_faults():
    with pytest.raises(DomainFault):
        evaluate(parse("1/x"), 0.0)


def test_eval_log_sqrt_faults():
    with pytest.raises(DomainFault):
        evaluate(parse("log(x)"), -1.0)
    with pytest.raises(DomainFault):
        evaluate(parse("sqrt(x)"), -4.0)


def test_eval_negative_base_noninteger_power_faults():
    with pytest.raises(DomainFault):
        evaluate(parse("x^0.5"), -1.0)
    assert evaluate(parse("x^3"), -2.0) == -8.0


def test_eval_overflow_is_a_fault():
    with pytest.raises(DomainFault):
        evaluate(parse("exp(x)"), 1e6)


def test_eval_sign_abs():
    assert evaluate(parse("sign(x)"), -3.0) == -1.0
    assert evaluate(parse("sign(x)"), 0.0) == 0.0
    assert evaluate(parse("abs(x)"), -3.0) == 3.0


def test_eval_array_matches_scalar():
    e = parse("exp(-2*x) * x^(-3/2) + log(x)")
    xs = np.array([0.5, 1.0, 2.0, 7.5])
    ref = np.array([evaluate(e, float(v)) for v in xs])
    np.testing.assert_array_equal(evaluate_array(e, xs), ref)


def test_eval_array_fault():
    with pytest.raises(DomainFault):
        evaluate_array(parse("1/x"), np.array([1.0, 0.0]))


@pytest.mark.parametrize("text", [
    "1/x",
    "exp(-2*x) * x^(-3/2)",
    "-x^2 + 3*x - 4",
    "1/((x-1)*(x+2))",
    "sqrt(abs(x)) - sign(x)/2",
    "x^2^3",
    "2^-x",
    "-(x + 1)*(x - 1)",
    "1.5e-3 * x + 2.25",
])
def test_print_parse_round_trip(text):
    e = parse(text)
    printed = to_source(e)
    assert parse(printed) == e
    # exact evaluation equality on the shared domain
    for v in (0.3, 1.7, -2.4):
        try:
            a = evaluate(e, v)
        except DomainFault:
            continue
        assert evaluate(parse(printed), v) == a


def test_is_zero_expr():
    assert is_zero_expr(parse("0"))
    assert is_zero_expr(parse("0 * exp(x)"))
    assert is_zero_expr(parse("2 - 2"))
    assert not is_zero_expr(parse("x"))
    assert not is_zero_expr(parse("1e-30"))


def test_candidates_pole_of_reciprocal():
    assert candidate_singularities(parse("1/x"), (-math.inf, math.inf)) == [0.0]


def test_candidates_constant():
    assert candidate_singularities(parse("1"), (0.0, 1.0)) == []


def test_candidates_rational_product():
    got = candidate_singularities(parse("1/((x-1)*(x+2))"), (-3.0, 3.0))
    assert got == [-2.0, 1.0]


def test_candidates_only_interior():
    assert candidate_singularities(parse("1/x"), (0.0, math.inf)) == []


def test_candidates_negative_power():
    assert candidate_singularities(parse("abs(x)^(-3/4)"), (-5.0, 5.0)) == [0.0]


def test_candidates_log_and_sqrt_args():
    assert candidate_singularities(parse("log(x - 2)"), (0.0, 10.0)) == [2.0]
    assert candidate_singularities(parse("sqrt(x + 1)"), (-3.0, 3.0)) == [-1.0]


def test_candidates_numeric_scan_fallback():
    # exp(x) - 2 is not affine/monomial: scan must find log(2)
    got = candidate_singularities(parse("1/(exp(x) - 2)"), (-5.0, 5.0))
    assert len(got) == 1
    assert got[0] == pytest.approx(math.log(2.0), abs=1e-9)


def test_candidates_rational_matches_denominator_roots():
    # invariant: candidates on a rational expression equal the real roots
    # of its denominator inside the interval, to 1e-10
    e = parse("(x^2 + 1)/((x - 0.5)*(x + 1.25)*x)")
    got = candidate_singularities(e, (-2.0, 2.0))
    assert len(got) == 3
    for g, want in zip(got, [-1.25, 0.0, 0.5]):
        assert abs(g - want) < 1e-10


def test_leading_exponent_trivial_cases():
    assert leading_exponent(parse("1/x^2"), 0.0, "right") == -2.0
    assert leading_exponent(parse("exp(x)"), 0.0, "right") == 0.0


def _loglog_slope(e, p, hs):
    # independent numeric oracle: slope of log e(p+h) against log h
    slopes = []
    for h in hs:
        lo, hi = h / 10.0, h
        ya, yb = evaluate(e, p + lo), evaluate(e, p + hi)
        slopes.append((math.log(abs(yb)) - math.log(abs(ya)))
                      / (math.log(hi) - math.log(lo)))
    return slopes


def test_leading_exponent_product_rule_matches_numeric_slope():
    e = parse("exp(x)/x")
    q = leading_exponent(e, 0.0, "right")
    assert q == -1.0
    for s in _loglog_slope(e, 0.0, [1e-3, 1e-6, 1e-9]):
        assert abs(s - q) < 0.02


def test_leading_exponent_matches_slope_at_h_1e8():
    cases = ["x^(-3/2)", "abs(x)^(-3/4) * exp(x)", "x^2/(1 + x)", "sqrt(x)*exp(-x)"]
    for text in cases:
        e = parse(text)
        q = leading_exponent(e, 0.0, "right")
        assert q is not None
        (s,) = _loglog_slope(e, 0.0, [1e-8])
        assert abs(s - q) < 0.02


def test_leading_exponent_left_side_signs():
    # x^3 to the left of 0 behaves like -|x|^3: exponent still derivable
    assert leading_exponent(parse("x^3"), 0.0, "left") == 3.0
    # sqrt is undefined left of 0
    assert leading_exponent(parse("sqrt(x)"), 0.0, "left") is None


def test_leading_exponent_at_infinity():
    assert leading_exponent(parse("1/x"), math.inf, "left") == -1.0
    assert leading_exponent(parse("x^2 + x"), math.inf, "left") == 2.0
    assert leading_exponent(parse("x^2 + x"), 0.0, "right") == 1.0
    assert leading_exponent(parse("x/(1 + x^3)"), math.inf, "left") == -2.0


def test_leading_exponent_shifted_pole():
    e = parse("1/((x-1)*(x+2))")
    assert leading_exponent(e, 1.0, "right") == -1.0
    assert leading_exponent(e, 1.0, "left") == -1.0


def test_leading_exponent_refuses_cancellation():
    assert leading_exponent(parse("x - x"), 0.0, "right") is None
    assert leading_exponent(parse("1 - exp(x)"), 0.0, "right") is None


def test_leading_exponent_non_power_law_returns_none():
    assert leading_exponent(parse("exp(1/x)"), 0.0, "right") is None
    assert leading_exponent(parse("log(x)"), 0.0, "right") is None
    assert leading_exponent(parse("exp(-x)"), math.inf, "left") is None
