import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upmdp.errors import DivisionByZero, ParseError, UnboundParameter
from upmdp.expr import BinOp, Neg, Num, Param, eval_expr, parameters, parse_expr, to_text


@pytest.mark.parametrize("text, value", [
    ("1 - p", 0.75),
    ("2 * p + 1", 1.5),
    ("1 - p - q", 0.25),  # left associative
    ("p / q / 2", 0.25),
    ("-(p - 1)", 0.75),
    ("--p", 0.25),
    ("(1 - p) * (1 - q)", 0.375),
    ("1.5e-1 + .05", 0.2),
])
def test_evaluates_with_standard_precedence(text, value):
    assert eval_expr(parse_expr(text), {"p": 0.25, "q": 0.5}) == pytest.approx(value)


def test_vectorised_evaluation():
    p = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(eval_expr(parse_expr("1 - p * p"), {"p": p}), 1 - p * p)


@pytest.mark.parametrize("text, offset", [
    ("1 +", 3),
    ("(p", 2),
    ("p q", 2),
    ("p $ 1", 2),
    ("p + é", 4),
    ("p / 0", 2),
])
def test_parse_errors_report_byte_offsets(text, offset):
    with pytest.raises(ParseError) as exc:
        parse_expr(text)
    assert exc.value.offset == offset


def test_parse_error_lists_expected_tokens():
    with pytest.raises(ParseError) as exc:
        parse_expr("1 *")
    assert "number" in exc.value.expected


def test_runtime_errors():
    with pytest.raises(DivisionByZero):
        eval_expr(parse_expr("1 / (p - p)"), {"p": 0.3})
    with pytest.raises(UnboundParameter) as exc:
        eval_expr(parse_expr("1 - r"), {"p": 0.3})
    assert exc.value.name == "r"


def test_parameters():
    assert parameters(parse_expr("p * (1 - q) + 2")) == {"p", "q"}
    assert parameters(parse_expr("0.5")) == set()


names = st.sampled_from(["p", "q", "w_1"])
leaves = st.one_of(st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(Num), names.map(Param))
trees = st.recursive(
    leaves,
    lambda sub: st.one_of(
        sub.map(Neg),
        # the parser rejects division by a literal zero
        st.builds(BinOp, st.sampled_from("+-*/"), sub, sub).filter(lambda b: b.op != "/" or b.right != Num(0.0)),
    ),
    max_leaves=12,
)


@settings(max_examples=300)
@given(trees)
def test_round_trip(tree):
    assert parse_expr(to_text(tree)) == tree


def test_canonical_text():
    assert to_text(parse_expr("(1.0-p)")) == "1 - p"
    assert to_text(parse_expr("p-(q-1)")) == "p - (q - 1)"
    assert to_text(parse_expr("(p*q)*2")) == "p*q*2"
    assert to_text(parse_expr("p/(q*2)")) == "p/(q*2)"
