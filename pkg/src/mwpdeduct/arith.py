"""Exact arithmetic over quantity values and the binary operation inventory.

Values are `Fraction` wherever exactness is possible; exponentiation with a
non-integer exponent (or one that would blow up the representation) falls
back to float64. `apply_op` returns None for arithmetically invalid steps
(division by zero, 0 to a negative power, non-finite fallback results).
"""

from __future__ import annotations

import enum
import math
from fractions import Fraction

Value = Fraction | float

# Exact integer exponentiation is capped so enumeration over ** candidates
# cannot build astronomically large integers.
POW_MAX_EXP = 128
POW_MAX_BITS = 4096

MAX_LITERAL_DIGITS = 1000


class OpType(enum.Enum):
    """Binary relations between an ordered quantity pair (i <= j).

    Definition order is the tie-breaking order used by the decoder. The
    *_REV forms apply the operands in swapped order (q_j op q_i) so that the
    i <= j pair convention can still express every program.
    """

    ADD = "+"
    SUB = "-"
    SUB_REV = "-rev"
    MUL = "*"
    DIV = "/"
    DIV_REV = "/rev"
    POW = "**"
    POW_REV = "**rev"

    @property
    def symbol(self) -> str:
        return self.value

    @property
    def is_rev(self) -> bool:
        return self.value.endswith("rev")

    @property
    def base(self) -> "OpType":
        return OP_BY_SYMBOL[self.value[:-3]] if self.is_rev else self

    @property
    def commutative(self) -> bool:
        return self in (OpType.ADD, OpType.MUL)


OP_BY_SYMBOL = {op.value: op for op in OpType}

REV_OF = {OpType.SUB: OpType.SUB_REV, OpType.DIV: OpType.DIV_REV, OpType.POW: OpType.POW_REV}

DEFAULT_OPS = (OpType.ADD, OpType.SUB, OpType.SUB_REV, OpType.MUL, OpType.DIV, OpType.DIV_REV)
EXPONENT_OPS = DEFAULT_OPS + (OpType.POW,)


def parse_number(surface: str) -> Fraction:
    """Parse a numeric literal surface form into an exact rational.

    Handles plain integers, comma-grouped integers, decimals, percents
    (value divided by 100) and single-token fractions "a/b".
    """
    s = surface.strip()
    if len(s) > MAX_LITERAL_DIGITS:
        raise ValueError(f"numeric literal too long to represent exactly: {s[:32]}...")
    percent = s.endswith("%")
    if percent:
        s = s[:-1]
    s = s.replace(",", "")
    if "/" in s:
        num, den = s.split("/", 1)
        value = Fraction(int(num), int(den))
    else:
        value = Fraction(s)
    if percent:
        value /= 100
    return value


def _pow_exact_ok(base: Fraction, exp: int) -> bool:
    if abs(exp) > POW_MAX_EXP:
        return False
    bits = base.numerator.bit_length() + base.denominator.bit_length()
    return bits * abs(exp) <= POW_MAX_BITS


def _pow(a: Value, b: Value) -> Value | None:
    if isinstance(a, Fraction) and isinstance(b, Fraction) and b.denominator == 1:
        exp = int(b)
        if a == 0 and exp < 0:
            return None
        if _pow_exact_ok(a, exp):
            return a ** exp
    # float fallback: non-integer exponent or capped magnitude
    fa, fb = float(a), float(b)
    if fa == 0.0 and fb < 0:
        return None
    try:
        out = math.pow(fa, fb)
    except (OverflowError, ValueError):
        return None
    return out if math.isfinite(out) else None


def apply_op(op: OpType, a: Value, b: Value) -> Value | None:
    """Apply `op` to the ordered pair (a, b) = (q_i, q_j); None if invalid."""
    if isinstance(a, float) or isinstance(b, float):
        a, b = float(a), float(b)
    if op is OpType.ADD:
        out = a + b
    elif op is OpType.SUB:
        out = a - b
    elif op is OpType.SUB_REV:
        out = b - a
    elif op is OpType.MUL:
        out = a * b
    elif op is OpType.DIV:
        if b == 0:
            return None
        out = a / b
    elif op is OpType.DIV_REV:
        if a == 0:
            return None
        out = b / a
    elif op is OpType.POW:
        return _pow(a, b)
    elif op is OpType.POW_REV:
        return _pow(b, a)
    else:
        raise ValueError(f"unknown op {op}")
    if isinstance(out, float) and not math.isfinite(out):
        return None
    return out


def to_float(v: Value) -> float:
    return float(v)


def is_negative(v: Value) -> bool:
    return v < 0


def values_close(a: Value, b: Value, tol: float = 1e-4) -> bool:
    """Exact equality for two rationals, absolute tolerance otherwise."""
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= tol


def format_value(v: Value) -> str:
    """Human-friendly rendering: integers plain, terminating decimals as
    decimals, other rationals as num/den, floats via repr."""
    if isinstance(v, float):
        return repr(v)
    if v.denominator == 1:
        return str(v.numerator)
    den = v.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den == 1:
        shift = max(twos, fives)
        scaled = v.numerator * 10 ** shift // v.denominator
        sign = "-" if scaled < 0 else ""
        digits = str(abs(scaled)).rjust(shift + 1, "0")
        return f"{sign}{digits[:-shift]}.{digits[-shift:]}"
    return f"{v.numerator}/{v.denominator}"
