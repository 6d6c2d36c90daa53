"""Gold equation compilation.

Infix equation -> binary expression tree -> grounded tree (leaves mapped to
quantity indices) -> ordered deduction program with sub-expression reuse and
reverse-operation normalization so every step satisfies i <= j. Programs are
evaluated with exact rational arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .arith import OpType, REV_OF, Value, apply_op, parse_number
from .errors import DataError


class CompileError(DataError):
    pass


class ParseError(CompileError):
    pass


class GroundingError(CompileError):
    pass


class EvaluationError(CompileError):
    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class Leaf:
    value: Fraction


@dataclass(frozen=True)
class Node:
    op: OpType  # base ops only: ADD, SUB, MUL, DIV, POW
    left: "ExprTree"
    right: "ExprTree"


ExprTree = Leaf | Node


@dataclass(frozen=True)
class GroundedLeaf:
    index: int  # 1-based index into Q^(0)


GroundedTree = GroundedLeaf | Node  # Node children may be grounded subtrees


@dataclass(frozen=True)
class Step:
    i: int
    j: int
    op: OpType

    def __post_init__(self):
        if self.i > self.j:
            raise CompileError(f"step ({self.i},{self.j}) violates i <= j")


@dataclass(frozen=True)
class GoldProgram:
    """Ordered deduction steps; step t (1-based) creates quantity n_q0 + t.

    The last step implicitly carries the stop label, earlier steps do not.
    """

    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> list:
        return [[s.i, s.j, s.op.symbol] for s in self.steps]

    @staticmethod
    def from_json(obj: list) -> "GoldProgram":
        from .arith import OP_BY_SYMBOL
        return GoldProgram(tuple(Step(i, j, OP_BY_SYMBOL[sym]) for i, j, sym in obj))


_EQ_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?%?|\d+\.\d+%?|\d+%?|\.\d+%?)"
    r"|(?P<op>\*\*|[+\-*/()×÷−^])"
    r")"
)

_OP_ALIASES = {"×": "*", "÷": "/", "−": "-", "^": "**"}
_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "**": 3}
_OP_OF_SYMBOL = {"+": OpType.ADD, "-": OpType.SUB, "*": OpType.MUL, "/": OpType.DIV, "**": OpType.POW}


def _lex(infix: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(infix):
        if infix[pos].isspace():
            pos += 1
            continue
        m = _EQ_TOKEN.match(infix, pos)
        if not m:
            raise ParseError(f"unexpected character {infix[pos]!r} at offset {pos}")
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), pos))
        else:
            sym = _OP_ALIASES.get(m.group("op"), m.group("op"))
            tokens.append(("op", sym, pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, infix: str):
        self.tokens = _lex(infix)
        self.pos = 0
        self.text = infix

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise ParseError(f"unexpected end of expression at offset {len(self.text)}")
        self.pos += 1
        return tok

    def parse(self) -> ExprTree:
        tree = self.expr(1)
        if self.peek() is not None:
            kind, val, off = self.peek()
            raise ParseError(f"trailing {val!r} at offset {off}")
        return tree

    def expr(self, min_prec: int) -> ExprTree:
        left = self.primary()
        while True:
            tok = self.peek()
            if tok is None or tok[0] != "op" or tok[1] not in _PRECEDENCE:
                break
            sym = tok[1]
            prec = _PRECEDENCE[sym]
            if prec < min_prec:
                break
            self.next()
            # ** is right-associative, the rest are left-associative
            right = self.expr(prec if sym == "**" else prec + 1)
            left = Node(_OP_OF_SYMBOL[sym], left, right)
        return left

    def primary(self) -> ExprTree:
        kind, val, off = self.next()
        if kind == "num":
            return Leaf(parse_number(val))
        if val == "(":
            inner = self.expr(1)
            tok = self.peek()
            if tok is None or tok[1] != ")":
                raise ParseError(f"unbalanced parenthesis opened at offset {off}")
            self.next()
            return inner
        if val == "-":
            # unary minus folds into a negative literal
            tok = self.peek()
            if tok is not None and tok[0] == "num":
                self.next()
                return Leaf(-parse_number(tok[1]))
            raise ParseError(f"dangling unary minus at offset {off}")
        raise ParseError(f"dangling operator {val!r} at offset {off}")


def parse_equation(infix: str) -> ExprTree:
    """Parse an infix equation with precedence ** > */ > +- and the usual
    associativity (left everywhere except **)."""
    if not infix.strip():
        raise ParseError("empty equation")
    return _Parser(infix).parse()


def count_nodes(tree: ExprTree) -> int:
    if isinstance(tree, (Leaf, GroundedLeaf)):
        return 0
    return 1 + count_nodes(tree.left) + count_nodes(tree.right)


def ground_leaves(tree: ExprTree, q0_values: list[Value]) -> GroundedTree:
    """Map each leaf to the index of a quantity with exactly its value.

    When several quantities share the value, distinct quantities are consumed
    first (lowest unused index), falling back to the lowest index once all
    are in use. Constants are eligible like any other quantity.
    """
    used: set[int] = set()

    def ground(t: ExprTree) -> GroundedTree:
        if isinstance(t, Leaf):
            cands = [k + 1 for k, v in enumerate(q0_values) if v == t.value]
            if not cands:
                raise GroundingError(f"no quantity matches leaf value {t.value}")
            free = [k for k in cands if k not in used]
            idx = free[0] if free else cands[0]
            used.add(idx)
            return GroundedLeaf(idx)
        return Node(t.op, ground(t.left), ground(t.right))

    return ground(tree)


def compile_steps(grounded: GroundedTree, n_q0: int, allow_pow_rev: bool = False) -> GoldProgram:
    """Emit deduction steps in post-order, reusing identical grounded
    subtrees, and normalizing each step to i <= j via operand swap
    (commutative ops) or the reverse-operation form."""
    memo: dict[tuple, int] = {}
    steps: list[Step] = []

    def key(t: GroundedTree) -> tuple:
        if isinstance(t, GroundedLeaf):
            return ("q", t.index)
        return (t.op.symbol, key(t.left), key(t.right))

    def emit(t: GroundedTree) -> int:
        if isinstance(t, GroundedLeaf):
            return t.index
        k = key(t)
        if k in memo:
            return memo[k]
        a = emit(t.left)
        b = emit(t.right)
        if a <= b:
            step = Step(a, b, t.op)
        elif t.op.commutative:
            step = Step(b, a, t.op)
        else:
            rev = REV_OF[t.op]
            if rev is OpType.POW_REV and not allow_pow_rev:
                raise CompileError(
                    "operands of ** arrive in descending index order and the "
                    "reverse exponentiation form is disabled")
            step = Step(b, a, rev)
        steps.append(step)
        idx = n_q0 + len(steps)
        memo[k] = idx
        return idx

    if isinstance(grounded, GroundedLeaf):
        raise CompileError("equation is a bare quantity, no deduction step to emit")
    emit(grounded)
    return GoldProgram(tuple(steps))


def evaluate_program(program: GoldProgram, q0_values: list[Value]) -> Value:
    """Sequentially evaluate steps, appending each result as a new quantity;
    returns the last step's value."""
    values: list[Value] = list(q0_values)
    for t, step in enumerate(program.steps, start=1):
        if not (1 <= step.i <= len(values) and 1 <= step.j <= len(values)):
            raise EvaluationError(f"step {t} references quantity out of range", step=t)
        out = apply_op(step.op, values[step.i - 1], values[step.j - 1])
        if out is None:
            raise EvaluationError(
                f"step {t} ({step.i},{step.j},{step.op.symbol}) is arithmetically invalid", step=t)
        values.append(out)
    return values[-1]
