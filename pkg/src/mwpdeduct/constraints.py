"""Declarative candidate filters applied during enumeration, in both
training and inference. Pure predicates over exact values."""

from __future__ import annotations

from dataclasses import dataclass

from .arith import OpType, Value, apply_op, is_negative
from .errors import ConfigError


@dataclass(frozen=True)
class RuleSet:
    forbid_same_quantity_pair: bool = False
    forbid_negative_intermediate: bool = False
    # arithmetic validity (no division by zero, no 0 to a negative power,
    # finite results) can never be switched off
    forbid_invalid_arithmetic: bool = True

    def __post_init__(self):
        if not self.forbid_invalid_arithmetic:
            raise ConfigError("forbid_invalid_arithmetic cannot be disabled")


PROFILES = {
    # constraint gains are a property of datasets without same-mention pairs
    # or negative intermediates; the permissive profile disables both
    "svamp": RuleSet(forbid_same_quantity_pair=True, forbid_negative_intermediate=True),
    "mawps": RuleSet(forbid_same_quantity_pair=True, forbid_negative_intermediate=True),
    "math23k": RuleSet(),
    "mathqa": RuleSet(),
    "default": RuleSet(),
}


def profile(name: str) -> RuleSet:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown rule profile {name!r}; choose from {sorted(PROFILES)}") from None


def admits_value(rules: RuleSet, i: int, j: int, result: Value | None) -> bool:
    """Filter decision given the precomputed step result (None = invalid)."""
    if result is None:
        return False
    if rules.forbid_same_quantity_pair and i == j:
        return False
    if rules.forbid_negative_intermediate and is_negative(result):
        return False
    return True


def admits(rules: RuleSet, values: list[Value], i: int, j: int, op: OpType) -> bool:
    """Whether step (i, j, op) over 1-based quantity `values` is allowed."""
    assert i <= j
    return admits_value(rules, i, j, apply_op(op, values[i - 1], values[j - 1]))
