"""Metrics: value accuracy, equation accuracy up to commutative reordering
and reverse-op re-encoding, per-op-count buckets, unused-quantity breakdown,
and a seeded k-fold splitter."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .arith import OpType, Value, to_float, values_close
from .compiler import GoldProgram
from .errors import DataError
from .ingest import ProblemInstance
from .reasoner import Prediction

VALUE_TOL = 1e-4


def value_correct(pred: Value | None, gold: Value) -> bool:
    if pred is None:
        return False
    return values_close(pred, gold, VALUE_TOL)


# canonical trees are nested tuples: ("q", index) | (op_symbol, left, right)
CanonTree = tuple


def canonical_form(program: GoldProgram, n_q0: int) -> CanonTree:
    """Expand a program to a tree (reuse inlined), rewrite reverse ops to
    their direct form with swapped children, and sort the children of the
    commutative ops by a total structural order."""
    results: list[CanonTree] = []

    def operand(idx: int) -> CanonTree:
        if idx <= n_q0:
            return ("q", idx)
        return results[idx - n_q0 - 1]

    for step in program.steps:
        left, right = operand(step.i), operand(step.j)
        op = step.op
        if op.is_rev:
            left, right = right, left
            op = op.base
        if op in (OpType.ADD, OpType.MUL) and _tree_key(right) < _tree_key(left):
            left, right = right, left
        results.append((op.symbol, left, right))
    return results[-1]


def _tree_key(tree: CanonTree) -> str:
    if tree[0] == "q":
        return f"q{tree[1]:06d}"
    return f"({tree[0]}{_tree_key(tree[1])}{_tree_key(tree[2])})"


def equation_correct(pred: GoldProgram | None, gold: GoldProgram | None, n_q0: int) -> bool:
    if pred is None or gold is None:
        return False
    return canonical_form(pred, n_q0) == canonical_form(gold, n_q0)


def unused_quantity_count(instance: ProblemInstance) -> int | None:
    """Textual quantities never referenced by the gold program; None when
    the instance has no usable gold program."""
    if instance.gold_program is None:
        return None
    m = instance.n_text
    used: set[int] = set()
    for step in instance.gold_program.steps:
        for idx in (step.i, step.j):
            if idx <= m:
                used.add(idx)
    return m - len(used)


@dataclass
class EvalReport:
    value_accuracy: float
    equation_accuracy: float
    by_op_count: dict[int, tuple[int, float]]     # T -> (count, accuracy)
    unused_fraction: float
    acc_unused_zero: float | None
    acc_unused_some: float | None
    verdicts: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "value_accuracy": self.value_accuracy,
            "equation_accuracy": self.equation_accuracy,
            "by_op_count": {str(k): {"count": c, "value_accuracy": a}
                            for k, (c, a) in sorted(self.by_op_count.items())},
            "unused_fraction": self.unused_fraction,
            "accuracy_unused_eq_0": self.acc_unused_zero,
            "accuracy_unused_ge_1": self.acc_unused_some,
            "verdicts": self.verdicts,
        }

    def text_table(self) -> str:
        lines = ["#Operations   Count   Val Acc."]
        for t, (count, acc) in sorted(self.by_op_count.items()):
            label = str(t) if t > 0 else "n/a"
            lines.append(f"{label:>11}   {count:>5}   {acc * 100:7.1f}")
        lines.append("")
        lines.append(f"{'Equ Acc.':<24}{self.equation_accuracy * 100:7.1f}")
        lines.append(f"{'Val Acc.':<24}{self.value_accuracy * 100:7.1f}")
        lines.append("")
        lines.append(f"{'Unused quantities':<24}{self.unused_fraction * 100:7.1f}%")
        if self.acc_unused_zero is not None:
            lines.append(f"{'Accuracy (unused = 0)':<24}{self.acc_unused_zero * 100:7.1f}")
        if self.acc_unused_some is not None:
            lines.append(f"{'Accuracy (unused >= 1)':<24}{self.acc_unused_some * 100:7.1f}")
        return "\n".join(lines)


def evaluate_dataset(predictions: list[Prediction], instances: list[ProblemInstance]) -> EvalReport:
    by_id = {p.id: p for p in predictions}
    n = len(instances)
    if n == 0:
        raise DataError("cannot evaluate an empty dataset")
    val_ok = 0
    equ_ok = 0
    buckets: dict[int, list[bool]] = {}
    unused_flags: list[tuple[bool, bool]] = []  # (has unused, value correct)
    verdicts = []
    for inst in instances:
        pred = by_id.get(inst.id)
        pvalue = pred.final_value if pred else None
        pprogram = pred.program() if pred else None
        v_ok = value_correct(pvalue, inst.gold_answer)
        e_ok = equation_correct(pprogram, inst.gold_program, inst.n_q0)
        val_ok += v_ok
        equ_ok += e_ok
        t = len(inst.gold_program) if inst.gold_program else 0
        buckets.setdefault(t, []).append(v_ok)
        unused = unused_quantity_count(inst)
        if unused is not None:
            unused_flags.append((unused >= 1, v_ok))
        verdicts.append({
            "id": inst.id,
            "value_correct": bool(v_ok),
            "equation_correct": bool(e_ok),
            "predicted": to_float(pvalue) if pvalue is not None else None,
            "gold": to_float(inst.gold_answer),
            "missing_prediction": pred is None,
            "error": pred.error if pred else "missing prediction",
        })
    by_op = {t: (len(flags), sum(flags) / len(flags)) for t, flags in buckets.items()}
    some = [ok for has, ok in unused_flags if has]
    none_ = [ok for has, ok in unused_flags if not has]
    return EvalReport(
        value_accuracy=val_ok / n,
        equation_accuracy=equ_ok / n,
        by_op_count=by_op,
        unused_fraction=(len(some) / len(unused_flags)) if unused_flags else 0.0,
        acc_unused_zero=(sum(none_) / len(none_)) if none_ else None,
        acc_unused_some=(sum(some) / len(some)) if some else None,
        verdicts=verdicts,
    )


def kfold_split(items: list, k: int, seed: int) -> list[tuple[list, list]]:
    """Deterministic seeded shuffle into k near-equal (train, test) folds."""
    if k < 2:
        raise DataError("k-fold split needs k >= 2")
    if k > len(items):
        raise DataError(f"cannot split {len(items)} items into {k} folds")
    order = np.random.default_rng(seed).permutation(len(items))
    folds: list[list] = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(items[int(idx)])
    out = []
    for held in range(k):
        test = folds[held]
        train = [x for f in range(k) if f != held for x in folds[f]]
        out.append((train, test))
    return out


def write_report(report: EvalReport, json_path: str, text_path: str | None = None) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=1)
    if text_path:
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(report.text_table() + "\n")
