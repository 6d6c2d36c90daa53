"""Problem ingestion: tokenize text, lift numeric literals into quantity
mentions, and assemble the initial quantity list (text quantities followed by
dataset constants)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .arith import Value, parse_number
from .compiler import (
    CompileError,
    GoldProgram,
    compile_steps,
    evaluate_program,
    ground_leaves,
    parse_equation,
)
from .errors import DataError

QUANT_TOKEN = "<quant>"

# Maximal numeric literals, longest form first so "2,088" and "12.5%" are
# captured whole instead of being split at punctuation.
_NUMBER = r"\d{1,3}(?:,\d{3})+(?:\.\d+)?%?|\d+\.\d+%?|\.\d+%?|\d+/\d+|\d+%?"
_TOKEN_RE = re.compile(rf"(?P<num>{_NUMBER})|(?P<word>[^\W\d_]+)|(?P<punct>[^\s])")


class IngestError(DataError):
    pass


@dataclass(frozen=True)
class QuantityMention:
    value: Fraction
    token_index: int
    surface: str


@dataclass(frozen=True)
class ConstantTable:
    entries: tuple[tuple[str, Fraction], ...]

    def __post_init__(self):
        values = [v for _, v in self.entries]
        if len(set(values)) != len(values):
            raise IngestError("constant table contains duplicate values")

    @property
    def values(self) -> list[Fraction]:
        return [v for _, v in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @staticmethod
    def from_file(path: str | Path) -> "ConstantTable":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return ConstantTable(tuple((e["name"], parse_number(str(e["value"]))) for e in raw))


DEFAULT_CONSTANTS = ConstantTable((("one", Fraction(1)), ("pi", Fraction(314, 100))))


@dataclass
class ProblemInstance:
    id: str
    tokens: list[str]
    quantities: list[QuantityMention]
    constants: ConstantTable
    gold_answer: Value
    equation: str = ""
    gold_program: GoldProgram | None = None
    flag: str | None = None  # why the gold equation is unusable, if it is

    def q0_values(self) -> list[Value]:
        return [m.value for m in self.quantities] + list(self.constants.values)

    @property
    def n_text(self) -> int:
        return len(self.quantities)

    @property
    def n_q0(self) -> int:
        return len(self.quantities) + len(self.constants)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "tokens": self.tokens,
            "quantities": [
                {"value": str(m.value), "token_index": m.token_index, "surface": m.surface}
                for m in self.quantities
            ],
            "constants": [[n, str(v)] for n, v in self.constants.entries],
            "equation": self.equation,
            "answer": str(self.gold_answer),
            "gold_program": self.gold_program.to_json() if self.gold_program else None,
            "flag": self.flag,
        }

    @staticmethod
    def from_json(obj: dict) -> "ProblemInstance":
        return ProblemInstance(
            id=obj["id"],
            tokens=list(obj["tokens"]),
            quantities=[
                QuantityMention(Fraction(m["value"]), m["token_index"], m["surface"])
                for m in obj["quantities"]
            ],
            constants=ConstantTable(tuple((n, Fraction(v)) for n, v in obj["constants"])),
            gold_answer=Fraction(obj["answer"]),
            equation=obj.get("equation", ""),
            gold_program=GoldProgram.from_json(obj["gold_program"]) if obj.get("gold_program") else None,
            flag=obj.get("flag"),
        )


def tokenize_and_extract(text: str) -> tuple[list[str], list[QuantityMention]]:
    """Whitespace/punctuation tokenization with every maximal numeric literal
    replaced by the sentinel quantity token and recorded as a mention."""
    if not text:
        raise IngestError("empty problem text")
    tokens: list[str] = []
    mentions: list[QuantityMention] = []
    for m in _TOKEN_RE.finditer(text):
        if m.lastgroup == "num":
            surface = m.group()
            try:
                value = parse_number(surface)
            except ValueError as e:
                raise IngestError(f"cannot ingest numeric literal {surface!r}: {e}") from e
            mentions.append(QuantityMention(value, len(tokens), surface))
            tokens.append(QUANT_TOKEN)
        else:
            tokens.append(m.group())
    return tokens, mentions


def attach_constants(mentions: list[QuantityMention], table: ConstantTable) -> list[Value]:
    """Initial quantity list: text quantities in text order, then constants.

    Duplicate values across text and constants stay distinct entries."""
    return [m.value for m in mentions] + list(table.values)


def compile_gold(equation: str, q0_values: list[Value], answer: Value,
                 allow_pow_rev: bool = False) -> tuple[GoldProgram | None, str | None]:
    """Compile an infix gold equation against Q^(0); (program, flag)."""
    try:
        tree = parse_equation(equation)
        grounded = ground_leaves(tree, q0_values)
        program = compile_steps(grounded, n_q0=len(q0_values), allow_pow_rev=allow_pow_rev)
        value = evaluate_program(program, q0_values)
    except CompileError as e:
        return None, str(e)
    if isinstance(value, Fraction) and isinstance(answer, Fraction):
        mismatch = abs(value - answer) > Fraction(1, 10000)
    else:
        mismatch = abs(float(value) - float(answer)) > 1e-4
    if mismatch:
        return None, f"gold equation evaluates to {value}, stored answer is {answer}"
    return program, None


def load_dataset(path: str | Path, constants: ConstantTable,
                 allow_pow_rev: bool = False) -> list[ProblemInstance]:
    """Load a JSONL dataset of {id, text, equation, answer} records.

    Instances whose equation cannot be compiled or grounded are kept but
    flagged, never dropped silently."""
    instances: list[ProblemInstance] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestError(f"{path}:{lineno}: malformed JSON line: {e}") from e
            for key in ("id", "text", "equation", "answer"):
                if key not in obj:
                    raise IngestError(f"{path}:{lineno}: missing field {key!r}")
            pid = str(obj["id"])
            if pid in seen_ids:
                raise IngestError(f"{path}:{lineno}: duplicate problem id {pid!r}")
            seen_ids.add(pid)
            tokens, mentions = tokenize_and_extract(obj["text"])
            answer = _parse_answer(obj["answer"], where=f"{path}:{lineno}")
            q0 = attach_constants(mentions, constants)
            program, flag = compile_gold(obj["equation"], q0, answer, allow_pow_rev)
            instances.append(ProblemInstance(
                id=pid,
                tokens=tokens,
                quantities=mentions,
                constants=constants,
                gold_answer=answer,
                equation=str(obj["equation"]),
                gold_program=program,
                flag=flag,
            ))
    return instances


def _parse_answer(raw, where: str) -> Fraction:
    try:
        if isinstance(raw, (int, float)):
            return Fraction(str(raw))
        return parse_number(str(raw))
    except (ValueError, ZeroDivisionError) as e:
        raise IngestError(f"{where}: bad answer value {raw!r}: {e}") from e


def write_instances(instances: list[ProblemInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def read_instances(path: str | Path) -> list[ProblemInstance]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(ProblemInstance.from_json(json.loads(line)))
    return out
