"""Templated synthetic corpora.

Values are invisible to the encoder (every number becomes the sentinel
token), so each template carries a distinctive lexical signature that
determines its program shape; the slot values only decide the arithmetic.
All templates keep intermediates positive and divisors nonzero so the same
corpora work under the strictest rule profile.
"""

from __future__ import annotations

import json

import numpy as np

NAMES = ["Ava", "Ben", "Carla", "Dev", "Erin", "Farid", "Gus", "Hana"]
OBJECTS = ["marbles", "pens", "apples", "books", "coins", "cards", "shells", "stamps"]
CONTAINERS = ["box", "bag", "shelf", "crate", "jar", "basket"]
GROUPS = ["kids", "friends", "teams", "classes"]
ANIMALS = ["birds", "cats", "squirrels", "dogs"]


def _fmt(v: int, comma: bool = False) -> str:
    return f"{v:,}" if comma and v >= 1000 else str(v)


def _t_add(rng, pool):
    a, b = int(rng.integers(2, 60)), int(rng.integers(2, 60))
    obj = pool(OBJECTS)
    text = (f"There were {_fmt(a)} {obj} in the {pool(CONTAINERS)} . "
            f"{pool(NAMES)} put in {_fmt(b)} more {obj} . How many {obj} are there now ?")
    return text, f"{a}+{b}"


def _t_sub(rng, pool):
    b = int(rng.integers(2, 40))
    a = b + int(rng.integers(1, 40))
    obj = pool(OBJECTS)
    text = (f"{pool(NAMES)} had {_fmt(a)} {obj} . Then {_fmt(b)} {obj} were given away . "
            f"How many {obj} are left ?")
    return text, f"{a}-{b}"


def _t_sub_rev(rng, pool):
    # subtrahend mentioned first, so the gold step needs the reverse op
    b = int(rng.integers(2, 40))
    a = b + int(rng.integers(1, 40))
    obj = pool(OBJECTS)
    text = (f"After losing {_fmt(b)} {obj} , {pool(NAMES)} counted the rest of the "
            f"{_fmt(a)} {obj} from the morning . How many {obj} are left ?")
    return text, f"{a}-{b}"


def _t_mul(rng, pool):
    a, b = int(rng.integers(2, 15)), int(rng.integers(2, 15))
    obj, cont = pool(OBJECTS), pool(CONTAINERS)
    text = (f"Each {cont} holds {_fmt(a)} {obj} . There are {_fmt(b)} of these {cont}s . "
            f"How many {obj} are there in total ?")
    return text, f"{a}*{b}"


def _t_div(rng, pool):
    b = int(rng.integers(2, 12))
    a = b * int(rng.integers(2, 12))
    obj = pool(OBJECTS)
    text = (f"A pile of {_fmt(a)} {obj} is shared equally among {_fmt(b)} {pool(GROUPS)} . "
            f"How many {obj} does each get ?")
    return text, f"{a}/{b}"


def _t_div_rev(rng, pool):
    b = int(rng.integers(2, 12))
    a = b * int(rng.integers(2, 12))
    obj = pool(OBJECTS)
    text = (f"Split across {_fmt(b)} {pool(GROUPS)} , the festival prepared {_fmt(a)} {obj} . "
            f"How many {obj} per group ?")
    return text, f"{a}/{b}"


def _t_add_mul(rng, pool):
    a, b = int(rng.integers(2, 20)), int(rng.integers(2, 20))
    c = int(rng.integers(2, 10))
    o1, o2 = pool(OBJECTS), pool(OBJECTS)
    text = (f"{pool(NAMES)} bought {_fmt(a)} {o1} and {_fmt(b)} {o2} . "
            f"Every item costs {_fmt(c)} coins . How many coins were spent ?")
    return text, f"({a}+{b})*{c}"


def _t_sub_div(rng, pool):
    c = int(rng.integers(2, 10))
    quotient = int(rng.integers(2, 12))
    b = int(rng.integers(2, 30))
    a = b + c * quotient
    obj = pool(OBJECTS)
    text = (f"The orchard picked {_fmt(a)} {obj} but {_fmt(b)} were spoiled . "
            f"The rest were packed {_fmt(c)} to a {pool(CONTAINERS)} . How many were filled ?")
    return text, f"({a}-{b})/{c}"


def _t_mul_add(rng, pool):
    a, b = int(rng.integers(2, 12)), int(rng.integers(2, 12))
    c = int(rng.integers(2, 30))
    text = (f"The hall has {_fmt(a)} rows with {_fmt(b)} seats in each row , "
            f"plus {_fmt(c)} folding seats . How many seats in all ?")
    return text, f"{a}*{b}+{c}"


def _t_add_add(rng, pool):
    a, b, c = (int(rng.integers(2, 30)) for _ in range(3))
    obj = pool(OBJECTS)
    text = (f"On Monday {pool(NAMES)} found {_fmt(a)} {obj} , on Tuesday {_fmt(b)} {obj} "
            f"and on Wednesday {_fmt(c)} {obj} . How many {obj} over the three days ?")
    return text, f"{a}+{b}+{c}"


def _t_pair_mul(rng, pool):
    a, b = int(rng.integers(2, 12)), int(rng.integers(2, 12))
    c, d = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    text = (f"A farm keeps {_fmt(a)} hens and {_fmt(b)} ducks . Every bird lays {_fmt(c)} eggs "
            f"in spring and {_fmt(d)} eggs in summer . How many eggs does the farm collect ?")
    return text, f"({a}+{b})*({c}+{d})"


def _t_pair_add(rng, pool):
    a, b = int(rng.integers(2, 10)), int(rng.integers(2, 15))
    c, d = int(rng.integers(2, 10)), int(rng.integers(2, 15))
    o1, o2 = pool(OBJECTS), pool(OBJECTS)
    text = (f"The store sold {_fmt(a)} packs of {_fmt(b)} {o1} and also {_fmt(c)} packs "
            f"of {_fmt(d)} {o2} . How many single items were sold ?")
    return text, f"{a}*{b}+{c}*{d}"


def _t_sum_diff_mul(rng, pool):
    b = int(rng.integers(2, 12))
    a = b + int(rng.integers(1, 12))
    c, d = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    text = (f"A team scored {_fmt(a)} goals and conceded {_fmt(b)} . The lead counts "
            f"{_fmt(c)} points in the league and every match of the {_fmt(d)} remaining "
            f"matches needs that lead . How many points is that in total ?")
    return text, f"({a}-{b})*({c}+{d})"


TEMPLATES_1OP = [_t_add, _t_sub, _t_sub_rev, _t_mul, _t_div, _t_div_rev]
TEMPLATES_2OP = [_t_add_mul, _t_sub_div, _t_mul_add, _t_add_add]
TEMPLATES_3OP = [_t_pair_mul, _t_pair_add, _t_sum_diff_mul]


def _answer(equation: str):
    from fractions import Fraction

    from .arith import apply_op
    from .compiler import Leaf, parse_equation

    def ev(t):
        if isinstance(t, Leaf):
            return t.value
        out = apply_op(t.op, ev(t.left), ev(t.right))
        assert out is not None
        return out

    val = ev(parse_equation(equation))
    if isinstance(val, Fraction) and val.denominator == 1:
        return int(val)
    return float(val)


def _with_distractor(rng, pool, text: str) -> str:
    d = int(rng.integers(2, 50))
    extra = f"{pool(NAMES)} also watched {d} {pool(ANIMALS)} outside ."
    sentences = text.split(" . ")
    k = int(rng.integers(0, max(len(sentences) - 1, 1)))
    sentences.insert(k + 1, extra.rstrip(" ."))
    return " . ".join(sentences)


def generate(n: int, seed: int, op_counts: tuple[int, ...] = (1, 2, 3),
             distractor_rate: float = 0.0, id_prefix: str = "syn") -> list[dict]:
    """Deterministic corpus of raw {id, text, equation, answer} records."""
    rng = np.random.default_rng(seed)
    groups = {1: TEMPLATES_1OP, 2: TEMPLATES_2OP, 3: TEMPLATES_3OP}
    out = []
    for k in range(n):
        ops = op_counts[int(rng.integers(0, len(op_counts)))]
        template = groups[ops][int(rng.integers(0, len(groups[ops])))]
        pool = lambda xs: xs[int(rng.integers(0, len(xs)))]
        text, equation = template(rng, pool)
        if distractor_rate > 0 and rng.random() < distractor_rate:
            text = _with_distractor(rng, pool, text)
        out.append({"id": f"{id_prefix}-{k:04d}", "text": text,
                    "equation": equation, "answer": _answer(equation)})
    return out


def figure_problems() -> list[dict]:
    """The three worked examples used throughout the docs and tests."""
    return [
        {
            "id": "fig-division-sum",
            "text": ("In a division sum , the remainder is 8 and the divisor is 6 times "
                     "the quotient and is obtained by adding 3 to the thrice of the "
                     "remainder . What is the dividend ?"),
            "equation": "((8*3+3)*(8*3+3)/6)+8",
            "answer": 129.5,
        },
        {
            "id": "fig-typing-speed",
            "text": ("Xiaoli and Xiaoqiang typed a manuscript together . Their typing "
                     "speed ratio was 5:3 . Xiaoli typed 1,400 more words than "
                     "Xiaoqiang . How many words are there in this manuscript ?"),
            "equation": "1400/(5/(5+3)-3/(5+3))",
            "answer": 5600,
        },
        {
            "id": "fig-pear-trees",
            "text": ("There are 255 apple trees in the orchard . Planting another 35 "
                     "pear trees makes the number exactly the same as the apple trees . "
                     "If every 20 pear trees are planted in a row , how many rows can "
                     "be planted in total ?"),
            "equation": "(255-35)/20",
            "answer": 11,
        },
    ]


def _t_percent(rng, pool):
    a = int(rng.integers(2, 20)) * 100
    p = int(rng.integers(1, 8)) * 5
    text = (f"A warehouse stored {_fmt(a, comma=True)} {pool(OBJECTS)} and {p}% of them "
            f"were shipped . How many were shipped ?")
    return text, f"{a}*{p}%"


def _t_decimal(rng, pool):
    whole = int(rng.integers(2, 30))
    a = f"{whole}.5"
    # divisors that keep the answer a terminating decimal
    b = [2, 4, 5][int(rng.integers(0, 3))]
    text = (f"A tank holds {a} liters of water . It is poured into {b} equal jugs . "
            f"How many liters per jug ?")
    return text, f"{a}/{b}"


def _t_comma(rng, pool):
    b = int(rng.integers(2, 9))
    a = b * (int(rng.integers(200, 2000)))
    obj = pool(OBJECTS)
    text = (f"The press printed {_fmt(a, comma=True)} {obj} and bundled them into "
            f"{b} equal stacks . How many {obj} per stack ?")
    return text, f"{a}/{b}"


def _t_reuse(rng, pool):
    a, b = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    text = (f"A square garden plot measures {a} meters plus {b} meters on each side . "
            f"What is its area ?")
    return text, f"({a}+{b})*({a}+{b})"


def _t_deep(rng, pool):
    a, b = int(rng.integers(3, 9)), int(rng.integers(2, 9))
    c = int(rng.integers(2, 6))
    d = int(rng.integers(2, 6))
    e = int(rng.integers(2, a * b))  # fewer sold than baked, result stays positive
    text = (f"A bakery made {a} trays of {b} rolls , then {c} bakers each added {d} "
            f"rolls , and finally {e} rolls were sold . How many rolls remain ?")
    return text, f"{a}*{b}+{c}*{d}-{e}"


EXTRA_TEMPLATES = [_t_percent, _t_decimal, _t_comma, _t_reuse, _t_deep]


def roundtrip_corpus(n: int, seed: int) -> list[dict]:
    """Round-trip sample: the everyday templates plus surface-form variety
    (comma grouping, decimals, percents, sub-expression reuse, 4-5 op
    chains); answers are computed from the equations themselves."""
    rng = np.random.default_rng(seed)
    base = generate(n - n // 3, seed + 1, op_counts=(1, 2, 3), id_prefix="rt")
    out = list(base)
    k = len(out)
    while len(out) < n:
        template = EXTRA_TEMPLATES[int(rng.integers(0, len(EXTRA_TEMPLATES)))]
        pool = lambda xs: xs[int(rng.integers(0, len(xs)))]
        text, equation = template(rng, pool)
        out.append({"id": f"rt-{k:04d}", "text": text,
                    "equation": equation, "answer": _answer(equation)})
        k += 1
    return out


def write_jsonl(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
