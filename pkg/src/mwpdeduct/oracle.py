"""Independent brute-force references for the scorer, the search space and
the GRU cell, written as straight-line Python over lists of floats. Nothing
here touches the tensor engine; agreement between the two paths is what the
oracle-check command and the test suite verify."""

from __future__ import annotations

import math

from .arith import OpType, apply_op
from .constraints import RuleSet, admits_value

LN_EPS = 1e-5


def dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def matvec_cols(x, w):
    # x (len d_in) times w (d_in x d_out), column by column
    d_out = len(w[0])
    return [sum(x[r] * w[r][c] for r in range(len(x))) for c in range(d_out)]


def vadd(a, b):
    return [x + y for x, y in zip(a, b)]


def vmul(a, b):
    return [x * y for x, y in zip(a, b)]


def relu(a):
    return [x if x > 0.0 else 0.0 for x in a]


def sigmoid_one(x):
    # mirrors the engine's overflow-safe tanh form
    return 0.5 * (1.0 + math.tanh(0.5 * x))


def layer_norm(a):
    n = len(a)
    mean = sum(a) / n
    centered = [x - mean for x in a]
    var = sum(c * c for c in centered) / n
    inv = 1.0 / math.sqrt(var + LN_EPS)
    return [c * inv for c in centered]


def ffn(x, raw, pfx):
    h = vadd(matvec_cols(x, raw[f"{pfx}.w1"]), raw[f"{pfx}.b1"])
    h = relu(h)
    h = vadd(vmul(layer_norm(h), raw[f"{pfx}.ln.g"]), raw[f"{pfx}.ln.b"])
    return vadd(matvec_cols(h, raw[f"{pfx}.w2"]), raw[f"{pfx}.b2"])


def quantity_score(q, raw):
    return dot(raw["w_q"], ffn(q, raw, "qscore"))


def candidate_scores(values, vectors, raw, ops, rules: RuleSet):
    """Every admitted (i, j, op, tau) with its score parts, in the decoder's
    lexicographic order. `vectors` is a list of plain float lists."""
    n = len(values)
    sq = [quantity_score(v, raw) for v in vectors]
    out = []
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            for op in ops:
                value = apply_op(op, values[i - 1], values[j - 1])
                if not admits_value(rules, i, j, value):
                    continue
                e = ffn(vectors[i - 1] + vectors[j - 1] + vmul(vectors[i - 1], vectors[j - 1]),
                        raw, f"op.{op.symbol}")
                s_e = dot(raw["w_e"], e)
                t_out = ffn(e, raw, "term")
                for tau in (0, 1):
                    s_term = dot(raw["w_tau"][tau], t_out)
                    total = s_term + (s_e + (sq[i - 1] + sq[j - 1]))
                    out.append({"i": i, "j": j, "op": op, "tau": tau, "value": value,
                                "s_qi": sq[i - 1], "s_qj": sq[j - 1], "s_e": s_e,
                                "s_term": s_term, "total": total})
    return out


def brute_force_argmax(values, vectors, raw, ops, rules: RuleSet, force_stop=False):
    """First maximum in lexicographic order, the decoder's tie rule."""
    cands = candidate_scores(values, vectors, raw, ops, rules)
    if force_stop:
        cands = [c for c in cands if c["tau"] == 1]
    if not cands:
        return None
    best = cands[0]
    for c in cands[1:]:
        if c["total"] > best["total"]:
            best = c
    return best


def count_space(m: int, n_ops: int, t: int, same_pair_forbidden: bool = False,
                include_tau: bool = False) -> int:
    """Closed-form candidate count at step t for an m-quantity problem,
    assuming no value-dependent filtering applies."""
    n = m + t - 1
    pairs = n * (n - 1) // 2 if same_pair_forbidden else n * (n + 1) // 2
    return pairs * n_ops * (2 if include_tau else 1)


def enumerate_space(m: int, ops, t: int, same_pair_forbidden: bool = False,
                    include_tau: bool = False) -> int:
    """Literal enumeration cross-checking count_space."""
    n = m + t - 1
    count = 0
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            if same_pair_forbidden and i == j:
                continue
            for _ in ops:
                count += 2 if include_tau else 1
    return count


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """Reference GRU cell, gate layout [reset | update | candidate]."""
    d = len(h)
    gi = vadd(matvec_cols(x, w_ih), b_ih)
    gh = vadd(matvec_cols(h, w_hh), b_hh)
    r = [sigmoid_one(gi[k] + gh[k]) for k in range(d)]
    z = [sigmoid_one(gi[d + k] + gh[d + k]) for k in range(d)]
    n = [math.tanh(gi[2 * d + k] + r[k] * gh[2 * d + k]) for k in range(d)]
    return [(1.0 - z[k]) * n[k] + z[k] * h[k] for k in range(d)]
