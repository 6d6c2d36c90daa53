"""The deductive reasoner.

At each step every (q_i, q_j, op) candidate over the live quantity list is
scored together with a stop label, the winner becomes a new quantity, and
all pre-existing quantity vectors are updated (rationalized) with the new
expression vector. Training teacher-forces the gold step sequence under a
max-margin loss; inference decodes greedily up to a step cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .arith import OpType, Value, apply_op, format_value, to_float
from .compiler import GoldProgram, Step
from .constraints import RuleSet, admits_value
from .encoder import (
    EncoderConfig,
    FrozenEmbeddings,
    Runtime,
    Vocab,
    encode,
    gru_cell,
    init_encoder_params,
    multi_head_attention,
)
from .errors import RuntimeFailure
from .ingest import ProblemInstance
from .tensor import AdamState, ParamStore, Tensor, adam_step

RATIONALIZERS = ("gru", "self-attention", "none")


class DecodeError(RuntimeFailure):
    pass


class TrainingSkip(Exception):
    """Gold step infeasible under the active constraints; skip the instance."""

    def __init__(self, instance_id: str, reason: str):
        super().__init__(f"{instance_id}: {reason}")
        self.instance_id = instance_id


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    ops: tuple[OpType, ...] = (OpType.ADD, OpType.SUB, OpType.SUB_REV,
                               OpType.MUL, OpType.DIV, OpType.DIV_REV)
    rationalizer: str = "gru"
    dropout: float = 0.1
    rat_heads: int = 4
    l2_in_loss: bool = False
    l2_coef: float = 0.01

    def __post_init__(self):
        if self.rationalizer not in RATIONALIZERS:
            raise RuntimeFailure(f"unknown rationalizer {self.rationalizer!r}")
        # candidate enumeration relies on ops being in enum (tie-break) order
        ordered = tuple(sorted(set(self.ops), key=lambda o: list(OpType).index(o)))
        object.__setattr__(self, "ops", ordered)

    def to_json(self) -> dict:
        return {"dim": self.dim, "ops": [o.symbol for o in self.ops],
                "rationalizer": self.rationalizer, "dropout": self.dropout,
                "rat_heads": self.rat_heads, "l2_in_loss": self.l2_in_loss,
                "l2_coef": self.l2_coef}

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        from .arith import OP_BY_SYMBOL
        return ModelConfig(dim=obj["dim"], ops=tuple(OP_BY_SYMBOL[s] for s in obj["ops"]),
                           rationalizer=obj["rationalizer"], dropout=obj["dropout"],
                           rat_heads=obj["rat_heads"], l2_in_loss=obj["l2_in_loss"],
                           l2_coef=obj["l2_coef"])


@dataclass
class Candidate:
    """One scored (i, j, op, tau) proposal. total is always the exact float
    sum of the four score components in fixed order."""

    i: int
    j: int
    op: OpType
    tau: int
    value: Value
    s_qi: float
    s_qj: float
    s_e: float
    s_term: float
    total: float
    pair_idx: int
    prob: float | None = None

    def describe(self, values: list[Value]) -> str:
        display = {"+": "+", "-": "-", "*": "×", "/": "÷", "**": "**"}
        a, b = values[self.i - 1], values[self.j - 1]
        left, right = (b, a) if self.op.is_rev else (a, b)
        sym = display[self.op.base.symbol]
        return f"{format_value(left)} {sym} {format_value(right)} = {format_value(self.value)}"


@dataclass
class DeductionState:
    values: list[Value]
    vectors: Tensor  # (|Q^(0)| + t, dim)
    history: list[Step] = field(default_factory=list)

    @property
    def t(self) -> int:
        return len(self.history)

    def append(self, value: Value, e_row: Tensor, step: Step) -> None:
        self.values.append(value)
        self.vectors = T.vconcat(self.vectors, e_row)
        self.history.append(step)


@dataclass
class StepScores:
    meta: list[Candidate]          # admitted candidates, lexicographic order
    scores: Tensor                 # (len(meta),)
    e_mats: dict[str, Tensor]      # op symbol -> (n_pairs, dim)
    pairs: list[tuple[int, int]]


class Model:
    def __init__(self, cfg: ModelConfig, enc_cfg: EncoderConfig, vocab: Vocab | None,
                 seed: int):
        if enc_cfg.dim != cfg.dim:
            raise RuntimeFailure(f"encoder dim {enc_cfg.dim} != reasoner dim {cfg.dim}")
        self.cfg = cfg
        self.enc_cfg = enc_cfg
        self.vocab = vocab
        self.seed = seed
        self.frozen: FrozenEmbeddings | None = None
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        init_encoder_params(self.store, enc_cfg, rng)
        self._init_reasoner_params(rng)

    def _init_reasoner_params(self, rng: np.random.Generator) -> None:
        s, d = self.store, self.cfg.dim
        for op in self.cfg.ops:
            self._init_ffn(f"op.{op.symbol}", 3 * d, d, rng)
        self._init_ffn("qscore", d, d, rng)
        s.new("w_q", (d,), rng)
        s.new("w_e", (d,), rng)
        self._init_ffn("term", d, d, rng)
        s.new("w_tau", (2, d), rng)
        if self.cfg.rationalizer == "gru":
            s.new("rat.w_ih", (d, 3 * d), rng)
            s.new("rat.w_hh", (d, 3 * d), rng)
            s.new("rat.b_ih", (3 * d,), rng, decay=False)
            s.new("rat.b_hh", (3 * d,), rng, decay=False)
        elif self.cfg.rationalizer == "self-attention":
            for w in ("wq", "wk", "wv", "wo"):
                s.new(f"rat.attn.{w}", (d, d), rng)

    def _init_ffn(self, pfx: str, d_in: int, d_out: int, rng) -> None:
        # biases get the same uniform fan-in init as weights: with all-zero
        # biases a relu-dead row collapses the expression vector to exactly
        # zero, parking the terminator FFN on a layer-norm kink
        s = self.store
        s.new(f"{pfx}.w1", (d_in, d_out), rng)
        s.new(f"{pfx}.b1", (d_out,), rng, decay=False)
        s.new(f"{pfx}.ln.g", (d_out,), rng, init="ones", decay=False)
        s.new(f"{pfx}.ln.b", (d_out,), rng, init="zeros", decay=False)
        s.new(f"{pfx}.w2", (d_out, d_out), rng)
        s.new(f"{pfx}.b2", (d_out,), rng, decay=False)

    def ffn(self, x: Tensor, pfx: str, rt: Runtime) -> Tensor:
        """linear -> ReLU -> layer norm -> dropout -> linear."""
        s = self.store
        h = T.relu(T.add(T.matmul(x, s[f"{pfx}.w1"]), s[f"{pfx}.b1"]))
        h = T.layer_norm(h)
        if h.data.ndim == 2:
            h = T.add(T.mul_rows(h, s[f"{pfx}.ln.g"]), s[f"{pfx}.ln.b"])
        else:
            h = T.add(T.mul(h, s[f"{pfx}.ln.g"]), s[f"{pfx}.ln.b"])
        h = T.dropout(h, self.cfg.dropout, rt.train, rt.rng)
        return T.add(T.matmul(h, s[f"{pfx}.w2"]), s[f"{pfx}.b2"])

    # ------------------------------------------------------------ forward

    def init_state(self, instance: ProblemInstance, rt: Runtime) -> DeductionState:
        vectors = encode(instance, self.vocab, self.store, self.enc_cfg, rt, self.frozen)
        return DeductionState(values=list(instance.q0_values()), vectors=vectors)

    def expression_representation(self, q_i: Tensor, q_j: Tensor, op: OpType,
                                  rt: Runtime) -> Tensor:
        """FFN_op applied to [q_i, q_j, q_i * q_j] (single pair form)."""
        if op not in self.cfg.ops:
            raise RuntimeFailure(f"operation {op.symbol!r} is not enabled")
        x = T.concat_vecs([q_i, q_j, T.mul(q_i, q_j)])
        return self.ffn(x, f"op.{op.symbol}", rt)

    def step_scores(self, state: DeductionState, rules: RuleSet, rt: Runtime) -> StepScores:
        n = len(state.values)
        pairs = [(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]
        i0 = np.array([p[0] - 1 for p in pairs], dtype=np.intp)
        j0 = np.array([p[1] - 1 for p in pairs], dtype=np.intp)

        sq_all = T.matmul(self.ffn(state.vectors, "qscore", rt), self.store["w_q"])  # (n,)
        qi = T.gather_rows(state.vectors, i0)
        qj = T.gather_rows(state.vectors, j0)
        x = T.hconcat([qi, qj, T.mul(qi, qj)])  # (P, 3d)
        sq_pair = T.add(T.gather(sq_all, i0), T.gather(sq_all, j0))  # (P,)

        n_pairs, n_ops = len(pairs), len(self.cfg.ops)
        e_mats: dict[str, Tensor] = {}
        blocks: list[Tensor] = []
        se_data: list[np.ndarray] = []
        g_data: list[np.ndarray] = []
        for op in self.cfg.ops:
            e_op = self.ffn(x, f"op.{op.symbol}", rt)                      # (P, d)
            se_op = T.matmul(e_op, self.store["w_e"])                      # (P,)
            g_op = T.matmul(self.ffn(e_op, "term", rt),
                            T.transpose(self.store["w_tau"]))              # (P, 2)
            base = T.add(se_op, sq_pair)                                   # (P,)
            block = T.add(g_op, T.matmul(T.reshape(base, (n_pairs, 1)),
                                         Tensor(np.ones((1, 2)))))         # (P, 2)
            blocks.append(T.flatten(block))
            e_mats[op.symbol] = e_op
            se_data.append(se_op.data)
            g_data.append(g_op.data)
        flat = T.concat_vecs(blocks)  # op-major layout: [o, p, tau]

        meta: list[Candidate] = []
        perm: list[int] = []
        sq_np = sq_all.data
        for p, (i, j) in enumerate(pairs):
            for o, op in enumerate(self.cfg.ops):
                value = apply_op(op, state.values[i - 1], state.values[j - 1])
                if not admits_value(rules, i, j, value):
                    continue
                s_qi = float(sq_np[i - 1])
                s_qj = float(sq_np[j - 1])
                s_e = float(se_data[o][p])
                for tau in (0, 1):
                    s_term = float(g_data[o][p, tau])
                    total = s_term + (s_e + (s_qi + s_qj))
                    meta.append(Candidate(i, j, op, tau, value, s_qi, s_qj,
                                          s_e, s_term, total, pair_idx=p))
                    perm.append(o * (n_pairs * 2) + p * 2 + tau)
        scores = T.gather(flat, np.array(perm, dtype=np.intp)) if perm \
            else Tensor(np.zeros(0))
        return StepScores(meta=meta, scores=scores, e_mats=e_mats, pairs=pairs)

    def score_candidate(self, state: DeductionState, i: int, j: int, op: OpType,
                        tau: int, rules: RuleSet, rt: Runtime) -> Candidate:
        """Score one candidate (convenience path; decoding scores all at once)."""
        ss = self.step_scores(state, rules, rt)
        for cand in ss.meta:
            if (cand.i, cand.j, cand.op, cand.tau) == (i, j, op, tau):
                return cand
        raise DecodeError(f"candidate ({i},{j},{op.symbol},tau={tau}) is filtered out")

    def enumerate_candidates(self, state: DeductionState, rules: RuleSet,
                             rt: Runtime) -> list[Candidate]:
        ss = self.step_scores(state, rules, rt)
        if not ss.meta:
            raise DecodeError("no feasible step: every candidate was filtered out")
        return ss.meta

    def greedy_step(self, state: DeductionState, rules: RuleSet, rt: Runtime,
                    force_stop: bool = False) -> tuple[Candidate, StepScores]:
        """Pick the arg-max candidate (ties: lower i, lower j, op order,
        tau=0 first -- the enumeration order) and extend the state."""
        ss = self.step_scores(state, rules, rt)
        if not ss.meta:
            raise DecodeError("no feasible step: every candidate was filtered out")
        probs = _softmax_np(ss.scores.data)
        idxs = [k for k, c in enumerate(ss.meta) if c.tau == 1] if force_stop \
            else list(range(len(ss.meta)))
        best_score = max(ss.scores.data[k] for k in idxs)
        best = next(k for k in idxs if ss.scores.data[k] == best_score)
        chosen = ss.meta[best]
        for k, cand in enumerate(ss.meta):
            cand.prob = float(probs[k])
        e_row = T.row(ss.e_mats[chosen.op.symbol], chosen.pair_idx)
        state.append(chosen.value, e_row, Step(chosen.i, chosen.j, chosen.op))
        return chosen, ss

    def rationalize(self, state: DeductionState, e: Tensor, rt: Runtime) -> None:
        """Update every pre-existing quantity vector with the newest
        expression vector; the quantity created this step keeps e itself."""
        variant = self.cfg.rationalizer
        if variant == "none":
            return
        n = state.vectors.shape[0]
        if n < 2:
            return
        old = T.gather_rows(state.vectors, np.arange(n - 1, dtype=np.intp))
        if variant == "gru":
            e_rows = T.matmul(Tensor(np.ones((n - 1, 1))), T.reshape(e, (1, self.cfg.dim)))
            new_rows = gru_cell(old, e_rows, self.store["rat.w_ih"], self.store["rat.w_hh"],
                                self.store["rat.b_ih"], self.store["rat.b_hh"])
        else:
            updated = []
            for k in range(n - 1):
                two = T.stack_rows([T.row(old, k), e])
                out = multi_head_attention(two, self.store, "rat.attn", self.cfg.rat_heads)
                updated.append(T.row(out, 0))
            new_rows = T.stack_rows(updated)
        state.vectors = T.vconcat(new_rows, T.row(state.vectors, n - 1))

    # ------------------------------------------------------------- decode

    def decode(self, instance: ProblemInstance, rules: RuleSet, t_max: int,
               rt: Runtime | None = None, topk: int = 5) -> "Prediction":
        rt = rt or Runtime(train=False)
        if instance.n_text == 0:
            raise DecodeError(f"instance {instance.id}: no quantities in the text")
        state = self.init_state(instance, rt)
        steps: list[Candidate] = []
        tables: list[list[Candidate]] = []
        try:
            for t in range(1, t_max + 1):
                chosen, ss = self.greedy_step(state, rules, rt, force_stop=(t == t_max))
                ranked = sorted(ss.meta, key=lambda c: -(c.prob or 0.0))
                tables.append(ranked[:topk])
                steps.append(chosen)
                if chosen.tau == 1:
                    break
                self.rationalize(state, T.row(state.vectors, state.vectors.shape[0] - 1), rt)
        except DecodeError as e:
            return Prediction(instance.id, steps, tables, None, error=str(e))
        return Prediction(instance.id, steps, tables, steps[-1].value)

    # --------------------------------------------------------------- loss

    def loss(self, instance: ProblemInstance, rules: RuleSet, rt: Runtime) -> Tensor:
        """Teacher-forced margin loss, Sum_t [max over candidates - gold]."""
        gold = instance.gold_program
        if gold is None:
            raise TrainingSkip(instance.id, instance.flag or "no gold program")
        state = self.init_state(instance, rt)
        total: Tensor | None = None
        n_steps = len(gold.steps)
        for t, step in enumerate(gold.steps, start=1):
            ss = self.step_scores(state, rules, rt)
            tau_star = 1 if t == n_steps else 0
            gold_pos = None
            for k, cand in enumerate(ss.meta):
                if (cand.i, cand.j, cand.op, cand.tau) == (step.i, step.j, step.op, tau_star):
                    gold_pos = k
                    break
            if gold_pos is None:
                raise TrainingSkip(
                    instance.id,
                    f"gold step {t} ({step.i},{step.j},{step.op.symbol}) "
                    "is infeasible under the active constraints")
            step_loss = T.sub(T.vec_max(ss.scores), T.pick(ss.scores, gold_pos))
            total = step_loss if total is None else T.add(total, step_loss)
            e_row = T.row(ss.e_mats[step.op.symbol], ss.pairs.index((step.i, step.j)))
            value = apply_op(step.op, state.values[step.i - 1], state.values[step.j - 1])
            state.append(value, e_row, step)
            if t < n_steps:
                self.rationalize(state, e_row, rt)
        if self.cfg.l2_in_loss:
            reg: Tensor | None = None
            for name, p in self.store.params.items():
                if self.store.decay.get(name, True):
                    sq = T.tsum(T.mul(T.flatten(p) if p.data.ndim > 1 else p,
                                      T.flatten(p) if p.data.ndim > 1 else p))
                    reg = sq if reg is None else T.add(reg, sq)
            total = T.add(total, T.scale(reg, self.cfg.l2_coef))
        return total

    # ------------------------------------------------------- persistence

    def save(self, prefix: str, extra_meta: dict | None = None) -> None:
        from .tensor import save_checkpoint
        meta = {
            "model_config": self.cfg.to_json(),
            "encoder_config": vars(self.enc_cfg).copy(),
            "vocab": self.vocab.to_json() if self.vocab else None,
            "seed": self.seed,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(self.store, prefix, meta)

    @classmethod
    def load(cls, prefix: str) -> "Model":
        import json as _json

        from .tensor import load_checkpoint
        with open(prefix + ".json", encoding="utf-8") as f:
            manifest = _json.load(f)
        cfg = ModelConfig.from_json(manifest["model_config"])
        enc_cfg = EncoderConfig(**manifest["encoder_config"])
        vocab = Vocab.from_json(manifest["vocab"]) if manifest.get("vocab") else None
        model = cls(cfg, enc_cfg, vocab, seed=manifest.get("seed", 0))
        load_checkpoint(model.store, prefix)
        return model


@dataclass
class Prediction:
    id: str
    steps: list[Candidate]
    prob_tables: list[list[Candidate]]
    final_value: Value | None
    error: str | None = None

    def program(self) -> GoldProgram | None:
        if self.error or not self.steps:
            return None
        return GoldProgram(tuple(Step(c.i, c.j, c.op) for c in self.steps))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "steps": [[c.i, c.j, c.op.symbol, c.tau] for c in self.steps],
            "step_values": [format_value(c.value) for c in self.steps],
            "value": to_float(self.final_value) if self.final_value is not None else None,
            "value_exact": format_value(self.final_value) if self.final_value is not None else None,
            "probabilities": [
                [[c.i, c.j, c.op.symbol, c.tau, round(c.prob or 0.0, 6)] for c in table]
                for table in self.prob_tables
            ],
            "error": self.error,
        }


def _softmax_np(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return x
    e = np.exp(x - x.max())
    return e / e.sum()
