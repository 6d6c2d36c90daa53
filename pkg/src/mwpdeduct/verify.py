"""Engine-vs-oracle agreement harness shared by the oracle-check command
and the acceptance suite."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .constraints import PROFILES, RuleSet, admits_value
from .encoder import EncoderConfig, Runtime, Vocab
from .reasoner import DeductionState, Model, ModelConfig
from .tensor import Tensor


def _tiny_model(seed: int, dim: int = 8) -> Model:
    cfg = ModelConfig(dim=dim, dropout=0.0, rationalizer="none")
    enc = EncoderConfig(vocab_size=4, dim=dim, n_constants=1)
    return Model(cfg, enc, Vocab({"<unk>": 0}), seed=seed)


def _random_state(rng: np.random.Generator, m: int, dim: int) -> DeductionState:
    values = [Fraction(int(rng.integers(1, 13))) for _ in range(m)]
    vectors = Tensor(rng.normal(size=(m, dim)))
    return DeductionState(values=values, vectors=vectors)


def agreement_trials(n_trials: int, seed: int, dim: int = 8,
                     max_quantities: int = 4) -> tuple[int, int]:
    """Run greedy_step against the brute-force argmax on random parameter
    draws and random states across every rule profile; returns
    (disagreements, trials run)."""
    rng = np.random.default_rng(seed)
    rt = Runtime(train=False)
    profiles = list(PROFILES.values())
    disagreements = 0
    ran = 0
    trial = 0
    while ran < n_trials:
        model = _tiny_model(seed * 1_000_003 + trial, dim)
        rules = profiles[trial % len(profiles)]
        m = int(rng.integers(2, max_quantities + 1))
        state = _random_state(rng, m, dim)
        trial += 1
        if trial % 2 == 0:
            # advance one step so half the trials test a grown state
            try:
                model.greedy_step(state, rules, rt)
            except Exception:
                continue
        raw = model.store.export_raw()
        from . import oracle
        expected = oracle.brute_force_argmax(
            list(state.values), [list(r) for r in state.vectors.data],
            raw, model.cfg.ops, rules)
        if expected is None:
            continue
        chosen, _ = model.greedy_step(state, rules, rt)
        ran += 1
        if (chosen.i, chosen.j, chosen.op, chosen.tau) != (
                expected["i"], expected["j"], expected["op"], expected["tau"]):
            disagreements += 1
    return disagreements, ran
