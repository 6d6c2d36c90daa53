"""Teacher-forced training loop: seeded shuffling, gradient accumulation
over batches, Adam with decoupled weight decay, periodic evaluation, best
checkpoint by dev value accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arith import values_close
from .constraints import RuleSet
from .encoder import Runtime
from .ingest import ProblemInstance
from .reasoner import DecodeError, Model, Prediction, TrainingSkip
from .tensor import AdamState, adam_step


@dataclass
class TrainSettings:
    lr: float = 2e-5
    batch_size: int = 30
    weight_decay: float = 0.01
    epochs: int = 30
    seed: int = 0
    t_max: int = 10
    early_stop_acc: float | None = None
    eval_every: int = 1
    log: bool = False


def predict_dataset(instances: list[ProblemInstance], model: Model, rules: RuleSet,
                    t_max: int, topk: int = 5, workers: int = 1) -> list[Prediction]:
    if workers > 1:
        return _predict_parallel(instances, model, rules, t_max, topk, workers)
    out = []
    for inst in instances:
        try:
            out.append(model.decode(inst, rules, t_max, topk=topk))
        except DecodeError as e:
            out.append(Prediction(inst.id, [], [], None, error=str(e)))
    return out


def _predict_parallel(instances, model, rules, t_max, topk, workers):
    from concurrent.futures import ProcessPoolExecutor
    chunks = [instances[k::workers] for k in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_predict_chunk, [(c, model, rules, t_max, topk) for c in chunks]))
    by_id = {p.id: p for part in parts for p in part}
    return [by_id[inst.id] for inst in instances]


def _predict_chunk(args):
    instances, model, rules, t_max, topk = args
    return predict_dataset(instances, model, rules, t_max, topk, workers=1)


def value_accuracy(predictions: list[Prediction], instances: list[ProblemInstance]) -> float:
    if not instances:
        return 0.0
    ok = 0
    for pred, inst in zip(predictions, instances):
        if pred.final_value is not None and values_close(pred.final_value, inst.gold_answer):
            ok += 1
    return ok / len(instances)


def train(train_set: list[ProblemInstance], dev_set: list[ProblemInstance] | None,
          model: Model, rules: RuleSet, settings: TrainSettings) -> list[dict]:
    """Returns the per-epoch metrics log; the model is left at the best
    parameters seen (by dev value accuracy, train accuracy if no dev set)."""
    usable = [inst for inst in train_set if inst.gold_program is not None]
    n_flagged = len(train_set) - len(usable)
    shuffle_rng = np.random.default_rng(settings.seed)
    dropout_rng = np.random.default_rng(settings.seed + 1)
    adam = AdamState(lr=settings.lr, weight_decay=settings.weight_decay)
    metrics: list[dict] = []
    skipped_ids: set[str] = set()
    best_acc = -1.0
    best_params = model.store.clone_data()
    eval_on = dev_set if dev_set else usable

    for epoch in range(1, settings.epochs + 1):
        order = shuffle_rng.permutation(len(usable))
        epoch_loss = 0.0
        n_contrib = 0
        for lo in range(0, len(order), settings.batch_size):
            batch = order[lo:lo + settings.batch_size]
            model.store.zero_grads()
            n_ok = 0
            for idx in batch:
                inst = usable[int(idx)]
                try:
                    with T.tape() as tp:
                        loss = model.loss(inst, rules, Runtime(train=True, rng=dropout_rng))
                        loss_val = loss.item()
                        T.backward(loss, tp)
                    n_ok += 1
                    epoch_loss += loss_val
                except TrainingSkip as e:
                    if e.instance_id not in skipped_ids:
                        skipped_ids.add(e.instance_id)
                        if settings.log:
                            print(f"warning: skipping {e}")
            if n_ok:
                model.store.scale_grads(1.0 / n_ok)
                adam_step(model.store, adam)
                n_contrib += n_ok
        # wall time deliberately left out: the log is a determinism artifact
        record = {
            "epoch": epoch,
            "loss": round(epoch_loss / max(n_contrib, 1), 10),
            "skipped": len(skipped_ids),
            "flagged": n_flagged,
        }
        if epoch % settings.eval_every == 0 or epoch == settings.epochs:
            preds = predict_dataset(eval_on, model, rules, settings.t_max)
            acc = value_accuracy(preds, eval_on)
            record["dev_value_accuracy" if dev_set else "train_value_accuracy"] = round(acc, 6)
            if acc > best_acc:
                best_acc = acc
                best_params = model.store.clone_data()
            metrics.append(record)
            if settings.log:
                print(f"epoch {epoch}: loss {record['loss']:.4f} acc {acc:.3f}")
            if settings.early_stop_acc is not None and acc >= settings.early_stop_acc:
                break
        else:
            metrics.append(record)
            if settings.log:
                print(f"epoch {epoch}: loss {record['loss']:.4f}")
    model.store.load_data(best_params)
    return metrics
