"""Command-line entry point.

Subcommands: preprocess, train, eval, solve, explain, oracle-check.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig, code_version, load_config
from .encoder import EncoderConfig, Vocab, load_external_embeddings
from .errors import ConfigError, DataError, RuntimeFailure
from .evaluator import evaluate_dataset, write_report
from .ingest import (
    ConstantTable,
    DEFAULT_CONSTANTS,
    ProblemInstance,
    attach_constants,
    compile_gold,
    load_dataset,
    read_instances,
    tokenize_and_extract,
    write_instances,
)
from .reasoner import Model, ModelConfig, Prediction
from .training import TrainSettings, predict_dataset, train, value_accuracy


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    for f in dataclasses.fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)


def _cfg_from_args(args, require_seed=True) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}
    return load_config(args.config, overrides, require_seed=require_seed)


def _constants(cfg: RunConfig) -> ConstantTable:
    if cfg.constants_path:
        return ConstantTable.from_file(cfg.constants_path)
    return DEFAULT_CONSTANTS


def _prepare_run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(cfg.to_json(), f, indent=1)
    with open(out / "run_meta.json", "w", encoding="utf-8") as f:
        json.dump({"seed": cfg.seed, "config_hash": cfg.config_hash(),
                   "code_version": code_version()}, f, indent=1)
    return out


def _load_model(cfg: RunConfig) -> Model:
    if not cfg.checkpoint:
        raise ConfigError("this command needs --checkpoint")
    for suffix in (".json", ".bin"):
        if not Path(cfg.checkpoint + suffix).exists():
            raise ConfigError(f"checkpoint file missing: {cfg.checkpoint + suffix}")
    model = Model.load(cfg.checkpoint)
    if model.enc_cfg.mode == "frozen":
        if not cfg.embeddings_prefix:
            raise ConfigError("frozen-encoder checkpoint needs --embeddings-prefix")
        model.frozen = load_external_embeddings(cfg.embeddings_prefix, model.enc_cfg.dim)
    return model


def cmd_preprocess(args) -> int:
    cfg = _cfg_from_args(args)
    if not cfg.raw_path:
        raise ConfigError("preprocess needs --raw-path")
    out = _prepare_run_dir(cfg)
    instances = load_dataset(cfg.raw_path, _constants(cfg), cfg.allow_pow_rev)
    write_instances(instances, out / "instances.jsonl")
    flagged = [{"id": i.id, "reason": i.flag} for i in instances if i.flag]
    report = {"total": len(instances), "compiled": len(instances) - len(flagged),
              "flagged": flagged}
    with open(out / "preprocess_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1)
    print(f"preprocess: {report['compiled']}/{report['total']} instances compiled "
          f"-> {out / 'instances.jsonl'}")
    for entry in flagged:
        print(f"  flagged {entry['id']}: {entry['reason']}")
    return 0


def _build_model(cfg: RunConfig, train_instances: list[ProblemInstance]) -> Model:
    vocab = Vocab.build(train_instances)
    n_constants = len(train_instances[0].constants) if train_instances else 0
    mcfg = ModelConfig(dim=cfg.dim, ops=cfg.op_types(), rationalizer=cfg.rationalizer,
                       dropout=cfg.dropout, l2_in_loss=cfg.l2_in_loss,
                       l2_coef=cfg.weight_decay)
    ecfg = EncoderConfig(vocab_size=len(vocab), dim=cfg.dim, kind=cfg.encoder_kind,
                         layers=cfg.encoder_layers, heads=cfg.encoder_heads,
                         mode="frozen" if cfg.encoder_mode == "frozen" else "trainable",
                         n_constants=n_constants, dropout=cfg.dropout)
    model = Model(mcfg, ecfg, vocab, seed=cfg.seed)
    if ecfg.mode == "frozen":
        if not cfg.embeddings_prefix:
            raise ConfigError("encoder_mode=frozen needs embeddings_prefix")
        model.frozen = load_external_embeddings(cfg.embeddings_prefix, cfg.dim)
    return model


def cmd_train(args) -> int:
    cfg = _cfg_from_args(args)
    if not cfg.train_path:
        raise ConfigError("train needs --train-path (preprocessed instances)")
    out = _prepare_run_dir(cfg)
    train_set = read_instances(cfg.train_path)
    if not train_set:
        raise DataError(f"training set {cfg.train_path} is empty")
    dev_set = read_instances(cfg.dev_path) if cfg.dev_path else None
    model = _build_model(cfg, train_set)
    settings = TrainSettings(lr=cfg.lr, batch_size=cfg.batch_size,
                             weight_decay=cfg.weight_decay, epochs=cfg.epochs,
                             seed=cfg.seed, t_max=cfg.t_max,
                             early_stop_acc=cfg.early_stop_acc,
                             eval_every=cfg.eval_every, log=True)
    metrics = train(train_set, dev_set, model, cfg.rules(), settings)
    model.save(str(out / "checkpoint"),
               extra_meta={"config_hash": cfg.config_hash(), "code_version": code_version()})
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=1)
    print(f"train: checkpoint and metrics written to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _cfg_from_args(args)
    if not cfg.data_path:
        raise ConfigError("eval needs --data-path (preprocessed instances)")
    out = _prepare_run_dir(cfg)
    model = _load_model(cfg)
    instances = read_instances(cfg.data_path)
    if not instances:
        raise DataError(f"evaluation set {cfg.data_path} is empty")
    preds = predict_dataset(instances, model, cfg.rules(), cfg.t_max,
                            topk=cfg.topk, workers=cfg.workers)
    report = evaluate_dataset(preds, instances)
    write_report(report, str(out / "eval_report.json"), str(out / "eval_report.txt"))
    print(report.text_table())
    return 0


def _read_raw_problems(path: str, constants: ConstantTable,
                       allow_pow_rev: bool) -> list[ProblemInstance]:
    from fractions import Fraction
    stream = sys.stdin if path == "-" else open(path, encoding="utf-8")
    instances = []
    try:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: malformed JSON: {e}") from e
            if "text" not in obj:
                raise DataError(f"line {lineno}: missing field 'text'")
            tokens, mentions = tokenize_and_extract(obj["text"])
            q0 = attach_constants(mentions, constants)
            answer = Fraction(str(obj["answer"])) if "answer" in obj else Fraction(0)
            program, flag = (None, None)
            if obj.get("equation"):
                program, flag = compile_gold(obj["equation"], q0, answer, allow_pow_rev)
            instances.append(ProblemInstance(
                id=str(obj.get("id", lineno)), tokens=tokens, quantities=mentions,
                constants=constants, gold_answer=answer,
                equation=obj.get("equation", ""), gold_program=program, flag=flag))
    finally:
        if stream is not sys.stdin:
            stream.close()
    return instances


def cmd_solve(args) -> int:
    cfg = _cfg_from_args(args)
    model = _load_model(cfg)
    source = args.input or cfg.raw_path or cfg.data_path
    if not source:
        raise ConfigError("solve needs --input (file, '-' for stdin) or a data path")
    if source != "-" and source == cfg.data_path:
        instances = read_instances(source)
    else:
        instances = _read_raw_problems(source, _constants(cfg), cfg.allow_pow_rev)
    preds = predict_dataset(instances, model, cfg.rules(), cfg.t_max,
                            topk=cfg.topk, workers=cfg.workers)
    sink = sys.stdout if not args.out else open(args.out, "w", encoding="utf-8")
    n_err = 0
    try:
        for pred in preds:
            sink.write(json.dumps(pred.to_json(), ensure_ascii=False) + "\n")
            if pred.error:
                n_err += 1
                print(f"error: {pred.id}: {pred.error}", file=sys.stderr)
    finally:
        if sink is not sys.stdout:
            sink.close()
    if preds and n_err == len(preds):
        raise DataError("every input problem failed to decode")
    return 0


def format_trace(pred: Prediction, instance: ProblemInstance, topk: int) -> str:
    lines = [f"problem {instance.id}"]
    values = list(instance.q0_values())
    for t, (step, table) in enumerate(zip(pred.steps, pred.prob_tables), start=1):
        stop = "  [stop]" if step.tau == 1 else ""
        lines.append(f" step {t}: {step.describe(values)}{stop}")
        for cand in table[:topk]:
            mark = "  <chosen>" if (cand.i, cand.j, cand.op, cand.tau) == \
                (step.i, step.j, step.op, step.tau) else ""
            stop_tag = " stop" if cand.tau == 1 else ""
            lines.append(f"   p={cand.prob:.4f}  {cand.describe(values)}{stop_tag}{mark}")
        values.append(step.value)
    if pred.error:
        lines.append(f" error: {pred.error}")
    else:
        from .arith import format_value
        lines.append(f"answer: {format_value(pred.final_value)}")
    return "\n".join(lines)


def cmd_explain(args) -> int:
    cfg = _cfg_from_args(args)
    if not cfg.data_path:
        raise ConfigError("explain needs --data-path (preprocessed instances)")
    model = _load_model(cfg)
    instances = read_instances(cfg.data_path)
    match = [i for i in instances if i.id == args.id]
    if not match:
        raise DataError(f"no instance with id {args.id!r} in {cfg.data_path}")
    inst = match[0]
    pred = model.decode(inst, cfg.rules(), cfg.t_max, topk=max(cfg.topk, args.topk or 0))
    print(format_trace(pred, inst, args.topk or cfg.topk))
    return 0


def cmd_oracle_check(args) -> int:
    cfg = _cfg_from_args(args)
    from .verify import agreement_trials
    bad, ran = agreement_trials(args.trials, seed=cfg.seed)
    print(f"oracle-check: {ran - bad}/{ran} agreement between greedy_step and "
          f"brute_force_argmax")
    if bad:
        raise RuntimeFailure(f"{bad} disagreement(s) between engine and oracle")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mwpdeduct",
        description="Step-wise deductive math word problem solver")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="ingest raw JSONL and compile gold programs")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_preprocess)

    sp = sub.add_parser("train", help="train on preprocessed instances")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on preprocessed instances")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("solve", help="decode raw problems to answer programs")
    _add_config_flags(sp)
    sp.add_argument("--input", help="raw problem JSONL, '-' for stdin")
    sp.add_argument("--out", help="prediction JSONL path (default stdout)")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("explain", help="print the deduction trace for one instance")
    _add_config_flags(sp)
    sp.add_argument("--id", required=True)
    sp.add_argument("--topk", type=int, default=None)
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("oracle-check", help="engine vs brute-force oracle agreement")
    _add_config_flags(sp)
    sp.add_argument("--trials", type=int, default=1000)
    sp.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except RuntimeFailure as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
