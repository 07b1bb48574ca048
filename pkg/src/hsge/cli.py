"""``hsge`` command line: data generation, training, evaluation, ablations,
the context-cost benchmark and an interactive REPL."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from .dialogue import WorldSpec, generate_corpus, generate_world, read_jsonl, write_jsonl
from .hsg import HistorySemanticGraph, RetentionPolicy
from .kg import KnowledgeGraph, load_kg
from .logical_form import format_form
from .text import verbalize_answer

TRIPLES, TYPES = "triples.tsv", "types.tsv"


class CliError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------

def _thread_limit():
    n = os.environ.get("HSGE_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def load_world(path) -> KnowledgeGraph:
    path = Path(path)
    if not (path / TRIPLES).exists():
        raise CliError(f"no world at {path} (expected {TRIPLES} and {TYPES})")
    return load_kg(path / TRIPLES, path / TYPES)


def build_config(args):
    from .model.config import ModelConfig, load_config, parse_temporal

    cfg = load_config(args.config) if getattr(args, "config", None) else ModelConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "retention", None) is not None:
        changes["retention"] = None if args.retention < 0 else args.retention
    if getattr(args, "aggregation", None):
        changes["aggregation_level"] = args.aggregation
    if getattr(args, "temporal", None):
        changes["distance_calculation"], changes["temporal_encoding"] = parse_temporal(args.temporal)
    if getattr(args, "concat_turns", None) is not None:
        changes["concat_turns"] = args.concat_turns
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes)


ABLATIONS = {"no-hsg": {"use_hsg": False}, "no-tim": {"use_temporal": False}}


def _emit_report(report, args, title=None):
    if title:
        print(title)
    print(report.table())
    if getattr(args, "csv", None):
        Path(args.csv).write_text(report.csv(), encoding="utf-8")


# -- commands ---------------------------------------------------------------------

def cmd_gen_world(args):
    spec = WorldSpec(seed=args.seed, n_entities=args.entities, n_predicates=args.predicates,
                     n_types=args.types, density=args.density)
    kg = generate_world(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kg.write_tsv(out / TRIPLES, out / TYPES)
    print(json.dumps({"world": str(out), "entities": len(kg.entities), "predicates": len(kg.predicates),
                      "types": len(kg.types), "triples": len(kg.triples)}))


def cmd_gen_data(args):
    kg = load_world(args.world)
    retention = 50 if args.retention is None else (None if args.retention < 0 else args.retention)
    ds = generate_corpus(kg, args.dialogues, seed=args.seed, n_turns=args.turns,
                         retention=retention, noise=args.noise)
    write_jsonl(args.out, ds, kg)
    print(json.dumps({"data": args.out, "dialogues": len(ds), "turns": sum(len(d.turns) for d in ds)}))


def _train(kg, dialogues, cfg, args):
    from .model.features import Featurizer, WordVocab
    from .model.network import HSGEModel
    from .model.train import Trainer

    vocab = WordVocab.build(kg, dialogues)
    fz = Featurizer(kg, vocab, cfg)
    examples = [e for d in dialogues for e in fz.dialogue_examples(d)]
    model = HSGEModel(cfg, vocab, kg)
    trainer = Trainer(model, fz, examples)
    trainer.run(max_steps=getattr(args, "max_steps", None))
    return model, fz, trainer.log


def cmd_train(args):
    kg = load_world(args.world)
    cfg = build_config(args)
    if args.ablate:
        cfg = cfg.replace(**ABLATIONS[args.ablate])
    model, _, log = _train(kg, read_jsonl(args.data, kg), cfg, args)
    from .model.train import save_model

    save_model(args.checkpoint, model, log.steps)
    print(json.dumps({"checkpoint": args.checkpoint, "steps": log.steps, "epochs": log.epochs,
                      "final_loss": log.losses[-1] if log.losses else None, "seconds": round(log.seconds, 2)}))


def cmd_eval(args):
    from .evaluate import dump_records, evaluate, load_records, report_from_records

    if args.replay:
        _emit_report(report_from_records(load_records(args.replay)), args)
        return
    kg = load_world(args.world)
    model, fz = _load(args, kg)
    report, records = evaluate(model, fz, read_jsonl(args.data, kg), graph_source=args.graph)
    if args.dump:
        dump_records(args.dump, records)
    _emit_report(report, args)


def cmd_subtasks(args):
    from .evaluate import evaluate

    kg = load_world(args.world)
    model, fz = _load(args, kg)
    report, _ = evaluate(model, fz, read_jsonl(args.data, kg), graph_source=args.graph)
    rows = [f"{name:<18} {val * 100:7.2f}" for name, val in report.subtasks.items()]
    print("\n".join(rows))
    if args.csv:
        Path(args.csv).write_text("subtask,value\n" + "".join(
            f"{k},{v:.6f}\n" for k, v in report.subtasks.items()), encoding="utf-8")


def cmd_ablate(args):
    from .evaluate import evaluate

    kg = load_world(args.world)
    train = read_jsonl(args.data, kg)
    test = read_jsonl(args.eval_data, kg)
    cfg = build_config(args)
    variant = cfg.replace(**ABLATIONS[args.variant])
    model, fz, _ = _train(kg, train, variant, args)
    report, _ = evaluate(model, fz, test)
    _emit_report(report, args, title=f"[{args.variant}]")
    if args.checkpoint:
        full, ffz = _load(args, kg)
        base, _ = evaluate(full, ffz, test)
        print(f"\n[full]\n{base.table()}")
        print(f"\noverall delta ({args.variant} - full): {(report.overall - base.overall) * 100:+.2f}")


def cmd_bench_context(args):
    from .dialogue import generate_dialogue
    from .evaluate import bench_context, quadratic_r2
    from .model.features import Featurizer, WordVocab
    from .model.network import HSGEModel

    kg = load_world(args.world)
    dialogue = generate_dialogue(kg, f"bench:{args.seed or 0}", n_turns=args.max_turns)
    cfg = build_config(args)
    vocab = WordVocab.build(kg, [dialogue])
    concat_cfg = cfg.replace(use_hsg=False)
    m_c, m_h = HSGEModel(concat_cfg, vocab, kg), HSGEModel(cfg, vocab, kg)
    rows = bench_context(m_c, Featurizer(kg, vocab, concat_cfg), m_h, Featurizer(kg, vocab, cfg), dialogue)
    lines = ["variant  turn  tokens  encoder_pairs  aggregation_pairs  hsg_nodes  ms"]
    for r in rows:
        lines.append(f"{r.variant:<7}  {r.turn:4d}  {r.context_tokens:6d}  {r.encoder_pairs:13d}  "
                     f"{r.aggregation_pairs:17d}  {r.hsg_nodes:9d}  {r.seconds * 1000:.2f}")
    print("\n".join(lines))
    concat = [r for r in rows if r.variant == "concat"]
    r2 = quadratic_r2([r.context_tokens for r in concat], [r.encoder_pairs for r in concat])
    print(f"concat quadratic fit R^2 = {r2:.5f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write("variant,turn,context_tokens,encoder_pairs,aggregation_pairs,hsg_nodes,seconds\n")
            for r in rows:
                f.write(f"{r.variant},{r.turn},{r.context_tokens},{r.encoder_pairs},"
                        f"{r.aggregation_pairs},{r.hsg_nodes},{r.seconds:.6f}\n")


def cmd_repl(args, stdin=None, stdout=None):
    from .model.inference import predict_turn

    stdin, stdout = stdin or sys.stdin, stdout or sys.stdout
    kg = load_world(args.world)
    model, fz = _load(args, kg)
    hsg = HistorySemanticGraph(RetentionPolicy(model.config.retention))
    history, turn = [], 1
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        if line in (":quit", ":q"):
            break
        if line == ":reset":
            hsg.reset()
            history, turn = [], 1
            print("dialogue state cleared", file=stdout)
            continue
        if line == ":graph":
            print(hsg.dump(kg) or "(empty graph)", file=stdout)
            continue
        pred = predict_turn(model, fz, history[-model.config.concat_turns:], line, hsg, turn)
        if pred.form is None:
            print(f"error: {pred.error}", file=stdout)
            answer = "none"
        else:
            answer = verbalize_answer(pred.answer, kg)
            print(f"form: {format_form(pred.form, kg)}", file=stdout)
            print(f"answer: {answer}", file=stdout)
            hsg.update_from_form(pred.form, kg, turn, model.config.approx_tolerance)
            hsg.prune()
        print(f"hsg: {len(hsg.snapshot(turn).nodes)} nodes, {hsg.fact_count()} facts", file=stdout)
        history.append((line, answer))
        turn += 1


def _load(args, kg):
    from .model.train import load_model

    if not args.checkpoint:
        raise CliError("--checkpoint is required")
    model, fz, _ = load_model(args.checkpoint, kg)
    return model, fz


# -- parser -----------------------------------------------------------------------

def _model_flags(p, checkpoint_required=False):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--retention", type=int, help="max recent HSG facts; negative = unbounded")
    p.add_argument("--aggregation", choices=("token", "utterance"))
    p.add_argument("--temporal", help="{absolute|relative}x{sinusoid|learnable}")
    p.add_argument("--concat-turns", type=int, dest="concat_turns")
    p.add_argument("--checkpoint", required=checkpoint_required)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsge", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a random world KG")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--predicates", type=int, default=10)
    p.add_argument("--types", type=int, default=8)
    p.add_argument("--density", type=float, default=3.0)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("gen-data", help="generate dialogues as JSONL")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=int, default=100)
    p.add_argument("--turns", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retention", type=int)
    p.add_argument("--noise", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--world", required=True)
    p.add_argument("--data", required=True)
    _model_flags(p, checkpoint_required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--ablate", choices=sorted(ABLATIONS))
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "answer metrics per question type"),
                                 ("subtasks", cmd_subtasks, "subtask accuracies")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--world")
        p.add_argument("--data")
        p.add_argument("--checkpoint")
        p.add_argument("--csv")
        p.add_argument("--graph", choices=("predicted", "gold"))
        if name == "eval":
            p.add_argument("--dump", help="write per-turn predictions as JSONL")
            p.add_argument("--replay", help="recompute metrics from a predictions dump")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train and evaluate an ablated variant")
    p.add_argument("variant", choices=sorted(ABLATIONS))
    p.add_argument("--world", required=True)
    p.add_argument("--data", required=True, help="training dialogues")
    p.add_argument("--eval-data", required=True, dest="eval_data")
    _model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench-context", help="attention cost: concatenation vs HSG")
    p.add_argument("--world", required=True)
    p.add_argument("--max-turns", type=int, default=16, dest="max_turns")
    _model_flags(p)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench_context)

    p = sub.add_parser("repl", help="interactive multi-turn session")
    p.add_argument("--world", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_repl)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("eval", "subtasks") and not getattr(args, "replay", None):
        missing = [f for f in ("world", "data", "checkpoint") if not getattr(args, f)]
        if missing:
            ap.error(f"the following arguments are required: {', '.join('--' + m for m in missing)}")
    try:
        with _thread_limit():
            args.func(args)
    except Exception as exc:  # reported as JSON for scripts
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
