"""Answer and subtask metrics, prediction dumps and the context-cost benchmark."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .dialogue import QUESTION_TYPES, Dialogue, supervision
from .hsg import HistorySemanticGraph, RetentionPolicy
from .kg import KnowledgeGraph
from .logical_form import C, Value, constants_of, format_form, serialize
from .model.features import Featurizer, collate, history_of
from .model.inference import Prediction, bio_spans, predict_dialogues
from .model.network import HSGEModel
from .tensor import autograd as ag
from .tensor import count_attention, no_grad

SET_CATEGORIES = (C.SET, C.DICT)


def set_f1(pred: set, gold: set) -> float:
    """F1 between sets; two empty sets agree perfectly."""
    if not pred and not gold:
        return 1.0
    tp = len(pred & gold)
    if tp == 0:
        return 0.0
    p, r = tp / len(pred), tp / len(gold)
    return 2 * p * r / (p + r)


def _members(v: Value) -> set:
    return set(v.as_dict()) if v.category is C.DICT else set(v.data)


def answer_score(pred: Value | None, gold: Value) -> float:
    """F1 for entity-set answers, exact match for boolean and numeric answers."""
    if gold.category in SET_CATEGORIES:
        if pred is None or pred.category not in SET_CATEGORIES:
            return 0.0
        return set_f1(_members(pred), _members(gold))
    if pred is None or pred.category is not gold.category:
        return 0.0
    return float(pred.data == gold.data)


def metric_name(gold: Value) -> str:
    return "f1" if gold.category in SET_CATEGORIES else "accuracy"


# -- per-turn records -------------------------------------------------------------

def turn_record(kg: KnowledgeGraph, featurizer: Featurizer, turn, pred: Prediction,
                dialogue_id: str, index: int) -> dict:
    """Everything needed to recompute the report for one turn, as plain JSON."""
    gold_tokens, gold_consts = serialize(turn.gold_form)
    _, gold_bio, _, _ = supervision(kg, featurizer.lexicon, pred.history, turn.question, turn.gold_form)
    gold_spans = set(bio_spans(gold_bio))
    pred_spans = set(pred.spans)
    pred_consts = constants_of(pred.form) if pred.form is not None else []
    rec = {
        "dialogue_id": dialogue_id,
        "turn": index,
        "question": turn.question,
        "question_type": turn.question_type,
        "metric": metric_name(turn.answer),
        "score": answer_score(pred.answer, turn.answer),
        "gold_form": format_form(turn.gold_form, kg),
        "pred_form": format_form(pred.form, kg) if pred.form is not None else None,
        "pred_tokens": pred.form_tokens,
        "error": pred.error,
        "skeleton_match": pred.form_tokens == gold_tokens,
        "form_match": pred.form is not None and pred.form == turn.gold_form,
        "span_tp": len(gold_spans & pred_spans),
        "span_pred": len(pred_spans),
        "span_gold": len(gold_spans),
    }
    ent_ok = ent_n = con_ok = con_n = 0
    pred_ent = [c for c in pred_consts if c.category is C.ENTITY]
    pred_con = [c for c in pred_consts if c.category in (C.ENTITY_TYPE, C.PREDICATE)]
    gold_ent = [c for c in gold_consts if c.category is C.ENTITY]
    gold_con = [c for c in gold_consts if c.category in (C.ENTITY_TYPE, C.PREDICATE)]
    for k, g in enumerate(gold_ent):
        ent_n += 1
        ent_ok += k < len(pred_ent) and pred_ent[k] == g
    for k, g in enumerate(gold_con):
        con_n += 1
        con_ok += k < len(pred_con) and pred_con[k] == g
    rec.update(link_ok=int(ent_ok), link_n=ent_n, concept_ok=int(con_ok), concept_n=con_n)
    rec["meta"] = {k: v for k, v in turn.meta.items() if isinstance(v, (int, float, str, bool))}
    return rec


# -- report ---------------------------------------------------------------------

@dataclass
class EvalReport:
    per_type: dict = field(default_factory=dict)  # type -> {"metric", "value", "count"}
    overall: float = 0.0
    subtasks: dict = field(default_factory=dict)
    n_turns: int = 0

    def rows(self):
        rows = []
        for qt in QUESTION_TYPES:
            if qt in self.per_type:
                r = self.per_type[qt]
                rows.append((qt, r["metric"], r["value"], r["count"]))
        rows.append(("Overall", "mixed", self.overall, self.n_turns))
        for name, val in self.subtasks.items():
            rows.append((name, "subtask", val, self.n_turns))
        return rows

    def table(self) -> str:
        rows = self.rows()
        w = max(len(r[0]) for r in rows)
        lines = [f"{'question type':<{w}}  {'metric':<8}  {'value':>7}  {'n':>6}"]
        for name, metric, val, n in rows:
            lines.append(f"{name:<{w}}  {metric:<8}  {val * 100:7.2f}  {n:6d}")
        return "\n".join(lines)

    def csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["name", "metric", "value", "count"])
        for name, metric, val, n in self.rows():
            wr.writerow([name, metric, f"{val:.6f}", n])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"per_type": self.per_type, "overall": self.overall, "subtasks": self.subtasks,
                "n_turns": self.n_turns}


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def report_from_records(records: list[dict]) -> EvalReport:
    """Aggregate per-turn records; the overall figure weights every turn equally."""
    rep = EvalReport(n_turns=len(records))
    by_type: dict[str, list] = {}
    for r in records:
        by_type.setdefault(r["question_type"], []).append(r)
    for qt, rs in by_type.items():
        rep.per_type[qt] = {"metric": rs[0]["metric"], "value": float(np.mean([r["score"] for r in rs])),
                            "count": len(rs)}
    rep.overall = float(np.mean([r["score"] for r in records])) if records else 0.0
    tp = sum(r["span_tp"] for r in records)
    npred = sum(r["span_pred"] for r in records)
    ngold = sum(r["span_gold"] for r in records)
    p, rc = _ratio(tp, npred), _ratio(tp, ngold)
    rep.subtasks = {
        "entity detection": 2 * p * rc / (p + rc) if p + rc else (1.0 if ngold == npred == 0 else 0.0),
        "entity linking": _ratio(sum(r["link_ok"] for r in records), sum(r["link_n"] for r in records)),
        "logical form": _ratio(sum(r["skeleton_match"] for r in records), len(records)),
        "type & predicate": _ratio(sum(r["concept_ok"] for r in records), sum(r["concept_n"] for r in records)),
        "exact form": _ratio(sum(r["form_match"] for r in records), len(records)),
    }
    return rep


def evaluate(model: HSGEModel, featurizer: Featurizer, dialogues: list[Dialogue],
             graph_source: str | None = None, batch_size: int = 64) -> tuple[EvalReport, list[dict]]:
    """Predict every turn, score answers and subtasks; deterministic given the inputs."""
    preds = predict_dialogues(model, featurizer, dialogues, batch_size, graph_source)
    records = []
    for d, ps in zip(dialogues, preds):
        for k, (turn, p) in enumerate(zip(d.turns, ps)):
            records.append(turn_record(featurizer.kg, featurizer, turn, p, d.dialogue_id, k + 1))
    return report_from_records(records), records


def dump_records(path, records: list[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def load_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def select(records: list[dict], question_type: str | None = None, **meta) -> list[dict]:
    out = [r for r in records if question_type is None or r["question_type"] == question_type]
    for k, v in meta.items():
        out = [r for r in out if r["meta"].get(k) == v]
    return out


# -- context-cost benchmark -------------------------------------------------------

@dataclass
class CostRow:
    variant: str
    turn: int
    context_tokens: int
    encoder_pairs: int
    aggregation_pairs: int
    hsg_nodes: int
    seconds: float


def bench_context(model_concat: HSGEModel, featurizer_concat: Featurizer, model_hsg: HSGEModel,
                  featurizer_hsg: Featurizer, dialogue: Dialogue, max_turns: int | None = None) -> list[CostRow]:
    """Encoder attention pairs per turn for full-history concatenation vs the HSG model.

    The concatenation variant places every earlier turn in the input; the
    HSG variant keeps its configured short window and reads the graph.
    """
    turns = dialogue.turns[:max_turns] if max_turns else dialogue.turns
    kg = featurizer_hsg.kg
    rows = []
    hsg = HistorySemanticGraph(RetentionPolicy(model_hsg.config.retention))
    for k, turn in enumerate(turns):
        hist = history_of(dialogue, k, kg, k)
        ex = featurizer_concat.example(hist, turn, hsg.snapshot(k + 1), with_gold=False)
        rows.append(_measure("concat", k + 1, model_concat, featurizer_concat, ex))
        hist = history_of(dialogue, k, kg, model_hsg.config.concat_turns)
        ex = featurizer_hsg.example(hist, turn, hsg.snapshot(k + 1), with_gold=False)
        rows.append(_measure("hsg", k + 1, model_hsg, featurizer_hsg, ex))
        hsg.update_from_form(turn.gold_form, kg, k + 1, model_hsg.config.approx_tolerance)
        hsg.prune()
    return rows


def _measure(name, k, model, featurizer, ex) -> CostRow:
    batch = collate([ex], featurizer.labels, model.config)
    with no_grad(), ag.default_dtype(model.dtype), count_attention() as counter:
        t0 = time.perf_counter()
        model.encode(batch)
        dt = time.perf_counter() - t0
    return CostRow(name, k, len(ex.tokens), counter.by_tag.get("encoder", 0),
                   counter.by_tag.get("aggregation", 0), ex.snapshot.n_nodes, dt)


def quadratic_r2(x, y) -> float:
    """Coefficient of determination of a least-squares quadratic fit."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    coef = np.polyfit(x, y, 2)
    resid = y - np.polyval(coef, x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot else 1.0
