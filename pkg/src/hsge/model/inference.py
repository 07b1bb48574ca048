"""Greedy grammar-masked decoding, slot filling and dialogue-level prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dialogue import Dialogue, Turn
from ..hsg import ENTITY, HistorySemanticGraph, HsgSnapshot, RetentionPolicy
from ..logical_form import (
    C,
    Const,
    FormStructureError,
    LogicalForm,
    PrefixState,
    Value,
    execute,
    fill_constants,
    parse,
)
from ..tensor import autograd as ag
from .features import DEC_INDEX, DEC_TOKENS, END, START, Example, Featurizer, collate, history_of
from .network import EncodedState, HSGEModel


class AssemblyError(Exception):
    pass


# -- grammar mask ---------------------------------------------------------------

_MASK_CACHE: dict = {}


def grammar_allowed(state: PrefixState, budget: int) -> np.ndarray:
    """Boolean mask over the decoder vocabulary for the next token."""
    key = (tuple(state.stack), budget)
    hit = _MASK_CACHE.get(key)
    if hit is None:
        hit = np.zeros(len(DEC_TOKENS), dtype=bool)
        if state.complete:
            hit[END] = True
        else:
            for tok in state.allowed(budget):
                hit[DEC_INDEX[tok]] = True
        _MASK_CACHE[key] = hit
    return hit


@dataclass
class DecodeResult:
    tokens: list[list[str]]  # form tokens per example, without start / end
    truncated: list[bool]
    step_logp: list[np.ndarray]  # per example [steps, |V_dec|]


def decode_greedy(model: HSGEModel, enc: EncodedState, max_len: int, grammar_mask: bool = True) -> DecodeResult:
    """Greedy decoding from ``start`` until ``end`` or ``max_len`` emitted tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = enc.h_enc.shape[0]
    seqs = np.full((B, 1), START, dtype=np.int64)
    states = [PrefixState() for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    out_tokens = [[] for _ in range(B)]
    logps = [[] for _ in range(B)]
    never = np.zeros(len(DEC_TOKENS), dtype=bool)
    never[START] = True
    with ag.no_grad():
        for step in range(max_len):
            h = model.run_decoder(enc, seqs)
            logp = model.decoder_logp(h[:, -1]).data
            nxt = np.full(B, END, dtype=np.int64)
            for b in range(B):
                if done[b]:
                    continue
                scores = logp[b].astype(np.float64)
                if grammar_mask:
                    ok = grammar_allowed(states[b], max_len - step - 1)
                    if not ok.any():
                        ok = grammar_allowed(states[b], 10 ** 6)
                    scores = np.where(ok, scores, -np.inf)
                else:
                    scores = np.where(never, -np.inf, scores)
                tok = int(np.argmax(scores))
                nxt[b] = tok
                logps[b].append(logp[b])
                if tok == END:
                    done[b] = True
                    continue
                out_tokens[b].append(DEC_TOKENS[tok])
                if grammar_mask:
                    states[b] = states[b].advance(DEC_TOKENS[tok])
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            if done.all():
                break
    return DecodeResult(out_tokens, [not d for d in done], [np.array(lp) for lp in logps])


# -- entity spans -----------------------------------------------------------------

def repair_bio(tags: list[str]) -> list[str]:
    """Rewrite an I-X that does not continue a B-X / I-X run as B-X."""
    out = []
    for i, t in enumerate(tags):
        if t.startswith("I-"):
            prev = out[-1] if out else "O"
            if prev == "O" or prev[2:] != t[2:]:
                t = "B-" + t[2:]
        out.append(t)
    return out


def bio_spans(tags: list[str]) -> list[tuple[int, int, str]]:
    """(start, end exclusive, type label) runs of B-X I-X* in repaired tags."""
    tags = repair_bio(tags)
    spans, start, kind = [], None, None
    for i, t in enumerate(tags + ["O"]):
        if start is not None and not (t.startswith("I-") and t[2:] == kind):
            spans.append((start, i, kind))
            start = None
        if t.startswith("B-"):
            start, kind = i, t[2:]
    return spans


def span_link(links: np.ndarray, start: int, end: int) -> int:
    """Majority slot index over a span's tokens; ties go to the smaller index."""
    vals, counts = np.unique(links[start:end], return_counts=True)
    return int(vals[np.argmax(counts)])


# -- assembly ---------------------------------------------------------------------

@dataclass
class Prediction:
    form_tokens: list[str]
    truncated: bool = False
    form: LogicalForm | None = None
    answer: Value | None = None
    error: str | None = None
    bio: list[str] = field(default_factory=list)
    spans: list[tuple[int, int, str]] = field(default_factory=list)
    links: list[int] = field(default_factory=list)
    snapshot: HsgSnapshot | None = None
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.form is not None and self.error is None


def assemble_form(form_tokens: list[str], tokens: list[str], segments, spans, links,
                  concept_logp: np.ndarray, ptr_logp: np.ndarray | None, snapshot: HsgSnapshot,
                  featurizer: Featurizer) -> LogicalForm:
    """Fill the placeholders of a decoded skeleton.

    ``e``: the history pointer if it picks a node, otherwise the span whose
    majority link equals the slot index (current question first), resolved by
    exact label match and filtered by the span's predicted type.  ``tp`` /
    ``p``: concept argmax within the right catalog at that step.  ``num``: the
    next unused number token in the current question.
    """
    kg, labels = featurizer.kg, featurizer.labels
    try:
        skeleton = parse(form_tokens)
    except FormStructureError as exc:
        raise AssemblyError(f"decoded sequence does not parse: {exc}") from None
    segments = list(segments)
    last_seg = segments[-1] if segments else 0
    numbers = [int(t) for t, s in zip(tokens, segments) if s == last_seg and t.isdigit()]
    consts = []
    slot = 0
    for j, tok in enumerate(form_tokens):
        if tok == "e":
            slot += 1
            consts.append(Const(C.ENTITY, _fill_entity(j, slot, tokens, segments, last_seg, spans, links,
                                                        ptr_logp, snapshot, featurizer)))
        elif tok == "tp":
            consts.append(Const(C.ENTITY_TYPE, int(np.argmax(concept_logp[j, :labels.n_types]))))
        elif tok == "p":
            row = concept_logp[j, labels.n_types:labels.n_types + labels.n_predicates]
            if not len(row):
                raise AssemblyError("the KG has no predicates")
            consts.append(Const(C.PREDICATE, int(np.argmax(row))))
        elif tok == "num":
            if not numbers:
                raise AssemblyError("no unused number in the question")
            consts.append(Const(C.NUM, numbers.pop(0)))
    return fill_constants(skeleton, consts)


def _fill_entity(step, slot, tokens, segments, last_seg, spans, links, ptr_logp, snapshot, featurizer):
    if ptr_logp is not None and snapshot is not None and snapshot.n_nodes:
        choice = int(np.argmax(ptr_logp[step]))
        if choice > 0 and choice - 1 < snapshot.n_nodes and snapshot.nodes[choice - 1][0] == ENTITY:
            return snapshot.nodes[choice - 1][1]
    kg = featurizer.kg
    linked = [(s, e, t) for s, e, t in spans if span_link(links, s, e) == slot]
    linked.sort(key=lambda sp: (segments[sp[0]] != last_seg, -sp[0]))
    for s, e, tname in linked:
        cands = featurizer.lexicon.resolve(tokens[s:e])
        if not cands:
            continue
        tp = kg.types.get(tname)
        typed = [c for c in cands if tp is not None and tp in kg.types_of(c)]
        return (typed or list(cands))[0]
    raise AssemblyError(f"no entity for slot {slot}")


# -- batched prediction -----------------------------------------------------------

def predict_examples(model: HSGEModel, featurizer: Featurizer, examples: list[Example]) -> list[Prediction]:
    cfg = model.config
    batch = collate(examples, featurizer.labels, cfg)
    with ag.no_grad(), ag.default_dtype(model.dtype):
        enc = model.encode(batch)
        logp_ed, logp_el = model.entity_heads(enc)
        res = decode_greedy(model, enc, cfg.max_decode_len, cfg.grammar_mask)
        width = max(len(t) for t in res.tokens) + 1
        dec_in = np.full((len(examples), width), END, dtype=np.int64)
        dec_in[:, 0] = START
        for b, toks in enumerate(res.tokens):
            dec_in[b, 1:1 + len(toks)] = [DEC_INDEX[t] for t in toks]
        h_dec = model.run_decoder(enc, dec_in)
        c_logp = model.concept_logp(enc, h_dec).data
        p_logp = model.pointer_logp(enc, h_dec)
        p_logp = None if p_logp is None else p_logp.data
    ed = logp_ed.data.argmax(-1)
    el = logp_el.data.argmax(-1)
    out = []
    for b, ex in enumerate(examples):
        n = len(ex.tokens)
        bio = repair_bio([featurizer.labels.bio[i] for i in ed[b, :n]])
        spans = bio_spans(bio)
        links = el[b, :n]
        pred = Prediction(res.tokens[b], res.truncated[b], bio=bio, spans=spans,
                          links=[int(x) for x in links], snapshot=ex.snapshot,
                          history=ex.history)
        if res.truncated[b]:
            pred.error = "decoding truncated before end"
        else:
            try:
                pred.form = assemble_form(res.tokens[b], ex.tokens, ex.segments, spans, links,
                                          c_logp[b], None if p_logp is None else p_logp[b],
                                          ex.snapshot, featurizer)
                pred.answer = execute(pred.form, featurizer.kg, cfg.approx_tolerance)
            except AssemblyError as exc:
                pred.error = str(exc)
        out.append(pred)
    return out


def predict_dialogues(model: HSGEModel, featurizer: Featurizer, dialogues: list[Dialogue],
                      batch_size: int = 64, graph_source: str | None = None) -> list[list[Prediction]]:
    """Predict every turn; turn k of all dialogues is processed together.

    With ``graph_source="predicted"`` each dialogue's HSG grows from the
    model's own forms; ``"gold"`` uses the gold forms of earlier turns.
    The input text always carries the dataset's previous questions and answers.
    """
    cfg = model.config
    graph_source = graph_source or cfg.inference_graph
    hsgs = [HistorySemanticGraph(RetentionPolicy(cfg.retention)) for _ in dialogues]
    preds: list[list[Prediction]] = [[] for _ in dialogues]
    max_turns = max((len(d.turns) for d in dialogues), default=0)
    for k in range(max_turns):
        active = [i for i, d in enumerate(dialogues) if k < len(d.turns)]
        for chunk_start in range(0, len(active), batch_size):
            chunk = active[chunk_start:chunk_start + batch_size]
            exs = []
            for i in chunk:
                d = dialogues[i]
                hist = history_of(d, k, featurizer.kg, cfg.concat_turns)
                exs.append(featurizer.example(hist, d.turns[k], hsgs[i].snapshot(k + 1), with_gold=False,
                                              dialogue_id=d.dialogue_id, turn_index=k + 1))
            for i, p in zip(chunk, predict_examples(model, featurizer, exs)):
                preds[i].append(p)
        for i in active:
            turn = dialogues[i].turns[k]
            form = turn.gold_form if graph_source == "gold" else preds[i][k].form
            if form is not None:
                hsgs[i].update_from_form(form, featurizer.kg, k + 1, cfg.approx_tolerance)
                hsgs[i].prune()
    return preds


def predict_turn(model: HSGEModel, featurizer: Featurizer, history, question: str,
                 hsg: HistorySemanticGraph, turn_index: int) -> Prediction:
    """Single interactive turn (no gold); used by the REPL."""
    turn = Turn(question, "", None, None)
    ex = featurizer.example(history, turn, hsg.snapshot(turn_index), with_gold=False, turn_index=turn_index)
    return predict_examples(model, featurizer, [ex])[0]
