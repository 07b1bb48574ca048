"""Synthetic worlds and multi-turn dialogues with gold supervision.

A world is a random KG whose predicates have a fixed domain and range type,
so templates like "which person is citizen of X" always make sense.
Dialogues walk the CSQA-style question taxonomy; every turn carries its gold
logical form, answer and the per-token / per-step labels the model heads
train on.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .hsg import ENTITY, HistorySemanticGraph, HsgSnapshot, RetentionPolicy
from .kg import KnowledgeGraph
from .logical_form import (
    C,
    Call,
    FormSyntaxError,
    LogicalForm,
    TypeCheckError,
    Value,
    call,
    constants_of,
    ent,
    execute,
    format_form,
    num,
    parse_form,
    pred,
    serialize,
    typ,
)
from .text import Lexicon, build_input, primary_type, verbalize_answer

# -- question taxonomy ---------------------------------------------------------

SIMPLE_DIRECT = "Simple (Direct)"
SIMPLE_COREF = "Simple (Coreferenced)"
SIMPLE_ELLIPSIS = "Simple (Ellipsis)"
LOGICAL = "Logical"
QUANTITATIVE = "Quantitative"
COMPARATIVE = "Comparative"
VERIFICATION = "Verification (Boolean)"
QUANT_COUNT = "Quantitative (Count)"
COMP_COUNT = "Comparative (Count)"

QUESTION_TYPES = (COMPARATIVE, LOGICAL, QUANTITATIVE, SIMPLE_COREF, SIMPLE_DIRECT,
                  SIMPLE_ELLIPSIS, VERIFICATION, QUANT_COUNT, COMP_COUNT)

# Proportional to the per-type test example counts (thousands) of CSQA.
_TYPE_COUNTS = {COMPARATIVE: 15.0, LOGICAL: 22.2, QUANTITATIVE: 9.3, SIMPLE_COREF: 55.9,
                SIMPLE_DIRECT: 82.2, SIMPLE_ELLIPSIS: 10.3, VERIFICATION: 27.3,
                QUANT_COUNT: 24.0, COMP_COUNT: 15.1}
DEFAULT_TYPE_MIX = {k: v / sum(_TYPE_COUNTS.values()) for k, v in _TYPE_COUNTS.items()}

_CONTEXT_TYPES = {SIMPLE_COREF, SIMPLE_ELLIPSIS}
LONG_RANGE_SHARE = 0.7  # chance of a long-range referent when one is available
_SIMPLE_TYPES = {SIMPLE_DIRECT, SIMPLE_COREF, SIMPLE_ELLIPSIS}


# -- worlds ----------------------------------------------------------------------

_TYPE_WORDS = ["person", "country", "city", "river", "company", "film", "book", "language",
               "university", "band", "award", "mountain", "airport", "team", "newspaper", "planet"]

_RELATION_WORDS = ["citizen of", "born in", "located in", "flows through", "works for",
                   "directed by", "written by", "member of", "part of", "founded by",
                   "spoken in", "married to", "allied with", "adjacent to", "owned by",
                   "studied at", "won", "published by", "named after", "sponsored by"]

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr",
           "kr", "st", "tr", "th", "sh", "ch"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
_CODAS = ["", "", "n", "r", "l", "s", "th", "nd", "rk"]


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    n_entities: int = 200
    n_predicates: int = 10
    n_types: int = 8
    density: float = 3.0  # relation triples per entity
    two_word_labels: float = 0.2  # share of entity labels made of two words

    def __post_init__(self):
        if self.n_types < 1 or self.n_entities < self.n_types:
            raise ValueError("need n_entities >= n_types >= 1")
        if self.n_predicates < 0 or self.density < 0:
            raise ValueError("n_predicates and density must be >= 0")


def _pseudo_word(rng: random.Random) -> str:
    n = rng.choice([2, 2, 3])
    return "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
                   for _ in range(n)).capitalize()


def _labels(pool, n, stem):
    return [pool[i] if i < len(pool) else f"{stem}{i}" for i in range(n)]


def generate_world(spec: WorldSpec) -> KnowledgeGraph:
    rng = random.Random(f"world:{spec.seed}")
    type_labels = _labels(_TYPE_WORDS, spec.n_types, "kind")
    pred_labels = _labels(_RELATION_WORDS, spec.n_predicates, "relation")

    labels, seen = [], set()
    while len(labels) < spec.n_entities:
        label = _pseudo_word(rng)
        if rng.random() < spec.two_word_labels:
            label += " " + _pseudo_word(rng)
        if label not in seen and label.lower() not in seen:
            seen.update((label, label.lower()))
            labels.append(label)

    ent_type = list(range(spec.n_types)) + [rng.randrange(spec.n_types)
                                            for _ in range(spec.n_entities - spec.n_types)]
    rng.shuffle(ent_type)
    by_type = {t: [e for e in range(spec.n_entities) if ent_type[e] == t] for t in range(spec.n_types)}

    schema = []
    for _ in range(spec.n_predicates):
        schema.append((rng.randrange(spec.n_types), rng.randrange(spec.n_types)))

    target = round(spec.density * spec.n_entities) if spec.n_predicates else 0
    triples, have = [], set()
    attempts = 0
    while len(triples) < target and attempts < 50 * max(target, 1):
        attempts += 1
        p = rng.randrange(spec.n_predicates)
        dom, rng_t = schema[p]
        s, o = rng.choice(by_type[dom]), rng.choice(by_type[rng_t])
        if s == o or (s, p, o) in have:
            continue
        have.add((s, p, o))
        triples.append((labels[s], pred_labels[p], labels[o]))

    types = [(labels[e], type_labels[ent_type[e]]) for e in range(spec.n_entities)]
    # Round-tripped through the export order so a reloaded world compares equal.
    return KnowledgeGraph.from_labels(triples, types).canonical()


# -- turns and dialogues ------------------------------------------------------

@dataclass
class Turn:
    question: str
    question_type: str
    gold_form: LogicalForm
    answer: Value
    tokens: list[str] = field(default_factory=list)
    bio_tags: list[str] = field(default_factory=list)
    links: list[int] = field(default_factory=list)
    concept_labels: list[str | None] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class Dialogue:
    dialogue_id: str
    turns: list[Turn]

    def __len__(self):
        return len(self.turns)


def bio_label_set(kg: KnowledgeGraph) -> list[str]:
    """``O`` then ``B-t``/``I-t`` for every type, in type-id order."""
    out = ["O"]
    for t in kg.types:
        out += [f"B-{t}", f"I-{t}"]
    return out


def concept_label(kg: KnowledgeGraph, const) -> str:
    if const.category is C.ENTITY_TYPE:
        return f"type:{kg.types.label(const.value)}"
    return f"predicate:{kg.predicates.label(const.value)}"


def supervision(kg: KnowledgeGraph, lexicon: Lexicon, history, question: str, form: LogicalForm):
    """Input tokens plus aligned BIO tags and link indices, and per-step concept labels.

    ``history`` is a list of (question text, answer text) pairs, oldest first.
    Link index k (1-based) marks mentions of the k-th entity constant of
    ``form`` in placeholder order; other tokens get 0.
    """
    hist_tok = [(lexicon.tokenize(q), lexicon.tokenize(a)) for q, a in history]
    tokens, _ = build_input(hist_tok, lexicon.tokenize(question))
    consts = constants_of(form)
    slots = [c.value for c in consts if c.category is C.ENTITY]
    bio = ["O"] * len(tokens)
    links = [0] * len(tokens)
    for m in lexicon.annotate(tokens):
        gold = [e for e in m.entities if e in slots]
        e = gold[0] if gold else m.entities[0]
        tname = kg.types.label(primary_type(kg, e))
        for i in range(m.start, m.end):
            bio[i] = ("B-" if i == m.start else "I-") + tname
        if gold:
            k = 1 + min(slots.index(g) for g in gold)
            for i in range(m.start, m.end):
                links[i] = k
    toks, fconsts = serialize(form)
    concepts = []
    it = iter(fconsts)
    for tok in toks:
        if tok in ("e", "p", "tp", "num"):
            c = next(it)
            concepts.append(concept_label(kg, c) if tok in ("p", "tp") else None)
        else:
            concepts.append(None)
    concepts.append(None)  # the closing ``end`` step
    return tokens, bio, links, concepts


class Templates:
    """Question templates over one KG; each returns (text, form, meta) or None."""

    def __init__(self, kg: KnowledgeGraph):
        self.kg = kg
        self.P = len(kg.predicates)
        self.objects_with_subjects = {p: sorted({t.object for t in kg.triples if t.predicate == p})
                                      for p in range(self.P)}
        self.subjects_with_objects = {p: sorted({t.subject for t in kg.triples if t.predicate == p})
                                      for p in range(self.P)}
        tuples = set()
        for t in kg.triples:
            for ts in kg.types_of(t.subject):
                for to in kg.types_of(t.object):
                    tuples.add((ts, t.predicate, to))
        self.schema = sorted(tuples)
        self.domain = {p: {ts for ts, q, _ in tuples if q == p} for p in range(self.P)}
        self.live_predicates = [p for p in range(self.P) if self.objects_with_subjects[p]]

    def E(self, e):
        return self.kg.entities.label(e)

    def Pl(self, p):
        return self.kg.predicates.label(p)

    def T(self, t):
        return self.kg.types.label(t)

    def _filtered(self, rng, node):
        result = execute(node, self.kg).data
        types = sorted({t for x in result for t in self.kg.types_of(x)})
        if not types:
            return None
        tp = rng.choice(types)
        return call("filter_type", node, typ(tp)), tp

    # Simple questions share one shape: filter_type(find[_reverse](e, p), tp).
    def simple(self, rng, e=None, reverse=None, p=None):
        if e is None:
            if not self.live_predicates:
                return None
            p = rng.choice(self.live_predicates)
            reverse = rng.random() < 0.5
            pool = self.subjects_with_objects[p] if reverse else self.objects_with_subjects[p]
            e = rng.choice(pool)
        node = call("find_reverse" if reverse else "find", ent(e), pred(p))
        if not execute(node, self.kg).data:
            return None
        got = self._filtered(rng, node)
        if got is None:
            return None
        return got[0], got[1]

    def simple_text(self, reverse, subject_text, p, tp):
        if reverse:
            return f"{subject_text} is {self.Pl(p)} which {self.T(tp)}?"
        return f"which {self.T(tp)} is {self.Pl(p)} {subject_text}?"

    def direct(self, rng, ctx):
        got = self.simple(rng)
        if got is None:
            return None
        form, tp = got
        inner = form.args[0]
        reverse = inner.action == "find_reverse"
        e, p = inner.args[0].value, inner.args[1].value
        return self.simple_text(reverse, self.E(e), p, tp), form, {}

    def coref_candidates(self, ctx):
        """(type, referent, stamp, long_range) for every type whose most recent HSG entity is unique."""
        snap: HsgSnapshot = ctx["snapshot"]
        k = ctx["turn"]
        recent = {}
        for kind, ref, last in snap.nodes:
            if kind == ENTITY:
                for t in self.kg.types_of(ref):
                    recent.setdefault(t, []).append((last, ref))
        out = []
        for t, items in sorted(recent.items()):
            top = max(last for last, _ in items)
            leaders = [ref for last, ref in items if last == top]
            if len(leaders) != 1 or leaders[0] not in ctx["mentioned"]:
                continue
            ref = leaders[0]
            out.append((t, ref, top, top <= k - 2 and ref not in ctx["prev_text_entities"]))
        return out

    def coreferenced(self, rng, ctx):
        candidates = self.coref_candidates(ctx)
        options = []
        for t, ref, top, long_range in candidates:
            for reverse in (False, True):
                preds = [p for p in range(self.P)
                         if (self.kg.objects_of(ref, p) if reverse else self.kg.subjects_of(ref, p))]
                for p in preds:
                    options.append((long_range, t, ref, top, reverse, p))
        if not options:
            return None
        far = [o for o in options if o[0]]
        near = [o for o in options if not o[0]]
        pool = far if far and (not near or rng.random() < LONG_RANGE_SHARE) else near
        long_range, t, ref, top, reverse, p = rng.choice(pool)
        got = self.simple(rng, e=ref, reverse=reverse, p=p)
        if got is None:
            return None
        form, tp = got
        text = self.simple_text(reverse, f"that {self.T(t)}", p, tp)
        return text, form, {"referent": self.E(ref), "referent_turn": top, "long_range": long_range}

    def ellipsis(self, rng, ctx):
        prev = ctx["prev_turn"]
        if prev is None or prev.question_type not in _SIMPLE_TYPES:
            return None
        inner = prev.gold_form.args[0]
        reverse = inner.action == "find_reverse"
        e, p = inner.args[0].value, inner.args[1].value
        tp = prev.gold_form.args[1].value
        etypes = self.kg.types_of(e)
        pool = self.subjects_with_objects[p] if reverse else self.objects_with_subjects[p]
        pool = [x for x in pool if x != e and self.kg.types_of(x) & etypes]
        rng.shuffle(pool)
        for e2 in pool[:20]:
            node = call(inner.action, ent(e2), pred(p))
            form = call("filter_type", node, typ(tp))
            if execute(form, self.kg).data:
                return f"what about {self.E(e2)}?", form, {}
        return None

    def logical(self, rng, ctx):
        if not self.live_predicates:
            return None
        op = rng.choice(["union", "intersection", "difference"])
        p1 = rng.choice(self.live_predicates)
        if op == "intersection":
            subj = rng.choice(self.subjects_with_objects[p1])
            outs = [(p, o) for p in range(self.P) for o in sorted(self.kg.objects_of(subj, p))]
            if len(outs) < 2:
                return None
            (p1, o1), (p2, o2) = rng.sample(outs, 2)
        else:
            o1 = rng.choice(self.objects_with_subjects[p1])
            same = [p for p in self.live_predicates if self.domain[p] & self.domain[p1]]
            p2 = p1 if op == "union" else rng.choice(same)
            o2 = rng.choice(self.objects_with_subjects[p2])
        if o1 == o2:
            return None
        form = call(op, call("find", ent(o1), pred(p1)), call("find", ent(o2), pred(p2)))
        result = execute(form, self.kg).data
        if not result:
            return None
        tp = min(primary_type(self.kg, x) for x in result)
        tname = self.T(tp)
        if op == "union":
            if p1 != p2:
                return None
            text = f"which {tname} is {self.Pl(p1)} {self.E(o1)} or {self.E(o2)}?"
        elif op == "intersection":
            text = f"which {tname} is {self.Pl(p1)} {self.E(o1)} and {self.Pl(p2)} {self.E(o2)}?"
        else:
            text = f"which {tname} is {self.Pl(p1)} {self.E(o1)} but not {self.Pl(p2)} {self.E(o2)}?"
        return text, form, {}

    def _tuple_counts(self, rng):
        if not self.schema:
            return None
        tp1, p, tp2 = rng.choice(self.schema)
        reverse = rng.random() < 0.5
        if reverse:
            return call("find_reverse_tuple_counts", pred(p), typ(tp2), typ(tp1)), tp2, p, tp1, True
        return call("find_tuple_counts", pred(p), typ(tp1), typ(tp2)), tp1, p, tp2, False

    def _quant_core(self, rng):
        got = self._tuple_counts(rng)
        if got is None:
            return None
        d, key_t, p, other_t, reverse = got
        counts = execute(d, self.kg).as_dict()
        P, K, O = self.Pl(p), self.T(key_t), self.T(other_t)
        link = f"is {P} by" if reverse else f"is {P}"
        op = rng.choice(["argmax", "argmin", "atleast", "atmost", "equal", "approx"])
        if op in ("argmax", "argmin"):
            form = call(op, d)
            word = "the most" if op == "argmax" else "the least"
            return form, f"{K} {link} {word} {O}"
        positive = sorted({v for v in counts.values() if v > 0})
        if not positive:
            return None
        n = rng.choice(positive)
        phrase = {"atleast": "at least", "atmost": "at most", "equal": "exactly",
                  "approx": "approximately"}[op]
        return call(op, d, num(n)), f"{K} {link} {phrase} {n} {O}"

    def quantitative(self, rng, ctx):
        got = self._quant_core(rng)
        if got is None:
            return None
        form, phrase = got
        if not execute(form, self.kg).data:
            return None
        return f"which {phrase}?", form, {}

    def quantitative_count(self, rng, ctx):
        if rng.random() < 0.5:
            got = self.simple(rng)
            if got is None:
                return None
            form, tp = got
            inner = form.args[0]
            e, p = inner.args[0].value, inner.args[1].value
            if inner.action == "find_reverse":
                text = f"{self.E(e)} is {self.Pl(p)} how many {self.T(tp)}?"
            else:
                text = f"how many {self.T(tp)} are {self.Pl(p)} {self.E(e)}?"
            return text, call("count", form), {}
        got = self._quant_core(rng)
        if got is None or got[0].action in ("argmax", "argmin"):
            return None
        form, phrase = got
        return f"how many {phrase}?", call("count", form), {}

    def _comparative_core(self, rng):
        got = self._tuple_counts(rng)
        if got is None:
            return None
        d, key_t, p, other_t, reverse = got
        keys = sorted(self.kg.entities_of_type(key_t))
        if not keys:
            return None
        e = rng.choice(keys)
        ref = call("count", call("find" if reverse else "find_reverse", ent(e), pred(p)))
        op = rng.choice(["greater", "lesser"])
        form = call(op, d, ref)
        word = "more" if op == "greater" else "fewer"
        link = f"is {self.Pl(p)} by" if reverse else f"is {self.Pl(p)}"
        return form, f"{self.T(key_t)} {link} {word} {self.T(other_t)} than {self.E(e)}"

    def comparative(self, rng, ctx):
        got = self._comparative_core(rng)
        if got is None:
            return None
        form, phrase = got
        if not execute(form, self.kg).data:
            return None
        return f"which {phrase}?", form, {}

    def comparative_count(self, rng, ctx):
        got = self._comparative_core(rng)
        if got is None:
            return None
        form, phrase = got
        return f"how many {phrase}?", call("count", form), {}

    def verification(self, rng, ctx):
        if not self.live_predicates:
            return None
        p = rng.choice(self.live_predicates)
        o = rng.choice(self.objects_with_subjects[p])
        subs = sorted(self.kg.subjects_of(o, p))
        if rng.random() < 0.5:
            s = rng.choice(subs)
        else:
            dom = {t for x in subs for t in self.kg.types_of(x)}
            others = sorted(x for t in dom for x in self.kg.entities_of_type(t) if x not in subs and x != o)
            if not others:
                return None
            s = rng.choice(others)
        form = call("is_in", ent(s), call("find", ent(o), pred(p)))
        return f"is {self.E(s)} {self.Pl(p)} {self.E(o)}?", form, {}

    def dispatch(self, qtype):
        return {
            SIMPLE_DIRECT: self.direct, SIMPLE_COREF: self.coreferenced,
            SIMPLE_ELLIPSIS: self.ellipsis, LOGICAL: self.logical,
            QUANTITATIVE: self.quantitative, COMPARATIVE: self.comparative,
            VERIFICATION: self.verification, QUANT_COUNT: self.quantitative_count,
            COMP_COUNT: self.comparative_count,
        }[qtype]


def check_type_mix(type_mix: dict) -> dict:
    unknown = set(type_mix) - set(QUESTION_TYPES)
    if unknown:
        raise ValueError(f"unknown question types: {sorted(unknown)}")
    if any(v < 0 for v in type_mix.values()):
        raise ValueError("type_mix weights must be >= 0")
    total = sum(type_mix.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"type_mix must sum to 1, got {total}")
    return type_mix


_FUNCTION_WORDS = {"which", "is", "are", "the", "how", "many", "what"}


def _add_noise(rng, words: list[str]) -> list[str]:
    idx = [i for i, w in enumerate(words) if w in _FUNCTION_WORDS]
    if len(idx) >= 2:
        i, j = rng.sample(idx, 2)
        words[i], words[j] = words[j], words[i]
    return words


def generate_dialogue(kg: KnowledgeGraph, seed, n_turns: int = 5, type_mix: dict | None = None,
                      retention: int | None = 50, noise: bool = False,
                      templates: Templates | None = None, lexicon: Lexicon | None = None,
                      dialogue_id: str | None = None, max_retries: int = 20) -> Dialogue:
    """One dialogue from an independent RNG stream.

    All ``n_turns`` question types are drawn from ``type_mix`` up front and
    then scheduled: an ellipsis goes right after a simple question, a
    coreference as soon as the history supports one.  A planned type that
    cannot be instantiated at any remaining turn (template unsatisfiable after
    ``max_retries`` attempts) is skipped and a fresh type is drawn instead.
    """
    type_mix = check_type_mix(dict(type_mix or DEFAULT_TYPE_MIX))
    names = [t for t in QUESTION_TYPES if type_mix.get(t, 0) > 0]
    weights = [type_mix[t] for t in names]
    rng = random.Random(f"dialogue:{seed}")
    templates = templates or Templates(kg)
    lexicon = lexicon or Lexicon(kg)
    hsg = HistorySemanticGraph(RetentionPolicy(retention))
    turns: list[Turn] = []
    mentioned: set[int] = set()
    plan = rng.choices(names, weights, k=n_turns)
    history: list[tuple[str, str]] = []

    def attempt(qtype, ctx):
        if qtype in _CONTEXT_TYPES and not turns:
            return None
        fn = templates.dispatch(qtype)
        for _ in range(max_retries):
            got = fn(rng, ctx)
            if got is not None:
                return got
        return None

    def schedule(prev, ctx):
        order = []
        prev_simple = prev is not None and prev.question_type in _SIMPLE_TYPES
        if SIMPLE_ELLIPSIS in plan and prev_simple:
            order.append(SIMPLE_ELLIPSIS)
        # Coreference waits for a referent from two or more turns back unless time runs out.
        if SIMPLE_COREF in plan and prev is not None:
            turns_left = n_turns - len(turns)
            if (turns_left <= plan.count(SIMPLE_COREF) + plan.count(SIMPLE_ELLIPSIS)
                    or any(c[3] for c in templates.coref_candidates(ctx))):
                order.append(SIMPLE_COREF)
        if SIMPLE_ELLIPSIS in plan and not prev_simple:
            order += [t for t in (SIMPLE_DIRECT, SIMPLE_COREF) if t in plan]
        for t in plan:
            if t not in order and t != SIMPLE_COREF:
                order.append(t)
        if SIMPLE_COREF in plan and SIMPLE_COREF not in order:
            order.append(SIMPLE_COREF)
        return order

    for k in range(1, n_turns + 1):
        prev = turns[-1] if turns else None
        prev_ents = set()
        if history:
            q_prev, a_prev = history[-1]
            toks = lexicon.tokenize(q_prev) + lexicon.tokenize(a_prev)
            for m in lexicon.annotate(toks):
                prev_ents.update(m.entities)
        ctx = {"turn": k, "snapshot": hsg.snapshot(k), "mentioned": mentioned,
               "prev_turn": prev, "prev_text_entities": prev_ents}
        got = None
        for qtype in schedule(prev, ctx):
            got = attempt(qtype, ctx)
            if got is not None:
                plan.remove(qtype)
                break
        tries = 0
        while got is None and tries < 50:
            tries += 1
            qtype = rng.choices(names, weights)[0]
            got = attempt(qtype, ctx)
        if got is None:
            break
        text, form, meta = got
        if noise:
            words = text[:-1].split(" ")
            text = " ".join(_add_noise(rng, words)) + "?"
        answer = execute(form, kg)
        tokens, bio, links, concepts = supervision(kg, lexicon, history[-1:], text, form)
        turns.append(Turn(text, qtype, form, answer, tokens, bio, links, concepts, meta))
        mentioned.update(c.value for c in constants_of(form) if c.category is C.ENTITY)
        if answer.category is C.SET:
            mentioned.update(answer.data)
        history.append((text, verbalize_answer(answer, kg)))
        hsg.update_from_form(form, kg, k)
        hsg.prune()
    return Dialogue(dialogue_id or f"d{seed}", turns)


def generate_corpus(kg: KnowledgeGraph, n_dialogues: int, seed: int = 0, n_turns: int = 5,
                    type_mix: dict | None = None, retention: int | None = 50,
                    noise: bool = False) -> list[Dialogue]:
    templates, lexicon = Templates(kg), Lexicon(kg)
    return [generate_dialogue(kg, f"{seed}:{i}", n_turns, type_mix, retention, noise,
                              templates, lexicon, dialogue_id=f"{seed}-{i}")
            for i in range(n_dialogues)]


def gold_snapshots(dialogue: Dialogue, kg: KnowledgeGraph, retention: int | None = 50) -> list[HsgSnapshot]:
    """The HSG each turn is encoded with, built from the gold forms of earlier turns."""
    hsg = HistorySemanticGraph(RetentionPolicy(retention))
    out = []
    for k, turn in enumerate(dialogue.turns, start=1):
        out.append(hsg.snapshot(k))
        hsg.update_from_form(turn.gold_form, kg, k)
        hsg.prune()
    return out


# -- JSONL ---------------------------------------------------------------------

class DialogueSchemaError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def answer_to_json(value: Value, kg: KnowledgeGraph):
    if value.category is C.SET:
        return {"set": sorted(kg.entities.label(e) for e in value.data)}
    if value.category is C.DICT:
        return {"dict": {kg.entities.label(e): n for e, n in value.data}}
    if value.category is C.BOOLEAN:
        return {"bool": value.data}
    return {"num": value.data}


def answer_from_json(obj, kg: KnowledgeGraph) -> Value:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ValueError("answer must be a one-key object")
    (key, data), = obj.items()
    if key == "set":
        return Value.of_set(kg.entities.id(x) for x in data)
    if key == "dict":
        return Value.of_dict({kg.entities.id(k): int(v) for k, v in data.items()})
    if key == "bool":
        if not isinstance(data, bool):
            raise ValueError("bool answer must be true/false")
        return Value.of_bool(data)
    if key == "num":
        if not isinstance(data, int) or isinstance(data, bool):
            raise ValueError("num answer must be an integer")
        return Value.of_num(data)
    raise ValueError(f"unknown answer kind {key!r}")


def turn_to_json(turn: Turn, kg: KnowledgeGraph) -> dict:
    return {
        "question": turn.question,
        "type": turn.question_type,
        "gold_form": format_form(turn.gold_form, kg),
        "answer": answer_to_json(turn.answer, kg),
        "tokens": turn.tokens,
        "bio_tags": turn.bio_tags,
        "links": turn.links,
        "concept_labels": turn.concept_labels,
        "meta": turn.meta,
    }


_REQUIRED = ("question", "type", "gold_form", "answer", "bio_tags", "links", "concept_labels")


def turn_from_json(obj: dict, kg: KnowledgeGraph) -> Turn:
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise ValueError(f"missing fields {missing}")
    if obj["type"] not in QUESTION_TYPES:
        raise ValueError(f"unknown question type {obj['type']!r}")
    form = parse_form(obj["gold_form"], kg)
    answer = answer_from_json(obj["answer"], kg)
    if execute(form, kg) != answer:
        raise ValueError(f"gold form {obj['gold_form']!r} does not execute to the stored answer")
    tokens = list(obj.get("tokens", []))
    bio, links = list(obj["bio_tags"]), list(obj["links"])
    if tokens and not (len(tokens) == len(bio) == len(links)):
        raise ValueError("tokens, bio_tags and links differ in length")
    if not all(isinstance(x, int) and x >= 0 for x in links):
        raise ValueError("links must be nonnegative integers")
    return Turn(obj["question"], obj["type"], form, answer, tokens, bio, links,
                list(obj["concept_labels"]), dict(obj.get("meta", {})))


def write_jsonl(path, dialogues, kg: KnowledgeGraph):
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            row = {"id": d.dialogue_id, "turns": [turn_to_json(t, kg) for t in d.turns]}
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path, kg: KnowledgeGraph) -> list[Dialogue]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict) or not isinstance(row.get("turns"), list):
                    raise ValueError("expected an object with a 'turns' list")
                turns = [turn_from_json(t, kg) for t in row["turns"]]
            except (ValueError, KeyError, TypeError, FormSyntaxError, TypeCheckError, LookupError) as exc:
                raise DialogueSchemaError(lineno, str(exc)) from None
            out.append(Dialogue(str(row.get("id", f"line{lineno}")), turns))
    return out


__all__ = [
    "QUESTION_TYPES", "DEFAULT_TYPE_MIX", "WorldSpec", "generate_world", "Turn", "Dialogue",
    "Templates", "generate_dialogue", "generate_corpus", "gold_snapshots", "supervision",
    "bio_label_set", "write_jsonl", "read_jsonl", "DialogueSchemaError", "check_type_mix",
    "answer_to_json", "answer_from_json",
]
