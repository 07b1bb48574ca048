"""Typed logical-form language over a knowledge graph.

Forms are trees of :class:`Call` nodes (grammar actions) with :class:`Const`
leaves (entities, predicates, entity types, number literals).  A form is
serialized in prefix order for the decoder, with constants replaced by the
placeholder tokens ``e``, ``p``, ``tp`` and ``num``.
"""

from __future__ import annotations

import enum
import itertools
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .kg import KnowledgeGraph


class Category(str, enum.Enum):
    ENTITY = "entity"
    PREDICATE = "predicate"
    ENTITY_TYPE = "entity_type"
    NUM = "num_literal"
    SET = "set"
    DICT = "dict"
    BOOLEAN = "boolean"
    NUMBER = "number"

    def __repr__(self):
        return f"Category.{self.name}"


ENTRY_CATEGORIES = frozenset({Category.ENTITY, Category.PREDICATE, Category.ENTITY_TYPE, Category.NUM})
VALUE_CATEGORIES = frozenset({Category.SET, Category.DICT, Category.BOOLEAN, Category.NUMBER})

C = Category


@dataclass(frozen=True)
class ActionSpec:
    name: str
    args: tuple[Category, ...]
    result: Category


_TABLE = [
    ("find", (C.ENTITY, C.PREDICATE), C.SET),
    ("find_reverse", (C.ENTITY, C.PREDICATE), C.SET),
    ("filter_type", (C.SET, C.ENTITY_TYPE), C.SET),
    ("filter_multi_types", (C.SET, C.SET), C.SET),
    ("find_tuple_counts", (C.PREDICATE, C.ENTITY_TYPE, C.ENTITY_TYPE), C.DICT),
    ("find_reverse_tuple_counts", (C.PREDICATE, C.ENTITY_TYPE, C.ENTITY_TYPE), C.DICT),
    ("greater", (C.DICT, C.NUMBER), C.SET),
    ("lesser", (C.DICT, C.NUMBER), C.SET),
    ("equal", (C.DICT, C.NUMBER), C.SET),
    ("approx", (C.DICT, C.NUMBER), C.SET),
    ("atmost", (C.DICT, C.NUMBER), C.SET),
    ("atleast", (C.DICT, C.NUMBER), C.SET),
    ("argmin", (C.DICT,), C.SET),
    ("argmax", (C.DICT,), C.SET),
    ("is_in", (C.ENTITY, C.SET), C.BOOLEAN),
    ("count", (C.SET,), C.NUMBER),
    ("union", (C.SET, C.SET), C.SET),
    ("intersection", (C.SET, C.SET), C.SET),
    ("difference", (C.SET, C.SET), C.SET),
]

GRAMMAR: dict[str, ActionSpec] = {name: ActionSpec(name, args, res) for name, args, res in _TABLE}
ACTIONS: tuple[str, ...] = tuple(GRAMMAR)

PLACEHOLDERS: dict[Category, str] = {
    C.ENTITY: "e", C.PREDICATE: "p", C.ENTITY_TYPE: "tp", C.NUM: "num"}
PLACEHOLDER_CATEGORY: dict[str, Category] = {v: k for k, v in PLACEHOLDERS.items()}


def accepts(expected: Category, actual: Category) -> bool:
    """Whether a node of category ``actual`` may fill an argument slot ``expected``.

    Number slots take either a literal or a computed number (``count``).
    """
    if expected is actual:
        return True
    return expected is C.NUMBER and actual is C.NUM


# -- form nodes ---------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    category: Category
    value: int | None = None  # None marks an unfilled placeholder

    @property
    def is_placeholder(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class Call:
    action: str
    args: tuple

    def __post_init__(self):
        if self.action not in GRAMMAR:
            raise ValueError(f"unknown action {self.action!r}")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))


LogicalForm = Union[Call, Const]


def call(action: str, *args) -> Call:
    return Call(action, tuple(args))


def ent(i=None) -> Const:
    return Const(C.ENTITY, i)


def pred(i=None) -> Const:
    return Const(C.PREDICATE, i)


def typ(i=None) -> Const:
    return Const(C.ENTITY_TYPE, i)


def num(i=None) -> Const:
    return Const(C.NUM, i)


def category_of(node: LogicalForm) -> Category:
    if isinstance(node, Const):
        return node.category
    return GRAMMAR[node.action].result


def iter_nodes(node: LogicalForm):
    """Pre-order traversal."""
    yield node
    if isinstance(node, Call):
        for a in node.args:
            yield from iter_nodes(a)


def form_size(node: LogicalForm) -> int:
    return sum(1 for _ in iter_nodes(node))


def form_depth(node: LogicalForm) -> int:
    """Number of action levels; a bare constant has depth 0."""
    if isinstance(node, Const):
        return 0
    return 1 + max(form_depth(a) for a in node.args)


def constants_of(node: LogicalForm) -> list[Const]:
    return [n for n in iter_nodes(node) if isinstance(n, Const)]


def fill_constants(node: LogicalForm, constants: Iterable[Const]) -> LogicalForm:
    """Replace the placeholder leaves of ``node``, in prefix order, by ``constants``."""
    it = iter(constants)

    def go(n):
        if isinstance(n, Const):
            try:
                c = next(it)
            except StopIteration:
                raise FormStructureError(-1, "too few constants") from None
            if c.category is not n.category:
                raise FormStructureError(-1, f"constant {c} does not fill a {n.category.value} slot")
            return c
        return Call(n.action, tuple(go(a) for a in n.args))

    out = go(node)
    if next(it, None) is not None:
        raise FormStructureError(-1, "too many constants")
    return out


# -- typing -------------------------------------------------------------------

class TypeCheckError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def typecheck(form: LogicalForm) -> None:
    """Raise :class:`TypeCheckError` naming the first ill-typed node.

    The root may be any action; a bare constant is not an executable form.
    """
    if isinstance(form, Const):
        raise TypeCheckError("root", f"bare {form.category.value} constant is not a logical form")

    def go(node, path):
        if isinstance(node, Const):
            return
        spec = GRAMMAR[node.action]
        if len(node.args) != len(spec.args):
            raise TypeCheckError(path, f"{node.action} takes {len(spec.args)} arguments, got {len(node.args)}")
        for i, (arg, expected) in enumerate(zip(node.args, spec.args)):
            actual = category_of(arg)
            sub = f"{path}.args[{i}]"
            if not accepts(expected, actual):
                raise TypeCheckError(sub, f"{node.action} expects {expected.value}, got {actual.value}")
            go(arg, sub)

    go(form, "root")


def is_well_typed(form: LogicalForm) -> bool:
    try:
        typecheck(form)
    except TypeCheckError:
        return False
    return True


# -- values -------------------------------------------------------------------

@dataclass(frozen=True)
class Value:
    """Execution result.  ``data`` is a frozenset (set), a sorted tuple of
    (entity, count) pairs (dict), a bool or an int."""

    category: Category
    data: object

    @classmethod
    def of_set(cls, items) -> "Value":
        return cls(C.SET, frozenset(items))

    @classmethod
    def of_dict(cls, counts) -> "Value":
        items = counts.items() if hasattr(counts, "items") else counts
        return cls(C.DICT, tuple(sorted(items)))

    @classmethod
    def of_bool(cls, b) -> "Value":
        return cls(C.BOOLEAN, bool(b))

    @classmethod
    def of_num(cls, n) -> "Value":
        return cls(C.NUMBER, int(n))

    @classmethod
    def from_raw(cls, category: Category, raw) -> "Value":
        if category is C.SET:
            return cls.of_set(raw)
        if category is C.DICT:
            return cls.of_dict(raw)
        if category is C.BOOLEAN:
            return cls.of_bool(raw)
        if category in (C.NUMBER, C.NUM):
            return cls.of_num(raw)
        raise ValueError(f"{category} is not a value category")

    def as_dict(self) -> dict[int, int]:
        if self.category is not C.DICT:
            raise TypeError("not a dict value")
        return dict(self.data)

    def __repr__(self):
        if self.category is C.SET:
            return f"Set({sorted(self.data)})"
        if self.category is C.DICT:
            return f"Dict({dict(self.data)})"
        if self.category is C.BOOLEAN:
            return f"Bool({self.data})"
        return f"Num({self.data})"


class ExecutionError(Exception):
    pass


def _argext(d: dict, fn):
    if not d:
        return frozenset()
    best = fn(d.values())
    return frozenset(k for k, v in d.items() if v == best)


def apply_action(action: str, args: Sequence, kg: KnowledgeGraph, approx_tolerance: int = 1):
    """Apply one grammar action to already-evaluated raw arguments.

    Raw values: entity/predicate/type ids and number literals are ints, sets
    are frozensets, dicts are plain dicts.
    """
    if action == "find":
        return kg.subjects_of(args[0], args[1])
    if action == "find_reverse":
        return kg.objects_of(args[0], args[1])
    if action == "filter_type":
        s, tp = args
        return frozenset(x for x in s if tp in kg.entity_types[x])
    if action == "filter_multi_types":
        s1, s2 = args
        wanted = set()
        for y in s2:
            wanted |= kg.entity_types[y]
        return frozenset(x for x in s1 if not kg.entity_types[x].isdisjoint(wanted))
    if action == "find_tuple_counts":
        p, tp1, tp2 = args
        out = {}
        for a in kg.entities_of_type(tp1):
            out[a] = sum(1 for b in kg.objects_of(a, p) if tp2 in kg.entity_types[b])
        return out
    if action == "find_reverse_tuple_counts":
        p, tp1, tp2 = args
        out = {}
        for a in kg.entities_of_type(tp1):
            out[a] = sum(1 for b in kg.subjects_of(a, p) if tp2 in kg.entity_types[b])
        return out
    if action == "greater":
        d, n = args
        return frozenset(k for k, v in d.items() if v > n)
    if action == "lesser":
        d, n = args
        return frozenset(k for k, v in d.items() if v < n)
    if action == "equal":
        d, n = args
        return frozenset(k for k, v in d.items() if v == n)
    if action == "approx":
        d, n = args
        return frozenset(k for k, v in d.items() if abs(v - n) <= approx_tolerance)
    if action == "atmost":
        d, n = args
        return frozenset(k for k, v in d.items() if v <= n)
    if action == "atleast":
        d, n = args
        return frozenset(k for k, v in d.items() if v >= n)
    if action == "argmin":
        return _argext(args[0], min)
    if action == "argmax":
        return _argext(args[0], max)
    if action == "is_in":
        return args[0] in args[1]
    if action == "count":
        return len(args[0])
    if action == "union":
        return args[0] | args[1]
    if action == "intersection":
        return args[0] & args[1]
    if action == "difference":
        return args[0] - args[1]
    raise ExecutionError(f"unknown action {action!r}")


def evaluate_raw(node: LogicalForm, kg: KnowledgeGraph, approx_tolerance: int = 1):
    if isinstance(node, Const):
        if node.value is None:
            raise ExecutionError(f"unfilled {PLACEHOLDERS[node.category]} placeholder")
        return node.value
    args = [evaluate_raw(a, kg, approx_tolerance) for a in node.args]
    return apply_action(node.action, args, kg, approx_tolerance)


def execute(form: LogicalForm, kg: KnowledgeGraph, approx_tolerance: int = 1) -> Value:
    typecheck(form)
    raw = evaluate_raw(form, kg, approx_tolerance)
    return Value.from_raw(category_of(form), raw)


# -- prefix serialization -----------------------------------------------------

class FormStructureError(Exception):
    def __init__(self, position: int, message: str):
        where = f"position {position}" if position >= 0 else "constants"
        super().__init__(f"{where}: {message}")
        self.position = position


def serialize(form: LogicalForm) -> tuple[list[str], list[Const]]:
    """Prefix token list plus the constants in placeholder order."""
    tokens, consts = [], []
    for node in iter_nodes(form):
        if isinstance(node, Const):
            tokens.append(PLACEHOLDERS[node.category])
            consts.append(node)
        else:
            tokens.append(node.action)
    return tokens, consts


def parse(tokens: Sequence[str], constants: Sequence[Const] | None = None) -> LogicalForm:
    """Inverse of :func:`serialize`.  Without ``constants`` the leaves stay placeholders."""
    pos = 0

    def go(expected: Category | None):
        nonlocal pos
        if pos >= len(tokens):
            want = expected.value if expected else "an action"
            raise FormStructureError(pos, f"unexpected end of sequence, expected {want}")
        tok = tokens[pos]
        here = pos
        pos += 1
        if tok in PLACEHOLDER_CATEGORY:
            cat = PLACEHOLDER_CATEGORY[tok]
            if expected is None or not accepts(expected, cat):
                want = expected.value if expected else "an action"
                raise FormStructureError(here, f"placeholder {tok!r} where {want} expected")
            return Const(cat)
        if tok not in GRAMMAR:
            raise FormStructureError(here, f"unknown token {tok!r}")
        spec = GRAMMAR[tok]
        if expected is not None and not accepts(expected, spec.result):
            raise FormStructureError(here, f"{tok} yields {spec.result.value} where {expected.value} expected")
        return Call(tok, tuple(go(a) for a in spec.args))

    form = go(None)
    if pos != len(tokens):
        raise FormStructureError(pos, f"trailing tokens {list(tokens[pos:])}")
    if constants is not None:
        form = fill_constants(form, constants)
    return form


# -- grammar prefix automaton -------------------------------------------------

_ROOT = None  # sentinel for the root slot


def _min_sizes() -> dict:
    sizes = {c: 1 for c in ENTRY_CATEGORIES}
    for c in VALUE_CATEGORIES:
        sizes[c] = 10 ** 6
    changed = True
    while changed:
        changed = False
        for spec in GRAMMAR.values():
            s = 1 + sum(_slot_min(sizes, a) for a in spec.args)
            if s < sizes[spec.result]:
                sizes[spec.result] = s
                changed = True
    return sizes


def _slot_min(sizes, expected):
    if expected is _ROOT:
        return min(sizes[c] for c in VALUE_CATEGORIES)
    if expected is C.NUMBER:
        return min(sizes[C.NUMBER], sizes[C.NUM])
    return sizes[expected]


MIN_SIZE = _min_sizes()


class PrefixState:
    """Tracks which expected slots remain while a form is emitted token by token."""

    def __init__(self, stack=None):
        self.stack = [_ROOT] if stack is None else list(stack)

    @property
    def complete(self) -> bool:
        return not self.stack

    def remaining_min(self) -> int:
        return sum(_slot_min(MIN_SIZE, s) for s in self.stack)

    def _fits(self, tok: str) -> bool:
        if not self.stack:
            return False
        top = self.stack[-1]
        if tok in PLACEHOLDER_CATEGORY:
            return top is not _ROOT and accepts(top, PLACEHOLDER_CATEGORY[tok])
        spec = GRAMMAR.get(tok)
        if spec is None:
            return False
        return spec.result in VALUE_CATEGORIES if top is _ROOT else accepts(top, spec.result)

    def advance(self, tok: str) -> "PrefixState":
        if not self._fits(tok):
            raise FormStructureError(-1, f"token {tok!r} does not continue a valid prefix")
        stack = self.stack[:-1]
        if tok in GRAMMAR:
            stack.extend(reversed(GRAMMAR[tok].args))
        return PrefixState(stack)

    def allowed(self, budget: int | None = None) -> list[str]:
        """Form tokens that keep the prefix valid and completable within ``budget`` more tokens."""
        out = []
        for tok in itertools.chain(PLACEHOLDER_CATEGORY, GRAMMAR):
            if not self._fits(tok):
                continue
            if budget is not None and 1 + self.advance(tok).remaining_min() > budget:
                continue
            out.append(tok)
        return out


# -- textual syntax -----------------------------------------------------------

_KIND = {C.ENTITY: "entity", C.PREDICATE: "predicate", C.ENTITY_TYPE: "type"}


def format_form(form: LogicalForm, kg: KnowledgeGraph | None = None) -> str:
    """Function-call notation, e.g. ``find(USA, IsPresidentOf)``."""
    if isinstance(form, Const):
        if form.value is None:
            return PLACEHOLDERS[form.category]
        if form.category is C.NUM or kg is None:
            return str(form.value) if form.category is C.NUM else f"<{PLACEHOLDERS[form.category]}:{form.value}>"
        return kg.label_of(_KIND[form.category], form.value)
    return f"{form.action}({', '.join(format_form(a, kg) for a in form.args)})"


_TEXT_TOKEN = re.compile(r"\s*([(),]|[^(),]+)")


class FormSyntaxError(Exception):
    pass


def parse_form(text: str, kg: KnowledgeGraph) -> LogicalForm:
    """Parse function-call notation; constant labels are resolved against ``kg``."""
    toks = [m.group(1).strip() for m in _TEXT_TOKEN.finditer(text)]
    toks = [t for t in toks if t]
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take(expected=None):
        nonlocal pos
        if pos >= len(toks):
            raise FormSyntaxError("unexpected end of input")
        tok = toks[pos]
        if expected is not None and tok != expected:
            raise FormSyntaxError(f"expected {expected!r}, got {tok!r}")
        pos += 1
        return tok

    def node(expected):
        name = take()
        if peek() == "(":
            if name not in GRAMMAR:
                raise FormSyntaxError(f"unknown action {name!r}")
            take("(")
            spec = GRAMMAR[name]
            args = []
            for i, cat in enumerate(spec.args):
                if i:
                    take(",")
                args.append(node(cat))
            take(")")
            return Call(name, tuple(args))
        if expected is None:
            raise FormSyntaxError(f"form must start with an action, got {name!r}")
        if expected in (C.NUM, C.NUMBER):
            if not name.isdigit():
                raise FormSyntaxError(f"expected a number literal, got {name!r}")
            return Const(C.NUM, int(name))
        if expected not in _KIND:
            raise FormSyntaxError(f"constant {name!r} where {expected.value} expected")
        catalog = {C.ENTITY: kg.entities, C.PREDICATE: kg.predicates, C.ENTITY_TYPE: kg.types}[expected]
        idx = catalog.get(name)
        if idx is None:
            raise FormSyntaxError(f"unknown {_KIND[expected]} {name!r}")
        return Const(expected, idx)

    form = node(None)
    if pos != len(toks):
        raise FormSyntaxError(f"trailing input at {toks[pos]!r}")
    typecheck(form)
    return form


# -- random forms (fuzzing) ---------------------------------------------------

def random_form(rng: random.Random, n_entities: int, n_predicates: int, n_types: int,
                max_depth: int = 3, root: Category | None = None, max_num: int = 5) -> Call:
    """Random well-typed form over the given id ranges."""

    def leaf(cat):
        if cat is C.ENTITY:
            return Const(cat, rng.randrange(n_entities))
        if cat is C.PREDICATE:
            return Const(cat, rng.randrange(n_predicates))
        if cat is C.ENTITY_TYPE:
            return Const(cat, rng.randrange(n_types))
        return Const(C.NUM, rng.randint(0, max_num))

    producers = {}
    for spec in GRAMMAR.values():
        producers.setdefault(spec.result, []).append(spec)
    shallow = {c: [s for s in specs if all(a in ENTRY_CATEGORIES or a is C.NUMBER for a in s.args)]
               for c, specs in producers.items()}

    def gen(cat, depth, top=False):
        if cat in ENTRY_CATEGORIES:
            return leaf(cat)
        if cat is C.NUMBER and not top and (depth <= 1 or rng.random() < 0.5):
            return leaf(C.NUM)
        pool = producers[cat] if depth > 1 else shallow.get(cat) or producers[cat]
        spec = rng.choice(pool)
        return Call(spec.name, tuple(gen(a, depth - 1) for a in spec.args))

    if root is None:
        root = rng.choice(sorted(VALUE_CATEGORIES, key=lambda c: c.value))
    return gen(root, max(max_depth, 1), top=True)


# -- breadth-first gold search ------------------------------------------------

def _sort_key(form: LogicalForm):
    tokens, consts = serialize(form)
    out, ci = [], 0
    for t in tokens:
        if t in PLACEHOLDER_CATEGORY:
            out.append(f"{t}:{consts[ci].value}")
            ci += 1
        else:
            out.append(t)
    return tuple(out)


def bfs_search_gold(entities: Iterable[int], predicates: Iterable[int], types: Iterable[int],
                    gold_answer: Value, kg: KnowledgeGraph, max_size: int = 6,
                    numbers: Iterable[int] = (), approx_tolerance: int = 1) -> list[LogicalForm]:
    """All minimal-size well-typed forms over the given constants that execute to ``gold_answer``.

    Candidates are enumerated layer by layer in node count; sub-results are
    cached per term so each candidate costs one action application.
    """
    # bank[category][size] -> list of (node, raw value)
    bank: dict[Category, dict[int, list]] = {c: {} for c in Category}
    bank[C.ENTITY][1] = [(Const(C.ENTITY, e), e) for e in sorted(set(entities))]
    bank[C.PREDICATE][1] = [(Const(C.PREDICATE, p), p) for p in sorted(set(predicates))]
    bank[C.ENTITY_TYPE][1] = [(Const(C.ENTITY_TYPE, t), t) for t in sorted(set(types))]
    bank[C.NUM][1] = [(Const(C.NUM, n), n) for n in sorted(set(numbers))]

    def candidates(cat, size):
        items = bank[cat].get(size, [])
        if cat is C.NUMBER:
            items = items + bank[C.NUM].get(size, [])
        return items

    target = gold_answer
    for size in range(2, max_size + 1):
        found = []
        for spec in GRAMMAR.values():
            arity = len(spec.args)
            budget = size - 1
            if budget < arity:
                continue
            layer = bank[spec.result].setdefault(size, [])
            for split in _compositions(budget, arity):
                pools = [candidates(cat, s) for cat, s in zip(spec.args, split)]
                if not all(pools):
                    continue
                for combo in itertools.product(*pools):
                    raw = apply_action(spec.name, [v for _, v in combo], kg, approx_tolerance)
                    node = Call(spec.name, tuple(n for n, _ in combo))
                    layer.append((node, raw))
                    if spec.result is target.category and _raw_equals(raw, target):
                        found.append(node)
        if found:
            return sorted(found, key=_sort_key)
    return []


def _raw_equals(raw, target: Value) -> bool:
    if target.category is C.DICT:
        return len(raw) == len(target.data) and tuple(sorted(raw.items())) == target.data
    return raw == target.data


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest
