import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from hsge.dialogue import WorldSpec, generate_world
from hsge.kg import KnowledgeGraph
from hsge.logical_form import (ACTIONS, GRAMMAR, C, Call, Const, FormStructureError, FormSyntaxError,
                               PrefixState, TypeCheckError, Value, bfs_search_gold, call, ent, execute,
                               format_form, num, parse, parse_form, pred, random_form, serialize, typ,
                               typecheck)


def ids(kg, *labels):
    return [kg.entities.id(x) for x in labels]


def to_form(tree):
    kind = tree[0]
    if kind in ("e", "p", "tp", "num") and isinstance(tree[1], int) and len(tree) == 2:
        return Const({"e": C.ENTITY, "p": C.PREDICATE, "tp": C.ENTITY_TYPE, "num": C.NUM}[kind], tree[1])
    return Call(kind, tuple(to_form(a) for a in tree[1:]))


def oracle_value(w, tree, form):
    raw = oracle.evaluate(w, to_tree(form))
    return Value.from_raw(_category(form), raw)


def to_tree(form):
    if isinstance(form, Const):
        return ({C.ENTITY: "e", C.PREDICATE: "p", C.ENTITY_TYPE: "tp", C.NUM: "num"}[form.category], form.value)
    return (form.action,) + tuple(to_tree(a) for a in form.args)


def _category(form):
    return GRAMMAR[form.action].result


def test_grammar_has_nineteen_actions():
    assert len(ACTIONS) == 19
    assert set(ACTIONS) == set(oracle.SIGNATURES)


def test_typecheck_examples(fig_kg):
    usa, biden = ids(fig_kg, "United States", "Joe Biden")
    p = fig_kg.predicates.id("IsPresidentOf")
    typecheck(call("count", call("find", ent(usa), pred(p))))
    with pytest.raises(TypeCheckError):
        typecheck(Call("count", (ent(biden),)))
    with pytest.raises(TypeCheckError) as err:
        typecheck(Call("union", (call("find", ent(usa), pred(p)),
                                 call("find_tuple_counts", pred(p), typ(0), typ(1)))))
    assert err.value.path == "root.args[1]"


def test_find_example(fig_kg):
    usa, biden, obama = ids(fig_kg, "United States", "Joe Biden", "Barack Obama")
    p = fig_kg.predicates.id("IsPresidentOf")
    assert execute(call("find", ent(usa), pred(p)), fig_kg) == Value.of_set({biden, obama})
    assert execute(call("find_reverse", ent(biden), pred(p)), fig_kg) == Value.of_set({usa})


def test_set_identities(fig_kg):
    usa = fig_kg.entities.id("United States")
    S = call("find", ent(usa), pred(0))
    assert execute(call("intersection", S, S), fig_kg) == execute(S, fig_kg)
    assert execute(call("difference", S, S), fig_kg) == Value.of_set(())


def test_tuple_counts_keep_zero_keys():
    kg = KnowledgeGraph.from_labels([("a", "p", "b")], [("a", "T"), ("b", "U"), ("c", "V")])
    d = call("find_tuple_counts", pred(0), typ(kg.types.id("V")), typ(0))
    c = kg.entities.id("c")
    assert execute(d, kg).as_dict() == {c: 0}
    assert execute(call("argmax", d), kg) == Value.of_set({c})
    assert execute(call("greater", d, num(0)), kg) == Value.of_set(())


def test_tuple_counts_keys(fig_kg):
    person, country = fig_kg.types.id("Person"), fig_kg.types.id("Country")
    p = fig_kg.predicates.id("IsPresidentOf")
    fwd = execute(call("find_tuple_counts", pred(p), typ(person), typ(country)), fig_kg).as_dict()
    rev = execute(call("find_reverse_tuple_counts", pred(p), typ(country), typ(person)), fig_kg).as_dict()
    biden, obama, macron, usa, france = ids(fig_kg, "Joe Biden", "Barack Obama", "Emmanuel Macron",
                                            "United States", "France")
    assert fwd == {biden: 1, obama: 1, macron: 1}
    assert rev == {usa: 2, france: 1}


def test_greater_and_lesser_follow_their_names(fig_kg):
    country, person = fig_kg.types.id("Country"), fig_kg.types.id("Person")
    d = call("find_reverse_tuple_counts", pred(fig_kg.predicates.id("IsPresidentOf")), typ(country), typ(person))
    usa, france = ids(fig_kg, "United States", "France")
    assert execute(call("greater", d, num(1)), fig_kg) == Value.of_set({usa})
    assert execute(call("lesser", d, num(2)), fig_kg) == Value.of_set({france})


def test_approx_tolerance(fig_kg):
    country, person = fig_kg.types.id("Country"), fig_kg.types.id("Person")
    d = call("find_reverse_tuple_counts", pred(fig_kg.predicates.id("IsPresidentOf")), typ(country), typ(person))
    assert len(execute(call("approx", d, num(3)), fig_kg).data) == 1
    assert len(execute(call("approx", d, num(3)), fig_kg, approx_tolerance=2).data) == 2
    assert execute(call("approx", d, num(3)), fig_kg, approx_tolerance=0).data == frozenset()


def test_number_slot_accepts_count(fig_kg):
    country, person = fig_kg.types.id("Country"), fig_kg.types.id("Person")
    p = fig_kg.predicates.id("IsPresidentOf")
    d = call("find_reverse_tuple_counts", pred(p), typ(country), typ(person))
    usa = fig_kg.entities.id("United States")
    form = call("equal", d, call("count", call("find", ent(usa), pred(p))))
    assert execute(form, fig_kg) == Value.of_set({usa})


def test_filter_multi_types(fig_kg):
    usa, scranton = ids(fig_kg, "United States", "Scranton")
    located, born = fig_kg.predicates.id("LocatedIn"), fig_kg.predicates.id("BornIn")
    cities = call("find", ent(usa), pred(located))
    people = call("find", ent(scranton), pred(born))
    both = call("union", cities, people)
    assert execute(call("filter_multi_types", both, cities), fig_kg) == Value.of_set({scranton})


def test_executor_matches_oracle_random_worlds():
    rng = random.Random(11)
    for seed in range(8):
        kg = generate_world(WorldSpec(seed=seed, n_entities=rng.randint(3, 8), n_predicates=2, n_types=2,
                                      density=1.5))
        w = oracle.World.of(kg)
        for tree in oracle.enumerate_depth2(w, cap=3000):
            form = to_form(tree)
            assert execute(form, kg) == oracle_value(w, tree, form), format_form(form)


def test_serialize_example():
    tokens, consts = serialize(call("find", ent(3), pred(1)))
    assert tokens == ["find", "e", "p"]
    assert consts == [ent(3), pred(1)]


def test_parse_missing_argument():
    with pytest.raises(FormStructureError) as err:
        parse(["count"])
    assert err.value.position == 1
    with pytest.raises(FormStructureError):
        parse(["find", "e", "p", "e"])
    with pytest.raises(FormStructureError):
        parse(["count", "e"])


def test_random_round_trip():
    rng = random.Random(0)
    for _ in range(1000):
        form = random_form(rng, 20, 5, 4)
        tokens, consts = serialize(form)
        assert parse(tokens, consts) == form


def test_text_syntax_round_trip(fig_kg):
    text = "filter_type(find(United States, IsPresidentOf), Person)"
    form = parse_form(text, fig_kg)
    assert format_form(form, fig_kg) == text
    assert parse_form("count(find(France, IsPresidentOf))", fig_kg) == call(
        "count", call("find", ent(fig_kg.entities.id("France")), pred(fig_kg.predicates.id("IsPresidentOf"))))
    with pytest.raises(FormSyntaxError):
        parse_form("find(Atlantis, IsPresidentOf)", fig_kg)
    with pytest.raises(FormSyntaxError):
        parse_form("find(France", fig_kg)


def test_prefix_state_accepts_serialized_forms():
    rng = random.Random(1)
    for _ in range(300):
        tokens, _ = serialize(random_form(rng, 5, 3, 3))
        state = PrefixState()
        for i, tok in enumerate(tokens):
            assert tok in state.allowed(len(tokens) - i)
            state = state.advance(tok)
        assert state.complete


def test_prefix_state_budget_is_tight():
    state = PrefixState()
    # the smallest complete form has three tokens (find e p)
    assert state.allowed(2) == []
    assert "find" in state.allowed(3)
    assert "count" not in state.allowed(3)
    assert "count" in state.allowed(4)


def test_bfs_examples(fig_kg):
    usa, biden, obama = ids(fig_kg, "United States", "Joe Biden", "Barack Obama")
    p = fig_kg.predicates.id("IsPresidentOf")
    found = bfs_search_gold([usa], [p], [], Value.of_set({biden, obama}), fig_kg, max_size=3)
    assert call("find", ent(usa), pred(p)) in found
    assert bfs_search_gold([usa], [p], [], Value.of_set({usa, biden}), fig_kg, max_size=4) == []
    born = fig_kg.predicates.id("BornIn")
    zero = bfs_search_gold([usa], [born], [], Value.of_num(0), fig_kg, max_size=4)
    assert call("count", call("find", ent(usa), pred(born))) in zero


def test_bfs_results_are_minimal_sorted_and_sound(fig_kg):
    usa, france = ids(fig_kg, "United States", "France")
    p = fig_kg.predicates.id("IsPresidentOf")
    gold = execute(call("union", call("find", ent(usa), pred(p)), call("find", ent(france), pred(p))), fig_kg)
    found = bfs_search_gold([usa, france], [p], [], gold, fig_kg, max_size=7)
    assert found
    sizes = {len(serialize(f)[0]) for f in found}
    assert len(sizes) == 1
    assert all(execute(f, fig_kg) == gold for f in found)
    assert len(found) == len(set(found))


# -- properties ---------------------------------------------------------------

WORLD = generate_world(WorldSpec(seed=7, n_entities=25, n_predicates=3, n_types=3, density=2.5))
forms = st.builds(lambda s: random_form(random.Random(s), 25, 3, 3, max_depth=3),
                  st.integers(0, 10 ** 9))
sets = st.builds(lambda s: random_form(random.Random(s), 25, 3, 3, max_depth=2, root=C.SET),
                 st.integers(0, 10 ** 9))
dicts = st.builds(lambda s: random_form(random.Random(s), 25, 3, 3, max_depth=1, root=C.DICT),
                  st.integers(0, 10 ** 9))


@given(forms)
def test_execution_deterministic(form):
    assert execute(form, WORLD) == execute(form, WORLD)


@given(sets, st.integers(0, 2))
def test_filter_type_is_subset(S, tp):
    assert execute(call("filter_type", S, typ(tp)), WORLD).data <= execute(S, WORLD).data


@given(dicts, st.integers(0, 6))
def test_comparison_lattice(d, n):
    ex = lambda a: execute(call(a, d, num(n)), WORLD).data  # noqa: E731
    assert ex("atleast") >= ex("greater")
    assert ex("equal") == ex("atmost") & ex("atleast")


@given(dicts)
def test_argmax_members_share_the_max(d):
    counts = execute(d, WORLD).as_dict()
    top = execute(call("argmax", d), WORLD).data
    if counts:
        best = max(counts.values())
        assert top <= execute(call("atleast", d, num(best)), WORLD).data
        assert {counts[k] for k in top} == {best}


@given(sets, sets)
def test_union_intersection_sizes(a, b):
    A, B = execute(a, WORLD).data, execute(b, WORLD).data
    u = execute(call("union", a, b), WORLD).data
    i = execute(call("intersection", a, b), WORLD).data
    assert len(u) + len(i) == len(A) + len(B)


@given(forms)
def test_round_trip_property(form):
    tokens, consts = serialize(form)
    assert parse(tokens, consts) == form
