"""Acceptance gate.  One test per criterion; the terminal summary prints a
PASS/FAIL line for each (see conftest.py)."""

import math
import random
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import oracle
from hsge.dialogue import SIMPLE_COREF, SIMPLE_DIRECT, WorldSpec, generate_corpus, generate_dialogue, generate_world
from hsge.evaluate import bench_context, evaluate, quadratic_r2, report_from_records, select
from hsge.hsg import ISA, HistorySemanticGraph
from hsge.kg import KnowledgeGraph
from hsge.logical_form import C, bfs_search_gold, call, constants_of, ent, execute, form_size, pred, random_form, typ
from hsge.model import Featurizer, HSGEModel, ModelConfig, WordVocab
from hsge.model.network import temporal_embedding
from hsge.model.train import Trainer, checkpoint_bytes
from hsge.tensor import (LSTM, GATLayer, MultiHeadAttention, TransformerConv, TransformerDecoderLayer,
                         TransformerEncoderLayer, causal_mask, grad_check, log_softmax, nll_loss, softmax)
from test_logical_form import oracle_value, to_form
from test_model import batch_of, build, chain, tiny  # noqa: F401

SMOKE = dict(hidden_size=32, word_embedding_dimension=32, head_number=2, encoder_layer_number=1,
             decoder_layer_number=1, feed_forward_size=64, gat_embedding_dimension=32, batch_size=8)


def rng(seed):
    return np.random.default_rng(seed)


# -- 1: executor vs oracle ------------------------------------------------------------

def test_criterion_1_executor_matches_oracle(record_property):
    r = random.Random(1)
    t0, worlds, forms, bad = time.perf_counter(), 0, 0, 0
    for seed in range(100):
        spec = WorldSpec(seed=seed, n_entities=r.randint(4, 50), n_predicates=r.randint(1, 4),
                         n_types=r.randint(1, 4), density=r.uniform(1.0, 3.0))
        kg = generate_world(spec)
        w = oracle.World.of(kg)
        for tree in oracle.enumerate_depth2(w, cap=10_000):
            form = to_form(tree)
            forms += 1
            bad += execute(form, kg) != oracle_value(w, tree, form)
        worlds += 1
    dt = time.perf_counter() - t0
    record_property("detail", f"{worlds} worlds, {forms} forms, {bad} mismatches, {dt:.0f}s")
    assert bad == 0 and dt <= 300


# -- 2: BFS soundness and recovery ----------------------------------------------------

def test_criterion_2_bfs_recovers_gold(record_property):
    kg = generate_world(WorldSpec())
    turns = [t for d in generate_corpus(kg, 100, seed=7) for t in d.turns][:500]
    t0, hit, unsound = time.perf_counter(), 0, 0
    for t in turns:
        cs = constants_of(t.gold_form)
        of = lambda cat: [c.value for c in cs if c.category is cat]  # noqa: E731
        found = bfs_search_gold(of(C.ENTITY), of(C.PREDICATE), of(C.ENTITY_TYPE), t.answer, kg,
                                max_size=form_size(t.gold_form), numbers=of(C.NUM))
        unsound += sum(execute(f, kg) != t.answer for f in found)
        hit += bool(found)
    dt = time.perf_counter() - t0
    rate = hit / len(turns)
    record_property("detail", f"recovered {hit}/{len(turns)} ({rate:.1%}), {unsound} unsound, {dt:.1f}s")
    assert len(turns) == 500 and unsound == 0 and rate >= 0.99 and dt <= 600


# -- 3: gradient suite ------------------------------------------------------------------

def _layer_checks():
    mask = rng(1).random((2, 3, 4)) > 0.3
    mask[..., 0] = True
    mha = MultiHeadAttention(rng(2), 4, 2)
    enc, dec = TransformerEncoderLayer(rng(3), 4, 2, 8), TransformerDecoderLayer(rng(4), 4, 2, 8)
    lstm = LSTM(rng(5), 3, 2)
    conv, gat = TransformerConv(rng(6), 4, heads=2), GATLayer(rng(7), 4, 4, heads=2)
    g = rng(8)
    x, edges, ef = g.normal(size=(5, 4)), [tuple(e) for e in g.integers(0, 5, size=(8, 2))], g.normal(size=(8, 4))
    target = np.array([0, 2, 1, -100])
    return {
        "softmax": (lambda a: softmax(a, axis=-1), [rng(9).normal(size=(3, 5))], ()),
        "masked softmax": (lambda a: softmax(a, mask=mask), [rng(10).normal(size=(2, 3, 4))], ()),
        "nll loss": (lambda a: nll_loss(log_softmax(a), target), [rng(11).normal(size=(4, 3))], ()),
        "multi-head attention": (lambda q, kv: mha(q, kv, kv, mask),
                                 [rng(12).normal(size=(2, 3, 4)), rng(13).normal(size=(2, 4, 4))], mha.parameters()),
        "transformer layers": (lambda a, b: dec(b, enc(a), causal_mask(2)),
                               [rng(14).normal(size=(1, 3, 4)), rng(15).normal(size=(1, 2, 4))],
                               enc.parameters() + dec.parameters()),
        "lstm": (lstm, [rng(16).normal(size=(2, 3, 3))], lstm.parameters()),
        "transformer conv": (lambda a, b: conv(a, edges, b), [x, ef], conv.parameters()),
        "gat": (lambda a: gat(a, edges), [x], gat.parameters()),
    }


def _end_to_end_error(kg, d):
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    batch = batch_of(fz, d, cfg)

    def loss():
        return model.joint_loss(model.forward(batch), batch)[0]

    model.zero_grad()
    loss().backward()
    g, eps, worst = rng(0), 1e-5, 0.0
    for _, p in model.named_parameters():
        for i in g.choice(p.data.size, size=min(3, p.data.size), replace=False):
            old = p.data.flat[i]
            p.data.flat[i] = old + eps
            fp = loss().item()
            p.data.flat[i] = old - eps
            fm = loss().item()
            p.data.flat[i] = old
            num = (fp - fm) / (2 * eps)
            ana = p.grad.flat[i] if p.grad is not None else 0.0
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


def test_criterion_3_gradient_suite(record_property, chain):  # noqa: F811
    errors = {name: grad_check(fn, xs, params=ps) for name, (fn, xs, ps) in _layer_checks().items()}
    layer_worst = max(errors.values())
    e2e = _end_to_end_error(*chain)
    failing = [n for n, e in errors.items() if e > 1e-4]
    record_property("detail", f"layers max rel err {layer_worst:.1e} ({len(errors)} checks), "
                              f"end-to-end {e2e:.1e}")
    assert not failing and e2e <= 1e-3


# -- 4: temporal embedding ------------------------------------------------------------

def test_criterion_4_temporal_formula(record_property):
    worst = 0.0
    for d in (4, 64):
        got = temporal_embedding(np.arange(16), d)
        for D in range(16):
            for i in range(d // 2):
                angle = D / 10000 ** (2 * i / d)
                worst = max(worst, abs(got[D, 2 * i] - math.sin(angle)), abs(got[D, 2 * i + 1] - math.cos(angle)))
    zero = temporal_embedding([0], 64)[0]
    alternating = np.array_equal(zero, np.tile([0.0, 1.0], 32))
    record_property("detail", f"max abs err {worst:.1e}; D=0 alternating: {alternating}")
    assert worst <= 1e-9 and alternating


# -- 5: HSG rules and prune bound ---------------------------------------------------

def test_criterion_5_hsg_rules(record_property):
    kg = KnowledgeGraph.from_labels(
        [("Joe Biden", "IsPresidentOf", "USA"), ("Emmanuel Macron", "IsPresidentOf", "France")],
        [("Joe Biden", "Person"), ("Emmanuel Macron", "Person"), ("USA", "Country"), ("France", "Country")])
    form = call("filter_type", call("find", ent(kg.entities.id("USA")), pred(0)), typ(kg.types.id("Person")))
    snap = HistorySemanticGraph().update_from_form(form, kg, 1).snapshot(1)
    edges = {tuple(line.split("\t")[:3]) for line in
             HistorySemanticGraph().update_from_form(form, kg, 1).dump(kg).splitlines()}
    expected = {("Joe Biden", "IsPresidentOf", "USA"), ("Joe Biden", "IsA", "Person"), ("USA", "IsA", "Country")}
    example_ok = snap.n_nodes == 4 and snap.n_edges == 3 and edges == expected

    world = generate_world(WorldSpec(seed=9, n_entities=30, n_predicates=4, n_types=3))
    r = random.Random(0)
    shape = (len(world.entities), len(world.predicates), len(world.types))
    violations = 0
    for _ in range(1000):
        limit = r.choice([0, 1, 2, 5, 20, 50])
        hsg = HistorySemanticGraph(limit)
        for turn in range(1, r.randint(2, 8)):
            hsg.update_from_form(random_form(r, *shape, max_depth=3), world, turn)
            hsg.prune()
            violations += sum(p != ISA for _, p, _ in hsg.edges) > limit
    record_property("detail", f"worked example {'exact' if example_ok else 'WRONG'}; "
                              f"1000 sequences, {violations} bound violations")
    assert example_ok and violations == 0


# -- 6 / 7: learning -------------------------------------------------------------------

def corpus(seed):
    kg = generate_world(WorldSpec())
    ds = generate_corpus(kg, 2000, seed=seed)
    return kg, ds[:1800], ds[1800:]


def direct_scores(records):
    direct = select(records, SIMPLE_DIRECT)
    rep = report_from_records(direct)
    return rep.subtasks["exact form"], rep.overall


def long_range_coref_f1(records):
    recs = select(records, SIMPLE_COREF, long_range=True)
    return report_from_records(recs).overall, len(recs)


def train(kg, train_set, cfg, epochs, callback=None):
    vocab = WordVocab.build(kg, train_set)
    fz = Featurizer(kg, vocab, cfg)
    model = HSGEModel(cfg, vocab, kg)
    log = Trainer(model, fz, [e for d in train_set for e in fz.dialogue_examples(d)]).run(epochs, callback=callback)
    return model, fz, log


def test_criterion_6_learning_smoke(record_property):
    kg, train_set, test_set = corpus(0)
    history = []

    def stop_when_good(trainer, epoch):
        _, records = evaluate(trainer.model, trainer.featurizer, test_set)
        history.append(direct_scores(records))
        return min(history[-1]) >= 0.9

    t0 = time.perf_counter()
    _, _, log = train(kg, train_set, ModelConfig(seed=0), 30, stop_when_good)
    dt = time.perf_counter() - t0
    em, f1 = history[-1]
    record_property("detail", f"Simple (Direct) exact form {em:.3f}, F1 {f1:.3f} after {log.epochs} epochs, "
                              f"{dt / 60:.1f} min")
    assert em >= 0.9 and f1 >= 0.9 and dt <= 3600


ABLATION_EPOCHS = 4


def test_criterion_7_hsg_ablation_trend(record_property):
    gaps = []
    for seed in range(3):
        kg, train_set, test_set = corpus(seed)
        scores = {}
        for name, overrides in (("full", {}), ("no-hsg", {"use_hsg": False})):
            model, fz, _ = train(kg, train_set, ModelConfig(seed=seed, **overrides), ABLATION_EPOCHS)
            _, records = evaluate(model, fz, test_set)
            scores[name], n = long_range_coref_f1(records)
        gaps.append(scores["full"] - scores["no-hsg"])
    wins = sum(g > 0 for g in gaps)
    p = 0.5 ** wins if wins == len(gaps) else 1.0
    record_property("detail", "gaps " + ", ".join(f"{g:+.3f}" for g in gaps) + f"; {wins}/3 positive, sign p={p}")
    assert wins == len(gaps)


# -- 8: context cost --------------------------------------------------------------------

def test_criterion_8_context_cost(record_property):
    kg = generate_world(WorldSpec())
    retention = 4
    cfg = ModelConfig(retention=retention)
    dialogues = [generate_dialogue(kg, f"cost:{i}", n_turns=16) for i in range(5)]
    vocab = WordVocab.build(kg, dialogues)
    concat_cfg = cfg.replace(use_hsg=False)
    m_c, m_h = HSGEModel(concat_cfg, vocab, kg), HSGEModel(cfg, vocab, kg)
    fz_c, fz_h = Featurizer(kg, vocab, concat_cfg), Featurizer(kg, vocab, cfg)
    r2s, late_max, node_max, hsg_len = [], [], 0, 0
    for d in dialogues:
        rows = bench_context(m_c, fz_c, m_h, fz_h, d)
        concat = [r for r in rows if r.variant == "concat"]
        hsg = [r for r in rows if r.variant == "hsg"]
        r2s.append(quadratic_r2([r.context_tokens for r in concat], [r.encoder_pairs for r in concat]))
        late_max.append(max(r.aggregation_pairs for r in hsg[8:]))
        node_max = max(node_max, max(r.hsg_nodes for r in hsg))
        hsg_len = max(hsg_len, max(r.context_tokens for r in hsg))
    node_bound = 2 * retention + len(kg.types)
    pair_bound = cfg.head_number * hsg_len * node_bound
    record_property("detail", f"concat quadratic R^2 min {min(r2s):.4f}; hsg nodes <= {node_max} "
                              f"(bound {node_bound}), late aggregation pairs <= {max(late_max)} (bound {pair_bound})")
    assert min(r2s) >= 0.99 and node_max <= node_bound and max(late_max) <= pair_bound


# -- 9: detection label count -----------------------------------------------------------

def test_criterion_9_detection_vocabulary(record_property):
    n = 3054
    kg = KnowledgeGraph.from_labels([("e0", "r", "e1")], [(f"e{i}", f"type{i}") for i in range(n)])
    cfg = ModelConfig(hidden_size=8, word_embedding_dimension=8, head_number=2, feed_forward_size=8,
                      gat_embedding_dimension=8)
    model = HSGEModel(cfg, WordVocab.build(kg), kg)
    fz = Featurizer(kg, model.vocab, cfg)
    record_property("detail", f"{len(kg.types)} types -> {model.n_bio} detection labels")
    assert len(kg.types) == n and model.n_bio == len(fz.labels.bio) == 2 * n + 1 == 6109


# -- 10: determinism ------------------------------------------------------------------

def test_criterion_10_determinism(record_property, small_world, small_corpus):
    blobs = []
    with threadpool_limits(limits=1):
        for _ in range(2):
            cfg = ModelConfig(**SMOKE, seed=7)
            model, fz = build(small_world, small_corpus, cfg)
            tr = Trainer(model, fz, [e for d in small_corpus for e in fz.dialogue_examples(d)])
            tr.run(epochs=1000, max_steps=100)
            blobs.append(checkpoint_bytes(model, tr.log.steps))
    same = blobs[0] == blobs[1]
    record_property("detail", f"100 steps twice: checkpoints of {len(blobs[0])} bytes {'identical' if same else 'DIFFER'}")
    assert tr.log.steps == 100 and same
