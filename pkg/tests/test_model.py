import math

import numpy as np
import pytest

from hsge.dialogue import SIMPLE_DIRECT, Dialogue, Turn, WorldSpec, generate_corpus, generate_world
from hsge.hsg import HistorySemanticGraph, HsgSnapshot
from hsge.kg import KnowledgeGraph
from hsge.logical_form import execute, parse_form
from hsge.model import (ConfigError, Featurizer, HSGEModel, ModelConfig, TemporalRangeError, WordVocab, collate,
                        parse_config, parse_temporal)
from hsge.model.features import temporal_distance
from hsge.model.network import temporal_embedding
from hsge.model.train import Trainer, checkpoint_bytes, train_step
from hsge.tensor import Adam, Embedding
from hsge.tensor import autograd as ag
from hsge.tensor import sinusoid

TINY = dict(hidden_size=8, word_embedding_dimension=8, head_number=2, encoder_layer_number=1,
            decoder_layer_number=1, feed_forward_size=16, gat_layer_number=1, gat_embedding_dimension=8,
            train_dtype="float64", seed=1)


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


@pytest.fixture
def chain():
    """A world whose second turn sees a three-node history graph."""
    kg = KnowledgeGraph.from_labels([("Aro", "likes", "Bel"), ("Bel", "likes", "Cam")],
                                    [("Aro", "thing"), ("Bel", "thing"), ("Cam", "thing")])
    f1 = parse_form("find(Bel, likes)", kg)
    f2 = parse_form("union(find_reverse(Aro, likes), find(Cam, likes))", kg)
    turns = [Turn("which thing likes Bel?", SIMPLE_DIRECT, f1, execute(f1, kg)),
             Turn("what does Aro like or likes Cam?", SIMPLE_DIRECT, f2, execute(f2, kg))]
    return kg, Dialogue("c", turns)


def build(kg, dialogues, cfg):
    vocab = WordVocab.build(kg, dialogues)
    fz = Featurizer(kg, vocab, cfg)
    return HSGEModel(cfg, vocab, kg), fz


def batch_of(fz, dialogue, cfg, turns=None):
    ex = fz.dialogue_examples(dialogue)
    if turns is not None:
        ex = [ex[i] for i in turns]
    return collate(ex, fz.labels, cfg)


# -- config -----------------------------------------------------------------------

def test_config_defaults_and_parse():
    cfg = ModelConfig()
    assert cfg.lambdas == (1.0, 1.0, 1.0, 1.0)
    assert cfg.max_entity_slots == 5 and cfg.max_turns == 16
    text = "# comment\nhidden_size = 32\nhead_number=2\nword_embedding_dimension = 32\nuse_hsg = false\n" \
           "retention = none\nloss_component_weight = 1, 0.5, 1, 0\n"
    got = parse_config(text)
    assert (got.hidden_size, got.use_hsg, got.retention) == (32, False, None)
    assert got.lambdas == (1.0, 0.5, 1.0, 0.0)
    assert parse_config(cfg.dumps()) == cfg


@pytest.mark.parametrize("text", ["hidden_size = 30\n", "what = 1\n", "use_hsg = maybe\n", "no equals sign\n",
                                  "aggregation_level = sentence\n", "loss_component_weight = 1,1\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text,expected", [("absolute-sinusoid", ("absolute", "sinusoid")),
                                           ("relative:learnable", ("relative", "learnable")),
                                           ("relativexsinusoid", ("relative", "sinusoid"))])
def test_parse_temporal(text, expected):
    assert parse_temporal(text) == expected


def test_parse_temporal_rejects():
    with pytest.raises(ConfigError):
        parse_temporal("cosine")


# -- input and temporal embeddings ----------------------------------------------------

def test_first_turn_input_layout(fig_kg):
    fz = Featurizer(fig_kg, WordVocab.build(fig_kg), ModelConfig())
    tokens, _ = fz.input_tokens([], "who is the president of the United States")
    assert tokens[:3] == ["[CLS]", "[SEP]", "[SEP]"]
    assert len(tokens) == 1 + 0 + 1 + 0 + 1 + 8


def test_unknown_word_maps_to_unk(fig_kg):
    vocab = WordVocab.build(fig_kg)
    assert vocab.encode(["zzzz"]).tolist() == [vocab.index["[UNK]"]]


def test_temporal_sinusoid_values():
    assert np.allclose(temporal_embedding([0], 4)[0], [0, 1, 0, 1])
    assert np.allclose(temporal_embedding([1], 4)[0], [math.sin(1), math.cos(1), math.sin(1e-2), math.cos(1e-2)])


def test_temporal_learnable_rows_and_range():
    table = Embedding(np.random.default_rng(0), 4, 6)
    assert np.array_equal(temporal_embedding([2], 6, "learnable", table).data[0], table.weight.data[2])
    with pytest.raises(TemporalRangeError):
        temporal_embedding([4], 6, "learnable", table)


def test_distance_modes():
    snap = HsgSnapshot((("entity", 0, 2), ("type", 0, 5)), (), current_turn=5)
    assert temporal_distance(snap, "absolute").tolist() == [2, 5]
    assert temporal_distance(snap, "relative").tolist() == [3, 0]


# -- forward pass properties -------------------------------------------------------------

def all_rows_normalized(out):
    for key in ("ed", "el", "dec", "c", "ptr"):
        if out[key] is not None:
            assert np.allclose(np.exp(out[key].data).sum(-1), 1.0, atol=1e-6), key


def test_distributions_normalized(small_world, small_corpus):
    cfg = ModelConfig(train_dtype="float64", hidden_size=16, word_embedding_dimension=16, head_number=2)
    model, fz = build(small_world, small_corpus, cfg)
    batch = collate([e for d in small_corpus[:3] for e in fz.dialogue_examples(d)], fz.labels, cfg)
    out = model.forward(batch)
    all_rows_normalized(out)
    assert out["c"].shape[-1] == len(small_world.types) + len(small_world.predicates)
    assert out["ed"].shape[-1] == 2 * len(small_world.types) + 1
    assert out["dec"].shape[:2] == batch.dec_out.shape


def test_empty_graph_modes_agree(chain):
    kg, d = chain
    outs = []
    for level in ("token", "utterance"):
        cfg = tiny(aggregation_level=level)
        model, fz = build(kg, [d], cfg)
        out = model.forward(batch_of(fz, d, cfg, [0]))
        assert np.array_equal(out["enc"].x_bar.data, out["enc"].x.data)
        outs.append(out)
    for key in ("ed", "el", "dec", "c"):
        assert np.array_equal(outs[0][key].data, outs[1][key].data)


def test_utterance_shift_is_shared(chain):
    kg, d = chain
    cfg = tiny(aggregation_level="utterance")
    model, fz = build(kg, [d], cfg)
    enc = model.forward(batch_of(fz, d, cfg, [1]))["enc"]
    assert enc.graph.n_total == 3
    diff = (enc.x_bar.data - enc.x.data)[0]
    assert np.abs(diff).max() > 0
    assert np.allclose(diff, diff[0])


def test_token_mode_single_node(chain):
    kg, d = chain
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    ex = fz.dialogue_examples(d)[1]
    ex.snapshot = HsgSnapshot(ex.snapshot.nodes[:1], (), ex.snapshot.current_turn)
    ex.ptr[ex.ptr > 1] = 0
    enc = model.encode(collate([ex], fz.labels, cfg))
    agg = model.aggregate
    node_value = agg.o(agg.v(enc.H_bar.reshape(1, 1, 8))).data[0, 0]
    assert np.allclose(enc.x_bar.data[0] - enc.x.data[0], node_value)
    # one isolated node: H is the conv's self term, H-bar adds the temporal vector
    assert np.allclose(enc.H_bar.data - enc.H.data, sinusoid([1], 8))


def test_tim_off_equals_zero_temporal(chain):
    kg, d = chain
    cfg = tiny()
    off, fz = build(kg, [d], cfg.replace(use_temporal=False))
    on, _ = build(kg, [d], cfg)
    on.temporal = lambda D, dtype: np.zeros((len(D), cfg.hidden_size), dtype=dtype)
    batch = batch_of(fz, d, cfg)
    a, b = off.forward(batch), on.forward(batch)
    assert np.array_equal(a["enc"].H_bar.data, a["enc"].H.data)
    for key in ("ed", "el", "dec", "c", "ptr"):
        assert np.array_equal(a[key].data, b[key].data)


def test_hsg_off_ignores_graph(chain):
    kg, d = chain
    cfg = tiny(use_hsg=False)
    model, fz = build(kg, [d], cfg)
    out = model.forward(batch_of(fz, d, cfg))
    assert out["enc"].H is None and out["ptr"] is None
    assert np.array_equal(out["enc"].x_bar.data, out["enc"].x.data)


def test_zero_layer_encoder(chain):
    kg, d = chain
    cfg = tiny(encoder_layer_number=0)
    model, fz = build(kg, [d], cfg)
    enc = model.encode(batch_of(fz, d, cfg))
    assert enc.h_enc is enc.x_bar


def test_batch_of_one_matches_batched(small_world, small_corpus):
    cfg = tiny(hidden_size=16, word_embedding_dimension=16)
    model, fz = build(small_world, small_corpus, cfg)
    ex = [e for d in small_corpus[:2] for e in fz.dialogue_examples(d)]
    full = model.forward(collate(ex, fz.labels, cfg))
    for i, e in enumerate(ex):
        one = model.forward(collate([e], fz.labels, cfg))
        n, m = len(e.ids), len(e.dec_in)
        assert np.allclose(full["ed"].data[i, :n], one["ed"].data[0], atol=1e-10)
        assert np.allclose(full["dec"].data[i, :m], one["dec"].data[0], atol=1e-10)
        assert np.allclose(full["c"].data[i, :m], one["c"].data[0], atol=1e-10)
        k = one["ptr"].shape[-1]
        assert np.allclose(full["ptr"].data[i, :m, :k], one["ptr"].data[0], atol=1e-10)


def test_pointer_targets_recover_history_entity(chain):
    kg, d = chain
    _, fz = build(kg, [d], tiny())
    ex = fz.dialogue_examples(d)[1]
    # union(find_reverse(Aro ...), find(Cam ...)): both named in the question, pointer says "none"
    assert [p for p in ex.ptr if p >= 0] == [0, 0]


# -- loss and gradients -------------------------------------------------------------------

def test_perfect_predictions_zero_loss(chain):
    kg, d = chain
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    batch = batch_of(fz, d, cfg)
    out = model.forward(batch)

    def perfect(t, gold):
        x = np.full(t.shape, -1e30)
        g = np.where(gold < 0, 0, gold)
        np.put_along_axis(x, g[..., None], 0.0, axis=-1)
        return ag.Tensor(x)

    fake = {k: perfect(out[k], getattr(batch, name)) for k, name in
            (("ed", "bio"), ("el", "link"), ("dec", "dec_out"), ("c", "concept"), ("ptr", "ptr"))}
    loss, parts = model.joint_loss(fake, batch)
    assert loss.item() == 0.0


def test_loss_length_mismatch(chain):
    kg, d = chain
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    b0, b1 = batch_of(fz, d, cfg, [0]), batch_of(fz, d, cfg, [1])
    with pytest.raises(ValueError):
        model.joint_loss(model.forward(b0), b1)


CONCEPT_PARAMS = ("gat.", "concept_proj.")


def test_zero_concept_weight_removes_concept_gradient(chain):
    kg, d = chain
    cfg = tiny(loss_component_weight=(1.0, 1.0, 1.0, 0.0))
    model, fz = build(kg, [d], cfg)
    batch = batch_of(fz, d, cfg)
    loss, _ = model.joint_loss(model.forward(batch), batch)
    loss.backward()
    named = dict(model.named_parameters())
    concept = [p for n, p in named.items() if n.startswith(CONCEPT_PARAMS)]
    assert concept and all(p.grad is None or not p.grad.any() for p in concept)
    assert named["word_emb.weight"].grad is not None and named["word_emb.weight"].grad.any()


def test_end_to_end_gradient_check(chain):
    kg, d = chain
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    batch = batch_of(fz, d, cfg)
    assert batch.graph.n_total == 3

    def loss():
        return model.joint_loss(model.forward(batch), batch)[0]

    model.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    eps, worst, checked = 1e-5, 0.0, 0
    for name, p in model.named_parameters():
        for i in rng.choice(p.data.size, size=min(3, p.data.size), replace=False):
            old = p.data.flat[i]
            p.data.flat[i] = old + eps
            fp = loss().item()
            p.data.flat[i] = old - eps
            fm = loss().item()
            p.data.flat[i] = old
            num = (fp - fm) / (2 * eps)
            ana = p.grad.flat[i] if p.grad is not None else 0.0
            denom = max(abs(num), abs(ana), 1e-6)
            worst = max(worst, abs(num - ana) / denom)
            checked += 1
    assert checked > 100
    assert worst <= 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_diagnostics(chain):
    kg, d = chain
    cfg = tiny()
    model, fz = build(kg, [d], cfg)
    model.ed_out.bias.data[:] = np.inf
    with pytest.raises(FloatingPointError):
        train_step(model, Adam(model.parameters()), batch_of(fz, d, cfg))


# -- training -----------------------------------------------------------------------------

SMOKE = dict(hidden_size=32, word_embedding_dimension=32, head_number=2, encoder_layer_number=1,
             decoder_layer_number=1, feed_forward_size=64, gat_embedding_dimension=32, batch_size=8)


def test_training_is_deterministic(small_world, small_corpus):
    curves, blobs = [], []
    for _ in range(2):
        cfg = ModelConfig(**SMOKE, seed=3)
        model, fz = build(small_world, small_corpus, cfg)
        tr = Trainer(model, fz, [e for d in small_corpus for e in fz.dialogue_examples(d)])
        tr.run(epochs=1, max_steps=5)
        curves.append(tr.log.losses)
        blobs.append(checkpoint_bytes(model, tr.log.steps))
    assert curves[0] == curves[1] and blobs[0] == blobs[1]


def test_overfit_ten_dialogues():
    kg = generate_world(WorldSpec(seed=0, n_entities=30, n_predicates=3, n_types=3))
    dialogues = generate_corpus(kg, 10, seed=0, n_turns=3)
    # full-batch updates; 30 turns in one batch
    cfg = ModelConfig(**{**SMOKE, "batch_size": 30}, learning_rate=1e-2, seed=0)
    model, fz = build(kg, dialogues, cfg)
    tr = Trainer(model, fz, [e for d in dialogues for e in fz.dialogue_examples(d)])
    tr.run(epochs=OVERFIT_STEPS, max_steps=OVERFIT_STEPS)
    assert tr.log.losses[-1] < tr.log.losses[0]
    assert min(tr.log.losses[-5:]) < 0.1


OVERFIT_STEPS = 350


def test_concept_head_learns_single_predicate_world():
    kg = generate_world(WorldSpec(seed=1, n_entities=12, n_predicates=1, n_types=2, density=2))
    dialogues = generate_corpus(kg, 6, seed=1, n_turns=2)
    cfg = ModelConfig(**SMOKE, learning_rate=3e-3)
    model, fz = build(kg, dialogues, cfg)
    tr = Trainer(model, fz, [e for d in dialogues for e in fz.dialogue_examples(d)])
    tr.run(epochs=100, max_steps=60)
    batch = collate(tr.examples, fz.labels, cfg)
    out = model.forward(batch)
    pred = out["c"].data.argmax(-1)
    steps = batch.concept >= len(kg.types)  # predicate slots
    assert steps.any()
    assert (pred[steps] == batch.concept[steps]).all()
