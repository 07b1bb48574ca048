"""The HSGE network: graph reasoning over the history graph, context-aware
encoding, grammar-guided decoding and the entity / concept heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kg import ConceptGraph, KnowledgeGraph, build_concept_graph
from ..tensor import autograd as ag
from ..tensor import nn
from ..tensor.autograd import Tensor
from .config import ModelConfig
from .features import DEC_TOKENS, Batch, GraphBatch, LabelSpace, WordVocab


class TemporalRangeError(IndexError):
    pass


def temporal_embedding(D, dim: int, mode: str = "sinusoid", table=None):
    """Temporal vectors for distances ``D``: sinusoid rows, or rows of a learnable table."""
    D = np.asarray(D, dtype=np.int64)
    if mode == "sinusoid":
        return nn.sinusoid(D, dim)
    if table is None:
        raise ValueError("learnable mode needs a table")
    rows = table.weight.shape[0]
    if D.size and (D.min() < 0 or D.max() >= rows):
        raise TemporalRangeError(f"temporal distance out of range [0, {rows}): {D.min()}..{D.max()}")
    return table(D)


@dataclass
class EncodedState:
    x: Tensor  # token embeddings [B, n, d]
    x_bar: Tensor  # context-fused tokens
    h_enc: Tensor
    H: Tensor | None  # node embeddings after graph reasoning [N_total, d]
    H_bar: Tensor | None  # with temporal embeddings
    H_pad: Tensor | None  # [B, N_max, d]
    tok_mask: np.ndarray
    graph: GraphBatch
    items: Tensor  # label-bag embeddings for every KG item

    @property
    def h_cls(self) -> Tensor:
        return self.h_enc[:, 0]


class HSGEModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab: WordVocab, kg: KnowledgeGraph,
                 concept_graph: ConceptGraph | None = None):
        config.validate()
        self.config, self.vocab, self.kg = config, vocab, kg
        self.dtype = np.dtype(config.train_dtype)
        with ag.default_dtype(self.dtype):
            self._build(config, kg, concept_graph)

    def _build(self, config, kg, concept_graph):
        vocab = self.vocab
        self.labels = LabelSpace(kg, vocab)
        cg = concept_graph or build_concept_graph(kg)
        self._concept_edges = np.asarray(cg.node_edges(bidirectional=True), dtype=np.int64).reshape(-1, 2)
        d, h, ff = config.hidden_size, config.head_number, config.feed_forward_size
        rng = np.random.default_rng(config.seed)

        self.word_emb = nn.Embedding(rng, len(vocab), d, std=1.0)
        if config.use_hsg:
            self.reverse_edge = nn.Parameter(nn.normal(rng, (d,)))
            self.graph_convs = [nn.TransformerConv(rng, d, h) for _ in range(config.graph_layer_number)]
            if config.use_temporal and config.temporal_encoding == "learnable":
                self.temporal_table = nn.Embedding(rng, config.max_turns, d)
            self.aggregate = nn.MultiHeadAttention(rng, d, h, tag="aggregation")
        self.encoder = [nn.TransformerEncoderLayer(rng, d, h, ff) for _ in range(config.encoder_layer_number)]
        self.ed_lstm = nn.LSTM(rng, d, d)
        self.ed_out = nn.Linear(rng, d, len(self.labels.bio))
        self.el_hidden = nn.Linear(rng, 2 * d, d)
        self.el_out = nn.Linear(rng, d, config.max_entity_slots + 1)
        self.dec_emb = nn.Embedding(rng, len(DEC_TOKENS), d, std=1.0)
        self.decoder = [nn.TransformerDecoderLayer(rng, d, h, ff) for _ in range(config.decoder_layer_number)]
        self.dec_out = nn.Linear(rng, d, len(DEC_TOKENS))
        g = config.gat_embedding_dimension
        self.gat = [nn.GATLayer(rng, d if i == 0 else g, g) for i in range(config.gat_layer_number)]
        self.concept_proj = nn.Linear(rng, 2 * d, g if self.gat else d)
        if config.use_hsg and config.hsg_pointer:
            self.ptr_query = nn.Linear(rng, d, d)
            self.ptr_key = nn.Linear(rng, d, d)
            self.ptr_null = nn.Linear(rng, d, 1)

    # -- sub-computations ---------------------------------------------------------

    @property
    def n_bio(self) -> int:
        return self.ed_out.n_out

    @property
    def has_pointer(self) -> bool:
        return hasattr(self, "ptr_query")

    def _leaky(self, x):
        return ag.leaky_relu(x, self.config.leaky_slope)

    def item_embeddings(self) -> Tensor:
        words = ag.take(self.word_emb.weight, self.labels.item_words)  # [I, L, d]
        w = self.labels.item_weights.astype(words.dtype)[..., None]
        return (words * w).sum(axis=1)

    def embed_input(self, ids: np.ndarray) -> Tensor:
        x = self.word_emb(ids)
        pos = nn.sinusoid(np.arange(ids.shape[1]), self.config.hidden_size).astype(x.dtype)
        return x + pos

    def temporal(self, D: np.ndarray, dtype) -> Tensor | np.ndarray:
        cfg = self.config
        if cfg.temporal_encoding == "learnable":
            return temporal_embedding(D, cfg.hidden_size, "learnable", self.temporal_table)
        return temporal_embedding(D, cfg.hidden_size, "sinusoid").astype(dtype)

    def graph_reason(self, graph: GraphBatch, items: Tensor):
        """Node states H from transformer convolution, then H-bar = H + temporal embedding."""
        x = ag.take(items, graph.node_item)
        edges = np.stack([graph.src, graph.dst], axis=1) if len(graph.src) else np.zeros((0, 2), np.int64)
        feats = None
        if len(graph.src):
            feats = ag.take(items, graph.rel_item) + ag.mul(
                graph.reverse.astype(x.dtype)[:, None], self.reverse_edge)
        for i, conv in enumerate(self.graph_convs):
            if i:
                x = self._leaky(x)
            x = conv(x, edges, feats)
        H = x
        if self.config.use_temporal:
            H_bar = H + self.temporal(graph.node_distance, H.dtype)
        else:
            H_bar = H
        return H, H_bar

    def pad_nodes(self, H_bar: Tensor, graph: GraphBatch) -> Tensor:
        zero = Tensor(np.zeros((1, H_bar.shape[1]), dtype=H_bar.dtype))
        return ag.take(ag.concat([H_bar, zero], axis=0), graph.pad_index)

    def aggregate_context(self, x: Tensor, H_pad: Tensor | None, graph: GraphBatch) -> Tensor:
        if H_pad is None or graph.n_total == 0:
            return x
        has = graph.node_mask.any(axis=1).astype(x.dtype)[:, None, None]
        mask = graph.node_mask[:, None, :]
        if self.config.aggregation_level == "token":
            return x + self.aggregate(x, H_pad, H_pad, mask) * has
        shared = self.aggregate(x[:, 0:1], H_pad, H_pad, mask) * has
        return x + shared

    def encode(self, batch: Batch) -> EncodedState:
        items = self.item_embeddings()
        x = self.embed_input(batch.ids)
        H = H_bar = H_pad = None
        g = batch.graph
        if self.config.use_hsg and g.n_total:
            H, H_bar = self.graph_reason(g, items)
            H_pad = self.pad_nodes(H_bar, g)
        x_bar = self.aggregate_context(x, H_pad, g)
        h = x_bar
        for layer in self.encoder:
            h = layer(h, batch.tok_mask)
        return EncodedState(x, x_bar, h, H, H_bar, H_pad, batch.tok_mask, g, items)

    def entity_heads(self, enc: EncodedState):
        h_ed = self._leaky(self.ed_lstm(enc.h_enc))
        logp_ed = ag.log_softmax(self.ed_out(h_ed), axis=-1)
        h_el = self._leaky(self.el_hidden(ag.concat([enc.h_enc, h_ed], axis=-1)))
        logp_el = ag.log_softmax(self.el_out(h_el), axis=-1)
        return logp_ed, logp_el

    def run_decoder(self, enc: EncodedState, dec_in: np.ndarray, dec_mask: np.ndarray | None = None):
        y = self.dec_emb(dec_in)
        m = dec_in.shape[1]
        y = y + nn.sinusoid(np.arange(m), self.config.hidden_size).astype(y.dtype)
        self_mask = nn.causal_mask(m)[None]
        if dec_mask is not None:
            self_mask = self_mask & dec_mask[:, None, :]
        for layer in self.decoder:
            y = layer(y, enc.h_enc, self_mask, enc.tok_mask)
        return y

    def decoder_logp(self, h_dec: Tensor) -> Tensor:
        return ag.log_softmax(self.dec_out(h_dec), axis=-1)

    def concept_embeddings(self, items: Tensor) -> Tensor:
        lab = self.labels
        start, stop = lab.type_offset, lab.pred_offset + lab.n_predicates
        h = ag.take(items, np.arange(start, stop))
        for i, layer in enumerate(self.gat):
            if i:
                h = self._leaky(h)
            out = layer(h, self._concept_edges)
            # residual keeps nodes with identical neighbourhoods apart
            h = out + h if out.shape == h.shape else out
        return h

    def concept_logp(self, enc: EncodedState, h_dec: Tensor, h_g: Tensor | None = None) -> Tensor:
        if h_g is None:
            h_g = self.concept_embeddings(enc.items)
        B, m, d = h_dec.shape
        cls = ag.take(enc.h_cls.reshape(B, 1, d), np.zeros(m, dtype=np.int64), axis=1)
        h_c = self._leaky(self.concept_proj(ag.concat([cls, h_dec], axis=-1)))
        return ag.log_softmax(ag.matmul(h_c, h_g.T), axis=-1)

    def pointer_logp(self, enc: EncodedState, h_dec: Tensor) -> Tensor | None:
        """Distribution over [no history entity, node 1, ..., node N_max] per decoder step."""
        if not self.has_pointer:
            return None
        B, m, d = h_dec.shape
        null = self.ptr_null(h_dec)
        if enc.H_pad is None:
            return ag.log_softmax(null, axis=-1)
        q = self.ptr_query(h_dec)
        k = self.ptr_key(enc.H_pad)
        s = ag.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
        scores = ag.concat([null, s], axis=-1)
        mask = np.concatenate([np.ones((B, 1), bool), enc.graph.entity_mask], axis=1)[:, None, :]
        return ag.log_softmax(scores, axis=-1, mask=mask)

    # -- full passes ------------------------------------------------------------

    def forward(self, batch: Batch) -> dict:
        """Teacher-forced pass; returns log-probabilities for all four heads (plus pointer)."""
        with ag.default_dtype(self.dtype):
            return self._forward(batch)

    def _forward(self, batch: Batch) -> dict:
        enc = self.encode(batch)
        logp_ed, logp_el = self.entity_heads(enc)
        h_dec = self.run_decoder(enc, batch.dec_in, batch.dec_mask)
        return {
            "enc": enc,
            "ed": logp_ed,
            "el": logp_el,
            "dec": self.decoder_logp(h_dec),
            "c": self.concept_logp(enc, h_dec),
            "ptr": self.pointer_logp(enc, h_dec),
            "h_dec": h_dec,
        }

    def joint_loss(self, out: dict, batch: Batch) -> tuple[Tensor, dict]:
        """L = l1 L_ed + l2 L_el + l3 L_dec + l4 L_c; NLL sums per example, mean over the batch.

        The history-pointer NLL is part of the linking term, since both fill
        entity slots.
        """
        l1, l2, l3, l4 = self.config.lambdas
        B = batch.size
        L_ed = ag.nll_loss(out["ed"], batch.bio) * (1.0 / B)
        L_el = ag.nll_loss(out["el"], batch.link)
        if out["ptr"] is not None:
            L_el = L_el + ag.nll_loss(out["ptr"], batch.ptr)
        L_el = L_el * (1.0 / B)
        L_dec = ag.nll_loss(out["dec"], batch.dec_out) * (1.0 / B)
        L_c = ag.nll_loss(out["c"], batch.concept) * (1.0 / B)
        total = L_ed * l1 + L_el * l2 + L_dec * l3 + L_c * l4
        parts = {"ed": float(L_ed.data), "el": float(L_el.data), "dec": float(L_dec.data),
                 "c": float(L_c.data), "total": float(total.data)}
        return total, parts
