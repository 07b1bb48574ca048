"""Teacher-forced multi-task training and checkpoint round-trips."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..kg import KnowledgeGraph
from ..tensor import SGD, Adam, checkpoint
from .config import ModelConfig
from .features import Batch, Example, Featurizer, WordVocab, collate
from .network import HSGEModel

log = logging.getLogger(__name__)


def make_optimizer(model: HSGEModel):
    cfg = model.config
    params = model.parameters()
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate)
    # "bertadam" differs from Adam only in warmup and bias correction details we do not need
    return Adam(params, cfg.learning_rate, weight_decay=cfg.weight_decay)


def train_step(model: HSGEModel, optimizer, batch: Batch) -> dict:
    """Forward, joint loss, backward and one optimizer update."""
    optimizer.zero_grad()
    out = model.forward(batch)
    loss, parts = model.joint_loss(out, batch)
    if not math.isfinite(parts["total"]):
        bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
        ids = [(e.dialogue_id, e.turn_index) for e in batch.examples]
        raise FloatingPointError(f"non-finite loss {bad} on batch {ids[:8]}")
    loss.backward()
    optimizer.step()
    return parts


@dataclass
class TrainLog:
    steps: int = 0
    epochs: int = 0
    losses: list = field(default_factory=list)  # total loss per step
    epoch_losses: list = field(default_factory=list)
    seconds: float = 0.0


class Trainer:
    def __init__(self, model: HSGEModel, featurizer: Featurizer, examples: list[Example]):
        self.model, self.featurizer = model, featurizer
        self.examples = list(examples)
        self.optimizer = make_optimizer(model)
        self.rng = np.random.default_rng(model.config.seed)
        self.log = TrainLog()

    def batches(self):
        order = self.rng.permutation(len(self.examples))
        bs = self.model.config.batch_size
        for i in range(0, len(order), bs):
            chunk = [self.examples[j] for j in order[i:i + bs]]
            yield collate(chunk, self.featurizer.labels, self.model.config)

    def run(self, epochs: int | None = None, max_steps: int | None = None, callback=None) -> TrainLog:
        """Train for ``epochs`` (config default) or until ``max_steps`` updates.

        ``callback(trainer, epoch)`` runs after each epoch; returning True stops early.
        """
        epochs = self.model.config.epochs if epochs is None else epochs
        start = time.perf_counter()
        for epoch in range(epochs):
            total, n = 0.0, 0
            for batch in self.batches():
                parts = train_step(self.model, self.optimizer, batch)
                self.log.steps += 1
                self.log.losses.append(parts["total"])
                total += parts["total"]
                n += 1
                if max_steps is not None and self.log.steps >= max_steps:
                    break
            self.log.epochs += 1
            self.log.epoch_losses.append(total / max(n, 1))
            log.info("epoch %d: mean loss %.4f (%d steps)", epoch + 1, total / max(n, 1), self.log.steps)
            if max_steps is not None and self.log.steps >= max_steps:
                break
            if callback is not None and callback(self, epoch + 1):
                break
        self.log.seconds += time.perf_counter() - start
        return self.log


def train_model(kg: KnowledgeGraph, dialogues, config: ModelConfig, vocab: WordVocab | None = None,
                epochs: int | None = None, max_steps: int | None = None, callback=None):
    """Build vocabulary, features and model, then train; returns (model, featurizer, log)."""
    featurizer_vocab = vocab or WordVocab.build(kg, dialogues)
    featurizer = Featurizer(kg, featurizer_vocab, config)
    examples = [e for d in dialogues for e in featurizer.dialogue_examples(d)]
    model = HSGEModel(config, featurizer_vocab, kg)
    trainer = Trainer(model, featurizer, examples)
    trainer.run(epochs, max_steps, callback)
    return model, featurizer, trainer.log


# -- checkpoints ----------------------------------------------------------------

def checkpoint_bytes(model: HSGEModel, steps: int = 0) -> bytes:
    meta = {"config": model.config.to_dict(), "vocab": model.vocab.words, "steps": steps}
    return checkpoint.dumps(model.state_dict(), meta)


def save_model(path, model: HSGEModel, steps: int = 0):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model, steps))


def load_model(path, kg: KnowledgeGraph) -> tuple[HSGEModel, Featurizer, dict]:
    tensors, meta = checkpoint.load(path)
    config = ModelConfig.from_dict(meta["config"])
    vocab = WordVocab(meta["vocab"])
    model = HSGEModel(config, vocab, kg)
    model.load_state_dict(tensors)
    return model, Featurizer(kg, vocab, config), meta
