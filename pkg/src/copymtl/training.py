"""Multi-task training, evaluation and diagnostics."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .data import Instance, batches, build_vocab, make_batch, relation_labels, spans_from_tags
from .decoder import reduction_check
from .encoder import Vocab, load_embeddings
from .extraction import STRICT, EvalReport, ExtractedTriplet, assemble, prf, strict_eval, swap_rate
from .model import CopyMTL, ModelConfig
from .numerics import (AdamState, NumericError, Tensor, adam_step, backward, clip_grad_norm, mean,
                       mul, no_grad, zero_grads)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "split", "precision", "recall", "f1", "rel_f1", "ent_f1", "loss_d", "loss_e"]


@dataclass
class TrainConfig:
    preset: str = "desk"
    lam: float = 1.0
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    scorer: str = "fused"
    use_mask: bool = False
    decoder_mode: str = "one"
    max_triplets: int = 5
    embedding_dim: int = 32
    hidden: int = 64
    fused_width: int | None = None
    clip_norm: float = 5.0
    max_len: int = 100
    min_count: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def preset_config(cls, name: str, **overrides) -> "TrainConfig":
        if name == "desk":
            return cls(**overrides)
        if name == "paper":
            base = dict(preset="paper", hidden=1000, embedding_dim=100, max_triplets=5, lr=0.001, lam=1.0)
            return cls(**{**base, **overrides})
        raise ValueError(f"unknown preset {name!r}")

    def model_config(self, vocab_size: int, num_relations: int) -> ModelConfig:
        return ModelConfig(vocab_size, num_relations, self.embedding_dim, self.hidden, self.scorer,
                           self.use_mask, self.max_triplets, self.decoder_mode, self.fused_width)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Extractor:
    """A model bundled with the vocabularies it was trained on."""

    model: CopyMTL
    vocab: Vocab
    relations: list[str]
    config: TrainConfig

    def batches(self, instances: Sequence[Instance], size: int = 64):
        return batches(instances, size, self.vocab, self.relations, self.config.max_triplets)

    def predict(self, instances: Sequence[Instance], use_mask: bool | None = None,
                post_process: bool = True, batch_size: int = 64):
        """Per sentence: (viterbi tags, raw triplets, extracted triplet set)."""
        out = []
        for batch in self.batches(instances, batch_size):
            tags, raws = self.model.predict(batch, use_mask)
            for t, r in zip(tags, raws):
                out.append((t, r, assemble(r, t if post_process else None, self.relations)))
        return out


def gold_sets(instances: Sequence[Instance]) -> list[set[ExtractedTriplet]]:
    return [{ExtractedTriplet(t.relation, tuple(t.head), tuple(t.tail)) for t in inst.triplets}
            for inst in instances]


# --- losses ----------------------------------------------------------------------

def joint_loss(model: CopyMTL, batch, lam: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
    """Batch-mean ``lam * L_E + L_D`` together with the two batch-mean parts."""
    loss_e, loss_d = model.losses(batch)
    loss_e, loss_d = mean(loss_e), mean(loss_d)
    return mul(loss_e, lam) + loss_d, loss_e, loss_d


# --- evaluation --------------------------------------------------------------------

def evaluate(extractor: Extractor | str | Path, instances: Sequence[Instance], mode: str = STRICT,
             use_mask: bool | None = None, post_process: bool = True,
             vocab: Vocab | None = None) -> EvalReport:
    """Tag, decode, assemble and score ``instances``."""
    if not isinstance(extractor, Extractor):
        extractor = load_checkpoint(extractor)
    if vocab is not None and vocab.hash() != extractor.vocab.hash():
        raise ckpt.CheckpointError("vocabulary hash does not match the checkpoint")
    preds = extractor.predict(instances, use_mask, post_process)
    return strict_eval([p[2] for p in preds], gold_sets(instances), mode)


def tagger_span_f1(extractor: Extractor, instances: Sequence[Instance]) -> float:
    """F1 of Viterbi entity spans against the union of gold head/tail spans."""
    correct = n_pred = n_gold = 0
    for (tags, _, _), inst in zip(extractor.predict(instances), instances):
        pred = spans_from_tags(tags)
        gold = {s for t in inst.triplets for s in (tuple(t.head), tuple(t.tail))}
        correct += len(pred & gold)
        n_pred += len(pred)
        n_gold += len(gold)
    return prf(correct, n_pred, n_gold)[2]


def heldout_losses(extractor: Extractor, instances: Sequence[Instance], lam: float) -> tuple[float, float]:
    total_e = total_d = 0.0
    with no_grad():
        for batch in extractor.batches(instances):
            loss_e, loss_d = extractor.model.losses(batch)
            total_e += float(loss_e.value.sum())
            total_d += float(loss_d.value.sum())
    n = max(len(instances), 1)
    return total_d / n, total_e / n


def diagnose(extractor: Extractor | str | Path, instances: Sequence[Instance], trials: int = 100,
             seed: int = 0) -> dict:
    """Copy-scorer health report: reduction TV, mask dependence, head/tail confusion."""
    if not isinstance(extractor, Extractor):
        extractor = load_checkpoint(extractor)
    gold = gold_sets(instances)
    masked = extractor.predict(instances, use_mask=True)
    unmasked = extractor.predict(instances, use_mask=False)

    def same_pointer_rate(preds) -> float:
        real = [r for _, raws, _ in preds for r in raws if not r.is_na]
        return sum(r.head == r.tail for r in real) / len(real) if real else 0.0

    probe = make_batch(instances[:1], extractor.vocab, extractor.relations,
                       extractor.config.max_triplets)
    with no_grad():
        states = extractor.model.encode(probe.token_ids, probe.mask).states
    red = reduction_check(extractor.model.decoder, states, trials, np.random.default_rng(seed))
    f1_masked = strict_eval([p[2] for p in masked], gold).f1
    f1_unmasked = strict_eval([p[2] for p in unmasked], gold).f1
    return {
        "scorer": extractor.config.scorer,
        "reduction_max_tv": red.max_tv,
        "reduction_worst_trial": red.worst_trial,
        "f1_masked": f1_masked,
        "f1_unmasked": f1_unmasked,
        "swap_rate": swap_rate([p[2] for p in masked], gold),
        "head_eq_tail_masked": same_pointer_rate(masked),
        "head_eq_tail_unmasked": same_pointer_rate(unmasked),
    }


# --- training loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    extractor: Extractor
    rows: list[dict] = field(default_factory=list)

    def metrics_csv(self) -> str:
        return format_metrics(self.rows)

    def last(self, split: str) -> dict:
        return [r for r in self.rows if r["split"] == split][-1]

    def best(self, split: str) -> dict:
        """Row with the highest F1 on ``split``; the earliest epoch wins ties."""
        rows = [r for r in self.rows if r["split"] == split]
        return max(rows, key=lambda r: (r["f1"], -r["epoch"]))


def format_metrics(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in rows:
        writer.writerow([r["epoch"], r["split"]] +
                        [f"{r[k]:.6f}" for k in METRICS_HEADER[2:]])
    return buf.getvalue()


def _metrics_row(epoch: int, split: str, report: EvalReport, loss_d: float, loss_e: float) -> dict:
    return {"epoch": epoch, "split": split, "precision": report.precision, "recall": report.recall,
            "f1": report.f1, "rel_f1": report.relation_f1, "ent_f1": report.entity_f1,
            "loss_d": loss_d, "loss_e": loss_e}


def train(config: TrainConfig, train_set: Sequence[Instance], test_set: Sequence[Instance] = (),
          out_dir: str | Path | None = None, eval_train: bool = True,
          vocab: Vocab | None = None, relations: Sequence[str] | None = None,
          embeddings: str | Path | None = None) -> TrainResult:
    """Adam on shuffled mini-batches; one metrics row per split per epoch.

    With ``out_dir`` set, writes ``metrics.csv`` and ``epoch_NNN.json``/``.bin``
    checkpoints after every epoch.  ``embeddings`` names a whitespace-separated
    text file of pretrained word vectors to seed the embedding table.
    """
    usable = [inst for inst in train_set if 0 < len(inst.tokens) <= config.max_len]
    if len(usable) < len(train_set):
        log.warning("train: skipped %d sentences longer than %d tokens", len(train_set) - len(usable),
                    config.max_len)
    if not usable:
        raise ValueError("no usable training sentences")
    vocab = vocab or build_vocab(usable, config.min_count)
    relations = list(relations) if relations is not None else relation_labels(usable)
    model = CopyMTL(config.model_config(len(vocab), len(relations)), seed=config.seed)
    if embeddings is not None:
        hits = load_embeddings(embeddings, vocab, model.params["emb"].value)
        log.info("train: %d of %d vocabulary rows from %s", hits, len(vocab), embeddings)
    extractor = Extractor(model, vocab, relations, config)
    params = model.parameters()
    state = AdamState(lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    result = TrainResult(extractor)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(usable))
        sum_d = sum_e = 0.0
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = [usable[i] for i in order[start:start + config.batch_size]]
            batch = make_batch(chunk, vocab, relations, config.max_triplets)
            zero_grads(params)
            loss, loss_e, loss_d = joint_loss(model, batch, config.lam)
            if not np.isfinite(loss.value).all():
                _dump_failure(out, epoch, step, loss_e, loss_d, chunk)
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {step}: "
                                   f"L_E={loss_e.item()}, L_D={loss_d.item()}")
            backward(loss)
            clip_grad_norm(params, config.clip_norm)
            adam_step(params, state)
            sum_d += loss_d.item() * len(chunk)
            sum_e += loss_e.item() * len(chunk)

        if eval_train:
            report = evaluate(extractor, usable)
            result.rows.append(_metrics_row(epoch, "train", report, sum_d / len(usable), sum_e / len(usable)))
        if test_set:
            report = evaluate(extractor, test_set)
            result.rows.append(_metrics_row(epoch, "test", report, *heldout_losses(extractor, test_set, config.lam)))
        if result.rows:
            log.info("epoch %d: %s", epoch, ", ".join(f"{r['split']} f1={r['f1']:.3f}"
                                                      for r in result.rows if r["epoch"] == epoch))
        if out is not None:
            save_checkpoint(out / f"epoch_{epoch:03d}.json", extractor)
            (out / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    return result


def _dump_failure(out: Path | None, epoch: int, step: int, loss_e: Tensor, loss_d: Tensor, chunk) -> None:
    if out is None:
        return
    dump = {"epoch": epoch, "batch": step, "loss_e": repr(loss_e.item()), "loss_d": repr(loss_d.item()),
            "sentences": [inst.to_json() for inst in chunk]}
    (out / "failure.json").write_text(json.dumps(dump, indent=1), encoding="utf-8")


# --- checkpoints ------------------------------------------------------------------------

def save_checkpoint(path: str | Path, extractor: Extractor) -> None:
    meta = {"config": asdict(extractor.config), "model": asdict(extractor.model.config),
            "vocab": extractor.vocab.itos, "vocab_hash": extractor.vocab.hash(),
            "relations": extractor.relations}
    ckpt.write(path, {n: p.value for n, p in extractor.model.params.items()}, meta)


def load_checkpoint(path: str | Path) -> Extractor:
    manifest, arrays = ckpt.read(path)
    vocab = Vocab.from_itos(manifest["vocab"])
    if vocab.hash() != manifest["vocab_hash"]:
        raise ckpt.CheckpointError(f"{path}: vocabulary hash mismatch")
    config = TrainConfig.from_dict(manifest["config"])
    model = CopyMTL(ModelConfig(**manifest["model"]), seed=config.seed)
    if set(arrays) != set(model.params):
        raise ckpt.CheckpointError(f"{path}: parameter names do not match the model")
    for name, value in arrays.items():
        p = model.params[name]
        if p.value.shape != value.shape:
            raise ckpt.CheckpointError(f"{path}: {name} has shape {value.shape}, expected {p.value.shape}")
        p.value[...] = value
    return Extractor(model, vocab, list(manifest["relations"]), config)
