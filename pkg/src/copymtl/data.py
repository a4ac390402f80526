"""Corpus I/O, BIO tags, decoder targets and a synthetic corpus generator.

Corpora are JSON Lines, one sentence per line::

    {"tokens": ["Steven", "Jobs", "was", "born", "in", "San", "Francisco"],
     "triplets": [{"relation": "born_in", "head": [0, 1], "tail": [5, 6]}]}

Spans are inclusive token ranges.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .decoder import NA
from .encoder import PAD, Vocab
from .tagger import B, I, O

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed corpus input."""


class Triplet(NamedTuple):
    relation: str
    head: tuple[int, int]
    tail: tuple[int, int]


@dataclass
class Instance:
    tokens: list[str]
    triplets: list[Triplet] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens),
                "triplets": [{"relation": t.relation, "head": list(t.head), "tail": list(t.tail)}
                             for t in self.triplets]}

    @classmethod
    def from_json(cls, obj: dict) -> "Instance":
        tokens = obj["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DataError("'tokens' must be a list of strings")
        triplets = []
        for t in obj.get("triplets", []):
            head, tail = tuple(t["head"]), tuple(t["tail"])
            for span in (head, tail):
                if len(span) != 2 or not (0 <= span[0] <= span[1] < len(tokens)):
                    raise DataError(f"span {list(span)} out of range for {len(tokens)} tokens")
            triplets.append(Triplet(str(t["relation"]), (int(head[0]), int(head[1])),
                                    (int(tail[0]), int(tail[1]))))
        return cls(list(tokens), triplets)


def parse_dataset(path: str | Path) -> list[Instance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                instances.append(Instance.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not instances:
        log.warning("parse_dataset: %s holds no instances", path)
    else:
        log.info("parse_dataset: %d sentences, %d relation labels from %s", len(instances),
                 len(relation_labels(instances)), path)
    return instances


def dumps_jsonl(instances: Iterable[Instance]) -> str:
    return "".join(json.dumps(inst.to_json(), ensure_ascii=False) + "\n" for inst in instances)


def write_jsonl(instances: Iterable[Instance], path: str | Path) -> None:
    Path(path).write_text(dumps_jsonl(instances), encoding="utf-8")


def relation_labels(instances: Iterable[Instance]) -> list[str]:
    return sorted({t.relation for inst in instances for t in inst.triplets})


def build_vocab(instances: Iterable[Instance], min_count: int = 1) -> Vocab:
    counts = Counter(tok for inst in instances for tok in inst.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


def entity_spans(instance: Instance) -> list[tuple[int, int]]:
    return sorted({span for t in instance.triplets for span in (t.head, t.tail)})


def derive_bio(instance: Instance) -> list[int]:
    """B/I/O over the union of head and tail spans; on conflicts the longer span wins."""
    tags = [O] * len(instance.tokens)
    taken = [False] * len(instance.tokens)
    spans = sorted(entity_spans(instance), key=lambda s: (-(s[1] - s[0]), s[0]))
    for s, e in spans:
        if any(taken[s:e + 1]):
            log.warning("derive_bio: span %s overlaps a longer entity; skipped", (s, e))
            continue
        tags[s] = B
        for i in range(s + 1, e + 1):
            tags[i] = I
        for i in range(s, e + 1):
            taken[i] = True
    return tags


def spans_from_tags(tags: Sequence[int]) -> set[tuple[int, int]]:
    """Entity spans implied by a well-formed BIO sequence (an I without a B starts a span)."""
    spans, start = set(), None
    for i, t in enumerate(list(tags) + [O]):
        if t == B or t == O or (t == I and start is None):
            if start is not None:
                spans.add((start, i - 1))
            start = i if t in (B, I) else None
    return spans


@dataclass(frozen=True)
class TargetSequence:
    """3T decoder symbols; NA is -1."""

    symbols: tuple[int, ...]

    @property
    def max_triplets(self) -> int:
        return len(self.symbols) // 3

    def __len__(self) -> int:
        return len(self.symbols)


def build_target(instance: Instance, max_triplets: int, relations: Sequence[str]) -> TargetSequence:
    """Gold triplets as (relation id, head last token, tail last token), NA-padded."""
    rel_id = {r: i for i, r in enumerate(relations)}
    raw = {(rel_id[t.relation], t.head[1], t.tail[1]) for t in instance.triplets}
    ordered = sorted(raw, key=lambda x: (x[1], x[2], x[0]))
    if len(ordered) > max_triplets:
        log.warning("build_target: %d triplets, keeping the first %d", len(ordered), max_triplets)
        ordered = ordered[:max_triplets]
    symbols = [s for r, h, t in ordered for s in (r, h, t)]
    symbols += [NA] * (3 * max_triplets - len(symbols))
    return TargetSequence(tuple(symbols))


@dataclass
class Batch:
    token_ids: np.ndarray   # (B, L)
    mask: np.ndarray        # (B, L) bool
    tags: np.ndarray        # (B, L), O at padding
    targets: np.ndarray     # (B, 3T), NA = -1
    instances: list[Instance]

    def __len__(self) -> int:
        return len(self.instances)


def make_batch(instances: Sequence[Instance], vocab: Vocab, relations: Sequence[str],
               max_triplets: int) -> Batch:
    if not instances:
        raise ValueError("empty batch")
    if any(not inst.tokens for inst in instances):
        raise DataError("empty sentence")
    length = max(len(inst.tokens) for inst in instances)
    n = len(instances)
    ids = np.full((n, length), PAD, dtype=np.int64)
    mask = np.zeros((n, length), dtype=bool)
    tags = np.full((n, length), O, dtype=np.int64)
    targets = np.empty((n, 3 * max_triplets), dtype=np.int64)
    known = set(relations)
    for b, inst in enumerate(instances):
        k = len(inst.tokens)
        ids[b, :k] = vocab.encode(inst.tokens)
        mask[b, :k] = True
        tags[b, :k] = derive_bio(inst)
        usable = Instance(inst.tokens, [t for t in inst.triplets if t.relation in known])
        targets[b] = build_target(usable, max_triplets, relations).symbols
    return Batch(ids, mask, tags, targets, list(instances))


def batches(instances: Sequence[Instance], size: int, vocab: Vocab, relations: Sequence[str],
            max_triplets: int) -> Iterable[Batch]:
    for i in range(0, len(instances), size):
        yield make_batch(instances[i:i + size], vocab, relations, max_triplets)


# --- synthetic corpus ------------------------------------------------------------

@dataclass
class SynthConfig:
    seed: int = 0
    num_sentences: int = 500
    num_test: int = 100
    vocab_size: int = 200
    num_relations: int = 4
    max_triplets: int = 3
    multi_token_fraction: float = 0.0
    overlap_fraction: float = 0.3

    def __post_init__(self):
        for name in ("num_sentences", "vocab_size", "num_relations", "max_triplets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.num_test < 0:
            raise ValueError("num_test must be non-negative")
        for name in ("multi_token_fraction", "overlap_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.vocab_size < 2 * self.num_relations + 8 + 6 * self.max_triplets:
            raise ValueError("vocab_size too small for the requested relations and triplets")


def _synth_lexicon(cfg: SynthConfig) -> tuple[list[list[str]], list[str], list[str]]:
    triggers = [[f"rel{r}a", f"rel{r}b"] for r in range(cfg.num_relations)]
    rest = cfg.vocab_size - 2 * cfg.num_relations
    n_filler = max(4, rest // 4)
    fillers = [f"w{i}" for i in range(n_filler)]
    entities = [f"ent{i}" for i in range(rest - n_filler)]
    return triggers, fillers, entities


def _synth_sentence(rng: np.random.Generator, cfg: SynthConfig, triggers, fillers, entities) -> Instance:
    """Clauses ``head trigger tail`` joined by filler; overlap chains the previous tail in as head."""
    k = int(rng.integers(1, cfg.max_triplets + 1))
    pool = list(rng.permutation(len(entities)))
    tokens: list[str] = [fillers[i] for i in rng.integers(0, len(fillers), size=rng.integers(0, 3))]
    triplets: list[Triplet] = []

    def entity() -> tuple[int, int]:
        width = 2 if rng.random() < cfg.multi_token_fraction else 1
        start = len(tokens)
        tokens.extend(entities[pool.pop()] for _ in range(width))
        return start, len(tokens) - 1

    prev_tail = None
    for j in range(k):
        rel = int(rng.integers(cfg.num_relations))
        chain = prev_tail is not None and rng.random() < cfg.overlap_fraction
        if chain:
            head = prev_tail
        else:
            if j > 0:
                tokens.extend(fillers[i] for i in rng.integers(0, len(fillers), size=rng.integers(1, 3)))
            head = entity()
        tokens.append(triggers[rel][int(rng.integers(2))])
        tail = entity()
        triplets.append(Triplet(f"R{rel}", head, tail))
        prev_tail = tail
    tokens.extend(fillers[i] for i in rng.integers(0, len(fillers), size=rng.integers(0, 3)))
    return Instance(tokens, triplets)


def synth_generate(cfg: SynthConfig) -> tuple[list[Instance], list[Instance]]:
    """Deterministic (train, test) split of templated sentences."""
    rng = np.random.default_rng(cfg.seed)
    lex = _synth_lexicon(cfg)
    corpus = [_synth_sentence(rng, cfg, *lex) for _ in range(cfg.num_sentences + cfg.num_test)]
    return corpus[:cfg.num_sentences], corpus[cfg.num_sentences:]


# --- NYT raw-format adjunct --------------------------------------------------------

def _find_span(tokens: list[str], mention: list[str]) -> tuple[int, int] | None:
    n = len(mention)
    for s in range(len(tokens) - n, -1, -1):
        if tokens[s:s + n] == mention:
            return s, s + n - 1
    return None


def convert_raw_nyt(lines: Iterable[str]) -> list[Instance]:
    """Convert ``{"sentText", "relationMentions": [{"em1Text", "em2Text", "label"}]}`` lines.

    Tokens come from whitespace splitting; each mention maps to its last occurrence
    in the sentence.  Mentions labelled ``None`` or not found are dropped.
    """
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tokens = obj["sentText"].split()
            triplets = []
            for rm in obj.get("relationMentions", []):
                if rm["label"] == "None":
                    continue
                head = _find_span(tokens, rm["em1Text"].split())
                tail = _find_span(tokens, rm["em2Text"].split())
                if head is None or tail is None:
                    log.warning("convert_raw_nyt: line %d mention not found in sentence", lineno)
                    continue
                triplets.append(Triplet(rm["label"], head, tail))
        except (json.JSONDecodeError, KeyError, AttributeError) as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        out.append(Instance(tokens, triplets))
    return out
