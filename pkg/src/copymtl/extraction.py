"""Turn decoder pointers plus BIO tags into full triplets, and score them."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

from .decoder import RawTriplet
from .tagger import B, I

STRICT, RELAXED = "strict", "relaxed"


class ExtractedTriplet(NamedTuple):
    relation: str
    head: tuple[int, int]
    tail: tuple[int, int]


def complete_entity(tags: Sequence[int] | None, last: int) -> tuple[int, int]:
    """Span ending at ``last``: an I walks left over I's to the nearest B; B and O are single tokens.

    Without tags (post-processing off) every entity is the single pointed token.
    A walk that meets an O before any B starts the span right after it; one
    that runs off the sentence start begins at 0.
    """
    if tags is None or tags[last] != I:
        return last, last
    j = last
    while j > 0 and tags[j - 1] == I:
        j -= 1
    if j > 0 and tags[j - 1] == B:
        j -= 1
    return j, last


def assemble(raw: Iterable[RawTriplet], tags: Sequence[int] | None,
             relations: Sequence[str]) -> set[ExtractedTriplet]:
    """Drop NA triplets, complete both entities, dedupe."""
    out = set()
    for r in raw:
        if r.is_na or r.head is None or r.tail is None:
            continue
        out.add(ExtractedTriplet(relations[r.relation], complete_entity(tags, r.head),
                                 complete_entity(tags, r.tail)))
    return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    relation_f1: float
    entity_f1: float
    correct: int
    predicted: int
    gold: int
    mode: str = STRICT

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _key(t, mode: str):
    if mode == RELAXED:
        return t.relation, t.head[1], t.tail[1]
    return t.relation, tuple(t.head), tuple(t.tail)


def _as_set(triplets, mode: str) -> set:
    return {_key(t, mode) for t in triplets}


def _check_aligned(predicted, gold):
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted sentences vs {len(gold)} gold")


def strict_eval(predicted: Sequence[Iterable], gold: Sequence[Iterable], mode: str = STRICT,
                ordered: bool = True) -> EvalReport:
    """Micro P/R/F1 over the corpus, plus the relation and entity subtask F1."""
    _check_aligned(predicted, gold)
    correct = n_pred = n_gold = 0
    for p, g in zip(predicted, gold):
        ps, gs = _as_set(p, mode), _as_set(g, mode)
        correct += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    precision, recall, f1 = prf(correct, n_pred, n_gold)
    rel_f1, ent_f1 = subtask_eval(predicted, gold, mode, ordered)
    return EvalReport(precision, recall, f1, rel_f1, ent_f1, correct, n_pred, n_gold, mode)


def subtask_eval(predicted: Sequence[Iterable], gold: Sequence[Iterable], mode: str = STRICT,
                 ordered: bool = True) -> tuple[float, float]:
    """(relation F1, entity-pair F1).

    Both count over the deduplicated triplets of each sentence, so every strict
    hit is also a hit in each subtask.  ``ordered=False`` treats (head, tail)
    and (tail, head) as the same pair.
    """
    _check_aligned(predicted, gold)
    rel = [0, 0, 0]
    ent = [0, 0, 0]
    for p, g in zip(predicted, gold):
        ps, gs = _as_set(p, mode), _as_set(g, mode)
        pr, gr = Counter(k[0] for k in ps), Counter(k[0] for k in gs)
        pair = (lambda k: (k[1], k[2])) if ordered else (lambda k: tuple(sorted((k[1], k[2]))))
        pe, ge = Counter(pair(k) for k in ps), Counter(pair(k) for k in gs)
        for acc, pc, gc in ((rel, pr, gr), (ent, pe, ge)):
            acc[0] += sum((pc & gc).values())
            acc[1] += sum(pc.values())
            acc[2] += sum(gc.values())
    return prf(*rel)[2], prf(*ent)[2]


def swap_rate(predicted: Sequence[Iterable], gold: Sequence[Iterable]) -> float:
    """Share of predicted entity pairs that match gold only after swapping head and tail."""
    _check_aligned(predicted, gold)
    swapped = total = 0
    for p, g in zip(predicted, gold):
        gold_pairs = {(tuple(t.head), tuple(t.tail)) for t in g}
        for t in set(p):
            total += 1
            pair = (tuple(t.head), tuple(t.tail))
            if pair not in gold_pairs and pair[::-1] in gold_pairs:
                swapped += 1
    return swapped / total if total else 0.0
