import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copymtl.decoder import NA_TRIPLET, RawTriplet
from copymtl.extraction import (RELAXED, EvalReport, ExtractedTriplet, assemble, complete_entity, prf,
                                strict_eval, subtask_eval, swap_rate)
from copymtl.tagger import B, I, O

X = ExtractedTriplet
TAGS = [B, I, O, B, O]


@pytest.mark.parametrize("last,span", [(1, (0, 1)), (3, (3, 3)), (2, (2, 2)), (0, (0, 0)), (4, (4, 4))])
def test_complete_entity_rules(last, span):
    assert complete_entity(TAGS, last) == span


def test_complete_entity_long_and_malformed():
    assert complete_entity([O, B, I, I, O], 3) == (1, 3)
    assert complete_entity([I, I, I], 2) == (0, 2)
    assert complete_entity([O, I, I], 2) == (1, 2)
    assert complete_entity(None, 4) == (4, 4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([B, I, O]), min_size=1, max_size=12), st.data())
def test_complete_entity_invariants(tags, data):
    last = data.draw(st.integers(0, len(tags) - 1))
    s, e = complete_entity(tags, last)
    assert e == last and 0 <= s <= e
    assert all(t == I for t in tags[s + 1:e + 1])
    if tags[last] != I:
        assert (s, e) == (last, last)
        assert complete_entity(tags, e) == (s, e)


def test_assemble():
    rels = ["r0", "r1"]
    assert assemble([NA_TRIPLET] * 5, TAGS, rels) == set()
    raw = [RawTriplet(1, 1, 3), RawTriplet(1, 1, 3), NA_TRIPLET]
    assert assemble(raw, TAGS, rels) == {X("r1", (0, 1), (3, 3))}
    assert assemble(raw, None, rels) == {X("r1", (1, 1), (3, 3))}


def test_strict_eval_counting():
    A, Bs, C, D = (0, 0), (2, 2), (4, 5), (7, 7)
    rep = strict_eval([{X("r1", A, Bs)}], [{X("r1", A, Bs), X("r2", C, D)}])
    assert (rep.precision, rep.recall) == (1.0, 0.5)
    assert rep.f1 == pytest.approx(2 / 3, abs=1e-15)
    empty = strict_eval([set()], [{X("r1", A, Bs)}])
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        strict_eval([set(), set()], [set()])


def test_strict_versus_relaxed_on_partial_span():
    gold = [{X("r", (0, 1), (3, 3))}]
    pred = [{X("r", (1, 1), (3, 3))}]
    assert strict_eval(pred, gold).f1 == 0.0
    assert strict_eval(pred, gold, mode=RELAXED).f1 == 1.0


def test_subtask_swapped_entities():
    gold = [{X("r", (0, 0), (3, 3))}]
    pred = [{X("r", (3, 3), (0, 0))}]
    rel_f1, ent_f1 = subtask_eval(pred, gold)
    assert (rel_f1, ent_f1) == (1.0, 0.0)
    assert subtask_eval(pred, gold, ordered=False) == (1.0, 1.0)
    assert swap_rate(pred, gold) == 1.0
    assert subtask_eval(gold, gold) == (1.0, 1.0)


def brute_subtask(pred, gold):
    """Per-sentence multiset intersection by explicit matching."""
    def f1(pairs):
        hit = npred = ngold = 0
        for p, g in pairs:
            remaining = list(g)
            for x in p:
                if x in remaining:
                    remaining.remove(x)
                    hit += 1
            npred += len(p)
            ngold += len(g)
        return prf(hit, npred, ngold)[2]

    rel = [([t.relation for t in p], [t.relation for t in g]) for p, g in zip(pred, gold)]
    ent = [([(t.head, t.tail) for t in p], [(t.head, t.tail) for t in g]) for p, g in zip(pred, gold)]
    return f1(rel), f1(ent)


def random_corpus(rng, sentences=6):
    spans = [(0, 0), (1, 2), (3, 3), (4, 5)]
    def one():
        return {X(rng.choice("ab"), rng.choice(spans), rng.choice(spans)) for _ in range(rng.randint(0, 3))}
    return [one() for _ in range(sentences)], [one() for _ in range(sentences)]


@pytest.mark.parametrize("seed", range(10))
def test_subtask_matches_hand_counting(seed):
    pred, gold = random_corpus(random.Random(seed))
    assert subtask_eval(pred, gold) == pytest.approx(brute_subtask(pred, gold), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_eval_invariants(seed):
    rng = random.Random(seed)
    pred, gold = random_corpus(rng)
    rep = strict_eval(pred, gold)
    assert rep.f1 <= min(rep.relation_f1, rep.entity_f1) + 1e-15
    for v in (rep.precision, rep.recall, rep.f1, rep.relation_f1, rep.entity_f1):
        assert 0.0 <= v <= 1.0
    shuffled = [rng.sample(sorted(p), len(p)) for p in pred]
    assert strict_eval(shuffled, gold) == rep
    assert strict_eval(pred, gold, mode=RELAXED).f1 >= 0.0


def test_prf_zero_cases():
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
    assert prf(0, 3, 2) == (0.0, 0.0, 0.0)


def test_report_json_round_trip():
    rep = strict_eval([{X("r", (0, 0), (1, 1))}], [{X("r", (0, 0), (1, 1))}])
    assert EvalReport.from_json(rep.to_json()) == rep


def test_gold_duplicates_collapse():
    t = X("r", (0, 0), (1, 1))
    rep = strict_eval([[t]], [[t, t]])
    assert (rep.gold, rep.correct, rep.f1) == (1, 1, 1.0)
