"""
Completing multi-token entities with the tagger
===============================================

The copy decoder points at one token per entity: the last.  The CRF tagger
supplies the rest by walking left from that token over I tags to the B that
opens the span.  Turning the walk off shows what pointing alone recovers.
"""

from copymtl import SynthConfig, TrainConfig, evaluate, synth_generate, train
from copymtl.extraction import complete_entity
from copymtl.tagger import tag_ids
from copymtl.training import tagger_span_f1

###############################################################################
# The walk on its own, for "Steven Jobs was born in San Francisco".

tags = tag_ids("B I O O O B I".split())
print("pointer 1 ->", complete_entity(tags, 1), "  pointer 6 ->", complete_entity(tags, 6))

###############################################################################
# A corpus where 30% of entities are two tokens long.

train_set, test_set = synth_generate(SynthConfig(seed=0, num_sentences=500, num_test=100,
                                                 multi_token_fraction=0.3))
result = train(TrainConfig(epochs=25, batch_size=8), train_set, eval_train=False)
with_tags = evaluate(result.extractor, test_set)
without = evaluate(result.extractor, test_set, post_process=False)
print(f"tagger span F1        {tagger_span_f1(result.extractor, test_set):.3f}")
print(f"strict F1, with walk  {with_tags.f1:.3f}")
print(f"strict F1, pointers   {without.f1:.3f}")
print(f"relaxed F1, pointers  {evaluate(result.extractor, test_set, mode='relaxed', post_process=False).f1:.3f}")
