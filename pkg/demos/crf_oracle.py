"""
Checking the CRF against brute force
====================================

The tagging head scores a B/I/O path by summing emissions and transitions.
For short sentences every path can be listed, which gives an exact oracle
for the forward algorithm and for Viterbi.
"""

import itertools

import numpy as np

from copymtl import tagger

rng = np.random.default_rng(5)
phi = rng.normal(size=(5, 3))        # emissions: 5 tokens x {B, I, O}
trans = rng.normal(size=(4, 3))      # rows B, I, O, START; columns B, I, O

###############################################################################
# Forward algorithm versus the sum over all 3^5 paths.

scores = {p: tagger.path_score(phi, trans, p) for p in itertools.product(range(3), repeat=5)}
log_z = tagger.log_partition(phi, trans)
print(f"forward logZ     {log_z:.12f}")
print(f"enumerated logZ  {np.log(np.exp(list(scores.values())).sum()):.12f}")

###############################################################################
# Viterbi returns the single best of those 243 paths.

best = tagger.viterbi(phi, trans)
print("viterbi     ", tagger.tag_names(best))
print("enumeration ", tagger.tag_names(max(scores, key=scores.get)))
print(f"its probability: {np.exp(scores[tuple(best)] - log_z):.4f}")

###############################################################################
# With all scores equal every path ties.  Ties go to the lowest tag id at each
# backtracking step, so the answer is all B.

print("all-zero scores ->", tagger.tag_names(tagger.viterbi(np.zeros((3, 3)), np.zeros((4, 3)))))
