"""Linear-chain CRF over B/I/O tags.

The numpy functions operate on one sentence (``phi`` is ``n x 3``) and double
as reference implementations; :func:`crf_nll_batch` is the differentiable
batched loss used in training.  Transition matrices are ``4 x 3``: rows are
the previous tag (row 3 is the virtual START), columns the current tag.
"""

from __future__ import annotations

import itertools

import numpy as np

from .numerics import Tensor, getitem, logsumexp, logsumexp_np, mul, tsum

B, I, O = 0, 1, 2
START = 3
NUM_TAGS = 3
TAG_NAMES = ("B", "I", "O")
MAX_BRUTE_FORCE = 10


def tag_ids(names) -> list[int]:
    return [TAG_NAMES.index(t) for t in names]


def tag_names(ids) -> list[str]:
    return [TAG_NAMES[int(t)] for t in ids]


def emissions(states: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    phi = np.asarray(states) @ weight
    return phi if bias is None else phi + bias


def _check(phi: np.ndarray, trans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    phi = np.asarray(phi, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != NUM_TAGS or phi.shape[0] < 1:
        raise ValueError(f"emissions must be (n>=1, 3), got {phi.shape}")
    if trans.shape != (NUM_TAGS + 1, NUM_TAGS):
        raise ValueError(f"transitions must be (4, 3), got {trans.shape}")
    return phi, trans


def _check_tags(tags, n: int) -> list[int]:
    tags = [int(t) for t in tags]
    if len(tags) != n:
        raise ValueError(f"tag sequence has length {len(tags)}, sentence has {n}")
    if any(t not in (B, I, O) for t in tags):
        raise ValueError(f"invalid tag id in {tags}")
    return tags


def path_score(phi, trans, tags) -> float:
    phi, trans = _check(phi, trans)
    tags = _check_tags(tags, phi.shape[0])
    score = trans[START, tags[0]] + phi[0, tags[0]]
    for i in range(1, len(tags)):
        score += trans[tags[i - 1], tags[i]] + phi[i, tags[i]]
    return float(score)


def log_partition(phi, trans) -> float:
    """log of the sum of exp(path_score) over all 3^n paths, by the forward recursion."""
    phi, trans = _check(phi, trans)
    alpha = trans[START] + phi[0]
    for i in range(1, phi.shape[0]):
        alpha = logsumexp_np(alpha[:, None] + trans[:NUM_TAGS], axis=0) + phi[i]
    return float(logsumexp_np(alpha))


def crf_nll(phi, trans, gold_tags) -> float:
    return log_partition(phi, trans) - path_score(phi, trans, gold_tags)


def viterbi(phi, trans) -> list[int]:
    """Best-scoring path; ties go to the lowest tag id at each backtrack step."""
    phi, trans = _check(phi, trans)
    n = phi.shape[0]
    delta = trans[START] + phi[0]
    back = np.zeros((n, NUM_TAGS), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + trans[:NUM_TAGS]
        back[i] = np.argmax(cand, axis=0)
        delta = cand.max(axis=0) + phi[i]
    best = [int(np.argmax(delta))]
    for i in range(n - 1, 0, -1):
        best.append(int(back[i, best[-1]]))
    return best[::-1]


def _all_paths(n: int):
    if n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to n <= {MAX_BRUTE_FORCE}, got {n}")
    return itertools.product(range(NUM_TAGS), repeat=n)


def brute_force_partition(phi, trans) -> float:
    phi, trans = _check(phi, trans)
    scores = np.array([path_score(phi, trans, p) for p in _all_paths(phi.shape[0])])
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()))


def brute_force_best_path(phi, trans) -> list[int]:
    """Exhaustive argmax; among exact ties picks the path smallest when read right to left."""
    phi, trans = _check(phi, trans)
    best, best_score = None, -np.inf
    for p in _all_paths(phi.shape[0]):
        s = path_score(phi, trans, p)
        if s > best_score or (s == best_score and p[::-1] < best[::-1]):
            best, best_score = p, s
    return list(best)


def crf_nll_batch(phi: Tensor, trans: Tensor, tags: np.ndarray, mask: np.ndarray) -> Tensor:
    """Per-sentence negative log-likelihood, shape (B,).

    ``phi`` is (B, L, 3); positions where ``mask`` is False are ignored.
    """
    tags = np.asarray(tags, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    batch, length = mask.shape
    rows = np.arange(batch)
    pair = getitem(trans, (slice(0, NUM_TAGS), slice(None)))[None, :, :]

    alpha = getitem(trans, START)[None, :] + phi[:, 0, :]
    for t in range(1, length):
        nxt = logsumexp(alpha[:, :, None] + pair, axis=1) + phi[:, t, :]
        m = mask[:, t]
        if m.all():
            alpha = nxt
        else:
            keep = m[:, None].astype(np.float64)
            alpha = mul(nxt, keep) + mul(alpha, 1.0 - keep)
    log_z = logsumexp(alpha, axis=1)

    fmask = mask.astype(np.float64)
    emit = getitem(phi, (rows[:, None], np.arange(length)[None, :], tags))
    gold = tsum(mul(emit, fmask), axis=1) + getitem(trans, (np.full(batch, START), tags[:, 0]))
    if length > 1:
        steps = getitem(trans, (tags[:, :-1], tags[:, 1:]))
        gold = gold + tsum(mul(steps, fmask[:, 1:]), axis=1)
    return log_z - gold
