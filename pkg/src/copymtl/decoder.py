"""Copy decoder: one (relation, head, tail) triplet every three steps.

Step ``t`` (counted from 1) predicts a relation when ``t % 3 == 1``, the last
token of the head entity when ``t % 3 == 2`` and the last token of the tail
when ``t % 3 == 0``.  Each step's logits end with a shared NA slot scored by
``W_na``.  Copy positions are scored either by a single linear layer over
``[h_dec; h_enc]`` (which makes the position distribution independent of the
decoder state) or by a selu layer followed by a projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .encoder import UNK, EncoderOutput
from .numerics import (NEG_INF, Param, Tensor, concat, getitem, log_softmax, lstm_cell, mul,
                       no_grad, reshape, selu, softmax, softmax_np, stack, tanh, tsum, uniform_init)

LINEAR, FUSED = "linear", "fused"
ONE, MULTI = "one", "multi"
NA = -1

RELATION, HEAD, TAIL = "relation", "head", "tail"


def step_role(t: int) -> str:
    if t < 1:
        raise ValueError("time steps count from 1")
    return (RELATION, HEAD, TAIL)[(t - 1) % 3]


@dataclass
class DecoderConfig:
    scorer: str = FUSED
    use_mask: bool = False
    max_triplets: int = 5
    decoder_mode: str = ONE
    fused_width: int | None = None

    def __post_init__(self):
        if self.scorer not in (LINEAR, FUSED):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.decoder_mode not in (ONE, MULTI):
            raise ValueError(f"unknown decoder mode {self.decoder_mode!r}")
        if self.max_triplets < 1:
            raise ValueError("max_triplets must be >= 1")

    @property
    def steps(self) -> int:
        return 3 * self.max_triplets


class RawTriplet(NamedTuple):
    relation: int | None
    head: int | None
    tail: int | None

    @property
    def is_na(self) -> bool:
        return self.relation is None


NA_TRIPLET = RawTriplet(None, None, None)


def make_decoder_params(config: DecoderConfig, hidden: int, emb_dim: int, num_relations: int,
                        rng: np.random.Generator) -> dict[str, Param]:
    d, de = hidden, emb_dim
    width = config.fused_width or d
    params: dict[str, Param] = {}

    def add(name, value):
        params[name] = Param(value, name)

    add("dec.go", uniform_init(rng, (1, de), fan_in=de))
    add("dec.rel_emb", uniform_init(rng, (num_relations + 1, de), fan_in=de))
    add("dec.W_u", uniform_init(rng, (de + d, de)))
    add("dec.att.W", uniform_init(rng, (2 * d, d)))
    add("dec.att.v", uniform_init(rng, (d,)))
    slots = config.max_triplets if config.decoder_mode == MULTI else 1
    for k in range(slots):
        p = "dec." if config.decoder_mode == ONE else f"dec{k}."
        add(p + "lstm.W", uniform_init(rng, (de + d, 4 * d)))
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0
        add(p + "lstm.b", bias)
        add(p + "W_r", uniform_init(rng, (d, num_relations)))
        add(p + "b_r", np.zeros(num_relations))
        add(p + "W_na", uniform_init(rng, (d, 1)))
        if config.scorer == LINEAR:
            add(p + "W_e", uniform_init(rng, (2 * d, 1)))
        else:
            add(p + "W_f", uniform_init(rng, (2 * d, width)))
            add(p + "W_o", uniform_init(rng, (width, 1)))
    return params


def _split_rows(w: Tensor, d: int) -> tuple[Tensor, Tensor]:
    return w[:d], w[d:]


def attention(h_prev: Tensor, states: Tensor, mask: np.ndarray, att_w: Tensor, att_v: Tensor,
              enc_proj: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Additive attention.  Returns the context (B, d) and weights (B, L)."""
    d = states.shape[-1]
    w_dec, w_enc = _split_rows(att_w, d)
    if enc_proj is None:
        enc_proj = states @ w_enc
    energy = tanh(enc_proj + (h_prev @ w_dec)[:, None, :]) @ att_v
    energy = energy + np.where(mask, 0.0, NEG_INF)
    alpha = softmax(energy, axis=-1)
    context = tsum(mul(alpha[:, :, None], states), axis=1)
    return context, alpha


def decoder_step(prev_emb: Tensor, context: Tensor, h_prev: Tensor, c_prev: Tensor, w_u: Tensor,
                 lstm_w: Tensor, lstm_b: Tensor) -> tuple[Tensor, Tensor]:
    u = concat([prev_emb, context], axis=-1) @ w_u
    return lstm_cell(u, h_prev, c_prev, lstm_w, lstm_b)


def encoder_copy_part(states: Tensor, slot: dict[str, Tensor], scorer: str) -> Tensor:
    """The h_enc half of the copy scorer, shared by every decoding step."""
    d = states.shape[-1]
    if scorer == LINEAR:
        return reshape(states @ slot["W_e"][d:], states.shape[:2])
    return states @ slot["W_f"][d:]


def copy_scores(h: Tensor, states: Tensor, slot: dict[str, Tensor], scorer: str,
                enc_part: Tensor | None = None) -> Tensor:
    """Copy confidence for every source position, shape (B, L)."""
    d = states.shape[-1]
    if enc_part is None:
        enc_part = encoder_copy_part(states, slot, scorer)
    if scorer == LINEAR:
        return enc_part + h @ slot["W_e"][:d]
    hidden = selu(enc_part + (h @ slot["W_f"][:d])[:, None, :])
    return reshape(hidden @ slot["W_o"], enc_part.shape[:2])


def na_score(h: Tensor, w_na: Tensor) -> Tensor:
    """(B, 1) score of the NA symbol, shared by every step role."""
    return h @ w_na


def step_logits(t: int, h: Tensor, q: Tensor | None, q_na: Tensor, slot: dict[str, Tensor],
                pad_mask: np.ndarray | None = None, head: np.ndarray | None = None,
                use_mask: bool = False) -> Tensor:
    """Logits for step ``t``: relations or copy positions, then NA last."""
    role = step_role(t)
    if role == RELATION:
        return concat([h @ slot["W_r"] + slot["b_r"], q_na], axis=-1)
    if q is None:
        raise ValueError("copy step needs copy scores")
    additive = np.zeros(q.shape)
    if pad_mask is not None:
        additive = np.where(pad_mask, additive, NEG_INF)
    if role == TAIL and use_mask:
        if head is None:
            raise ValueError("mask requested but no head position recorded")
        rows = np.flatnonzero(head >= 0)
        additive[rows, head[rows]] = NEG_INF
    return concat([q + additive, q_na], axis=-1)


class CopyDecoder:
    """Runs the decoder either teacher-forced (loss) or greedily (prediction)."""

    def __init__(self, config: DecoderConfig, params: dict[str, Param], num_relations: int):
        self.config = config
        self.params = params
        self.num_relations = num_relations

    def slot(self, k: int) -> dict[str, Param]:
        prefix = "dec." if self.config.decoder_mode == ONE else f"dec{k}."
        names = ["lstm.W", "lstm.b", "W_r", "b_r", "W_na"]
        names += ["W_e"] if self.config.scorer == LINEAR else ["W_f", "W_o"]
        return {n: self.params[prefix + n] for n in names}

    def _slot_index(self, t: int) -> int:
        return (t - 1) // 3 if self.config.decoder_mode == MULTI else 0

    def unroll(self, enc: EncoderOutput, token_ids: np.ndarray, word_table: Tensor,
               targets: np.ndarray | None = None, use_mask: bool | None = None):
        """Teacher-forced when ``targets`` (B, 3T; NA=-1) is given, greedy otherwise.

        Returns ``(per_instance_nll or None, symbols)`` where ``symbols`` is a
        (B, 3T) int array with -1 for NA.
        """
        cfg = self.config
        use_mask = cfg.use_mask if use_mask is None else use_mask
        token_ids = np.asarray(token_ids, dtype=np.int64)
        mask = enc.mask
        batch, length = mask.shape
        rows = np.arange(batch)
        states = enc.states
        d = states.shape[-1]
        if targets is not None:
            targets = np.asarray(targets, dtype=np.int64)
            if targets.shape != (batch, cfg.steps):
                raise ValueError(f"targets must be (batch, {cfg.steps}), got {targets.shape}")

        att_w, att_v, w_u = self.params["dec.att.W"], self.params["dec.att.v"], self.params["dec.W_u"]
        enc_proj = states @ att_w[d:]
        slots = [self.slot(k) for k in range(cfg.max_triplets if cfg.decoder_mode == MULTI else 1)]
        enc_parts = [encoder_copy_part(states, s, cfg.scorer) for s in slots]

        h, c = enc.final_h, enc.final_c
        prev = getitem(self.params["dec.go"], np.zeros(batch, dtype=np.int64))
        head = np.full(batch, -1)
        symbols = np.full((batch, cfg.steps), NA, dtype=np.int64)
        losses = []
        for t in range(1, cfg.steps + 1):
            k = self._slot_index(t)
            slot = slots[k]
            context, _ = attention(h, states, mask, att_w, att_v, enc_proj)
            h, c = decoder_step(prev, context, h, c, w_u, slot["lstm.W"], slot["lstm.b"])
            q_na = na_score(h, slot["W_na"])
            role = step_role(t)
            if role == RELATION:
                head = np.full(batch, -1)
                logits = step_logits(t, h, None, q_na, slot)
                na_index = self.num_relations
            else:
                q = copy_scores(h, states, slot, cfg.scorer, enc_parts[k])
                step_head = head
                if targets is not None and role == TAIL:
                    # a gold tail equal to the gold head must stay reachable
                    step_head = np.where(targets[:, t - 1] == head, -1, head)
                logits = step_logits(t, h, q, q_na, slot, mask, step_head, use_mask)
                na_index = length

            if targets is not None:
                gold = targets[:, t - 1]
                if role != RELATION and (gold >= lengths_of(mask)).any():
                    raise ValueError("target pointer beyond sentence length")
                choice = np.where(gold < 0, na_index, gold)
                logp = log_softmax(logits, axis=-1)
                losses.append(-getitem(logp, (rows, choice)))
            else:
                choice = np.argmax(logits.value, axis=-1)
            symbols[:, t - 1] = np.where(choice == na_index, NA, choice)

            if role == RELATION:
                prev = getitem(self.params["dec.rel_emb"], choice)
            else:
                is_na = choice >= length
                ids = np.where(is_na, UNK, token_ids[rows, np.minimum(choice, length - 1)])
                prev = getitem(word_table, ids)
                if role == HEAD:
                    head = np.where(is_na, -1, choice)

        nll = tsum(stack(losses, axis=0), axis=0) if targets is not None else None
        return nll, symbols

    def greedy_decode(self, enc: EncoderOutput, token_ids: np.ndarray, word_table: Tensor,
                      use_mask: bool | None = None) -> list[list[RawTriplet]]:
        with no_grad():
            _, symbols = self.unroll(enc, token_ids, word_table, None, use_mask)
        return [symbols_to_triplets(row) for row in symbols]

    def copy_distribution(self, h: np.ndarray, states: Tensor, slot_index: int = 0) -> np.ndarray:
        """Softmax over source positions only (NA excluded) for a single decoder state."""
        slot = self.slot(slot_index)
        with no_grad():
            q = copy_scores(Tensor(np.atleast_2d(h)), states, slot, self.config.scorer)
        return softmax_np(q.value[0])


def lengths_of(mask: np.ndarray) -> np.ndarray:
    return mask.sum(axis=1)


def symbols_to_triplets(symbols) -> list[RawTriplet]:
    """Group 3T symbols into triplets; any NA slot makes the whole triplet NA."""
    out = []
    for j in range(0, len(symbols), 3):
        r, h, t = (int(s) for s in symbols[j:j + 3])
        if r == NA or h == NA or t == NA:
            out.append(NA_TRIPLET)
        else:
            out.append(RawTriplet(r, h, t))
    return out


@dataclass
class ReductionReport:
    max_tv: float
    worst_trial: int
    trials: int
    scorer: str


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def reduction_check(decoder: CopyDecoder, states: Tensor, trials: int,
                    rng: np.random.Generator, slot_index: int = 0) -> ReductionReport:
    """Largest TV distance between copy distributions of random decoder-state pairs.

    ``states`` holds one sentence's encoder states, shape (1, n, d).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = states.shape[-1]
    worst, worst_trial = -1.0, 0
    for k in range(trials):
        h1, h2 = rng.uniform(-1.0, 1.0, size=(2, d))
        tv = total_variation(decoder.copy_distribution(h1, states, slot_index),
                             decoder.copy_distribution(h2, states, slot_index))
        if tv > worst:
            worst, worst_trial = tv, k
    return ReductionReport(worst, worst_trial, trials, decoder.config.scorer)
