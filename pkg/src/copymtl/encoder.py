"""Word embeddings and the direction-averaged BiLSTM encoder."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import Param, Tensor, getitem, lstm_cell, mul, stack

log = logging.getLogger(__name__)

PAD, UNK, GO = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<go>")


class Vocab:
    """Token <-> id map with PAD=0, UNK=1, GO=2 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    @classmethod
    def from_itos(cls, itos: Sequence[str]) -> "Vocab":
        if tuple(itos[:3]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved <pad>, <unk>, <go> entries")
        return cls(itos[3:])


@dataclass
class EncoderOutput:
    states: Tensor          # (B, L, d) direction-averaged states
    mask: np.ndarray        # (B, L) bool, False at PAD
    final_h: Tensor         # (B, d) decoder initial hidden state
    final_c: Tensor         # (B, d)
    forward: Tensor         # (B, L, d)
    backward: Tensor        # (B, L, d)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def embed(table: Tensor, token_ids) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    vocab_size = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id out of range [0, {vocab_size})")
    return getitem(table, ids)


def _reverse_index(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """Per-row index that reverses the first ``length`` positions and keeps padding in place."""
    t = np.arange(max_len)[None, :]
    lens = lengths[:, None]
    return np.where(t < lens, lens - 1 - t, t)


def run_lstm(inputs: Tensor, mask: np.ndarray, weight: Param, bias: Param,
             h0: Tensor | None = None, c0: Tensor | None = None) -> tuple[list[Tensor], Tensor, Tensor]:
    """Left-to-right LSTM over (B, L, d_in); state is carried unchanged through PAD steps."""
    batch, length = mask.shape
    hidden = bias.shape[0] // 4
    h = h0 if h0 is not None else Tensor(np.zeros((batch, hidden)))
    c = c0 if c0 is not None else Tensor(np.zeros((batch, hidden)))
    outputs = []
    for t in range(length):
        h_new, c_new = lstm_cell(inputs[:, t, :], h, c, weight, bias)
        m = mask[:, t]
        if m.all():
            h, c = h_new, c_new
        else:
            keep = m[:, None].astype(np.float64)
            h = mul(h_new, keep) + mul(h, 1.0 - keep)
            c = mul(c_new, keep) + mul(c, 1.0 - keep)
        outputs.append(h)
    return outputs, h, c


def bilstm_encode(embeddings: Tensor, mask: np.ndarray, fwd: tuple[Param, Param],
                  bwd: tuple[Param, Param]) -> EncoderOutput:
    """Encode (B, L, d_e) embeddings; each state is the mean of the two directions."""
    mask = np.asarray(mask, dtype=bool)
    if embeddings.ndim != 3 or embeddings.shape[1] == 0:
        raise ValueError("bilstm_encode needs a non-empty (batch, length, dim) input")
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        raise ValueError("bilstm_encode: empty sentence in batch")
    batch, length = mask.shape
    rows = np.arange(batch)[:, None]
    rev = _reverse_index(lengths, length)

    f_out, f_h, f_c = run_lstm(embeddings, mask, *fwd)
    # running the reversed sentence left-to-right keeps padding at the tail
    b_out, b_h, b_c = run_lstm(getitem(embeddings, (rows, rev)), mask, *bwd)

    forward = stack(f_out, axis=1)
    backward = getitem(stack(b_out, axis=1), (rows, rev))
    states = mul(forward + backward, 0.5)
    return EncoderOutput(
        states=states,
        mask=mask,
        final_h=mul(f_h + b_h, 0.5),
        final_c=mul(f_c + b_c, 0.5),
        forward=forward,
        backward=backward,
    )


def load_embeddings(path: str | Path, vocab: Vocab, table: np.ndarray) -> int:
    """Overwrite rows of ``table`` for tokens listed in a word2vec-style text file.

    Returns the number of rows overwritten.  Tokens absent from ``vocab`` are
    ignored; rows for tokens absent from the file keep their current values.
    """
    dim = table.shape[1]
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: malformed embedding line")
            token, raw = parts[0], parts[1:]
            if len(raw) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, found {len(raw)}")
            try:
                vec = np.array([float(x) for x in raw])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed embedding line ({exc})") from None
            if token in vocab:
                table[vocab.stoi[token]] = vec
                hits += 1
    if hits == 0:
        log.warning("load_embeddings: no vocabulary tokens found in %s", path)
    else:
        log.info("load_embeddings: %d/%d rows loaded from %s", hits, len(vocab), path)
    return hits


def save_embeddings(path: str | Path, vocab: Vocab, table: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, row in zip(vocab.itos, table):
            fh.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")
