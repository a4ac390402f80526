"""The joint model: shared encoder, CRF tagging head and copy decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tagger
from .decoder import CopyDecoder, DecoderConfig, RawTriplet, make_decoder_params
from .encoder import EncoderOutput, bilstm_encode, embed
from .numerics import Param, Tensor, no_grad, uniform_init


@dataclass
class ModelConfig:
    vocab_size: int
    num_relations: int
    embedding_dim: int = 32
    hidden: int = 64
    scorer: str = "fused"
    use_mask: bool = False
    max_triplets: int = 5
    decoder_mode: str = "one"
    fused_width: int | None = None

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.scorer, self.use_mask, self.max_triplets, self.decoder_mode,
                             self.fused_width)


def _lstm_params(rng, name: str, d_in: int, hidden: int) -> list[Param]:
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return [Param(uniform_init(rng, (d_in + hidden, 4 * hidden)), name + ".W"),
            Param(bias, name + ".b")]


class CopyMTL:
    """All parameters live in ``self.params`` (insertion-ordered, name -> Param)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        de, d = config.embedding_dim, config.hidden
        params = [Param(uniform_init(rng, (config.vocab_size, de), fan_in=de), "emb")]
        params += _lstm_params(rng, "enc.fwd", de, d)
        params += _lstm_params(rng, "enc.bwd", de, d)
        params += [Param(uniform_init(rng, (d, tagger.NUM_TAGS)), "crf.W"),
                   Param(np.zeros(tagger.NUM_TAGS), "crf.b"),
                   Param(np.zeros((tagger.NUM_TAGS + 1, tagger.NUM_TAGS)), "crf.trans")]
        self.params: dict[str, Param] = {p.name: p for p in params}
        self.params.update(make_decoder_params(config.decoder_config(), d, de,
                                               config.num_relations, rng))
        self.decoder = CopyDecoder(config.decoder_config(), self.params, config.num_relations)

    def parameters(self) -> list[Param]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def encode(self, token_ids: np.ndarray, mask: np.ndarray) -> EncoderOutput:
        p = self.params
        emb = embed(p["emb"], token_ids)
        return bilstm_encode(emb, mask, (p["enc.fwd.W"], p["enc.fwd.b"]),
                             (p["enc.bwd.W"], p["enc.bwd.b"]))

    def emissions(self, enc: EncoderOutput) -> Tensor:
        return enc.states @ self.params["crf.W"] + self.params["crf.b"]

    def losses(self, batch) -> tuple[Tensor, Tensor]:
        """Per-instance (tagging NLL, decoder NLL), each shape (B,)."""
        enc = self.encode(batch.token_ids, batch.mask)
        loss_e = tagger.crf_nll_batch(self.emissions(enc), self.params["crf.trans"], batch.tags,
                                      batch.mask)
        loss_d, _ = self.decoder.unroll(enc, batch.token_ids, self.params["emb"], batch.targets)
        return loss_e, loss_d

    def predict(self, batch, use_mask: bool | None = None) -> tuple[list[list[int]], list[list[RawTriplet]]]:
        """Viterbi tags and greedily decoded triplets for every sentence in ``batch``."""
        with no_grad():
            enc = self.encode(batch.token_ids, batch.mask)
            phi = self.emissions(enc).value
            trans = self.params["crf.trans"].value
            lengths = batch.mask.sum(axis=1)
            tags = [tagger.viterbi(phi[b, :n], trans) for b, n in enumerate(lengths)]
            triplets = self.decoder.greedy_decode(enc, batch.token_ids, self.params["emb"], use_mask)
        return tags, triplets
