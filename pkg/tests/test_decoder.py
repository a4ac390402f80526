import math

import numpy as np
import pytest

from copymtl import numerics as nx
from copymtl.decoder import (FUSED, LINEAR, NA, CopyDecoder, DecoderConfig, attention, copy_scores,
                             decoder_step, make_decoder_params, na_score, reduction_check, step_logits,
                             step_role, symbols_to_triplets, total_variation)
from copymtl.numerics import Param, Tensor
from copymtl.training import joint_loss

from .conftest import tiny_batch, tiny_instances, tiny_model


def slot_params(rng, d, scorer, width=None):
    width = width or d
    s = {"W_na": Param(rng.normal(size=(d, 1)), "W_na"), "W_r": Param(rng.normal(size=(d, 2)), "W_r"),
         "b_r": Param(rng.normal(size=2), "b_r")}
    if scorer == LINEAR:
        s["W_e"] = Param(rng.normal(size=(2 * d, 1)), "W_e")
    else:
        s["W_f"] = Param(rng.normal(size=(2 * d, width)), "W_f")
        s["W_o"] = Param(rng.normal(size=(width, 1)), "W_o")
    return s


def test_step_roles_cycle():
    assert [step_role(t) for t in range(1, 7)] == ["relation", "head", "tail"] * 2
    with pytest.raises(ValueError):
        step_role(0)


def test_attention_single_state_returns_it():
    rng = np.random.default_rng(0)
    states = Tensor(rng.normal(size=(1, 1, 4)))
    ctx, alpha = attention(Tensor(rng.normal(size=(1, 4))), states, np.ones((1, 1), bool),
                           Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=4)))
    np.testing.assert_allclose(ctx.value, states.value[:, 0], atol=1e-15)
    np.testing.assert_array_equal(alpha.value, [[1.0]])


def test_attention_identical_states():
    rng = np.random.default_rng(1)
    row = rng.normal(size=4)
    states = Tensor(np.tile(row, (1, 3, 1)))
    ctx, alpha = attention(Tensor(rng.normal(size=(1, 4))), states, np.ones((1, 3), bool),
                           Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=4)))
    np.testing.assert_allclose(ctx.value[0], row, atol=1e-14)
    np.testing.assert_allclose(alpha.value, 1 / 3, atol=1e-15)


def test_attention_matches_explicit_formula():
    rng = np.random.default_rng(2)
    d, n = 3, 4
    hs, hp = rng.normal(size=(n, d)), rng.normal(size=d)
    W, v = rng.normal(size=(2 * d, d)), rng.normal(size=d)
    energies = [v @ np.tanh(np.concatenate([hp, hs[i]]) @ W) for i in range(n)]
    weights = np.exp(energies) / np.sum(np.exp(energies))
    mask = np.array([[True] * n + [False]])
    padded = np.vstack([hs, rng.normal(size=(1, d))])[None]
    ctx, alpha = attention(Tensor(hp[None]), Tensor(padded), mask, Tensor(W), Tensor(v))
    np.testing.assert_allclose(alpha.value[0, :n], weights, atol=1e-12)
    assert alpha.value[0, n] == 0.0
    np.testing.assert_allclose(ctx.value[0], weights @ hs, atol=1e-12)


def test_decoder_step_zero_weights():
    rng = np.random.default_rng(3)
    h, c = decoder_step(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 4))),
                        Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))),
                        Tensor(rng.normal(size=(7, 3))), Tensor(np.zeros((7, 16))), Tensor(np.zeros(16)))
    np.testing.assert_array_equal(h.value, 0.0)
    np.testing.assert_array_equal(c.value, 0.0)


def test_decoder_step_gradients():
    rng = np.random.default_rng(4)
    e, ctx, h0, c0 = (Param(rng.normal(size=s), n) for s, n in [((2, 3), "e"), ((2, 4), "ctx"),
                                                                ((2, 4), "h0"), ((2, 4), "c0")])
    w_u, lw, lb = Param(rng.normal(size=(7, 3)), "W_u"), Param(rng.normal(size=(7, 16)) * 0.5, "W"), \
        Param(rng.normal(size=16) * 0.1, "b")
    w = rng.normal(size=(2, 4))

    def loss():
        h, c = decoder_step(e, ctx, h0, c0, w_u, lw, lb)
        return nx.tsum(nx.mul(h, w)) + nx.tsum(nx.mul(c, c))

    assert nx.gradient_check(loss, [e, ctx, h0, c0, w_u, lw, lb]).max_error < 1e-4


def test_linear_copy_scores_decompose():
    rng = np.random.default_rng(5)
    d, n = 3, 5
    states = Tensor(rng.normal(size=(1, n, d)))
    slot = slot_params(rng, d, LINEAR)
    h1, h2 = rng.normal(size=(2, 1, d))
    q1 = copy_scores(Tensor(h1), states, slot, LINEAR).value[0]
    q2 = copy_scores(Tensor(h2), states, slot, LINEAR).value[0]
    w = slot["W_e"].value[:, 0]
    np.testing.assert_allclose(q1, states.value[0] @ w[d:] + h1[0] @ w[:d], atol=1e-13)
    # the decoder term is one constant added to every position
    diff = q1 - q2
    np.testing.assert_allclose(diff, diff[0], atol=1e-13)


def test_fused_copy_scores():
    rng = np.random.default_rng(6)
    d, n = 3, 4
    states = Tensor(rng.normal(size=(1, n, d)))
    slot = slot_params(rng, d, FUSED, width=5)
    h = rng.normal(size=(1, d))
    q = copy_scores(Tensor(h), states, slot, FUSED).value[0]
    Wf, Wo = slot["W_f"].value, slot["W_o"].value[:, 0]
    lam, alpha = nx.SELU_SCALE, nx.SELU_ALPHA
    for i in range(n):
        z = np.concatenate([h[0], states.value[0, i]]) @ Wf
        expected = (lam * np.where(z > 0, z, alpha * (np.exp(z) - 1))) @ Wo
        assert q[i] == pytest.approx(expected, abs=1e-12)
    slot["W_o"] = Tensor(np.zeros((5, 1)))
    np.testing.assert_array_equal(copy_scores(Tensor(h), states, slot, FUSED).value, 0.0)


def test_na_score():
    rng = np.random.default_rng(7)
    h, w = rng.normal(size=(2, 4)), rng.normal(size=(4, 1))
    np.testing.assert_array_equal(na_score(Tensor(h), Tensor(np.zeros((4, 1)))).value, 0.0)
    np.testing.assert_array_equal(na_score(Tensor(np.zeros((2, 4))), Tensor(w)).value, 0.0)
    np.testing.assert_allclose(na_score(Tensor(h), Tensor(w)).value[:, 0], h @ w[:, 0], atol=1e-14)


def test_step_logit_lengths_and_na_position():
    rng = np.random.default_rng(8)
    d, n = 3, 5
    slot = slot_params(rng, d, LINEAR)
    h = Tensor(rng.normal(size=(1, d)))
    q_na = na_score(h, slot["W_na"])
    rel = step_logits(1, h, None, q_na, slot)
    assert rel.shape == (1, 3)
    assert rel.value[0, -1] == q_na.value[0, 0]
    q = copy_scores(h, Tensor(rng.normal(size=(1, n, d))), slot, LINEAR)
    for t in (2, 3):
        out = step_logits(t, h, q, q_na, slot, np.ones((1, n), bool), np.array([1]), use_mask=False)
        assert out.shape == (1, n + 1)
        assert out.value[0, -1] == q_na.value[0, 0]


def test_mask_blocks_head_position():
    rng = np.random.default_rng(9)
    d, n = 3, 5
    slot = slot_params(rng, d, LINEAR)
    h = Tensor(rng.normal(size=(1, d)))
    q = copy_scores(h, Tensor(rng.normal(size=(1, n, d))), slot, LINEAR)
    q_na = na_score(h, slot["W_na"])
    mask = np.ones((1, n), bool)
    out = step_logits(3, h, q, q_na, slot, mask, np.array([2]), use_mask=True)
    p = nx.softmax_np(out.value[0])
    assert p[2] < 1e-300
    # the head step itself never masks
    head_step = step_logits(2, h, q, q_na, slot, mask, np.array([2]), use_mask=True)
    np.testing.assert_array_equal(head_step.value, nx.concat([q, q_na], axis=-1).value)
    with pytest.raises(ValueError):
        step_logits(3, h, q, q_na, slot, mask, None, use_mask=True)


def test_linear_head_and_tail_distributions_identical():
    model, vocab = tiny_model(scorer=LINEAR)
    batch = tiny_batch(vocab)
    enc = model.encode(batch.token_ids, batch.mask)
    dec = model.decoder
    rng = np.random.default_rng(10)
    states = enc.states[0:1]
    h_head, h_tail = rng.normal(size=(2, 12))
    p_head = dec.copy_distribution(h_head, states)
    p_tail = dec.copy_distribution(h_tail, states)
    assert np.max(np.abs(p_head - p_tail)) <= 1e-12


def zeroed_decoder_model(scorer):
    model, vocab = tiny_model(scorer=scorer)
    for name, p in model.params.items():
        if any(name.endswith(s) for s in ("W_r", "b_r", "W_na", "W_e", "W_o")):
            p.value[...] = 0.0
    return model, vocab


@pytest.mark.parametrize("scorer", [LINEAR, FUSED])
def test_decoder_nll_uniform_logits(scorer):
    model, vocab = zeroed_decoder_model(scorer)
    batch = tiny_batch(vocab)
    _, loss_d = model.losses(batch)
    lengths = batch.mask.sum(axis=1)
    T = model.config.max_triplets
    expected = T * (math.log(3) + 2 * np.log(lengths + 1))
    np.testing.assert_allclose(loss_d.value, expected, atol=1e-12)


def test_target_shape_mismatch():
    model, vocab = tiny_model()
    batch = tiny_batch(vocab)
    enc = model.encode(batch.token_ids, batch.mask)
    with pytest.raises(ValueError):
        model.decoder.unroll(enc, batch.token_ids, model.params["emb"], batch.targets[:, :-1])
    bad = batch.targets.copy()
    bad[1, 1] = 7  # sentence 1 has 3 tokens
    with pytest.raises(ValueError):
        model.decoder.unroll(enc, batch.token_ids, model.params["emb"], bad)


@pytest.mark.parametrize("scorer", [LINEAR, FUSED])
@pytest.mark.parametrize("mode", ["one", "multi"])
def test_decoder_gradients(scorer, mode):
    model, vocab = tiny_model(scorer=scorer, decoder_mode=mode, use_mask=True, embedding_dim=4, hidden=5)
    batch = tiny_batch(vocab)
    params = [p for n, p in model.params.items() if n.startswith("dec") or n == "emb"]
    report = nx.gradient_check(lambda: nx.tsum(model.losses(batch)[1]), params, max_entries=6,
                               rng=np.random.default_rng(0))
    assert report.max_error < 1e-4, report.worst()


@pytest.mark.parametrize("scorer", [LINEAR, FUSED])
def test_greedy_decode_shapes_and_mask(scorer):
    model, vocab = tiny_model(scorer=scorer, max_triplets=5)
    batch = tiny_batch(vocab, max_triplets=5)
    _, triplets = model.predict(batch, use_mask=True)
    lengths = batch.mask.sum(axis=1)
    for row, n in zip(triplets, lengths):
        assert len(row) == 5
        for t in row:
            if not t.is_na:
                assert t.head != t.tail
                assert 0 <= t.head < n and 0 <= t.tail < n and 0 <= t.relation < 2


def test_symbols_to_triplets():
    assert symbols_to_triplets([1, 0, 2, NA, NA, NA]) == [(1, 0, 2), (None, None, None)]
    assert symbols_to_triplets([1, NA, 2])[0].is_na


def single_dim_decoder(scorer):
    cfg = DecoderConfig(scorer=scorer, max_triplets=1)
    params = make_decoder_params(cfg, 1, 2, 2, np.random.default_rng(0))
    return CopyDecoder(cfg, params, 2)


def test_reduction_hand_example():
    dec = single_dim_decoder(LINEAR)
    dec.params["dec.W_e"].value[:] = [[0.7], [1.3]]
    states = Tensor(np.array([[[1.0], [2.0]]]))
    expected = nx.softmax_np(np.array([1.3, 2.6]))
    for h in (-0.9, 0.0, 0.4):
        np.testing.assert_allclose(dec.copy_distribution(np.array([h]), states), expected, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_reduction_check_by_scorer(seed):
    rng = np.random.default_rng(seed)
    states = Tensor(rng.normal(size=(1, 6, 12)))
    lin, _ = tiny_model(scorer=LINEAR, seed=seed)
    fused, _ = tiny_model(scorer=FUSED, seed=seed)
    assert reduction_check(lin.decoder, states, 100, rng).max_tv < 1e-12
    assert reduction_check(fused.decoder, states, 100, rng).max_tv > 0.01


def test_total_variation():
    assert total_variation(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert total_variation(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0


def test_multi_decoder_with_one_slot_matches_one_decoder_size():
    one, _ = tiny_model(max_triplets=1, decoder_mode="one")
    multi, _ = tiny_model(max_triplets=1, decoder_mode="multi")
    assert one.num_parameters() == multi.num_parameters()
    more, _ = tiny_model(max_triplets=3, decoder_mode="multi")
    assert more.num_parameters() > multi.num_parameters()


# the linear scorer can rank positions only once per sentence, so it gets the one-triplet instance
@pytest.mark.parametrize("scorer,index", [(LINEAR, 1), (FUSED, 1), (FUSED, 0)])
def test_single_instance_overfit(scorer, index):
    model, vocab = tiny_model(scorer=scorer, use_mask=True)
    batch = tiny_batch(vocab, [tiny_instances()[index]])
    state = nx.AdamState(lr=0.01)
    history = []
    for _ in range(200):
        nx.zero_grads(model.parameters())
        loss, _, loss_d = joint_loss(model, batch)
        history.append(loss_d.item())
        nx.backward(loss)
        nx.adam_step(model.parameters(), state)
    assert joint_loss(model, batch)[2].item() < 0.1 * history[0]
