"""Encoder: embedding composition, equivariances, reference-forward oracle."""

import numpy as np
import pytest

import entlm.tensor as T
from conftest import random_sequence, reference_word_forward
from entlm.encoder import (
    EncodedSequence,
    EncoderConfig,
    embed_entities,
    embed_words,
    encode,
    encode_batch,
    init_params,
    pack_batch,
)
from entlm.errors import CapacityError, ConfigError, ContractError, VocabError
from entlm.seeding import substream


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(10, 10, hidden_size=30, heads=4).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(10, 10, hidden_size=32, heads=2, entity_emb_size=64).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(10, 10, hidden_size=32, heads=2, entity_position_mode="max").validate()


def test_config_round_trip(tiny_config):
    assert EncoderConfig.from_dict(tiny_config.to_dict()) == tiny_config


def test_sequence_validation(tiny_config):
    with pytest.raises(ContractError):
        EncodedSequence(word_ids=[1, 2], entity_ids=[3], entity_positions=[[]]).validate()
    with pytest.raises(ContractError):
        EncodedSequence(word_ids=[1, 2], entity_ids=[3], entity_positions=[[5]]).validate()
    with pytest.raises(CapacityError):
        EncodedSequence(word_ids=[0] * 100).validate(tiny_config)


def test_embed_words_rejects_out_of_vocab(tiny_params, tiny_config):
    with pytest.raises(VocabError):
        embed_words(tiny_params, tiny_config, np.array([0, 99]))


def test_embed_words_is_sum_of_lookups(tiny_params, tiny_config):
    ids = np.array([3, 1, 4])
    out = embed_words(tiny_params, tiny_config, ids).data
    expected = (tiny_params["word_emb"].data[ids]
                + tiny_params["pos_emb"].data[:3]
                + tiny_params["type_emb"].data[0])
    assert np.allclose(out, expected, atol=1e-12)


def test_embed_entities_sum_mode(tiny_params, tiny_config):
    out = embed_entities(tiny_params, tiny_config, np.array([2]), [[1, 2, 3]]).data
    proj = (tiny_params["entity_emb"].data[2] @ tiny_params["entity_proj_w"].data
            + tiny_params["entity_proj_b"].data)
    expected = (proj + tiny_params["entity_type_emb"].data[1]
                + tiny_params["pos_emb"].data[1:4].sum(axis=0))
    assert np.allclose(out[0], expected, atol=1e-12)


def test_embed_entities_mean_mode(tiny_params, tiny_config):
    from dataclasses import replace
    cfg = replace(tiny_config, entity_position_mode="mean")
    s = embed_entities(tiny_params, tiny_config, np.array([2]), [[1, 2, 3]]).data
    m = embed_entities(tiny_params, cfg, np.array([2]), [[1, 2, 3]]).data
    pos_sum = tiny_params["pos_emb"].data[1:4].sum(axis=0)
    assert np.allclose(m[0], s[0] - pos_sum + pos_sum / 3.0, atol=1e-12)


def test_embed_entities_rejects_empty_mention(tiny_params, tiny_config):
    with pytest.raises(ContractError):
        embed_entities(tiny_params, tiny_config, np.array([1]), [[]])


def test_word_only_matches_reference_forward(tiny_params, tiny_config):
    rng = substream(11, "ref-forward")
    for _ in range(10):
        seq = random_sequence(rng, tiny_config, n_entities=0)
        out = encode(tiny_params, tiny_config, seq)
        ref = reference_word_forward(tiny_params, tiny_config, seq.word_ids)
        assert np.max(np.abs(out.word_vectors - ref)) < 1e-10


def test_no_entities_equals_word_only(tiny_params, tiny_config):
    rng = substream(12, "word-only")
    seq = random_sequence(rng, tiny_config, n_words=9, n_entities=0)
    a = encode(tiny_params, tiny_config, seq).word_vectors
    packed = pack_batch([seq])
    packed.pop("entity_ids"), packed.pop("entity_mask")
    packed.pop("entity_pos"), packed.pop("entity_pos_mask")
    b = encode_batch(tiny_params, tiny_config, packed).word_vectors[0]
    assert np.max(np.abs(a - b)) < 1e-10


def test_entity_permutation_equivariance(tiny_params, tiny_config):
    rng = substream(13, "perm")
    for _ in range(20):
        seq = random_sequence(rng, tiny_config, n_entities=3)
        perm = rng.permutation(3)
        permuted = EncodedSequence(
            word_ids=seq.word_ids,
            entity_ids=[seq.entity_ids[i] for i in perm],
            entity_positions=[seq.entity_positions[i] for i in perm],
        )
        a = encode(tiny_params, tiny_config, seq)
        b = encode(tiny_params, tiny_config, permuted)
        assert np.max(np.abs(a.word_vectors - b.word_vectors)) < 1e-10
        assert np.max(np.abs(a.entity_vectors[perm] - b.entity_vectors)) < 1e-10


def test_padding_does_not_change_live_outputs(tiny_params, tiny_config):
    rng = substream(14, "padding")
    s1 = random_sequence(rng, tiny_config, n_words=6, n_entities=1)
    s2 = random_sequence(rng, tiny_config, n_words=11, n_entities=2)
    alone = encode(tiny_params, tiny_config, s1)
    packed = encode_batch(tiny_params, tiny_config, pack_batch([s1, s2]))
    assert np.max(np.abs(packed.word_vectors[0, :6] - alone.word_vectors)) < 1e-10
    assert np.max(np.abs(packed.entity_vectors[0, :1] - alone.entity_vectors)) < 1e-10


def test_train_mode_needs_rng_for_dropout(tiny_config):
    from dataclasses import replace
    cfg = replace(tiny_config, dropout=0.1)
    params = init_params(cfg, substream(0, "dropcfg"))
    seq = EncodedSequence(word_ids=[1, 2, 3])
    with pytest.raises(ContractError):
        encode_batch(params, cfg, pack_batch([seq]), train=True)


def test_dropout_is_deterministic_given_stream(tiny_config):
    from dataclasses import replace
    cfg = replace(tiny_config, dropout=0.1)
    params = init_params(cfg, substream(0, "dropcfg"))
    seq = EncodedSequence(word_ids=[1, 2, 3, 4])
    a = encode_batch(params, cfg, pack_batch([seq]), rng=substream(5, "d"), train=True)
    b = encode_batch(params, cfg, pack_batch([seq]), rng=substream(5, "d"), train=True)
    assert np.array_equal(a.word_vectors, b.word_vectors)


def test_full_encoder_grad_check(tiny_params, tiny_config):
    rng = substream(15, "gradcheck")
    seq = random_sequence(rng, tiny_config, n_words=6, n_entities=2)
    packed = pack_batch([seq])
    labels = np.array([1, -100, 3, -100, 2, -100])

    def loss():
        out = encode_batch(tiny_params, tiny_config, packed)
        flat = T.reshape(out.word_tensor, (-1, tiny_config.hidden_size))
        logits = T.matmul(flat, T.transpose(tiny_params["word_emb"], (1, 0)))
        ent = T.reduce_sum(T.mul(out.entity_tensor, out.entity_tensor))
        return T.cross_entropy_logits(logits, labels) + T.scale(ent, 0.01)

    err = T.grad_check(loss, tiny_params, eps=1e-5, rng=np.random.default_rng(0),
                       samples_per_param=2)
    assert err < 1e-4
