import math
import struct

import numpy as np
import pytest
import torch

from sicref import codec
from sicref.checkpoint import checkpoint_digest
from sicref.codec import (Bitstream, CodecConfig, EntropyModel, Latent, entropy_decode,
                          entropy_encode, estimate_rate, quantize, quantize_table)
from sicref.errors import CheckpointMismatchError, ConfigError, DecodeError
from sicref.imaging import Image

from conftest import TINY_CODEC


def _uniform_model(channels=2, symbol_range=4, precision=16):
    n = 2 * symbol_range + 2
    probs = np.full((channels, n), 1.0 / n)
    return EntropyModel(cmf=quantize_table(probs, precision), symbol_range=symbol_range,
                        table_precision=precision)


def _latent(values):
    return Latent(values=np.asarray(values, dtype=np.float32), quantized=True)


# --- quantization -----------------------------------------------------------


def test_round_ties_away_from_zero():
    raw = Latent(values=np.array(
        [[[0.5, -0.5, 1.5, -1.5, 2.49, -2.49, 2.51]]], dtype=np.float32))
    q = quantize(raw, "round")
    assert q.quantized
    assert q.values.ravel().tolist() == [1.0, -1.0, 2.0, -2.0, 2.0, -2.0, 3.0]


def test_round_clamps_to_symbol_range():
    raw = Latent(values=np.array([[[80.0, -99.5, 64.4, -64.5]]], dtype=np.float32))
    q = quantize(raw, "round", bound=64)
    assert q.values.ravel().tolist() == [64.0, -64.0, 64.0, -64.0]


def test_round_is_idempotent():
    raw = Latent(values=np.random.default_rng(0).standard_normal((2, 3, 3)).astype(np.float32) * 3)
    once = quantize(raw, "round")
    twice = quantize(once, "round")
    assert np.array_equal(once.values, twice.values)


def test_noise_mode_bounded_and_unquantized():
    rng = np.random.default_rng(1)
    raw = Latent(values=rng.standard_normal((3, 8, 8)).astype(np.float32))
    for seed in range(5):
        noisy = quantize(raw, "noise", rng=np.random.default_rng(seed))
        assert not noisy.quantized
        assert np.all(np.abs(noisy.values - raw.values) < 0.5)


def test_quantize_unknown_mode():
    with pytest.raises(ValueError):
        quantize(_latent(np.zeros((1, 1, 1))), "dither")


def test_latent_validation():
    with pytest.raises(ValueError):
        Latent(values=np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        Latent(values=np.zeros((1, 2, 2), dtype=np.float64))
    with pytest.raises(ValueError):
        Latent(values=np.full((1, 2, 2), 0.5, dtype=np.float32), quantized=True)


# --- tables and rate --------------------------------------------------------


def test_quantize_table_normalizes_exactly():
    rng = np.random.default_rng(2)
    probs = rng.random((4, 130))
    probs /= probs.sum(axis=1, keepdims=True)
    cmf = quantize_table(probs, 16)
    freqs = np.diff(cmf, axis=1)
    assert np.all(freqs >= 1)
    assert np.all(cmf[:, 0] == 0)
    assert np.all(cmf[:, -1] == 65536)


def test_quantize_table_keeps_tiny_probabilities_codable():
    probs = np.array([[1e-12, 1.0 - 1e-12]])
    cmf = quantize_table(probs, 16)
    assert cmf[0].tolist() == [0, 1, 65536]


def test_estimate_rate_matches_hand_computation():
    model = _uniform_model(channels=1, symbol_range=2)  # 6 symbols
    lat = _latent(np.array([[[0, 1, -2, 2]]]))
    freqs = np.diff(model.cmf[0])
    expected = sum(16.0 - math.log2(freqs[v + 2]) for v in (0, 1, -2, 2))
    assert abs(estimate_rate(lat, model) - expected) < 1e-9


def test_estimate_rate_escape_adds_sixteen_bits():
    model = _uniform_model(channels=1, symbol_range=2)
    freqs = np.diff(model.cmf[0])
    inband = _latent(np.array([[[1]]]))
    escaped = _latent(np.array([[[300]]]))
    delta = estimate_rate(escaped, model) - estimate_rate(inband, model)
    expected = (16.0 - math.log2(freqs[5])) - (16.0 - math.log2(freqs[3])) + 16.0
    assert abs(delta - expected) < 1e-9


def test_estimate_rate_requires_quantized():
    model = _uniform_model()
    with pytest.raises(ValueError):
        estimate_rate(Latent(values=np.zeros((2, 2, 2), dtype=np.float32)), model)


# --- entropy coding ---------------------------------------------------------


def test_entropy_round_trip_random_latents():
    rng = np.random.default_rng(5)
    for trial in range(50):
        c = int(rng.integers(1, 5))
        model = _uniform_model(channels=c, symbol_range=int(rng.integers(2, 9)))
        shape = (c, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        vals = rng.integers(-model.symbol_range, model.symbol_range + 1,
                            size=shape).astype(np.float32)
        lat = Latent(values=vals, quantized=True)
        back = entropy_decode(entropy_encode(lat, model), model, shape)
        assert np.array_equal(back.values, vals), f"trial {trial}"
        assert back.quantized


def test_entropy_round_trip_with_escapes():
    model = _uniform_model(channels=2, symbol_range=4)
    vals = np.array([[[3, 200], [-4, -3000]],
                     [[32767, -32768], [0, 4]]], dtype=np.float32)
    lat = Latent(values=vals, quantized=True)
    back = entropy_decode(entropy_encode(lat, model), model, (2, 2, 2))
    assert np.array_equal(back.values, vals)


def test_entropy_encode_rejects_beyond_int16():
    model = _uniform_model()
    with pytest.raises(ValueError):
        entropy_encode(_latent(np.full((2, 1, 1), 40000.0)), model)


def test_entropy_empty_latent():
    model = _uniform_model(channels=2)
    lat = Latent(values=np.zeros((2, 0, 3), dtype=np.float32), quantized=True)
    payload = entropy_encode(lat, model)
    back = entropy_decode(payload, model, (2, 0, 3))
    assert back.values.shape == (2, 0, 3)


def test_entropy_decode_detects_corruption():
    """Corruption either raises DecodeError or leaves the content untouched.

    Bytes near the tail of the coded stream can be pure read-ahead margin:
    flipping them never reaches the decoded symbols, so the checksum rightly
    accepts the payload.  Anything that alters decoded content must raise.
    """
    rng = np.random.default_rng(6)
    model = _uniform_model(channels=2, symbol_range=6)
    vals = rng.integers(-6, 7, size=(2, 8, 8)).astype(np.float32)
    payload = entropy_encode(Latent(values=vals, quantized=True), model)

    def outcome(bad):
        try:
            back = entropy_decode(bytes(bad), model, (2, 8, 8))
        except DecodeError:
            return "raised"
        assert np.array_equal(back.values, vals)
        return "unchanged"

    # hard failures: empty stream, heavy truncation, checksum-byte flips,
    # and single-bit flips well inside the coded region
    assert outcome(b"") == "raised"
    assert outcome(payload[:5]) == "raised"
    assert outcome(bytes([payload[0] ^ 1]) + payload[1:]) == "raised"
    detected = 0
    for i in range(4, len(payload) - 5):
        if outcome(payload[:i] + bytes([payload[i] ^ 0x40]) + payload[i + 1:]) == "raised":
            detected += 1
    assert detected == len(payload) - 9  # every in-region flip caught

    # tail mutations may hit read-ahead margin only; never silent corruption
    outcome(payload[:-1])
    outcome(payload + b"\x01")


def test_entropy_payload_measured_vs_estimated():
    """Measured bytes within 2% + 16 of the model estimate on >= 1000 symbols."""
    rng = np.random.default_rng(8)
    for trial in range(5):
        model = _uniform_model(channels=3, symbol_range=8)
        vals = rng.integers(-8, 9, size=(3, 20, 20)).astype(np.float32)
        lat = Latent(values=vals, quantized=True)
        payload = entropy_encode(lat, model)
        est_bytes = estimate_rate(lat, model) / 8.0
        assert abs(len(payload) - est_bytes) <= 0.02 * est_bytes + 16


def test_channels_must_match_model():
    model = _uniform_model(channels=2)
    lat = _latent(np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        entropy_encode(lat, model)
    with pytest.raises(ValueError):
        estimate_rate(lat, model)


# --- density freezing -------------------------------------------------------


def test_frozen_probabilities_match_logistic_closed_form():
    density = codec.FactorizedDensity(2)
    with torch.no_grad():
        density.loc.copy_(torch.tensor([0.7, -1.2]))
        density.log_scale.copy_(torch.tensor([0.3, -0.5]))
    probs = density.frozen_probabilities(symbol_range=4)
    assert probs.shape == (2, 10)

    def sigmoid(x):
        return 1.0 / (1.0 + np.exp(-x))

    for c, (loc, ls) in enumerate([(0.7, 0.3), (-1.2, -0.5)]):
        s = math.exp(ls)
        for i, k in enumerate(range(-4, 5)):
            want = sigmoid((k + 0.5 - loc) / s) - sigmoid((k - 0.5 - loc) / s)
            assert abs(probs[c, i] - want) < 1e-6  # float32 evaluation
        tail = sigmoid((-4 - 0.5 - loc) / s) + 1.0 - sigmoid((4 + 0.5 - loc) / s)
        assert abs(probs[c, -1] - tail) < 1e-6
    # full mass accounted for
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_entropy_model_validation():
    cmf = quantize_table(np.full((1, 10), 0.1), 16)
    EntropyModel(cmf=cmf, symbol_range=4)
    with pytest.raises(ValueError):
        EntropyModel(cmf=cmf, symbol_range=5)  # wrong width for the range


# --- whole-image paths ------------------------------------------------------


def test_encode_decode_base_arbitrary_dims(tiny_base):
    rng = np.random.default_rng(10)
    for h, w in ((37, 53), (48, 48), (1, 1), (17, 96)):
        img = Image.from_array(rng.random((h, w, 3)).astype(np.float32))
        latent, payload = codec.encode_base(img, tiny_base)
        assert latent.quantized
        out = codec.decode_base(payload, tiny_base, h, w)
        assert out.pixels.shape == (h, w, 3)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_compress_decompress_round_trip(tiny_base, tiny_enh):
    rng = np.random.default_rng(11)
    img = Image.from_array(rng.random((50, 70, 3)).astype(np.float32))
    bs = codec.compress_image(img, tiny_base, tiny_enh)
    machine, human = codec.decompress_image(bs, tiny_base, tiny_enh)
    assert machine.pixels.shape == img.pixels.shape
    assert human.pixels.shape == img.pixels.shape
    # the enhancement layer must actually help at equal lambda
    assert bs.width == 70 and bs.height == 50


def test_compress_is_deterministic(tiny_base, tiny_enh):
    rng = np.random.default_rng(12)
    img = Image.from_array(rng.random((48, 48, 3)).astype(np.float32))
    raw1 = codec.compress_image(img, tiny_base, tiny_enh).serialize()
    raw2 = codec.compress_image(img, tiny_base, tiny_enh).serialize()
    assert raw1 == raw2


def test_encode_enhancement_shape_mismatch(tiny_base, tiny_enh):
    rng = np.random.default_rng(13)
    img = Image.from_array(rng.random((48, 48, 3)).astype(np.float32))
    machine = Image.from_array(rng.random((48, 52, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        codec.encode_enhancement(img, machine, tiny_enh)


def test_checkpoint_kind_enforced(tiny_base, tiny_enh):
    rng = np.random.default_rng(14)
    img = Image.from_array(rng.random((48, 48, 3)).astype(np.float32))
    with pytest.raises(CheckpointMismatchError):
        codec.encode_base(img, tiny_enh)
    with pytest.raises(CheckpointMismatchError):
        codec.encode_enhancement(img, img, tiny_base)


def test_layer_pair_digest_enforced(tiny_corpus, tiny_base, tiny_enh):
    import sicref.training as training
    other_base = training.train_codec(
        tiny_corpus,
        training.TrainConfig(target="base_codec", lmbda=0.01, epochs=1,
                             batch_size=4, patch=48, seed=99),
        codec_cfg=TINY_CODEC)
    assert checkpoint_digest(other_base) != checkpoint_digest(tiny_base)
    rng = np.random.default_rng(15)
    img = Image.from_array(rng.random((48, 48, 3)).astype(np.float32))
    with pytest.raises(CheckpointMismatchError):
        codec.compress_image(img, other_base, tiny_enh)


def test_config_validation():
    with pytest.raises(ConfigError):
        CodecConfig(downsample_factor=6)
    with pytest.raises(ConfigError):
        CodecConfig(hidden_channels=0)
    with pytest.raises(ConfigError):
        CodecConfig(lambda_base=0.0)
    with pytest.raises(ConfigError):
        CodecConfig(symbol_range=0)
    cfg = CodecConfig()
    assert CodecConfig.from_dict(cfg.to_dict()) == cfg


def test_pad_to_factor_edge_replication():
    px = np.arange(6 * 5 * 3, dtype=np.float32).reshape(6, 5, 3) / 100.0
    padded = codec.pad_to_factor(px, 4)
    assert padded.shape == (8, 8, 3)
    assert np.array_equal(padded[:6, :5], px)
    assert np.array_equal(padded[6], padded[5])  # replicated rows
    assert np.array_equal(padded[:, 5], padded[:, 4])  # replicated cols
    same = codec.pad_to_factor(px[:4, :4], 4)
    assert same.shape == (4, 4, 3)


# --- bitstream container ----------------------------------------------------


def test_bitstream_round_trip_and_header_size():
    bs = Bitstream(width=640, height=480, base_payload=b"base..", enh_payload=b"enh!")
    raw = bs.serialize()
    assert len(raw) == codec.BITSTREAM_HEADER_BYTES + 6 + 4
    assert raw[:4] == b"SICR"
    back = Bitstream.parse(raw)
    assert back == bs


def test_bitstream_empty_payloads():
    bs = Bitstream(width=1, height=1, base_payload=b"", enh_payload=b"")
    assert Bitstream.parse(bs.serialize()) == bs


def test_bitstream_header_layout_is_little_endian():
    bs = Bitstream(width=0x0102, height=0x0304, base_payload=b"\xaa", enh_payload=b"")
    raw = bs.serialize()
    assert raw[4] == codec.BITSTREAM_VERSION
    assert struct.unpack_from("<H", raw, 5)[0] == 0x0102
    assert struct.unpack_from("<H", raw, 7)[0] == 0x0304
    assert struct.unpack_from("<I", raw, 9)[0] == 1


def test_bitstream_parse_errors():
    good = Bitstream(width=8, height=8, base_payload=b"xy", enh_payload=b"z").serialize()
    with pytest.raises(DecodeError):
        Bitstream.parse(b"JUNK" + good[4:])
    with pytest.raises(DecodeError):
        Bitstream.parse(good[:-1])
    with pytest.raises(DecodeError):
        Bitstream.parse(good + b"\x00")
    with pytest.raises(DecodeError):
        Bitstream.parse(good[:10])
    bad_version = bytearray(good)
    bad_version[4] = 9
    with pytest.raises(DecodeError):
        Bitstream.parse(bytes(bad_version))


def test_bitstream_dimension_bounds():
    with pytest.raises(ValueError):
        Bitstream(width=0, height=8, base_payload=b"", enh_payload=b"").serialize()
    with pytest.raises(ValueError):
        Bitstream(width=8, height=70000, base_payload=b"", enh_payload=b"").serialize()
