import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrtfs.errors import ParameterError, WavFormatError
from lrtfs.gabor import build_tight_gabor
from lrtfs.signals import (
    SNR_CAP_DB,
    SignalBuffer,
    SyntheticSpec,
    add_noise,
    output_snr_db,
    preset,
    read_wav,
    synthesize,
    write_wav,
)


def test_float32_round_trip_is_lossless(tmp_path, rng):
    x = rng.uniform(-1, 1, 500).astype(np.float32).astype(float)
    write_wav(SignalBuffer(x, 8000.0), tmp_path / "a.wav")
    back = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(back.samples, x)
    assert back.sample_rate == 8000.0 and back.label == "a"


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_pcm16_round_trip_error(tmp_path_factory, seed):
    x = np.random.default_rng(seed).uniform(-0.99, 0.99, 300)
    path = tmp_path_factory.mktemp("wav") / "p.wav"
    write_wav(SignalBuffer(x, 16000.0), path, "pcm16")
    back = read_wav(path)
    assert np.max(np.abs(back.samples - x)) <= 2.0**-15


def _write_raw(path, channels, frames):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(frames)


def test_bad_wav_files(tmp_path):
    _write_raw(tmp_path / "empty.wav", 1, b"")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "empty.wav")
    _write_raw(tmp_path / "stereo.wav", 2, np.zeros(20, "<i2").tobytes())
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "stereo.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF\x00\x00")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "junk.wav")
    with pytest.raises(ParameterError):
        write_wav(SignalBuffer(np.zeros(4), 8000.0), tmp_path / "x.wav", "pcm24")


def test_buffer_validation():
    with pytest.raises(ParameterError):
        SignalBuffer(np.zeros((2, 2)), 8000.0)
    with pytest.raises(ParameterError):
        SignalBuffer(np.array([np.nan]), 8000.0)
    with pytest.raises(ParameterError):
        SignalBuffer(np.zeros(3), 0.0)
    buf = SignalBuffer(np.zeros(4000), 8000.0)
    assert buf.duration == 0.5 and len(buf) == 4000
    with pytest.raises(ValueError):
        buf.samples[0] = 1.0


def test_output_snr():
    x = np.array([1.0, 0.0, 0.0])
    assert output_snr_db(x, x) == SNR_CAP_DB
    assert output_snr_db(x, np.zeros(3)) == pytest.approx(0.0)
    assert output_snr_db(x, np.array([1.1, 0.0, 0.0])) == pytest.approx(20.0)
    with pytest.raises(ParameterError):
        output_snr_db(np.zeros(3), x)
    with pytest.raises(ParameterError):
        output_snr_db(x, x[:2])


@pytest.mark.parametrize("snr", [-5.0, 0.0, 20.0, 40.0])
def test_add_noise_hits_target(snr, rng):
    buf = SignalBuffer(rng.standard_normal(1000), 8000.0)
    noisy = add_noise(buf, snr, seed=3)
    assert output_snr_db(buf.samples, noisy.samples) == pytest.approx(snr, abs=1e-9)
    np.testing.assert_array_equal(noisy.samples, add_noise(buf, snr, seed=3).samples)
    with pytest.raises(ParameterError):
        add_noise(SignalBuffer(np.zeros(5), 8000.0), 10.0, 0)


def test_gabor_atoms_spec():
    spec = SyntheticSpec("gabor_atoms", {"window_len": 64, "atoms": [{"f": 3, "n": 2}, {"f": 5, "n": 4, "im": 1.0}]})
    buf, truth = synthesize(spec, 512, 8000.0)
    d = build_tight_gabor(64, 0.5, 512, "real")
    grid = np.zeros(d.shape, complex)
    grid[3, 2] = 1.0
    np.testing.assert_allclose(truth["components"][0], d.synthesis(grid), atol=1e-14)
    np.testing.assert_allclose(truth["components"].sum(axis=0), buf.samples, atol=1e-14)
    with pytest.raises(ParameterError):
        synthesize(SyntheticSpec("gabor_atoms", {"window_len": 64, "atoms": [{"f": 99, "n": 0}]}), 512, 8000.0)


def test_harmonic_notes_reject_nyquist():
    spec = SyntheticSpec("harmonic_notes", {"notes": [{"freq": 5000.0}]}, 0)
    with pytest.raises(ParameterError):
        synthesize(spec, 1000, 8000.0)


def test_spec_json_round_trip_and_seed_rule():
    spec = SyntheticSpec("rank_r_tf", {"rank": 2}, 5)
    assert SyntheticSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ParameterError):
        SyntheticSpec("rank_r_tf", {})
    with pytest.raises(ParameterError):
        SyntheticSpec("chirp", {}, 0)


def test_rank_r_draw_matches_variance():
    spec = SyntheticSpec("rank_r_tf", {"rank": 2, "window_len": 64, "stationary": True}, 11)
    buf, truth = synthesize(spec, 64 * 400, 8000.0)
    power = np.mean(np.abs(truth["alpha"]) ** 2, axis=1)
    expected = truth["W"].sum(axis=1)
    np.testing.assert_allclose(power, expected, rtol=0.2)
    np.testing.assert_allclose(truth["components"].sum(axis=0), buf.samples, atol=1e-10)


def test_synthesis_is_deterministic():
    a, _ = preset("rank2", duration=0.2, seed=4)
    b, _ = preset("rank2", duration=0.2, seed=4)
    c, _ = preset("rank2", duration=0.2, seed=5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_presets():
    four, truth = preset("fournotes", duration=2.0)
    assert four.sample_rate == 22050.0 and len(four) == 44100
    assert truth["components"].shape == (4, 44100)
    assert 0.5 < np.sqrt(np.mean(four.samples**2)) < 2.0
    tc, truth = preset("tonalclick", duration=1.0)
    np.testing.assert_allclose(truth["tonal"] + truth["clicks"], tc.samples, atol=1e-12)
    single, _ = preset("singleatom")
    assert len(single) == 11025
    with pytest.raises(ParameterError):
        preset("piano")
