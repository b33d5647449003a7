import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mntfa.audio import read_pcm16
from mntfa.data import (
    MixSpec,
    load_pair,
    mix_at_snr,
    power,
    read_manifest,
    sample_snr,
    synth_clean,
    synth_corpus,
    synth_noise,
    truncate_or_pad,
)
from mntfa.spectral import SignalError


def measured_snr(clean, noise):
    return 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))


def test_equal_powers_zero_db(rng):
    s = rng.normal(size=1000)
    n = rng.normal(size=1000)
    n *= np.sqrt(np.mean(s**2) / np.mean(n**2))
    mix = mix_at_snr(s * 0.01, n * 0.01, 0.0)
    assert mix.gain == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(mix.noisy, 0.01 * (s + n), atol=1e-15)


@pytest.mark.parametrize("snr", [10.0, -5.0, 0.0, 3.3])
def test_realized_snr(rng, snr):
    mix = mix_at_snr(synth_clean(rng, 1.0), synth_noise(rng, 1.0), snr)
    assert abs(measured_snr(mix.clean, mix.noise) - snr) <= 0.01
    if snr < 0:
        assert np.mean(mix.noise**2) > np.mean(mix.clean**2)


def test_peak_rescale_preserves_sum_and_snr(rng):
    s = rng.uniform(-0.9, 0.9, 4000)
    n = rng.uniform(-0.9, 0.9, 4000)
    mix = mix_at_snr(s, n, -5.0)
    assert np.abs(mix.noisy).max() == pytest.approx(0.95)
    np.testing.assert_allclose(mix.noisy, mix.clean + mix.noise, atol=1e-15)
    assert measured_snr(mix.clean, mix.noise) == pytest.approx(-5.0, abs=1e-9)


def test_mix_errors():
    with pytest.raises(SignalError):
        mix_at_snr(np.zeros(100), np.ones(100), 0.0)
    with pytest.raises(SignalError):
        mix_at_snr(np.ones(100), np.zeros(100), 0.0)
    with pytest.raises(SignalError):
        mix_at_snr(np.ones(100), np.ones(101), 0.0)


def test_truncate_long_input_is_contiguous_slice(rng):
    x = np.arange(12 * 100, dtype=np.float64)
    out = truncate_or_pad(x, 10, sample_rate=100, rng=3)
    assert len(out) == 1000
    assert np.all(np.diff(out) == 1) and out[0] in x
    np.testing.assert_array_equal(out, truncate_or_pad(x, 10, sample_rate=100, rng=3))


def test_pad_short_input():
    x = np.ones(800)
    out = truncate_or_pad(x, 10, sample_rate=100)
    assert len(out) == 1000
    assert np.all(out[:800] == 1) and np.all(out[800:] == 0)


def test_mix_spec_validation():
    with pytest.raises(ValueError):
        MixSpec(snr_db=0.0, target_seconds=0.0, seed=0)


def test_snr_sampling_is_uniform_in_range():
    rng = np.random.default_rng(0)
    draws = np.array([sample_snr(rng) for _ in range(1000)])
    assert -0.5 <= draws.mean() <= 0.5
    assert draws.min() >= -5 and draws.max() <= 5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20, allow_nan=False))
def test_realized_snr_property(seed, snr):
    r = np.random.default_rng(seed)
    mix = mix_at_snr(synth_clean(r, 0.25), synth_noise(r, 0.25), snr)
    assert abs(measured_snr(mix.clean, mix.noise) - snr) <= 0.01
    np.testing.assert_allclose(mix.noisy, mix.clean + mix.noise, atol=1e-15)


def test_surrogates_are_nonsilent_and_bounded(rng):
    for _ in range(5):
        s, n = synth_clean(rng, 1.0), synth_noise(rng, 1.0)
        assert len(s) == len(n) == 16000
        assert power(s) > 0 and power(n) > 0
        assert np.abs(s).max() < 1 and np.abs(n).max() < 1


def test_corpus_records_and_files(small_corpus):
    records = read_manifest(small_corpus)
    assert len(records) == 12
    assert len({r.id for r in records}) == 12
    for rec in records:
        clean = read_pcm16(rec.clean_path).astype(np.int64)
        noise = read_pcm16(rec.noise_path).astype(np.int64)
        noisy = read_pcm16(rec.noisy_path).astype(np.int64)
        np.testing.assert_array_equal(noisy, clean + noise)
        assert -5 <= rec.snr_db <= 5
        assert abs(measured_snr(clean / 32768, noise / 32768) - rec.snr_db) <= 0.01
        c, y = load_pair(rec)
        assert c.dtype == np.float64 and len(c) == len(y) == 16000


def test_manifest_paths_are_relative(small_corpus):
    first = small_corpus.read_text().splitlines()[0]
    assert '"clean_path": "clean/' in first


def test_corpus_is_deterministic_and_worker_independent(tmp_path):
    synth_corpus(tmp_path / "a", 4, seconds=0.5, seed=11, workers=1)
    synth_corpus(tmp_path / "b", 4, seconds=0.5, seed=11, workers=2)
    for sub in ("clean", "noise", "noisy"):
        for i in range(4):
            name = f"{sub}/pair{i:05d}.wav"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a/manifest.jsonl").read_text() == (tmp_path / "b/manifest.jsonl").read_text()


def test_missing_file_reported(tmp_path):
    synth_corpus(tmp_path, 2, seconds=0.5, seed=1)
    (tmp_path / "noisy/pair00001.wav").unlink()
    with pytest.raises(FileNotFoundError, match="pair00001"):
        read_manifest(tmp_path / "manifest.jsonl")
