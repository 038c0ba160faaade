import math

import numpy as np
import pytest

from speakerseg.annotation import BinaryFrames, FrameGrid, write_rttm, Annotation
from speakerseg.augment import (
    AudioChunk,
    LabeledChunk,
    ManifestEntry,
    add_noise,
    level_ratio_db,
    load_chunk,
    mix_chunks,
    parse_manifest,
    read_pcm16,
    read_wav,
    rms,
    sample_training_batch,
    scale_to_ratio,
    write_pcm16,
    write_wav,
)

SR = 16000
GRID = FrameGrid.covering(1.0, 0.016)


def chunk(num_speakers, seed=0, audio=True, prefix="s"):
    rng = np.random.default_rng(seed)
    labels = tuple(f"{prefix}{k}" for k in range(num_speakers))
    data = rng.random((GRID.num_frames, num_speakers)) < 0.5
    samples = AudioChunk(rng.normal(0, 0.1, SR)) if audio else None
    return LabeledChunk(BinaryFrames(GRID, labels, data), samples)


def test_rms_definition():
    assert rms([3.0, -4.0]) == pytest.approx(math.sqrt(12.5))
    assert rms([]) == 0.0


@pytest.mark.parametrize("ssr", [0.0, 3.7, 10.0, -6.0])
def test_mix_realizes_ssr(ssr):
    a, b = chunk(1, 1), chunk(2, 2)
    mixed = mix_chunks(a, b, ssr)
    scaled = mixed.audio.samples - a.audio.samples
    assert level_ratio_db(a.audio.samples, scaled) == pytest.approx(ssr, rel=1e-9, abs=1e-12)
    if ssr == 0.0:
        assert rms(a.audio.samples) == pytest.approx(rms(scaled), rel=1e-9)


def test_mix_rejects_too_many_speakers():
    assert mix_chunks(chunk(3, 1), chunk(2, 2), 5.0, k_max=4) is None


def test_mix_at_k_max_is_allowed():
    out = mix_chunks(chunk(2, 1), chunk(2, 2), 5.0, k_max=4)
    assert out.num_speakers == 4


def test_mix_labels_distinct_and_counts_preserved():
    a, b = chunk(2, 1), chunk(1, 2)
    out = mix_chunks(a, b, 2.0)
    assert out.labels.labels == ("a:s0", "a:s1", "b:s0")
    assert out.labels.data.sum(axis=0).tolist() == a.labels.data.sum(0).tolist() + b.labels.data.sum(0).tolist()


def test_mix_silent_other_side_is_error():
    a = chunk(1, 1)
    b = LabeledChunk(chunk(1, 2).labels, AudioChunk(np.zeros(SR)))
    with pytest.raises(ValueError, match="silent"):
        mix_chunks(a, b, 0.0)


def test_mix_label_only_chunks():
    out = mix_chunks(chunk(1, 1, audio=False), chunk(1, 2, audio=False), 3.0)
    assert out.audio is None and out.num_speakers == 2


def test_mix_requires_same_grid():
    other = LabeledChunk(BinaryFrames(FrameGrid(0, 0.016, 10), ("x",), np.zeros((10, 1), bool)))
    with pytest.raises(ValueError):
        mix_chunks(chunk(1, 1, audio=False), other, 0.0)


def test_labeled_chunk_duration_must_match_audio():
    with pytest.raises(ValueError):
        LabeledChunk(chunk(1).labels, AudioChunk(np.ones(SR * 2)))


@pytest.mark.parametrize("snr", [5.0, 15.0, 0.0, 9.25])
def test_add_noise_realizes_snr(snr):
    rng = np.random.default_rng(0)
    a, n = AudioChunk(rng.normal(0, 0.2, SR)), AudioChunk(rng.uniform(-1, 1, SR))
    out = add_noise(a, n, snr)
    assert level_ratio_db(a.samples, out.samples - a.samples) == pytest.approx(snr, rel=1e-9, abs=1e-12)


def test_add_noise_huge_snr_is_nearly_identity():
    rng = np.random.default_rng(1)
    a, n = AudioChunk(rng.normal(0, 0.2, SR)), AudioChunk(rng.normal(0, 1, SR))
    assert np.max(np.abs(add_noise(a, n, 200.0).samples - a.samples)) < 1e-6


def test_add_noise_power_adds_for_independent_white_inputs():
    rng = np.random.default_rng(2)
    a, n = AudioChunk(rng.normal(0, 0.3, 80000)), AudioChunk(rng.normal(0, 1.0, 80000))
    out = add_noise(a, n, 3.0)
    scaled = out.samples - a.samples
    assert rms(out.samples) ** 2 == pytest.approx(rms(a.samples) ** 2 + rms(scaled) ** 2, rel=0.05)


def test_add_noise_silent_noise_is_error():
    with pytest.raises(ValueError):
        add_noise(AudioChunk(np.ones(10)), AudioChunk(np.zeros(10)), 10.0)


def test_scale_to_ratio_silent_reference_is_error():
    with pytest.raises(ValueError):
        scale_to_ratio(np.zeros(10), np.ones(10), 0.0)


# ---------------------------------------------------------------- batches


def test_batch_no_mixing():
    corpus = [chunk(1, s) for s in range(5)]
    batch = sample_training_batch(corpus, 20, mix_prob=0.0, seed=0)
    assert all(any(item is c for c in corpus) for item in batch)


def test_batch_always_mixing_single_speaker_corpus():
    corpus = [chunk(1, s) for s in range(5)]
    batch = sample_training_batch(corpus, 20, mix_prob=1.0, seed=0, k_max=4)
    assert all(item.num_speakers == 2 for item in batch)


def test_batch_deterministic():
    corpus = [chunk(k % 3 + 1, k) for k in range(6)]
    noises = [AudioChunk(np.random.default_rng(9).normal(0, 1, SR))]
    a = sample_training_batch(corpus, 10, 0.5, seed=3, noises=noises)
    b = sample_training_batch(corpus, 10, 0.5, seed=3, noises=noises)
    for x, y in zip(a, b):
        assert x.labels == y.labels
        assert np.array_equal(x.audio.samples, y.audio.samples)


def test_batch_never_exceeds_k_max():
    corpus = [chunk(k % 4 + 1, k, audio=False) for k in range(8)]
    for item in sample_training_batch(corpus, 300, 1.0, seed=1, k_max=4):
        assert item.num_speakers <= 4


def test_batch_rejection_limit():
    corpus = [chunk(3, k, audio=False) for k in range(3)]
    with pytest.raises(RuntimeError, match="k_max"):
        sample_training_batch(corpus, 1, 1.0, seed=0, k_max=4)


@pytest.mark.parametrize("kwargs", [dict(corpus=[]), dict(mix_prob=1.5)])
def test_batch_argument_errors(kwargs):
    args = dict(corpus=[chunk(1)], batch=1, mix_prob=0.5)
    args.update(kwargs)
    with pytest.raises(ValueError):
        sample_training_batch(**args)


# ---------------------------------------------------------------- audio / manifests


def test_pcm16_round_trip_within_quantization():
    x = AudioChunk(np.random.default_rng(0).uniform(-0.9, 0.9, 1000))
    back = read_pcm16(write_pcm16(x))
    assert np.max(np.abs(back.samples - x.samples)) <= 0.5 / 32768 + 1e-12


def test_wav_round_trip():
    x = AudioChunk(np.round(np.random.default_rng(1).uniform(-0.5, 0.5, 800) * 32768) / 32768, 8000)
    back = read_wav(write_wav(x))
    assert back.sample_rate == 8000
    assert np.array_equal(back.samples, x.samples)


def test_pcm16_odd_bytes():
    with pytest.raises(ValueError):
        read_pcm16(b"\x00\x01\x02")


def test_manifest_parse():
    text = "# comment\na.wav\t1.5\ta.rttm\n\nb.pcm\t0\tb.rttm\n"
    assert parse_manifest(text) == [ManifestEntry("a.wav", 1.5, "a.rttm"), ManifestEntry("b.pcm", 0.0, "b.rttm")]
    with pytest.raises(ValueError, match="line 1"):
        parse_manifest("a.wav 1.5 a.rttm")


def test_load_chunk_crops_audio_and_reference(tmp_path):
    samples = AudioChunk(np.random.default_rng(0).uniform(-0.5, 0.5, 3 * SR))
    (tmp_path / "rec.wav").write_bytes(write_wav(samples))
    ann = Annotation.from_triples("rec", [(0.5, 1.5, "A"), (2.2, 2.9, "B")])
    (tmp_path / "rec.rttm").write_text(write_rttm({"rec": ann}))
    got = load_chunk(ManifestEntry("rec.wav", 1.0, "rec.rttm"), 1.5, 0.016, tmp_path)
    assert got.audio.samples.size == int(1.5 * SR)
    assert got.labels.labels == ("A", "B")
    active = got.labels.data
    times = got.labels.grid.midpoints()
    assert np.array_equal(active[:, 0], times < 0.5)
    assert np.array_equal(active[:, 1], times >= 1.2)
    with pytest.raises(ValueError, match="past the end"):
        load_chunk(ManifestEntry("rec.wav", 2.0, "rec.rttm"), 1.5, 0.016, tmp_path)
