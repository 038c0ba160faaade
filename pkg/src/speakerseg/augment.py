"""On-the-fly training augmentation: chunk mixing and additive noise.

Levels are full-chunk RMS ratios in dB.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotation import BinaryFrames, FrameGrid, discretize, parse_rttm, Segment, Timeline, DEFAULT_STEP

SAMPLE_RATE = 16000
K_MAX = 4
MAX_REJECTIONS = 100


@dataclass(frozen=True, eq=False)
class AudioChunk:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64).ravel())
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples ** 2))) if self.samples.size else 0.0


@dataclass(frozen=True, eq=False)
class LabeledChunk:
    """Audio chunk with its frame-level reference.

    ``audio`` may be None for label-only chunks (the toy trainer synthesizes
    features from labels).
    """

    labels: BinaryFrames
    audio: AudioChunk | None = None

    def __post_init__(self):
        if self.audio is not None and abs(self.labels.grid.duration - self.audio.duration) > self.labels.grid.step:
            raise ValueError(
                f"label grid spans {self.labels.grid.duration}s but audio lasts {self.audio.duration}s"
            )

    @property
    def num_speakers(self) -> int:
        return self.labels.num_speakers


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0


def level_ratio_db(signal, other) -> float:
    return 20.0 * np.log10(rms(signal) / rms(other))


def scale_to_ratio(reference, other, ratio_db: float) -> np.ndarray:
    """Scale ``other`` so that ``20*log10(rms(reference) / rms(scaled)) == ratio_db``."""
    ref_rms, other_rms = rms(reference), rms(other)
    if other_rms == 0:
        raise ValueError("cannot scale a silent signal to a finite level ratio")
    if ref_rms == 0:
        raise ValueError("reference signal is silent; level ratio is undefined")
    gain = ref_rms / (other_rms * 10.0 ** (ratio_db / 20.0))
    return np.asarray(other, dtype=np.float64) * gain


def mix_chunks(a: LabeledChunk, b: LabeledChunk, ssr_db: float, k_max: int = K_MAX) -> LabeledChunk | None:
    """Sum two chunks at signal-to-signal ratio ``ssr_db`` and merge their labels.

    Speakers of ``a`` and ``b`` are kept distinct (labels prefixed ``a:`` and
    ``b:``). Returns None when the mix would hold more than ``k_max`` speakers.
    """
    ga, gb = a.labels.grid, b.labels.grid
    if ga.num_frames != gb.num_frames or abs(ga.step - gb.step) > 1e-12:
        raise ValueError("chunks must share the same frame grid")
    if a.num_speakers + b.num_speakers > k_max:
        return None
    audio = None
    if a.audio is not None or b.audio is not None:
        if a.audio is None or b.audio is None:
            raise ValueError("cannot mix a chunk with audio and a label-only chunk")
        if a.audio.sample_rate != b.audio.sample_rate or a.audio.samples.size != b.audio.samples.size:
            raise ValueError("chunks must have equal sample rate and length")
        scaled = scale_to_ratio(a.audio.samples, b.audio.samples, ssr_db)
        audio = AudioChunk(a.audio.samples + scaled, a.audio.sample_rate)
    labels = BinaryFrames(
        ga,
        tuple(f"a:{lbl}" for lbl in a.labels.labels) + tuple(f"b:{lbl}" for lbl in b.labels.labels),
        np.hstack([a.labels.data, b.labels.data]),
    )
    return LabeledChunk(labels, audio)


def add_noise(a: AudioChunk, noise: AudioChunk, snr_db: float) -> AudioChunk:
    if a.sample_rate != noise.sample_rate or a.samples.size != noise.samples.size:
        raise ValueError("signal and noise must have equal sample rate and length")
    if noise.rms() == 0:
        raise ValueError("noise is silent")
    return AudioChunk(a.samples + scale_to_ratio(a.samples, noise.samples, snr_db), a.sample_rate)


def sample_training_batch(
    corpus: Sequence[LabeledChunk],
    batch: int,
    mix_prob: float = 0.5,
    seed: int | np.random.Generator = 0,
    k_max: int = K_MAX,
    ssr_range: tuple[float, float] = (0.0, 10.0),
    noises: Sequence[AudioChunk] = (),
    snr_range: tuple[float, float] = (5.0, 15.0),
) -> list[LabeledChunk]:
    """Draw ``batch`` training chunks, mixing pairs with probability ``mix_prob``.

    Mixes exceeding ``k_max`` speakers are redrawn; after ``MAX_REJECTIONS``
    consecutive rejections a RuntimeError is raised. When ``noises`` is given,
    chunks with audio also get background noise at an SNR drawn from
    ``snr_range``.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if not 0.0 <= mix_prob <= 1.0:
        raise ValueError("mix_prob must be in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for _ in range(batch):
        if rng.random() < mix_prob:
            for _attempt in range(MAX_REJECTIONS):
                i, j = rng.integers(len(corpus), size=2)
                ssr = rng.uniform(*ssr_range)
                chunk = mix_chunks(corpus[i], corpus[j], ssr, k_max)
                if chunk is not None:
                    break
            else:
                raise RuntimeError(
                    f"{MAX_REJECTIONS} consecutive mixes exceeded k_max={k_max}; corpus too dense in speakers"
                )
        else:
            chunk = corpus[int(rng.integers(len(corpus)))]
        if noises and chunk.audio is not None:
            noise = noises[int(rng.integers(len(noises)))]
            chunk = LabeledChunk(chunk.labels, add_noise(chunk.audio, noise, rng.uniform(*snr_range)))
        out.append(chunk)
    return out


# ---------------------------------------------------------------- audio I/O


def read_pcm16(data: bytes, sample_rate: int = SAMPLE_RATE) -> AudioChunk:
    """Headerless mono 16-bit little-endian PCM, scaled to [-1, 1)."""
    if len(data) % 2:
        raise ValueError("odd byte count in 16-bit PCM data")
    return AudioChunk(np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, sample_rate)


def write_pcm16(chunk: AudioChunk) -> bytes:
    ints = np.clip(np.round(chunk.samples * 32768.0), -32768, 32767).astype("<i2")
    return ints.tobytes()


def read_wav(data: bytes) -> AudioChunk:
    with wave.open(io.BytesIO(data), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError("only mono 16-bit WAV is supported")
        return read_pcm16(w.readframes(w.getnframes()), w.getframerate())


def write_wav(chunk: AudioChunk) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(chunk.sample_rate)
        w.writeframes(write_pcm16(chunk))
    return buf.getvalue()


def load_audio(path, sample_rate: int = SAMPLE_RATE) -> AudioChunk:
    data = Path(path).read_bytes()
    if data[:4] == b"RIFF":
        return read_wav(data)
    return read_pcm16(data, sample_rate)


# ---------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    offset: float
    rttm_path: str


def parse_manifest(text: str) -> list[ManifestEntry]:
    """``path<TAB>offset<TAB>rttm_path`` per line; ``#`` starts a comment."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
        entries.append(ManifestEntry(fields[0], float(fields[1]), fields[2]))
    return entries


def load_chunk(entry: ManifestEntry, duration: float, step: float = DEFAULT_STEP,
               base: Path | None = None) -> LabeledChunk:
    """Crop ``duration`` seconds of audio and reference starting at ``entry.offset``."""
    base = base or Path(".")
    audio = load_audio(base / entry.path)
    first = int(round(entry.offset * audio.sample_rate))
    n = int(round(duration * audio.sample_rate))
    samples = audio.samples[first:first + n]
    if samples.size != n:
        raise ValueError(f"{entry.path}: chunk at {entry.offset}s runs past the end of the audio")
    anns = parse_rttm((base / entry.rttm_path).read_text())
    stem = Path(entry.path).stem
    if stem in anns:
        ann = anns[stem]
    elif len(anns) == 1:
        ann = next(iter(anns.values()))
    else:
        raise ValueError(f"{entry.rttm_path}: cannot tell which file id belongs to {entry.path}")
    window = Timeline((Segment(entry.offset, entry.offset + duration),))
    local = ann.crop(window).shift(-entry.offset)
    grid = FrameGrid.covering(duration, step)
    return LabeledChunk(discretize(local, grid), AudioChunk(samples, audio.sample_rate))
