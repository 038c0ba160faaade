"""
Mixing chunks for training
==========================

Overlap is rare in real recordings, so training chunks are summed at a
random signal-to-signal ratio to create more of it. A mix is rejected when
the two chunks together hold more speakers than the model has outputs.
"""

import numpy as np

from speakerseg.annotation import BinaryFrames, FrameGrid
from speakerseg.augment import AudioChunk, LabeledChunk, add_noise, level_ratio_db, mix_chunks, sample_training_batch

rng = np.random.default_rng(0)
grid = FrameGrid.covering(1.0, 0.016)


def chunk(prefix, n_speakers):
    labels = tuple(f"{prefix}{k}" for k in range(n_speakers))
    active = rng.random((grid.num_frames, n_speakers)) < 0.5
    return LabeledChunk(BinaryFrames(grid, labels, active), AudioChunk(rng.normal(0, 0.1, 16000)))


a, b = chunk("a", 1), chunk("b", 2)
mixed = mix_chunks(a, b, ssr_db=5.0)
print("labels after mixing:", mixed.labels.labels)
print("realized ratio (dB):", round(level_ratio_db(a.audio.samples, mixed.audio.samples - a.audio.samples), 12))

print("3 + 2 speakers with k_max=4:", mix_chunks(chunk("c", 3), b, 0.0, k_max=4))

noisy = add_noise(mixed.audio, AudioChunk(rng.uniform(-1, 1, 16000)), snr_db=10.0)
print("realized SNR (dB):", round(level_ratio_db(mixed.audio.samples, noisy.samples - mixed.audio.samples), 12))

corpus = [chunk(f"s{k}_", 1 + k % 3) for k in range(12)]
batch = sample_training_batch(corpus, 200, mix_prob=0.5, seed=0, k_max=4)
counts = np.bincount([item.num_speakers for item in batch])
print("speakers per chunk in a batch of 200:", dict(enumerate(counts.tolist())))
