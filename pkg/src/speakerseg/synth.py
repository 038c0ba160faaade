"""Synthetic references, oracle activations and window scrambling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .annotation import DEFAULT_STEP, Annotation, FrameGrid, Segment, discretize
from .pit import EPS, Activations, Permutation, permute
from .reseg import SlidingWindowConfig, window_frames

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    """Independent on/off activity per speaker.

    ``on_rate`` is the rate (1/s) of switching from silent to speaking,
    ``off_rate`` the rate of the reverse switch, so each speaker is active a
    fraction ``on_rate / (on_rate + off_rate)`` of the time in the long run.
    """

    num_speakers: int = 2
    duration: float = 60.0
    on_rate: float = 0.3
    off_rate: float = 0.5
    noise_level: float = 0.0
    seed: int = 0
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ValueError("num_speakers must be >= 1")
        if self.on_rate <= 0 or self.off_rate <= 0:
            raise ValueError("transition rates must be positive")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def grid(self) -> FrameGrid:
        return FrameGrid.covering(self.duration, self.step)


def speaker_label(k: int) -> str:
    return f"spk{k}"


def generate_reference(cfg: SynthConfig, uri: str = "synth") -> Annotation:
    """Two-state continuous-time activity per speaker, boundaries snapped to the frame grid.

    Speakers that end up silent are dropped (and logged).
    """
    rng = np.random.default_rng(cfg.seed)
    num_frames = cfg.grid.num_frames
    p_active = cfg.on_rate / (cfg.on_rate + cfg.off_rate)
    tracks = []
    for k in range(cfg.num_speakers):
        label = speaker_label(k)
        t = 0.0
        active = rng.random() < p_active
        runs = []
        while t < cfg.duration:
            dwell = rng.exponential(1.0 / (cfg.off_rate if active else cfg.on_rate))
            if active:
                runs.append((t, min(t + dwell, cfg.duration)))
            t += dwell
            active = not active
        segs = 0
        for start, end in runs:
            lo = min(int(round(start / cfg.step)), num_frames)
            hi = min(int(round(end / cfg.step)), num_frames)
            if hi > lo:
                tracks.append((Segment(lo * cfg.step, hi * cfg.step), label))
                segs += 1
        if segs == 0:
            log.info("speaker %s is silent in %s and was dropped", label, uri)
    return Annotation(uri, tuple(tracks))


def oracle_activations(
    ref: Annotation,
    grid: FrameGrid,
    noise_level: float = 0.0,
    seed: int = 0,
    labels=None,
    k_max: int | None = None,
) -> Activations:
    """Activations derived from the reference frames plus clamped noise.

    Active cells get ``1 - |e|``, inactive ones ``|e|``, ``e ~ N(0, noise_level)``,
    all clamped to ``[EPS, 1 - EPS]``. With ``k_max`` the matrix is padded with
    silent columns.
    """
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    frames = discretize(ref, grid, labels)
    y = frames.data.astype(np.float64)
    names = list(frames.labels)
    if k_max is not None and k_max > y.shape[1]:
        extra = k_max - y.shape[1]
        y = np.hstack([y, np.zeros((y.shape[0], extra))])
        names += [f"silent{k}" for k in range(extra)]
    rng = np.random.default_rng(seed)
    eps = np.abs(rng.normal(0.0, noise_level, size=y.shape)) if noise_level > 0 else np.zeros_like(y)
    p = np.where(y > 0, 1.0 - eps, eps)
    return Activations(grid, np.clip(p, EPS, 1.0 - EPS), tuple(names))


class ScrambledWindows:
    """Window source that applies an independent random column permutation per window.

    The permutation of a window depends only on ``seed`` and the window's first
    frame. Applied permutations are recorded in :attr:`permutations`.
    """

    def __init__(self, acts: Activations, cfg: SlidingWindowConfig = SlidingWindowConfig(),
                 seed: int = 0, identity: bool = False):
        self.acts = acts
        self.grid = acts.grid
        self.cfg = cfg
        self.seed = seed
        self.identity = identity
        self.permutations: dict[int, Permutation] = {}

    def permutation(self, first: int) -> Permutation:
        k = self.acts.num_speakers
        if self.identity:
            return Permutation.identity(k)
        rng = np.random.default_rng([self.seed, first])
        return Permutation(tuple(rng.permutation(k)))

    def __call__(self, first: int, num_frames: int) -> Activations:
        perm = self.permutation(first)
        self.permutations[first] = perm
        return permute(self.acts.crop(first, num_frames), perm)

    def window_length(self) -> int:
        return window_frames(self.cfg, self.grid)[0]


def scramble_windows(acts: Activations, cfg: SlidingWindowConfig = SlidingWindowConfig(),
                     seed: int = 0) -> ScrambledWindows:
    return ScrambledWindows(acts, cfg, seed)
