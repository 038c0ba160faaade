"""Overlap-aware resegmentation of an existing diarization.

A fixed-duration window slides over the file. In every window the local
speaker activations are reordered to best match the diarization (minimum
BCE assignment), then the reordered activations are averaged over all windows
covering a frame and binarized.

Also provides the "two nearest speakers" overlap assignment heuristic used as
a baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from .annotation import Annotation, BinaryFrames, FrameGrid, Segment, Timeline, discretize, to_annotation
from .pit import Activations, Permutation, hungarian, pairwise_bce
from .postprocess import PostProcessingParams, binarize


@dataclass(frozen=True)
class SlidingWindowConfig:
    duration: float = 5.0
    step: float = 0.5

    def __post_init__(self):
        if not 0 < self.step <= self.duration:
            raise ValueError(f"need 0 < step <= duration, got step={self.step}, duration={self.duration}")


class WindowError(RuntimeError):
    """An activation provider failed for the window starting at ``offset`` seconds."""

    def __init__(self, offset: float, cause: BaseException):
        self.offset = offset
        super().__init__(f"activation provider failed for window at {offset:.3f}s: {cause}")


class ActivationSource(Protocol):
    grid: FrameGrid

    def __call__(self, first: int, num_frames: int) -> Activations: ...


class SlicedWindows:
    """Serve windows by slicing full-file activations."""

    def __init__(self, acts: Activations):
        self.acts = acts
        self.grid = acts.grid

    def __call__(self, first: int, num_frames: int) -> Activations:
        return self.acts.crop(first, num_frames)


def window_frames(cfg: SlidingWindowConfig, grid: FrameGrid) -> tuple[int, int]:
    """Window length and hop, in frames of ``grid``."""
    length = max(1, int(round(cfg.duration / grid.step)))
    hop = max(1, int(round(cfg.step / grid.step)))
    return length, hop


def window_starts(num_frames: int, length: int, hop: int) -> list[int]:
    """First frame of every window; the last one is shifted to end at the file end."""
    if num_frames <= length:
        return [0]
    starts = list(range(0, num_frames - length + 1, hop))
    if starts[-1] + length < num_frames:
        starts.append(num_frames - length)
    return starts


def _pad_columns(x: np.ndarray, width: int) -> np.ndarray:
    if x.shape[1] >= width:
        return x
    return np.hstack([x, np.zeros((x.shape[0], width - x.shape[1]), dtype=x.dtype)])


def _padded_pair(yhat_win: Activations, dia_win: BinaryFrames) -> tuple[np.ndarray, np.ndarray]:
    size = max(yhat_win.num_speakers, dia_win.num_speakers)
    return _pad_columns(dia_win.data.astype(np.float64), size), _pad_columns(yhat_win.data, size)


def window_cost(yhat_win: Activations, dia_win: BinaryFrames) -> np.ndarray:
    """Padded cost matrix used by :func:`align_window` (rows: diarization speakers)."""
    return pairwise_bce(*_padded_pair(yhat_win, dia_win))


def align_window(yhat_win: Activations, dia_win: BinaryFrames) -> Permutation:
    """Match diarization speakers to activation columns within one window.

    The smaller side is padded with all-zero columns so the assignment is
    square. Returned permutation maps diarization index to activation column.
    """
    if yhat_win.grid.num_frames == 0:
        raise ValueError("empty window")
    if yhat_win.grid.num_frames != dia_win.grid.num_frames:
        raise ValueError("window grids differ")
    y, p = _padded_pair(yhat_win, dia_win)
    mapping = list(hungarian(pairwise_bce(y, p)).mapping)
    # Identical diarization columns (e.g. silent speakers and padding) tie;
    # resolve by activation content, not column position, so that the
    # result does not depend on the order of activation columns.
    _, group = np.unique(y.T, axis=0, return_inverse=True)
    group = np.asarray(group).ravel()
    mass = p.sum(axis=0)
    for g in np.unique(group):
        rows = np.flatnonzero(group == g)
        if rows.size > 1:
            cols = sorted((mapping[r] for r in rows), key=lambda c: (mass[c], c))
            for r, c in zip(rows, cols):
                mapping[r] = c
    return Permutation(tuple(mapping))


def reorder_activations(yhat_win: Activations, perm: Permutation, labels) -> Activations:
    """Column ``i`` of the output is activation column ``perm[i]`` (padding included)."""
    size = len(perm)
    padded = _pad_columns(yhat_win.data, size)
    data = padded[:, list(perm.mapping)]
    labels = tuple(labels) + tuple(f"__dummy{k}" for k in range(size - len(labels)))
    return Activations(yhat_win.grid, data, labels)


@dataclass
class AggregationBuffer:
    """Running per-cell sum and count over a file grid."""

    num_frames: int
    num_speakers: int
    sum: np.ndarray = field(init=False)
    count: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sum = np.zeros((self.num_frames, self.num_speakers))
        self.count = np.zeros((self.num_frames, self.num_speakers), dtype=np.int64)

    def add(self, first: int, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)[:, : self.num_speakers]
        n = values.shape[0]
        if first < 0 or first + n > self.num_frames:
            raise ValueError(f"window [{first}, {first + n}) outside file of {self.num_frames} frames")
        self.sum[first:first + n] += values
        self.count[first:first + n] += 1

    def merge(self, other: "AggregationBuffer") -> None:
        self.sum += other.sum
        self.count += other.count

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        covered = self.count > 0
        out = np.zeros_like(self.sum)
        np.divide(self.sum, self.count, out=out, where=covered)
        return out, covered


def aggregate(
    windows: Iterable[tuple[int, Activations]],
    file_grid: FrameGrid,
    num_speakers: int,
    labels=None,
) -> Activations:
    """Average reordered window activations frame by frame.

    ``windows`` holds ``(first_frame, activations)`` pairs; columns beyond
    ``num_speakers`` (dummy speakers) are dropped. Uncovered frames get 0.0
    and trigger a warning.
    """
    buf = AggregationBuffer(file_grid.num_frames, num_speakers)
    for first, acts in windows:
        buf.add(first, acts.data)
    mean, covered = buf.mean()
    if file_grid.num_frames and not covered.all():
        warnings.warn(
            f"{int((~covered.any(axis=1)).sum())} frame(s) not covered by any window; filled with 0.0",
            RuntimeWarning,
            stacklevel=2,
        )
    return Activations(file_grid, np.clip(mean, 0.0, 1.0), labels)


def resegmentation_scores(
    dia: Annotation,
    acts_provider: ActivationSource | Callable[[int, int], Activations],
    cfg: SlidingWindowConfig = SlidingWindowConfig(),
    file_grid: FrameGrid | None = None,
    trace: list | None = None,
) -> Activations:
    """Aggregated activations, columns in ``dia.labels()`` order, before binarization.

    If ``trace`` is a list, ``(first_frame, cost_matrix, permutation)`` is
    appended for every window.
    """
    if not dia:
        raise ValueError("diarization is empty")
    if file_grid is None:
        file_grid = acts_provider.grid
    labels = dia.labels()
    length, hop = window_frames(cfg, file_grid)
    length = min(length, file_grid.num_frames)
    windows = []
    for first in window_starts(file_grid.num_frames, length, hop):
        offset = file_grid.start + first * file_grid.step
        try:
            yhat = acts_provider(first, length)
        except Exception as exc:
            raise WindowError(offset, exc) from exc
        dia_win = discretize(dia, file_grid.sub(first, length), labels)
        perm = align_window(yhat, dia_win)
        if trace is not None:
            trace.append((first, window_cost(yhat, dia_win), perm))
        windows.append((first, reorder_activations(yhat, perm, labels)))
    return aggregate(windows, file_grid, len(labels), labels)


def resegment(
    dia: Annotation,
    acts_provider: ActivationSource | Callable[[int, int], Activations],
    cfg: SlidingWindowConfig = SlidingWindowConfig(),
    params: PostProcessingParams = PostProcessingParams(),
    file_grid: FrameGrid | None = None,
) -> Annotation:
    """Overlap-aware resegmentation of ``dia`` using windowed activations.

    ``acts_provider(first_frame, num_frames)`` returns the activations of one
    window of the file grid (``acts_provider.grid`` unless ``file_grid`` is
    given). The output may contain overlapping speakers.
    """
    scores = resegmentation_scores(dia, acts_provider, cfg, file_grid)
    return to_annotation(binarize(scores, params), dia.uri)


# ---------------------------------------------------------------- heuristic


def speaker_distance(timeline: Timeline, region: Segment) -> float:
    """Smallest gap between ``region`` and any segment of ``timeline``."""
    return min((seg.gap(region) for seg in timeline), default=float("inf"))


def nearest_speaker(
    dia: Annotation, region: Segment, exclude: Iterable[str] = ()
) -> str | None:
    """Speaker temporally nearest to ``region``.

    Ties go to the speaker with more total speech, then to the smaller label.
    """
    excluded = set(exclude)
    ranked = [
        (speaker_distance(dia.label_timeline(lbl), region), -dia.label_duration(lbl), lbl)
        for lbl in dia.labels()
        if lbl not in excluded
    ]
    return min(ranked)[2] if ranked else None


def heuristic_overlap_assign(dia: Annotation, overlap: Timeline) -> Annotation:
    """Assign detected overlap regions to the two nearest speakers.

    Wherever ``dia`` has exactly one active speaker inside an overlap region,
    the nearest other speaker (distance measured to the whole region) is added.
    Speech already in ``dia`` is never removed; silent parts are untouched.
    """
    labels = dia.labels()
    timelines = {lbl: dia.label_timeline(lbl).support() for lbl in labels}
    added: dict[str, list[Segment]] = {}
    for region in overlap.support():
        cuts = {region.start, region.end}
        for tl in timelines.values():
            for seg in tl:
                if region.start < seg.start < region.end:
                    cuts.add(seg.start)
                if region.start < seg.end < region.end:
                    cuts.add(seg.end)
        bounds = sorted(cuts)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            mid = 0.5 * (lo + hi)
            active = [lbl for lbl, tl in timelines.items() if tl.contains_point(mid)]
            if len(active) != 1:
                continue
            other = nearest_speaker(dia, region, exclude=active)
            if other is not None:
                added.setdefault(other, []).append(Segment(lo, hi))
    tracks = list(dia.tracks)
    for lbl, segs in added.items():
        tracks.extend((seg, lbl) for seg in Timeline(tuple(segs)).support())
    return Annotation(dia.uri, tuple(tracks))
