"""Continuous-time annotations, RTTM/UEM I/O and the discrete frame grid.

Times are seconds. Segments are half-open ``[start, end)``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

DEFAULT_STEP = 0.016
DEFAULT_CHUNK_DURATION = 5.0


class ParseError(ValueError):
    """Malformed RTTM/UEM input. ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, order=True)
class Segment:
    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "end", float(self.end))
        if not self.end > self.start:
            raise ValueError(f"segment end must be > start, got [{self.start}, {self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def intersects(self, other: "Segment") -> bool:
        return self.start < other.end and other.start < self.end

    def gap(self, other: "Segment") -> float:
        """Distance between the two segments, 0 when they touch or overlap."""
        return max(0.0, other.start - self.end, self.start - other.end)


@dataclass(frozen=True)
class Timeline:
    """Sorted collection of segments (may overlap until :meth:`support` is taken)."""

    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(sorted(self.segments)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "Timeline":
        return cls(tuple(Segment(float(s), float(e)) for s, e in pairs))

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __bool__(self) -> bool:
        return bool(self.segments)

    def to_pairs(self) -> list[tuple[float, float]]:
        return [(s.start, s.end) for s in self.segments]

    def support(self) -> "Timeline":
        """Merge overlapping or touching segments into maximal disjoint ones."""
        merged: list[list[float]] = []
        for seg in self.segments:
            if merged and seg.start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], seg.end)
            else:
                merged.append([seg.start, seg.end])
        return Timeline.from_pairs(merged)

    def duration(self) -> float:
        """Total duration of the support (overlaps counted once)."""
        return float(sum(s.duration for s in self.support().segments))

    def extent(self) -> Segment | None:
        if not self.segments:
            return None
        return Segment(self.segments[0].start, max(s.end for s in self.segments))

    def union(self, other: "Timeline") -> "Timeline":
        return Timeline(self.segments + other.segments).support()

    def intersect(self, other: "Timeline") -> "Timeline":
        a = self.support().segments
        b = other.support().segments
        out = []
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max(a[i].start, b[j].start)
            hi = min(a[i].end, b[j].end)
            if hi > lo:
                out.append(Segment(lo, hi))
            if a[i].end < b[j].end:
                i += 1
            else:
                j += 1
        return Timeline(tuple(out))

    def subtract(self, other: "Timeline") -> "Timeline":
        holes = other.support().segments
        out = []
        for seg in self.support().segments:
            cursor = seg.start
            for hole in holes:
                if hole.end <= cursor:
                    continue
                if hole.start >= seg.end:
                    break
                if hole.start > cursor:
                    out.append(Segment(cursor, hole.start))
                cursor = max(cursor, hole.end)
                if cursor >= seg.end:
                    break
            if cursor < seg.end:
                out.append(Segment(cursor, seg.end))
        return Timeline(tuple(out))

    def contains_point(self, t: float) -> bool:
        sup = self.support().segments
        i = bisect.bisect_right([s.start for s in sup], t) - 1
        return i >= 0 and t < sup[i].end


@dataclass(frozen=True)
class Annotation:
    """Speaker-labelled segments of one recording.

    Tracks are kept sorted by ``(start, end, label)``; a speaker's duplicated
    segments are collapsed.
    """

    uri: str = ""
    tracks: tuple[tuple[Segment, str], ...] = ()

    def __post_init__(self):
        uniq = {(seg, str(label)) for seg, label in self.tracks}
        ordered = sorted(uniq, key=lambda t: (t[0].start, t[0].end, t[1]))
        object.__setattr__(self, "tracks", tuple(ordered))

    @classmethod
    def from_triples(cls, uri: str, triples: Iterable[tuple[float, float, str]]) -> "Annotation":
        return cls(uri, tuple((Segment(float(s), float(e)), lbl) for s, e, lbl in triples))

    def __len__(self) -> int:
        return len(self.tracks)

    def __bool__(self) -> bool:
        return bool(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def labels(self) -> list[str]:
        """Speakers by chronological order of first activity, ties broken by label."""
        first: dict[str, float] = {}
        for seg, label in self.tracks:
            if label not in first or seg.start < first[label]:
                first[label] = seg.start
        return sorted(first, key=lambda lbl: (first[lbl], lbl))

    def label_timeline(self, label: str) -> Timeline:
        return Timeline(tuple(seg for seg, lbl in self.tracks if lbl == label))

    def get_timeline(self) -> Timeline:
        return Timeline(tuple(seg for seg, _ in self.tracks))

    def support(self) -> Timeline:
        """Speech regions, regardless of speaker."""
        return self.get_timeline().support()

    def label_duration(self, label: str) -> float:
        return self.label_timeline(label).duration()

    def relabel(self, mapping: Mapping[str, str]) -> "Annotation":
        return Annotation(self.uri, tuple((seg, mapping.get(lbl, lbl)) for seg, lbl in self.tracks))

    def crop(self, region: Timeline) -> "Annotation":
        """Restrict every speaker to ``region``; speakers' own overlaps are merged."""
        tracks = []
        for label in self.labels():
            for seg in self.label_timeline(label).intersect(region):
                tracks.append((seg, label))
        return Annotation(self.uri, tuple(tracks))

    def shift(self, offset: float) -> "Annotation":
        return Annotation(
            self.uri,
            tuple((Segment(s.start + offset, s.end + offset), lbl) for s, lbl in self.tracks),
        )


@dataclass(frozen=True)
class FrameGrid:
    """Uniform frames; frame ``t`` covers ``[start + t*step, start + (t+1)*step)``."""

    start: float = 0.0
    step: float = DEFAULT_STEP
    num_frames: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("frame step must be positive")
        if self.num_frames < 0:
            raise ValueError("num_frames must be >= 0")

    @classmethod
    def covering(cls, duration: float, step: float = DEFAULT_STEP, start: float = 0.0) -> "FrameGrid":
        """Grid of ``round(duration / step)`` frames starting at ``start``."""
        return cls(start, step, int(round(duration / step)))

    @property
    def duration(self) -> float:
        return self.num_frames * self.step

    @property
    def end(self) -> float:
        return self.start + self.num_frames * self.step

    def frame_start(self, t) -> float:
        return self.start + np.asarray(t) * self.step

    def midpoints(self) -> np.ndarray:
        return self.start + (np.arange(self.num_frames) + 0.5) * self.step

    def sub(self, first: int, num_frames: int) -> "FrameGrid":
        return FrameGrid(self.start + first * self.step, self.step, num_frames)


@dataclass(frozen=True, eq=False)
class BinaryFrames:
    """T x K boolean matrix of speaker activity on a frame grid."""

    grid: FrameGrid
    labels: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2:
            data = data.reshape(self.grid.num_frames, len(self.labels))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", tuple(str(lbl) for lbl in self.labels))
        if data.shape != (self.grid.num_frames, len(self.labels)):
            raise ValueError(
                f"data shape {data.shape} does not match grid/labels "
                f"({self.grid.num_frames}, {len(self.labels)})"
            )
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")

    @property
    def num_speakers(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, BinaryFrames):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.labels == other.labels
            and np.array_equal(self.data, other.data)
        )

    def crop(self, first: int, num_frames: int) -> "BinaryFrames":
        return BinaryFrames(
            self.grid.sub(first, num_frames), self.labels, self.data[first:first + num_frames]
        )


# ---------------------------------------------------------------- RTTM / UEM


def parse_rttm(text: str) -> dict[str, Annotation]:
    """Parse RTTM ``SPEAKER`` lines into one :class:`Annotation` per file id."""
    tracks: dict[str, list[tuple[Segment, str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) < 9:
            raise ParseError(f"expected at least 9 fields, got {len(fields)}", lineno)
        if fields[0] != "SPEAKER":
            raise ParseError(f"unsupported record type {fields[0]!r}", lineno)
        uri, onset, dur, label = fields[1], fields[3], fields[4], fields[7]
        try:
            onset_f, dur_f = float(onset), float(dur)
        except ValueError:
            raise ParseError(f"non-numeric onset/duration {onset!r} {dur!r}", lineno) from None
        if dur_f < 0:
            raise ParseError(f"negative duration {dur_f}", lineno)
        tracks.setdefault(uri, [])
        if dur_f == 0:
            continue
        if onset_f < 0:
            raise ParseError(f"negative onset {onset_f}", lineno)
        tracks[uri].append((Segment(onset_f, onset_f + dur_f), label))
    return {uri: Annotation(uri, tuple(t)) for uri, t in tracks.items()}


def rttm_lines(annotation: Annotation, uri: str | None = None) -> list[str]:
    uri = annotation.uri if uri is None else uri
    rows = sorted(annotation.tracks, key=lambda t: (t[0].start, t[1], t[0].end))
    return [
        f"SPEAKER {uri} 1 {seg.start:.3f} {seg.duration:.3f} <NA> <NA> {label} <NA> <NA>"
        for seg, label in rows
    ]


def write_rttm(annotations: Mapping[str, Annotation]) -> str:
    """Serialise annotations; lines sorted by (uri, start, speaker)."""
    lines: list[str] = []
    for uri in sorted(annotations):
        lines.extend(rttm_lines(annotations[uri], uri))
    return "".join(line + "\n" for line in lines)


def parse_uem(text: str) -> dict[str, Timeline]:
    regions: dict[str, list[Segment]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;") or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", lineno)
        try:
            start, end = float(fields[2]), float(fields[3])
        except ValueError:
            raise ParseError("non-numeric start/end", lineno) from None
        if end <= start:
            raise ParseError(f"end {end} <= start {start}", lineno)
        regions.setdefault(fields[0], []).append(Segment(start, end))
    return {uri: Timeline(tuple(segs)) for uri, segs in regions.items()}


def write_uem(timelines: Mapping[str, Timeline]) -> str:
    out = []
    for uri in sorted(timelines):
        for seg in timelines[uri]:
            out.append(f"{uri} 1 {seg.start:.3f} {seg.end:.3f}\n")
    return "".join(out)


# ---------------------------------------------------------------- frames


def discretize(
    ann: Annotation, grid: FrameGrid, labels: Sequence[str] | None = None
) -> BinaryFrames:
    """Frame ``t`` of speaker ``k`` is active iff its midpoint falls inside one of k's segments."""
    if labels is None:
        labels = ann.labels()
    else:
        missing = set(ann.labels()) - set(labels)
        if missing:
            raise ValueError(f"labels missing annotation speakers: {sorted(missing)}")
    index = {lbl: k for k, lbl in enumerate(labels)}
    data = np.zeros((grid.num_frames, len(labels)), dtype=bool)
    mids = grid.midpoints()
    for seg, label in ann.tracks:
        lo = np.searchsorted(mids, seg.start, side="left")
        hi = np.searchsorted(mids, seg.end, side="left")
        data[lo:hi, index[label]] = True
    return BinaryFrames(grid, tuple(labels), data)


def active_runs(column: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and exclusive end indices of the True runs of a 1-D array."""
    col = np.asarray(column, dtype=bool)
    padded = np.concatenate(([False], col, [False])).astype(np.int8)
    diff = np.diff(padded)
    return np.flatnonzero(diff == 1), np.flatnonzero(diff == -1)


def to_annotation(frames: BinaryFrames, uri: str = "") -> Annotation:
    """Each maximal run of active frames becomes one segment."""
    grid = frames.grid
    tracks = []
    for k, label in enumerate(frames.labels):
        starts, ends = active_runs(frames.data[:, k])
        for s, e in zip(starts, ends):
            tracks.append((Segment(grid.start + s * grid.step, grid.start + e * grid.step), label))
    return Annotation(uri, tuple(tracks))


def overlap_timeline(ann: Annotation) -> Timeline:
    """Regions where at least two distinct speakers are active."""
    events: list[tuple[float, int]] = []
    for label in ann.labels():
        for seg in ann.label_timeline(label).support():
            events.append((seg.start, 1))
            events.append((seg.end, -1))
    # ends sort before starts at equal times: touching turns are not overlap
    events.sort(key=lambda e: (e[0], e[1]))
    out = []
    count = 0
    opened = None
    for t, delta in events:
        count += delta
        if count >= 2 and opened is None:
            opened = t
        elif count < 2 and opened is not None:
            if t > opened:
                out.append(Segment(opened, t))
            opened = None
    return Timeline(tuple(out)).support()
