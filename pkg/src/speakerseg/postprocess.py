"""Turn speaker activations into binary segmentations.

Pipeline per score stream: hysteresis thresholding, then filling short
inactive gaps, then removing short active regions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .annotation import BinaryFrames, FrameGrid, active_runs
from .pit import Activations

# absorbs float error when comparing run durations against frame multiples
_DURATION_TOL = 1e-9


@dataclass(frozen=True)
class PostProcessingParams:
    theta_on: float = 0.5
    theta_off: float = 0.5
    delta_on: float = 0.0
    delta_off: float = 0.0

    def __post_init__(self):
        for name in ("theta_on", "theta_off"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("delta_on", "delta_off"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.theta_off > self.theta_on:
            raise ValueError(f"theta_off ({self.theta_off}) > theta_on ({self.theta_on})")


def hysteresis_binarize(scores, theta_on: float, theta_off: float) -> np.ndarray:
    """Two-threshold binarization.

    Starts inactive, switches on at the first frame with ``score >= theta_on``
    and back off at the first later frame with ``score < theta_off``.
    """
    if theta_off > theta_on:
        raise ValueError("theta_off must not exceed theta_on")
    s = np.asarray(scores, dtype=np.float64)
    on = s >= theta_on
    off = s < theta_off
    event = on | off
    idx = np.where(event, np.arange(s.size), -1)
    last = np.maximum.accumulate(idx) if s.size else idx
    return np.where(last >= 0, on[np.maximum(last, 0)], False)


def _too_short(length: np.ndarray, delta: float, step: float) -> np.ndarray:
    return length < delta / step - _DURATION_TOL


def fill_gaps(binary, delta_off: float, step: float) -> np.ndarray:
    """Activate inactive runs shorter than ``delta_off`` lying between two active runs."""
    if step <= 0:
        raise ValueError("step must be positive")
    b = np.asarray(binary, dtype=bool).copy()
    if delta_off <= 0 or b.size == 0:
        return b
    starts, ends = active_runs(b)
    gap_starts, gap_ends = ends[:-1], starts[1:]
    for s, e in zip(gap_starts, gap_ends):
        if _too_short(e - s, delta_off, step):
            b[s:e] = True
    return b


def remove_short(binary, delta_on: float, step: float) -> np.ndarray:
    """Deactivate active runs shorter than ``delta_on``."""
    if step <= 0:
        raise ValueError("step must be positive")
    b = np.asarray(binary, dtype=bool).copy()
    if delta_on <= 0 or b.size == 0:
        return b
    starts, ends = active_runs(b)
    for s, e in zip(starts, ends):
        if _too_short(e - s, delta_on, step):
            b[s:e] = False
    return b


def binarize_scores(scores, params: PostProcessingParams, step: float) -> np.ndarray:
    b = hysteresis_binarize(scores, params.theta_on, params.theta_off)
    b = fill_gaps(b, params.delta_off, step)
    return remove_short(b, params.delta_on, step)


def binarize(acts: Activations, params: PostProcessingParams) -> BinaryFrames:
    """Post-process every speaker column independently."""
    step = acts.grid.step
    data = np.zeros(acts.data.shape, dtype=bool)
    for k in range(acts.num_speakers):
        data[:, k] = binarize_scores(acts.data[:, k], params, step)
    return BinaryFrames(acts.grid, acts.labels, data)


def vad_scores(acts: Activations) -> np.ndarray:
    """Per-frame maximum activation over speakers."""
    if acts.num_speakers < 1:
        raise ValueError("voice activity scores need at least one speaker column")
    return acts.data.max(axis=1)


def osd_scores(acts: Activations) -> np.ndarray:
    """Per-frame second highest activation over speakers."""
    if acts.num_speakers < 2:
        raise ValueError("overlap scores need at least two speaker columns")
    return np.sort(acts.data, axis=1)[:, -2]


def score_stream(scores, grid: FrameGrid, label: str) -> Activations:
    """Wrap a 1-D score sequence as single-column activations."""
    return Activations(grid, np.asarray(scores, dtype=np.float64)[:, None], (label,))


# ---------------------------------------------------------------- CSV


class CSVFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def write_activations_csv(acts: Activations) -> str:
    """``time,<label...>`` header, one row per frame, 6 decimals throughout."""
    out = io.StringIO()
    out.write(",".join(("time",) + tuple(acts.labels)) + "\n")
    times = acts.grid.frame_start(np.arange(acts.grid.num_frames))
    for t, row in zip(times, acts.data):
        out.write(f"{t:.6f}," + ",".join(f"{v:.6f}" for v in row) + "\n")
    return out.getvalue()


def read_frame_table(text: str, step: float | None = None) -> tuple[FrameGrid, tuple[str, ...], np.ndarray]:
    """Parse a ``time,<col...>`` CSV into (grid, column names, matrix).

    The frame step is inferred from the time column unless given; it must be
    given for single-row files.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CSVFormatError("empty file", 1) from None
    if not header or header[0].strip() != "time":
        raise CSVFormatError("header must start with 'time'", 1)
    labels = tuple(h.strip() for h in header[1:])
    times, rows = [], []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CSVFormatError(f"expected {len(header)} columns, got {len(row)}", rowno)
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise CSVFormatError("non-numeric value", rowno) from None
        times.append(values[0])
        rows.append(values[1:])
    n = len(times)
    if n == 0:
        start = 0.0
        step = step or 0.016
    else:
        start = times[0]
        if step is None:
            if n < 2:
                raise CSVFormatError("cannot infer frame step from a single row")
            step = round((times[-1] - times[0]) / (n - 1), 6)
        if step <= 0:
            raise CSVFormatError("time column must be increasing")
        expected = start + np.arange(n) * step
        bad = np.flatnonzero(np.abs(np.asarray(times) - expected) > 1e-5 + 1e-9 * np.abs(expected))
        if bad.size:
            raise CSVFormatError("time is not on a uniform frame grid", int(bad[0]) + 2)
    data = np.asarray(rows, dtype=np.float64).reshape(n, len(labels))
    return FrameGrid(start, step, n), labels, data


def read_activations_csv(text: str, step: float | None = None) -> Activations:
    grid, labels, data = read_frame_table(text, step)
    if data.size and (data.min() < 0 or data.max() > 1):
        row = int(np.flatnonzero((data < 0).any(axis=1) | (data > 1).any(axis=1))[0]) + 2
        raise CSVFormatError("activation outside [0, 1]", row)
    return Activations(grid, data, labels)
