"""Detection error, precision/recall/F1 and diarization error rate.

All durations are computed with exact interval arithmetic. Threshold tuning
for post-processing parameters lives here too since it is driven by these
objectives.
"""

from __future__ import annotations

import bisect
import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotation import Annotation, FrameGrid, Segment, Timeline, active_runs, overlap_timeline, to_annotation
from .pit import Activations, hungarian
from .postprocess import PostProcessingParams, binarize, binarize_scores, osd_scores, vad_scores

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """Raised when a rate has a zero denominator."""


@dataclass(frozen=True)
class DetectionReport:
    false_alarm: float
    missed: float
    total_positive: float

    def __post_init__(self):
        if self.total_positive <= 0:
            raise UndefinedMetricError("reference has zero duration; detection rates are undefined")

    @property
    def fa_rate(self) -> float:
        return 100.0 * self.false_alarm / self.total_positive

    @property
    def miss_rate(self) -> float:
        return 100.0 * self.missed / self.total_positive

    @property
    def error_rate(self) -> float:
        """False alarm rate plus missed detection rate."""
        return self.fa_rate + self.miss_rate

    def __add__(self, other: "DetectionReport") -> "DetectionReport":
        return DetectionReport(
            self.false_alarm + other.false_alarm,
            self.missed + other.missed,
            self.total_positive + other.total_positive,
        )

    def as_dict(self) -> dict:
        return {
            "false_alarm": self.false_alarm,
            "missed": self.missed,
            "total": self.total_positive,
            "fa_rate": self.fa_rate,
            "miss_rate": self.miss_rate,
            "detection_error_rate": self.error_rate,
        }


@dataclass(frozen=True)
class F1Report:
    """Precision/recall/F1 in percent, built from the three durations.

    An empty hypothesis (or reference) makes precision (or recall) undefined;
    it is then reported as 0 and flagged.
    """

    true_positive: float
    hyp_duration: float
    ref_duration: float

    @property
    def precision_defined(self) -> bool:
        return self.hyp_duration > 0

    @property
    def recall_defined(self) -> bool:
        return self.ref_duration > 0

    @property
    def precision(self) -> float:
        return 100.0 * self.true_positive / self.hyp_duration if self.precision_defined else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.true_positive / self.ref_duration if self.recall_defined else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "F1Report") -> "F1Report":
        return F1Report(
            self.true_positive + other.true_positive,
            self.hyp_duration + other.hyp_duration,
            self.ref_duration + other.ref_duration,
        )

    def as_dict(self) -> dict:
        return {
            "true_positive": self.true_positive,
            "hyp_duration": self.hyp_duration,
            "ref_duration": self.ref_duration,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_defined": self.precision_defined,
            "recall_defined": self.recall_defined,
        }


@dataclass(frozen=True)
class DiarizationReport:
    false_alarm: float
    missed: float
    confusion: float
    total: float
    mapping: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.total <= 0:
            raise UndefinedMetricError("reference has no speech; DER is undefined")

    @property
    def der(self) -> float:
        return 100.0 * (self.false_alarm + self.missed + self.confusion) / self.total

    @property
    def error(self) -> float:
        return self.false_alarm + self.missed + self.confusion

    def __add__(self, other: "DiarizationReport") -> "DiarizationReport":
        return DiarizationReport(
            self.false_alarm + other.false_alarm,
            self.missed + other.missed,
            self.confusion + other.confusion,
            self.total + other.total,
        )

    def as_dict(self) -> dict:
        return {
            "false_alarm": self.false_alarm,
            "missed": self.missed,
            "confusion": self.confusion,
            "total": self.total,
            "fa_rate": 100.0 * self.false_alarm / self.total,
            "miss_rate": 100.0 * self.missed / self.total,
            "confusion_rate": 100.0 * self.confusion / self.total,
            "der": self.der,
        }


def _default_uem(*timelines: Timeline) -> Timeline:
    segs = [t.extent() for t in timelines if t]
    if not segs:
        return Timeline()
    return Timeline((Segment(min(s.start for s in segs), max(s.end for s in segs)),))


def detection_error(ref: Timeline, hyp: Timeline, uem: Timeline | None = None) -> DetectionReport:
    """False alarm / missed detection durations of ``hyp`` against ``ref`` inside ``uem``.

    Without ``uem`` the extent of both inputs is scored.
    """
    if uem is None:
        uem = _default_uem(ref, hyp)
    ref = ref.intersect(uem)
    hyp = hyp.intersect(uem)
    return DetectionReport(
        false_alarm=hyp.subtract(ref).duration(),
        missed=ref.subtract(hyp).duration(),
        total_positive=ref.duration(),
    )


def precision_recall_f1(ref: Timeline, hyp: Timeline, uem: Timeline | None = None) -> F1Report:
    if uem is None:
        uem = _default_uem(ref, hyp)
    ref = ref.intersect(uem)
    hyp = hyp.intersect(uem)
    return F1Report(
        true_positive=ref.intersect(hyp).duration(),
        hyp_duration=hyp.duration(),
        ref_duration=ref.duration(),
    )


def scoring_region(
    ref: Annotation,
    hyp: Annotation,
    uem: Timeline | None = None,
    collar: float = 0.0,
    skip_overlap: bool = False,
) -> Timeline:
    """UEM minus ``collar/2`` around every reference boundary (and minus overlap if asked)."""
    if collar < 0:
        raise ValueError("collar must be >= 0")
    if uem is None:
        uem = _default_uem(ref.get_timeline(), hyp.get_timeline())
    region = uem.support()
    if collar > 0:
        half = collar / 2.0
        holes = []
        for seg, _ in ref.tracks:
            holes.append(Segment(seg.start - half, seg.start + half))
            holes.append(Segment(seg.end - half, seg.end + half))
        region = region.subtract(Timeline(tuple(holes)))
    if skip_overlap:
        region = region.subtract(overlap_timeline(ref))
    return region


class _Activity:
    """Point-membership lookup for each label of an annotation."""

    def __init__(self, ann: Annotation):
        self.labels = ann.labels()
        self._starts = {}
        self._ends = {}
        for lbl in self.labels:
            sup = ann.label_timeline(lbl).support()
            self._starts[lbl] = [s.start for s in sup]
            self._ends[lbl] = [s.end for s in sup]

    def active(self, t: float) -> list[int]:
        out = []
        for k, lbl in enumerate(self.labels):
            i = bisect.bisect_right(self._starts[lbl], t) - 1
            if i >= 0 and t < self._ends[lbl][i]:
                out.append(k)
        return out


def _elementary(ref: Annotation, hyp: Annotation, region: Timeline):
    """Yield (duration, ref indices, hyp indices) over maximal constant pieces of ``region``."""
    ref_act, hyp_act = _Activity(ref), _Activity(hyp)
    points = sorted({t for ann in (ref, hyp) for seg, _ in ann.tracks for t in (seg.start, seg.end)})
    for piece in region.support():
        lo_i = bisect.bisect_right(points, piece.start)
        hi_i = bisect.bisect_left(points, piece.end)
        bounds = [piece.start] + points[lo_i:hi_i] + [piece.end]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            mid = 0.5 * (lo + hi)
            yield hi - lo, ref_act.active(mid), hyp_act.active(mid)


def der(
    ref: Annotation,
    hyp: Annotation,
    uem: Timeline | None = None,
    collar: float = 0.0,
    skip_overlap: bool = False,
) -> DiarizationReport:
    """Diarization error rate under the optimal one-to-one speaker mapping."""
    region = scoring_region(ref, hyp, uem, collar, skip_overlap)
    ref_labels, hyp_labels = ref.labels(), hyp.labels()
    pieces = list(_elementary(ref, hyp, region))

    size = max(len(ref_labels), len(hyp_labels), 1)
    cooc = np.zeros((size, size))
    for dur, r_idx, h_idx in pieces:
        for r in r_idx:
            for h in h_idx:
                cooc[r, h] += dur
    perm = hungarian(-cooc)
    mapping = {
        ref_labels[r]: hyp_labels[perm[r]]
        for r in range(len(ref_labels))
        if perm[r] < len(hyp_labels) and cooc[r, perm[r]] > 0
    }

    fa = miss = conf = total = 0.0
    for dur, r_idx, h_idx in pieces:
        nr, nh = len(r_idx), len(h_idx)
        h_set = set(h_idx)
        correct = sum(1 for r in r_idx if perm[r] in h_set and cooc[r, perm[r]] > 0)
        fa += dur * max(0, nh - nr)
        miss += dur * max(0, nr - nh)
        conf += dur * (min(nr, nh) - correct)
        total += dur * nr
    return DiarizationReport(fa, miss, conf, total, mapping)


# ---------------------------------------------------------------- tuning


def frames_to_timeline(binary, grid: FrameGrid) -> Timeline:
    starts, ends = active_runs(binary)
    return Timeline(tuple(
        Segment(grid.start + s * grid.step, grid.start + e * grid.step) for s, e in zip(starts, ends)
    ))


OBJECTIVES = ("detection-error", "f1", "der")
PARAM_NAMES = ("theta_on", "theta_off", "delta_on", "delta_off")


@dataclass(frozen=True)
class DevItem:
    """One development file.

    For the ``der`` objective, ``activations`` are resegmented against
    ``diarization`` when it is given, else binarized directly.
    """

    reference: Annotation
    activations: Activations
    diarization: Annotation | None = None
    uem: Timeline | None = None


@dataclass(frozen=True)
class ParamSpace:
    """Inclusive search range per parameter; ``lo == hi`` pins a value."""

    theta_on: tuple[float, float] = (0.0, 1.0)
    theta_off: tuple[float, float] = (0.0, 1.0)
    delta_on: tuple[float, float] = (0.0, 1.0)
    delta_off: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"empty range for {name}: [{lo}, {hi}]")
        if self.theta_off[0] > self.theta_on[1]:
            raise ValueError("no point of the space satisfies theta_off <= theta_on")

    def bounds(self, name: str) -> tuple[float, float]:
        lo, hi = getattr(self, name)
        return float(lo), float(hi)

    def coarse_grid(self, shape=(5, 5, 3, 3)) -> list[tuple[float, ...]]:
        axes = []
        for name, n in zip(PARAM_NAMES, shape):
            lo, hi = self.bounds(name)
            axes.append(np.unique(np.linspace(lo, hi, n)) if hi > lo else np.array([lo]))
        return [tuple(float(v) for v in p) for p in itertools.product(*axes)]


@dataclass(frozen=True)
class TuneResult:
    params: PostProcessingParams
    objective: str
    value: float
    seed: int
    evaluations: int

    def as_dict(self) -> dict:
        return {
            "objective": self.objective,
            "value": self.value,
            "seed": self.seed,
            "evaluations": self.evaluations,
            **{name: getattr(self.params, name) for name in PARAM_NAMES},
        }


class _Objective:
    def __init__(self, objective: str, dev_set: Sequence[DevItem], window=None):
        from .reseg import SlicedWindows, SlidingWindowConfig, resegmentation_scores

        self.objective = objective
        self.items = []
        for item in dev_set:
            acts = item.activations
            if objective == "detection-error":
                self.items.append((vad_scores(acts), item.reference.support(), acts.grid, item.uem))
            elif objective == "f1":
                self.items.append((osd_scores(acts), overlap_timeline(item.reference), acts.grid, item.uem))
            else:
                if item.diarization is not None:
                    # alignment does not depend on thresholds: aggregate once
                    acts = resegmentation_scores(
                        item.diarization, SlicedWindows(acts), window or SlidingWindowConfig()
                    )
                self.items.append((acts, item.reference, acts.grid, item.uem))

    def __call__(self, params: PostProcessingParams) -> float:
        if self.objective == "der":
            total = None
            for acts, ref, grid, uem in self.items:
                hyp = to_annotation(binarize(acts, params), ref.uri)
                rep = der(ref, hyp, uem)
                total = rep if total is None else total + rep
            return total.der
        total = None
        for scores, ref, grid, uem in self.items:
            hyp = frames_to_timeline(binarize_scores(scores, params, grid.step), grid)
            if self.objective == "detection-error":
                rep = detection_error(ref, hyp, uem)
            else:
                rep = precision_recall_f1(ref, hyp, uem)
            total = rep if total is None else total + rep
        return total.error_rate if self.objective == "detection-error" else total.f1


def tune(
    space: ParamSpace,
    objective: str,
    dev_set: Sequence[DevItem],
    seed: int = 0,
    num_random: int = 8,
    refine_rounds: int = 3,
    refine_points: int = 9,
    window=None,
) -> TuneResult:
    """Search post-processing parameters optimizing ``objective`` on ``dev_set``.

    Evaluates a seeded random sample and a coarse 5x5x3x3 grid, then refines
    the best point by coordinate descent over shrinking brackets. Deterministic
    given ``seed``. F1 is maximized, the other objectives minimized.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}, expected one of {OBJECTIVES}")
    if not dev_set:
        raise ValueError("empty development set")
    evaluate = _Objective(objective, dev_set, window)
    sign = -1.0 if objective == "f1" else 1.0
    cache: dict[tuple[float, ...], float] = {}

    def loss(point: tuple[float, ...]) -> float:
        point = tuple(round(v, 12) for v in point)
        if point not in cache:
            cache[point] = sign * evaluate(PostProcessingParams(*point))
        return cache[point]

    def valid(point):
        return point[1] <= point[0]

    off_lo = space.bounds("theta_off")[0]

    def clip(point):
        # enforce theta_off <= theta_on without leaving the space
        on, off = point[0], min(point[1], point[0])
        if off < off_lo:
            off, on = off_lo, max(on, off_lo)
        return (on, off, point[2], point[3])

    rng = np.random.default_rng(seed)
    candidates = []
    for _ in range(num_random):
        candidates.append(clip(tuple(float(rng.uniform(*space.bounds(n))) for n in PARAM_NAMES)))
    candidates.extend(clip(p) for p in space.coarse_grid())

    best = None
    best_loss = np.inf
    for point in candidates:
        value = loss(point)
        if value < best_loss:
            best, best_loss = point, value

    widths = [space.bounds(n)[1] - space.bounds(n)[0] for n in PARAM_NAMES]
    for _ in range(refine_rounds):
        widths = [w / 2 for w in widths]
        for dim, name in enumerate(PARAM_NAMES):
            lo_b, hi_b = space.bounds(name)
            if hi_b == lo_b:
                continue
            lo = max(lo_b, best[dim] - widths[dim])
            hi = min(hi_b, best[dim] + widths[dim])
            for v in np.linspace(lo, hi, refine_points):
                point = best[:dim] + (float(v),) + best[dim + 1:]
                if not valid(point):
                    continue
                value = loss(point)
                if value < best_loss:
                    best, best_loss = point, value

    log.debug("tune: %d evaluations, best %s -> %g", len(cache), best, sign * best_loss)
    return TuneResult(
        params=PostProcessingParams(*best),
        objective=objective,
        value=sign * best_loss,
        seed=seed,
        evaluations=len(cache),
    )
