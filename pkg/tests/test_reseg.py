import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_assignment, nearest_two_oracle
from speakerseg.annotation import Annotation, BinaryFrames, FrameGrid, Segment, Timeline, discretize
from speakerseg.metrics import der
from speakerseg.pit import Activations, Permutation
from speakerseg.reseg import (
    AggregationBuffer,
    SlicedWindows,
    SlidingWindowConfig,
    WindowError,
    aggregate,
    align_window,
    heuristic_overlap_assign,
    nearest_speaker,
    resegment,
    resegmentation_scores,
    window_cost,
    window_frames,
    window_starts,
)
from speakerseg.synth import ScrambledWindows, SynthConfig, generate_reference, oracle_activations

STEP = 0.016


def grid(n, start=0.0):
    return FrameGrid(start, STEP, n)


def frames(data, labels=None):
    data = np.asarray(data, bool)
    labels = labels or tuple(f"d{k}" for k in range(data.shape[1]))
    return BinaryFrames(grid(data.shape[0]), tuple(labels), data)


# ---------------------------------------------------------------- config / windows


def test_window_config_validation():
    with pytest.raises(ValueError):
        SlidingWindowConfig(5.0, 6.0)
    with pytest.raises(ValueError):
        SlidingWindowConfig(5.0, 0.0)


def test_window_frames_default():
    assert window_frames(SlidingWindowConfig(), grid(10)) == (312, 31)


def test_window_starts_last_window_ends_at_file_end():
    starts = window_starts(100, 30, 20)
    assert starts == [0, 20, 40, 60, 70]
    assert starts[-1] + 30 == 100


def test_window_starts_short_file():
    assert window_starts(10, 30, 5) == [0]


@given(st.integers(1, 500), st.integers(1, 100), st.integers(1, 100))
def test_window_starts_cover_every_frame(n, length, hop):
    hop = min(hop, length)
    starts = window_starts(n, length, hop)
    covered = np.zeros(n, bool)
    for s in starts:
        covered[s:s + length] = True
    assert covered.all()
    assert starts == sorted(set(starts))
    assert all(s + min(length, n) <= n for s in starts)


# ---------------------------------------------------------------- align_window


def test_align_swap():
    dia = frames([[1, 0], [1, 0], [0, 1], [0, 1]])
    acts = Activations(dia.grid, dia.data[:, ::-1].astype(float))
    assert align_window(acts, dia).mapping == (1, 0)


def test_align_all_silent_gives_identity():
    dia = frames(np.zeros((6, 3)))
    acts = Activations(dia.grid, np.zeros((6, 4)))
    assert align_window(acts, dia).is_identity


@pytest.mark.parametrize("seed", range(10))
def test_align_padded_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    dia = frames(rng.random((40, 2)) < 0.5)
    acts = Activations(dia.grid, rng.random((40, 4)))
    perm = align_window(acts, dia)
    cost = window_cost(acts, dia)
    assert cost.shape == (4, 4)
    best, _ = brute_assignment(cost)
    assert sum(cost[i, perm[i]] for i in range(4)) == pytest.approx(best, abs=1e-12)


def test_align_more_dia_speakers_than_columns():
    dia = frames([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    acts = Activations(dia.grid, np.array([[0.0, 0.9], [0.9, 0.0], [0.0, 0.0]]))
    perm = align_window(acts, dia)
    assert perm[0] == 1 and perm[1] == 0 and perm[2] == 2


def test_align_independent_of_silent_column_order():
    dia = frames([[1, 0, 0], [1, 0, 0], [0, 0, 0]])
    base = np.array([[0.9, 0.01, 0.02], [0.8, 0.03, 0.01], [0.1, 0.02, 0.0]])
    acts = Activations(dia.grid, base)
    swapped = Activations(dia.grid, base[:, [0, 2, 1]])
    p, q = align_window(acts, dia), align_window(swapped, dia)
    assert base[:, p[1]].tolist() == base[:, [0, 2, 1]][:, q[1]].tolist()


def test_align_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        align_window(Activations(grid(0), np.zeros((0, 2))), frames(np.zeros((0, 2))))
    with pytest.raises(ValueError):
        align_window(Activations(grid(3), np.zeros((3, 2))), frames(np.zeros((4, 2))))


# ---------------------------------------------------------------- aggregate


def test_aggregate_single_window_is_identity():
    data = np.random.default_rng(0).random((20, 2))
    out = aggregate([(0, Activations(grid(20), data))], grid(20), 2)
    assert np.array_equal(out.data, data)


def test_aggregate_identical_windows():
    data = np.full((10, 1), 0.3)
    out = aggregate([(0, Activations(grid(10), data)), (5, Activations(grid(10), data))], grid(15), 1)
    assert np.allclose(out.data, 0.3)


def test_aggregate_half_overlap_is_mean():
    a = Activations(grid(10), np.full((10, 1), 0.2))
    b = Activations(grid(10), np.full((10, 1), 0.6))
    out = aggregate([(0, a), (5, b)], grid(15), 1).data[:, 0]
    assert np.allclose(out[:5], 0.2)
    assert np.allclose(out[5:10], 0.4)
    assert np.allclose(out[10:], 0.6)


def test_aggregate_drops_dummy_columns():
    a = Activations(grid(4), np.array([[0.1, 0.9, 0.5]] * 4))
    assert aggregate([(0, a)], grid(4), 2).data.shape == (4, 2)


def test_aggregate_uncovered_frames_warn_and_zero():
    a = Activations(grid(4), np.full((4, 1), 0.7))
    with pytest.warns(RuntimeWarning, match="2 frame"):
        out = aggregate([(0, a)], grid(6), 1)
    assert out.data[4:, 0].tolist() == [0.0, 0.0]


def test_aggregate_window_outside_file():
    with pytest.raises(ValueError):
        aggregate([(3, Activations(grid(4), np.zeros((4, 1))))], grid(6), 1)


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(1, 20)), min_size=1, max_size=6), st.integers(0, 99))
def test_aggregate_within_contributing_range(wins, seed):
    rng = np.random.default_rng(seed)
    n = 50
    items, lo, hi = [], np.full(n, np.inf), np.full(n, -np.inf)
    for first, length in wins:
        vals = rng.random((length, 1))
        items.append((first, Activations(grid(length), vals)))
        lo[first:first + length] = np.minimum(lo[first:first + length], vals[:, 0])
        hi[first:first + length] = np.maximum(hi[first:first + length], vals[:, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = aggregate(items, grid(n), 1).data[:, 0]
    seen = np.isfinite(lo)
    assert np.all(out[seen] >= lo[seen] - 1e-12) and np.all(out[seen] <= hi[seen] + 1e-12)


def test_buffer_merge_matches_serial_in_fixed_order():
    rng = np.random.default_rng(1)
    windows = [(int(rng.integers(0, 40)), rng.random((20, 3))) for _ in range(12)]
    serial = AggregationBuffer(60, 3)
    for first, vals in windows:
        serial.add(first, vals)
    parts = [AggregationBuffer(60, 3) for _ in range(3)]
    for i, (first, vals) in enumerate(windows):
        parts[i // 4].add(first, vals)
    merged = AggregationBuffer(60, 3)
    for part in parts:
        merged.merge(part)
    assert np.array_equal(merged.count, serial.count)
    assert np.allclose(merged.sum, serial.sum, rtol=0, atol=1e-12)
    again = AggregationBuffer(60, 3)
    for part in parts:
        again.merge(part)
    assert np.array_equal(again.sum, merged.sum)


# ---------------------------------------------------------------- resegment


def synth_case(seed, speakers=3, duration=40.0, noise=0.0, k_max=4):
    cfg = SynthConfig(speakers, duration, seed=seed, noise_level=noise)
    ref = generate_reference(cfg, "f")
    acts = oracle_activations(ref, cfg.grid, noise, seed, k_max=k_max)
    return ref, acts


def test_resegment_single_speaker_constant_activation():
    dia = Annotation.from_triples("f", [(0.0, 8.0, "A")])
    acts = Activations(grid(500), np.ones((500, 1)))
    out = resegment(dia, SlicedWindows(acts))
    assert out.support().to_pairs() == [(0.0, 8.0)]


def test_resegment_constant_activation_activates_whole_file():
    # output comes from the activations; the diarization only drives alignment
    dia = Annotation.from_triples("f", [(1.0, 3.0, "A"), (5.0, 6.0, "A")])
    out = resegment(dia, SlicedWindows(Activations(grid(500), np.ones((500, 1)))))
    assert out.support().to_pairs() == [(0.0, 8.0)]


def test_resegment_single_speaker_matching_activations():
    dia = Annotation.from_triples("f", [(1.0, 3.0, "A"), (5.0, 6.0, "A")])
    acts = Activations(grid(500), discretize(dia, grid(500)).data.astype(float))
    got = resegment(dia, SlicedWindows(acts)).support().to_pairs()
    want = dia.support().to_pairs()
    assert len(got) == len(want)
    assert np.allclose(got, want, atol=STEP)


@pytest.mark.parametrize("seed", range(4))
def test_resegment_oracle_recovers_reference(seed):
    ref, acts = synth_case(seed)
    out = resegment(ref, SlicedWindows(acts))
    assert der(ref, out).der < 1e-9


@pytest.mark.parametrize("noise", [0.0, 0.1])
def test_resegment_shuffle_invariance(noise):
    ref, acts = synth_case(7, noise=noise)
    cfg = SlidingWindowConfig()
    plain = resegment(ref, SlicedWindows(acts), cfg)
    source = ScrambledWindows(acts, cfg, seed=3)
    scrambled = resegment(ref, source, cfg)
    assert scrambled == plain
    assert any(not p.is_identity for p in source.permutations.values())


def test_resegment_output_keeps_dia_labels():
    ref, acts = synth_case(2)
    out = resegment(ref.relabel({l: l.upper() for l in ref.labels()}), SlicedWindows(acts))
    assert set(out.labels()) <= {l.upper() for l in ref.labels()}


def test_resegment_trace_records_every_window():
    ref, acts = synth_case(1, duration=12.0)
    trace = []
    resegmentation_scores(ref, SlicedWindows(acts), trace=trace)
    length, hop = window_frames(SlidingWindowConfig(), acts.grid)
    assert [t[0] for t in trace] == window_starts(acts.grid.num_frames, length, hop)
    assert all(isinstance(t[2], Permutation) and t[1].shape == (4, 4) for t in trace)


def test_resegment_provider_failure_names_window():
    ref, acts = synth_case(1, duration=12.0)

    def provider(first, n):
        if first > 100:
            raise OSError("disk gone")
        return acts.crop(first, n)

    provider.grid = acts.grid
    with pytest.raises(WindowError, match="disk gone") as info:
        resegment(ref, provider)
    assert info.value.offset > 100 * STEP


def test_resegment_empty_dia():
    with pytest.raises(ValueError):
        resegment(Annotation("f"), SlicedWindows(Activations(grid(10), np.zeros((10, 2)))))


# ---------------------------------------------------------------- heuristic


def test_heuristic_adjacent_speakers():
    dia = Annotation.from_triples("f", [(0, 2, "A"), (2, 4, "B")])
    out = heuristic_overlap_assign(dia, Timeline.from_pairs([(1.8, 2.2)]))
    for lbl in "AB":
        assert out.label_timeline(lbl).support().intersect(Timeline.from_pairs([(1.8, 2.2)])).duration() == pytest.approx(0.4)


def test_heuristic_single_speaker_file_unchanged():
    dia = Annotation.from_triples("f", [(0, 2, "A"), (3, 4, "A")])
    assert heuristic_overlap_assign(dia, Timeline.from_pairs([(1, 1.5)])) == dia


def test_heuristic_silent_region_unchanged():
    dia = Annotation.from_triples("f", [(0, 2, "A"), (5, 6, "B")])
    assert heuristic_overlap_assign(dia, Timeline.from_pairs([(3, 4)])) == dia


def test_heuristic_tie_prefers_longer_then_label():
    dia = Annotation.from_triples("f", [(0, 1, "X"), (2, 3, "A"), (4, 5, "B"), (6, 9, "B")])
    region = Segment(2.0, 3.0)
    # X and B both at distance 1; B has more speech
    assert nearest_speaker(dia, region, exclude=["A"]) == "B"
    # equal distance and duration: smaller label
    dia2 = Annotation.from_triples("f", [(2, 3, "A"), (0, 1, "C"), (4, 5, "B")])
    assert nearest_speaker(dia2, region, exclude=["A"]) == "B"
    dia2 = Annotation.from_triples("f", [(2, 3, "A"), (0, 1, "B"), (4, 5, "C")])
    assert nearest_speaker(dia2, region, exclude=["A"]) == "B"
    dia3 = Annotation.from_triples("f", [(2, 3, "A"), (0, 1, "C"), (4, 6, "B")])
    assert nearest_speaker(dia3, region, exclude=["A"]) == "B"
    dia4 = Annotation.from_triples("f", [(2, 3, "A"), (0, 1.5, "C"), (4, 5, "B")])
    assert nearest_speaker(dia4, region, exclude=["A"]) == "C"


def random_dia(rng, labels=("A", "B", "C"), duration=30.0):
    triples = []
    for lbl in labels:
        for _ in range(int(rng.integers(1, 4))):
            a = float(rng.uniform(0, duration - 1))
            triples.append((a, a + float(rng.uniform(0.3, 4.0)), lbl))
    return Annotation.from_triples("f", triples)


@given(st.integers(0, 10_000))
def test_heuristic_never_removes_speech(seed):
    rng = np.random.default_rng(seed)
    dia = random_dia(rng)
    overlap = Timeline.from_pairs([(a, a + rng.uniform(0.1, 2)) for a in rng.uniform(0, 30, 3)])
    out = heuristic_overlap_assign(dia, overlap)
    for lbl in dia.labels():
        assert dia.label_timeline(lbl).support().subtract(out.label_timeline(lbl).support()).duration() == pytest.approx(0, abs=1e-9)
    # additions stay inside the overlap regions
    for lbl in out.labels():
        extra = out.label_timeline(lbl).support().subtract(dia.label_timeline(lbl).support())
        assert extra.subtract(overlap.support()).duration() == pytest.approx(0, abs=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_heuristic_matches_distance_oracle(seed):
    rng = np.random.default_rng(seed)
    dia = random_dia(rng)
    seg, present = dia.tracks[int(rng.integers(len(dia.tracks)))]
    width = min(seg.duration, 0.2)
    lo = float(rng.uniform(seg.start, seg.end - width))
    region = Segment(lo, lo + width)
    # only assert on regions where the diarization has a single speaker
    others = [l for l in dia.labels() if l != present and dia.label_timeline(l).support().intersect(Timeline((region,)))]
    if others:
        return
    out = heuristic_overlap_assign(dia, Timeline((region,)))
    added = {l for l in out.labels() if out.label_timeline(l).support().intersect(Timeline((region,))).duration() > 0} - {present}
    assert added == {nearest_two_oracle(dia, region, present)}
