import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_assignment, brute_bce, brute_pit
from speakerseg.annotation import BinaryFrames, FrameGrid
from speakerseg.pit import EPS, Activations, Permutation, bce, hungarian, pairwise_bce, permute, pit_loss


def random_instance(rng, t, k):
    y = (rng.random((t, k)) < 0.4).astype(float)
    p = rng.random((t, k))
    return y, p


# ---------------------------------------------------------------- bce


def test_bce_perfect_prediction_is_clamp_floor():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert bce(y, y) == pytest.approx(-math.log(1 - EPS), rel=1e-6)


def test_bce_half_is_ln2():
    assert bce(np.zeros((7, 3)), np.full((7, 3), 0.5)) == pytest.approx(math.log(2), rel=1e-12)


def test_bce_hand_computed_4x2():
    y = np.array([[1, 0], [0, 0], [1, 1], [0, 1]], float)
    p = np.array([[0.9, 0.2], [0.3, 0.1], [0.6, 0.8], [0.5, 0.7]])
    cells = [
        -math.log(0.9), -math.log(0.8),
        -math.log(0.7), -math.log(0.9),
        -math.log(0.6), -math.log(0.8),
        -math.log(0.5), -math.log(0.7),
    ]
    assert bce(y, p) == pytest.approx(sum(cells) / 8, rel=1e-14)


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce(np.zeros((3, 2)), np.zeros((3, 3)))


@given(arrays(float, (6, 3), elements=st.floats(0, 1)), arrays(bool, (6, 3)))
def test_bce_nonnegative_and_half_is_ln2_for_any_y(p, y):
    assert bce(y, p) >= 0
    assert bce(y, np.full_like(p, 0.5)) == pytest.approx(math.log(2), rel=1e-12)


# ---------------------------------------------------------------- pairwise


def test_pairwise_k1_equals_bce():
    rng = np.random.default_rng(0)
    y, p = random_instance(rng, 20, 1)
    assert pairwise_bce(y, p)[0, 0] == pytest.approx(bce(y, p), rel=1e-12)


def test_pairwise_identical_reference_columns_give_identical_rows():
    rng = np.random.default_rng(1)
    col = (rng.random(30) < 0.5).astype(float)
    y = np.stack([col, col, col], axis=1)
    cost = pairwise_bce(y, rng.random((30, 3)))
    assert np.array_equal(cost[0], cost[1]) and np.array_equal(cost[1], cost[2])


def test_pairwise_entries_match_column_bce():
    rng = np.random.default_rng(2)
    y, p = random_instance(rng, 25, 3)
    cost = pairwise_bce(y, p)
    for i, j in itertools.product(range(3), repeat=2):
        assert cost[i, j] == pytest.approx(brute_bce(y[:, i], p[:, j]), rel=1e-12)


# ---------------------------------------------------------------- hungarian


def test_hungarian_diagonal_gives_identity():
    assert hungarian(1 - np.eye(4)).is_identity


def test_hungarian_anti_diagonal_gives_reversal():
    assert hungarian(1 - np.fliplr(np.eye(5))).mapping == (4, 3, 2, 1, 0)


def test_hungarian_all_ties_gives_identity():
    assert hungarian(np.ones((6, 6))).is_identity


@pytest.mark.parametrize("seed", range(40))
def test_hungarian_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    cost = rng.random((n, n)) if seed % 2 else rng.integers(0, 3, (n, n)).astype(float)
    perm = hungarian(cost)
    best, argmins = brute_assignment(cost)
    assert sum(cost[i, perm[i]] for i in range(n)) == best
    assert perm.mapping == min(argmins)


def test_hungarian_agrees_with_scipy():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        cost = rng.normal(size=(n, n))
        rows, cols = scipy_opt.linear_sum_assignment(cost)
        perm = hungarian(cost)
        assert sum(cost[i, perm[i]] for i in range(n)) == pytest.approx(cost[rows, cols].sum(), abs=1e-12)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[0, np.inf], [1, 0]]), np.array([[np.nan]])])
def test_hungarian_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        hungarian(bad)


# ---------------------------------------------------------------- permutations


def test_permute_identity_and_swap_involution():
    x = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(permute(x, Permutation.identity(3)), x)
    swap = Permutation((1, 0))
    y = np.arange(8.0).reshape(4, 2)
    assert np.array_equal(permute(permute(y, swap), swap), y)


def test_permute_convention():
    # output column perm[i] is input column i
    x = np.array([[10.0, 20.0, 30.0]])
    assert permute(x, (2, 0, 1)).tolist() == [[20.0, 30.0, 10.0]]


def test_permute_keeps_labels_with_columns():
    frames = BinaryFrames(FrameGrid(0, 0.016, 2), ("a", "b"), np.array([[1, 0], [1, 0]], bool))
    out = permute(frames, (1, 0))
    assert out.labels == ("b", "a")
    assert out.data[:, 1].all() and not out.data[:, 0].any()


def test_permute_size_mismatch():
    with pytest.raises(ValueError):
        permute(np.zeros((2, 3)), (1, 0))


def test_permutation_rejects_non_bijection():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))


perms = st.integers(1, 6).flatmap(lambda k: st.tuples(st.permutations(range(k)), st.permutations(range(k))))


@given(perms)
def test_permute_composition(pq):
    p, q = Permutation(tuple(pq[0])), Permutation(tuple(pq[1]))
    x = np.random.default_rng(len(p)).random((5, len(p)))
    assert np.array_equal(permute(permute(x, p), q), permute(x, q.after(p)))
    assert np.array_equal(permute(permute(x, p), p.inverse()), x)


# ---------------------------------------------------------------- pit_loss


def test_pit_identity_case():
    y = np.array([[1, 0], [0, 1], [1, 1]], float)
    loss, perm = pit_loss(y, y)
    assert loss == pytest.approx(-math.log(1 - EPS), rel=1e-6)
    assert perm.is_identity


def test_pit_swapped_case():
    y = np.array([[1, 0], [0, 1], [1, 0]], float)
    loss, perm = pit_loss(y, y[:, ::-1])
    assert loss < 1e-6
    assert perm.mapping == (1, 0)


def test_pit_accepts_data_types():
    grid = FrameGrid(0, 0.016, 3)
    y = BinaryFrames(grid, ("a", "b"), np.array([[1, 0], [0, 1], [1, 0]], bool))
    yhat = Activations(grid, np.array([[0.1, 0.9], [0.8, 0.3], [0.2, 0.7]]))
    loss, perm = pit_loss(y, yhat)
    assert perm.mapping == (1, 0)
    assert loss == pytest.approx(brute_pit(y.data.astype(float), yhat.data), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_pit_matches_exhaustive_minimum(seed):
    rng = np.random.default_rng(100 + seed)
    y, p = random_instance(rng, int(rng.integers(10, 60)), int(rng.integers(2, 6)))
    loss, _ = pit_loss(y, p)
    assert loss == pytest.approx(brute_pit(y, p), rel=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_pit_invariant_to_reference_permutation(seed, k):
    rng = np.random.default_rng(seed)
    y, p = random_instance(rng, 30, k)
    perm = Permutation(tuple(rng.permutation(k)))
    a, _ = pit_loss(y, p)
    b, _ = pit_loss(permute(y, perm), p)
    assert a == pytest.approx(b, rel=1e-12)
    assert a <= bce(y, p) + 1e-15
