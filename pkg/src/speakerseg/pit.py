"""Permutation-invariant binary cross-entropy and Hungarian assignment.

Permutation convention used everywhere in the package: ``perm[i] = j`` maps
reference column ``i`` to prediction column ``j``. :func:`permute` moves column
``i`` of its input to position ``perm[i]`` of its output, so that
``bce(permute(y, perm), yhat)`` compares ``y[:, i]`` with ``yhat[:, perm[i]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .annotation import BinaryFrames, FrameGrid

EPS = 1e-7


@dataclass(frozen=True, eq=False)
class Activations:
    """T x K speaker activations in [0, 1] on a frame grid."""

    grid: FrameGrid
    data: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != self.grid.num_frames:
            raise ValueError(f"activations of shape {data.shape} do not fit {self.grid}")
        if data.size and (not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("activations must lie in [0, 1]")
        object.__setattr__(self, "data", data)
        labels = self.labels
        if labels is None:
            labels = tuple(str(k) for k in range(data.shape[1]))
        labels = tuple(str(lbl) for lbl in labels)
        if len(labels) != data.shape[1]:
            raise ValueError("one label per activation column required")
        object.__setattr__(self, "labels", labels)

    @property
    def num_speakers(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Activations):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.labels == other.labels
            and np.array_equal(self.data, other.data)
        )

    def crop(self, first: int, num_frames: int) -> "Activations":
        return Activations(
            self.grid.sub(first, num_frames), self.data[first:first + num_frames], self.labels
        )


@dataclass(frozen=True)
class Permutation:
    mapping: tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"{mapping} is not a permutation of 0..{len(mapping) - 1}")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, size: int) -> "Permutation":
        return cls(tuple(range(size)))

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, i: int) -> int:
        return self.mapping[i]

    def __iter__(self):
        return iter(self.mapping)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return Permutation(tuple(inv))

    def after(self, first: "Permutation") -> "Permutation":
        """Composition ``self ∘ first``: apply ``first``, then ``self``."""
        if len(first) != len(self):
            raise ValueError("permutation sizes differ")
        return Permutation(tuple(self.mapping[j] for j in first.mapping))

    @property
    def is_identity(self) -> bool:
        return self.mapping == tuple(range(len(self.mapping)))


Frames = Union[BinaryFrames, Activations, np.ndarray]


def _matrix(x: Frames) -> np.ndarray:
    if isinstance(x, (BinaryFrames, Activations)):
        return np.asarray(x.data, dtype=np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def permute(x: Frames, perm: Permutation | Sequence[int]):
    """Output column ``perm[i]`` is input column ``i``."""
    if not isinstance(perm, Permutation):
        perm = Permutation(tuple(perm))
    ncols = _matrix(x).shape[1]
    if ncols != len(perm):
        raise ValueError(f"permutation of size {len(perm)} applied to {ncols} columns")
    src = list(perm.inverse().mapping)
    if isinstance(x, BinaryFrames):
        labels = tuple(x.labels[i] for i in src)
        return BinaryFrames(x.grid, labels, x.data[:, src])
    if isinstance(x, Activations):
        labels = tuple(x.labels[i] for i in src)
        return Activations(x.grid, x.data[:, src], labels)
    return np.asarray(x)[..., src]


def bce(y: Frames, yhat: Frames) -> float:
    """Mean binary cross-entropy over all T*K cells, probabilities clamped to [EPS, 1-EPS]."""
    y_, p = _matrix(y), _matrix(yhat)
    if y_.shape != p.shape:
        raise ValueError(f"shape mismatch {y_.shape} vs {p.shape}")
    if y_.size == 0:
        raise ValueError("empty input")
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-(y_ * np.log(p) + (1.0 - y_) * np.log1p(-p))))


def pairwise_bce(y: Frames, yhat: Frames) -> np.ndarray:
    """K x K matrix whose (i, j) entry is the BCE between y[:, i] and yhat[:, j]."""
    y_, p = _matrix(y), _matrix(yhat)
    if y_.shape[0] != p.shape[0] or y_.shape[1] != p.shape[1]:
        raise ValueError(f"shape mismatch {y_.shape} vs {p.shape}")
    if y_.shape[0] == 0:
        raise ValueError("empty input")
    p = np.clip(p, EPS, 1.0 - EPS)
    log_p, log_q = np.log(p), np.log1p(-p)
    cost = -(y_.T @ log_p + (1.0 - y_).T @ log_q) / y_.shape[0]
    # guard against tiny negative values from cancellation
    return np.maximum(cost, 0.0)


def _min_assignment(cost: np.ndarray) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian algorithm, O(n^3).

    Returns the assignment (row -> column) and the optimal dual potentials
    ``u`` (rows) and ``v`` (columns) such that ``cost - u[:, None] - v >= 0``.
    """
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            cur = np.full(n + 1, inf)
            cur[1:] = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while True:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = [0] * n
    for j in range(1, n + 1):
        assignment[match[j] - 1] = j - 1
    return assignment, u[1:], v[1:]


def _has_perfect_matching(allowed: np.ndarray, rows: list[int], cols: set[int]) -> bool:
    """Kuhn's augmenting paths restricted to ``rows`` x ``cols``."""
    owner: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for c in np.flatnonzero(allowed[r]):
            c = int(c)
            if c in cols and c not in seen:
                seen.add(c)
                if c not in owner or augment(owner[c], seen):
                    owner[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def hungarian(cost) -> Permutation:
    """Minimum-cost perfect assignment of rows to columns.

    Among all optimal assignments the lexicographically smallest mapping is
    returned, which makes the result independent of solver internals.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"square cost matrix required, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return Permutation(())
    assignment, u, v = _min_assignment(cost)
    # Every optimal assignment only uses edges of zero reduced cost under the
    # optimal duals, so ties are resolved on that "tight" subgraph.
    tol = 1e-12 * n * (1.0 + np.abs(cost).max())
    tight = cost - u[:, None] - v[None, :] <= tol
    if tight.sum() == n:
        return Permutation(tuple(assignment))
    chosen = []
    cols = set(range(n))
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            j = int(j)
            if j in cols and _has_perfect_matching(tight, list(range(i + 1, n)), cols - {j}):
                chosen.append(j)
                cols.remove(j)
                break
        else:  # pragma: no cover - the solver's own assignment is always feasible
            raise RuntimeError("tie-break search failed")
    return Permutation(tuple(chosen))


def pit_loss(y: Frames, yhat: Frames) -> tuple[float, Permutation]:
    """Permutation-invariant BCE: ``min_perm bce(permute(y, perm), yhat)``."""
    y_, p = _matrix(y), _matrix(yhat)
    if y_.shape != p.shape:
        raise ValueError(f"shape mismatch {y_.shape} vs {p.shape}")
    perm = hungarian(pairwise_bce(y_, p))
    return bce(permute(y_, perm), p), perm
