"""
Permutation-invariant loss
==========================

Speaker columns produced by a segmentation model carry no identity: column 0
of one chunk need not be column 0 of the next. The loss therefore compares
the prediction with every column ordering of the reference and keeps the
cheapest one. The Hungarian algorithm finds that ordering without
enumerating all K! permutations.
"""

import itertools

import numpy as np

from speakerseg.pit import bce, pairwise_bce, permute, pit_loss

rng = np.random.default_rng(0)

# a reference with three speakers and a prediction whose columns are shuffled
y = (rng.random((50, 3)) < 0.4).astype(float)
yhat = np.clip(y[:, [2, 0, 1]] + rng.normal(0, 0.1, y.shape), 0, 1)

print("plain BCE, columns as given:", round(bce(y, yhat), 4))

loss, perm = pit_loss(y, yhat)
print("permutation-invariant BCE:  ", round(loss, 4), "with mapping", perm.mapping)

# the same value by brute force over all orderings
brute = min(bce(permute(y, order), yhat) for order in itertools.permutations(range(3)))
print("exhaustive minimum:         ", round(brute, 4))

# the Hungarian solver works on the K x K matrix of per-column losses
print("pairwise cost matrix:\n", np.round(pairwise_bce(y, yhat), 3))
