"""Weighted categorical sampling via Vose's alias method.

Table construction is O(n); draws are O(1) and vectorize cleanly, which makes
the start-node distribution cheap even for large graphs.
"""

from __future__ import annotations

import numpy as np


class AliasSampler:
    """Draws indices i with probability weights[i] / sum(weights)."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative with positive total")
        self.probabilities = w / w.sum()

        n = w.size
        scaled = self.probabilities * n
        self._prob = np.ones(n, dtype=np.float64)
        self._alias = np.arange(n, dtype=np.int64)

        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            self._prob[s] = scaled[s]
            self._alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are exactly 1 up to roundoff; keep them as certain hits

    def __len__(self) -> int:
        return self.probabilities.size

    def sample(self, rng: np.random.Generator, size=None):
        """Draw one index (size=None) or an array of indices."""
        n = self.probabilities.size
        idx = rng.integers(0, n, size=size)
        toss = rng.random(size=size)
        if size is None:
            return int(idx if toss < self._prob[idx] else self._alias[idx])
        return np.where(toss < self._prob[idx], idx, self._alias[idx])
