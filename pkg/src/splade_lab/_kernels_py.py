"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Same inputs, same arithmetic order, same outputs; used when the extension
is not built or when ``SPLADE_LAB_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left

import numpy as np

_MARGIN = 1.0 + 1e-9


class _TopK:
    """Size-k heap whose root is the worst entry (lowest score, then highest ordinal)."""

    def __init__(self, k: int):
        self.k = k
        self.heap: list[tuple[float, int]] = []  # (score, -ordinal)

    @property
    def full(self) -> bool:
        return len(self.heap) == self.k

    @property
    def threshold(self) -> float:
        return self.heap[0][0]

    def offer(self, score: float, ordinal: int) -> bool:
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, (score, -ordinal))
            return True
        if score > self.heap[0][0]:
            heapq.heapreplace(self.heap, (score, -ordinal))
            return True
        return False

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        items = sorted(((s, -o) for s, o in self.heap), key=lambda x: (-x[0], x[1]))
        return (
            np.array([o for _, o in items], dtype=np.int64),
            np.array([s for s, _ in items], dtype=np.float64),
        )


def _lists(offsets, docs, levels):
    offsets = [int(x) for x in offsets]
    docs = docs.tolist() if hasattr(docs, "tolist") else list(docs)
    levels = levels.tolist() if hasattr(levels, "tolist") else list(levels)
    return offsets, docs, levels


def daat_exhaustive(offsets, docs, levels, qweights, scale: float, k: int):
    offsets, docs, levels = _lists(offsets, docs, levels)
    qw = [float(x) for x in qweights]
    T = len(qw)
    pos = offsets[:T]
    ends = offsets[1:]
    top = _TopK(k)
    while True:
        d = -1
        for t in range(T):
            if pos[t] < ends[t]:
                cur = docs[pos[t]]
                if d < 0 or cur < d:
                    d = cur
        if d < 0:
            break
        raw = 0.0
        for t in range(T):
            p = pos[t]
            if p < ends[t] and docs[p] == d:
                raw = raw + qw[t] * float(levels[p])
                pos[t] = p + 1
        top.offer(raw * scale, d)
    return top.result()


def daat_maxscore(offsets, docs, levels, qweights, max_levels, scale: float, k: int):
    offsets, docs, levels = _lists(offsets, docs, levels)
    qw = [float(x) for x in qweights]
    T = len(qw)
    bounds = np.asarray(qw, dtype=np.float64) * np.asarray(max_levels, dtype=np.float64) * scale
    order = np.argsort(bounds, kind="stable").tolist()
    cum = np.cumsum(bounds[order]).tolist() if T else []
    pos = offsets[:T]
    ends = offsets[1:]
    top = _TopK(k)
    threshold = 0.0
    n_ne = 0
    while True:
        d = -1
        for i in range(n_ne, T):
            t = order[i]
            if pos[t] < ends[t]:
                cur = docs[pos[t]]
                if d < 0 or cur < d:
                    d = cur
        if d < 0:
            break
        contrib: dict[int, float] = {}
        partial = 0.0
        for i in range(n_ne, T):
            t = order[i]
            p = pos[t]
            if p < ends[t] and docs[p] == d:
                c = qw[t] * float(levels[p])
                contrib[t] = c
                partial = partial + c
                pos[t] = p + 1
        skip = False
        for i in range(n_ne - 1, -1, -1):
            if top.full and (partial * scale + cum[i]) * _MARGIN <= threshold:
                skip = True
                break
            t = order[i]
            p = bisect_left(docs, d, pos[t], ends[t])
            pos[t] = p
            if p < ends[t] and docs[p] == d:
                c = qw[t] * float(levels[p])
                contrib[t] = c
                partial = partial + c
        if skip:
            continue
        raw = 0.0
        for t in sorted(contrib):
            raw = raw + contrib[t]
        if top.offer(raw * scale, d) and top.full:
            threshold = top.threshold
            while n_ne < T and cum[n_ne] * _MARGIN <= threshold:
                n_ne += 1
    return top.result()
