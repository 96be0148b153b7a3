# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled top-k kernels over impact postings.

Inputs describe one query: the postings of its T terms concatenated in
ascending term-id order (``offsets`` has T + 1 entries), the query weight
of each term, and the global dequantization scale. A document's score is
``scale * sum_t q_t * level_t`` accumulated in that fixed term order, so every
strategy produces bit-identical scores. Results are ordered by descending
score, then ascending ordinal.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double _MARGIN = 1.0 + 1e-9


cdef inline bint _worse(double sa, long long oa, double sb, long long ob) nogil:
    return sa < sb or (sa == sb and oa > ob)


cdef void _sift_down(double* s, long long* o, Py_ssize_t n, Py_ssize_t i) nogil:
    cdef Py_ssize_t c
    cdef double ts
    cdef long long to
    while True:
        c = 2 * i + 1
        if c >= n:
            return
        if c + 1 < n and _worse(s[c + 1], o[c + 1], s[c], o[c]):
            c += 1
        if not _worse(s[c], o[c], s[i], o[i]):
            return
        ts = s[i]; s[i] = s[c]; s[c] = ts
        to = o[i]; o[i] = o[c]; o[c] = to
        i = c


cdef void _sift_up(double* s, long long* o, Py_ssize_t i) nogil:
    cdef Py_ssize_t p
    cdef double ts
    cdef long long to
    while i > 0:
        p = (i - 1) // 2
        if not _worse(s[i], o[i], s[p], o[p]):
            return
        ts = s[i]; s[i] = s[p]; s[p] = ts
        to = o[i]; o[i] = o[p]; o[p] = to
        i = p


cdef inline bint _offer(double* s, long long* o, Py_ssize_t* n, Py_ssize_t k, double score, long long ordinal) nogil:
    """Insert into the size-k worst-at-root heap; ordinals arrive ascending."""
    if n[0] < k:
        s[n[0]] = score
        o[n[0]] = ordinal
        _sift_up(s, o, n[0])
        n[0] += 1
        return True
    if score > s[0]:
        s[0] = score
        o[0] = ordinal
        _sift_down(s, o, k, 0)
        return True
    return False


cdef object _finish(double* s, long long* o, Py_ssize_t n):
    ords = np.empty(n, dtype=np.int64)
    scores = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(n):
        ords[i] = o[i]
        scores[i] = s[i]
    order = np.lexsort((ords, -scores))
    return ords[order], scores[order]


def daat_exhaustive(const long long[::1] offsets, const int[::1] docs, const unsigned char[::1] levels,
                    const double[::1] qweights, double scale, Py_ssize_t k):
    cdef Py_ssize_t T = qweights.shape[0]
    cdef Py_ssize_t t, n = 0
    cdef long long d, cur
    cdef double raw
    cdef Py_ssize_t* pos = <Py_ssize_t*> malloc((T + 1) * sizeof(Py_ssize_t))
    cdef double* hs = <double*> malloc((k + 1) * sizeof(double))
    cdef long long* ho = <long long*> malloc((k + 1) * sizeof(long long))
    if pos == NULL or hs == NULL or ho == NULL:
        free(pos); free(hs); free(ho)
        raise MemoryError()
    try:
        with nogil:
            for t in range(T):
                pos[t] = offsets[t]
            while True:
                d = -1
                for t in range(T):
                    if pos[t] < offsets[t + 1]:
                        cur = docs[pos[t]]
                        if d < 0 or cur < d:
                            d = cur
                if d < 0:
                    break
                raw = 0.0
                for t in range(T):
                    if pos[t] < offsets[t + 1] and docs[pos[t]] == d:
                        raw = raw + qweights[t] * <double> levels[pos[t]]
                        pos[t] += 1
                _offer(hs, ho, &n, k, raw * scale, d)
        return _finish(hs, ho, n)
    finally:
        free(pos); free(hs); free(ho)


cdef inline Py_ssize_t _seek(const int[::1] docs, Py_ssize_t lo, Py_ssize_t hi, long long target) nogil:
    """First position in [lo, hi) whose doc >= target."""
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) // 2
        if docs[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    return lo


def daat_maxscore(const long long[::1] offsets, const int[::1] docs, const unsigned char[::1] levels,
                  const double[::1] qweights, const int[::1] max_levels, double scale, Py_ssize_t k):
    """MaxScore over the same inputs; returns exactly what :func:`daat_exhaustive` does."""
    cdef Py_ssize_t T = qweights.shape[0]
    cdef Py_ssize_t i, t, n = 0, n_ne = 0
    cdef long long d, cur
    cdef double raw, partial, threshold = 0.0
    cdef bint full = False, skip
    bounds = np.asarray(qweights, dtype=np.float64) * np.asarray(max_levels, dtype=np.float64) * scale
    order_arr = np.argsort(bounds, kind="stable").astype(np.intp)
    cum_arr = np.cumsum(bounds[order_arr]) if T else np.zeros(0)
    cdef Py_ssize_t[::1] order = order_arr
    cdef double[::1] cum = cum_arr
    cdef Py_ssize_t* pos = <Py_ssize_t*> malloc((T + 1) * sizeof(Py_ssize_t))
    cdef double* contrib = <double*> malloc((T + 1) * sizeof(double))
    cdef char* hit = <char*> malloc((T + 1) * sizeof(char))
    cdef double* hs = <double*> malloc((k + 1) * sizeof(double))
    cdef long long* ho = <long long*> malloc((k + 1) * sizeof(long long))
    if pos == NULL or contrib == NULL or hit == NULL or hs == NULL or ho == NULL:
        free(pos); free(contrib); free(hit); free(hs); free(ho)
        raise MemoryError()
    try:
        with nogil:
            for t in range(T):
                pos[t] = offsets[t]
                hit[t] = 0
            while True:
                d = -1
                for i in range(n_ne, T):
                    t = order[i]
                    if pos[t] < offsets[t + 1]:
                        cur = docs[pos[t]]
                        if d < 0 or cur < d:
                            d = cur
                if d < 0:
                    break
                partial = 0.0
                for i in range(n_ne, T):
                    t = order[i]
                    if pos[t] < offsets[t + 1] and docs[pos[t]] == d:
                        contrib[t] = qweights[t] * <double> levels[pos[t]]
                        hit[t] = 1
                        partial = partial + contrib[t]
                        pos[t] += 1
                skip = False
                i = n_ne - 1
                while i >= 0:
                    if full and (partial * scale + cum[i]) * _MARGIN <= threshold:
                        skip = True
                        break
                    t = order[i]
                    pos[t] = _seek(docs, pos[t], offsets[t + 1], d)
                    if pos[t] < offsets[t + 1] and docs[pos[t]] == d:
                        contrib[t] = qweights[t] * <double> levels[pos[t]]
                        hit[t] = 1
                        partial = partial + contrib[t]
                    i -= 1
                if not skip:
                    raw = 0.0
                    for t in range(T):
                        if hit[t]:
                            raw = raw + contrib[t]
                    if _offer(hs, ho, &n, k, raw * scale, d) and n == k:
                        full = True
                        threshold = hs[0]
                        while n_ne < T and cum[n_ne] * _MARGIN <= threshold:
                            n_ne += 1
                for t in range(T):
                    hit[t] = 0
        return _finish(hs, ho, n)
    finally:
        free(pos); free(contrib); free(hit); free(hs); free(ho)
