"""Bit-parallel popcount kernel for the pairwise dissimilarity matrix.

Compiled once with numba (disk-cached) and released from the GIL so that
worker threads can fill disjoint slices of the condensed output in parallel.
"""

import numpy as np
from numba import int64, njit, uint64

_M1 = uint64(0x5555555555555555)
_M2 = uint64(0x3333333333333333)
_M4 = uint64(0x0F0F0F0F0F0F0F0F)
_H01 = uint64(0x0101010101010101)


@njit(uint64(uint64), cache=True, inline="always")
def popcount64(v):
    v = v - ((v >> uint64(1)) & _M1)
    v = (v & _M2) + ((v >> uint64(2)) & _M2)
    v = (v + (v >> uint64(4))) & _M4
    return (v * _H01) >> uint64(56)


@njit(int64(int64), cache=True, inline="always")
def pair_col(t):
    """Column j of condensed index t = j*(j-1)//2 + i with i < j."""
    j = int64((1.0 + np.sqrt(8.0 * t + 1.0)) / 2.0)
    while j * (j - 1) // 2 > t:
        j -= 1
    while (j + 1) * j // 2 <= t:
        j += 1
    return j


@njit(cache=True, nogil=True)
def jaccard_block(out, states, follow, k, words, start, stop):
    """Fill out[start:stop] with composite Jaccard dissimilarities.

    states: (n, k*words) uint64, condition l word w at column l*words + w.
    follow: (n, words) uint64.  Condensed index of pair (i, j), i < j, is
    j*(j-1)//2 + i.  The quotient is evaluated as (denom - Q) / denom so each
    value is the correctly-rounded double of the underlying rational.
    """
    j = pair_col(start)
    i = start - j * (j - 1) // 2
    for t in range(start, stop):
        q = uint64(0)
        p = uint64(0)
        obs = uint64(0)
        for w in range(words):
            fw = follow[i, w] & follow[j, w]
            obs += popcount64(fw)
            base = w
            for _l in range(k):
                a = states[i, base]
                b = states[j, base]
                q += popcount64(a & b & fw)
                p += popcount64(fw & ~(a | b))
                base += words
        denom = uint64(k) * obs - p
        if denom > uint64(0):
            out[t] = (denom - q) / denom
        else:
            out[t] = 0.0
        i += 1
        if i == j:
            i = 0
            j += 1
