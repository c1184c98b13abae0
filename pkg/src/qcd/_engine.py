"""Numba kernels for the Monte Carlo fast path.

Each kernel mirrors the matching pure-Python step in detectors.py operation
for operation (same reads, same float-op order), so kernel and reference
agree exactly; tests assert == equality. No fastmath anywhere: results must
be reproducible bit-for-bit across thread counts.

Kernels consume a precomputed LLR chunk z of shape (n, L) and mutate the
channel vector omega in place. Crossing kernels return the 0-based offset of
the first alarm within the chunk, or -1.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def dcusum_until_cross(z, omega, threshold, strict):
    n, L = z.shape
    for t in range(n):
        m = 0.0
        for i in range(L):
            w = omega[i]
            if w > m:
                m = w
            omega[i] = m + z[t, i]
        s = 0.0
        for i in range(L):
            if omega[i] > s:
                s = omega[i]
        if strict:
            if s > threshold:
                return t
        elif s >= threshold:
            return t
    return -1


@njit(cache=True, nogil=True)
def wdcusum_until_cross(z, omega, wcum, log1m, threshold):
    n, L = z.shape
    prev = np.empty(L)
    for t in range(n):
        for i in range(L):
            prev[i] = omega[i]
        for i in range(1, L + 1):
            best = wcum[0, i]
            for j in range(1, i + 1):
                cand = prev[j - 1] + wcum[j, i]
                if cand > best:
                    best = cand
            omega[i - 1] = best + z[t, i - 1] + log1m[i - 1]
        s = 0.0
        for i in range(L):
            if omega[i] > s:
                s = omega[i]
        if s >= threshold:
            return t
    return -1


@njit(cache=True, nogil=True)
def dcusum_first_zero(z, omega):
    """Offset of the first step whose positive-part statistic is exactly 0."""
    n, L = z.shape
    for t in range(n):
        m = 0.0
        for i in range(L):
            w = omega[i]
            if w > m:
                m = w
            omega[i] = m + z[t, i]
        zero = True
        for i in range(L):
            if omega[i] > 0.0:
                zero = False
                break
        if zero:
            return t
    return -1


@njit(cache=True, nogil=True)
def dcusum_statistic_path(z, omega, out):
    n, L = z.shape
    for t in range(n):
        m = 0.0
        for i in range(L):
            w = omega[i]
            if w > m:
                m = w
            omega[i] = m + z[t, i]
        s = 0.0
        for i in range(L):
            if omega[i] > s:
                s = omega[i]
        out[t] = s


@njit(cache=True, nogil=True)
def wdcusum_statistic_path(z, omega, wcum, log1m, out):
    n, L = z.shape
    prev = np.empty(L)
    for t in range(n):
        for i in range(L):
            prev[i] = omega[i]
        for i in range(1, L + 1):
            best = wcum[0, i]
            for j in range(1, i + 1):
                cand = prev[j - 1] + wcum[j, i]
                if cand > best:
                    best = cand
            omega[i - 1] = best + z[t, i - 1] + log1m[i - 1]
        s = 0.0
        for i in range(L):
            if omega[i] > s:
                s = omega[i]
        out[t] = s
