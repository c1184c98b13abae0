"""Exhaustive-enumeration references for the recursive statistics.

Everything here evaluates a statistic by direct enumeration over change-point
tuples (v_1, ..., v_L) with 1 <= v_1 <= k and v_1 <= ... <= v_L <= k+1, where
v_i is the first sample of phase i and v_i = k+1 means the phase never starts
inside the window. Costs grow like k^L, so windows are capped; these are
correctness anchors for the recursions, never live detectors.

All products of likelihood ratios are accumulated in the log domain; raw
ratio products would overflow long before the window cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import logsumexp

from .models import PhaseModel, llr_matrix

__all__ = [
    "MAX_WINDOW",
    "MAX_PHASES",
    "WindowTooLarge",
    "UnsupportedL",
    "TupleStat",
    "GeometricDuration",
    "PointMassDuration",
    "change_point_tuples",
    "tuple_count",
    "glr_bruteforce",
    "weighted_glr_bruteforce",
    "mixture_glr",
    "mixture_sr_statistic",
]

MAX_WINDOW = 30
MAX_PHASES = 3


class WindowTooLarge(ValueError):
    """Enumeration refused beyond the documented window/phase caps."""


class UnsupportedL(ValueError):
    """Mixture diagnostics are implemented for a single transient phase only."""


@dataclass(frozen=True)
class TupleStat:
    """Enumerated maximum: ``value`` is floored at zero (the positive part),
    ``raw`` is the unfloored maximum, ``argmax`` the lexicographically
    smallest maximizing tuple."""

    value: float
    raw: float
    argmax: tuple[int, ...]


def _check_window(k: int, L: int) -> None:
    if k < 1:
        raise ValueError("need at least one sample")
    if k > MAX_WINDOW or L > MAX_PHASES:
        raise WindowTooLarge(f"brute force capped at k <= {MAX_WINDOW}, L <= {MAX_PHASES}; got k={k}, L={L}")


def tuple_count(k: int, L: int) -> int:
    """Number of admissible change-point tuples: C(k+L, L) - 1.

    Weakly increasing L-tuples over {1..k+1} minus the single all-(k+1)
    tuple, which is excluded by v_1 <= k.
    """
    return math.comb(k + L, L) - 1


@lru_cache(maxsize=256)
def change_point_tuples(k: int, L: int) -> np.ndarray:
    """All admissible tuples, lexicographically sorted, shape (count, L)."""
    _check_window(k, L)
    rows = [t for t in combinations_with_replacement(range(1, k + 2), L) if t[0] <= k]
    arr = np.asarray(rows, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=256)
def _tuple_index_arrays(k: int, L: int):
    """Cached flat gather indices into the (k+1, L) prefix-sum array."""
    tuples = change_point_tuples(k, L)
    nxt = np.concatenate([tuples[:, 1:], np.full((tuples.shape[0], 1), k + 1, dtype=np.int64)], axis=1)
    ends = np.minimum(nxt - 1, k)
    starts = tuples - 1
    cols = np.arange(L, dtype=np.int64)
    flat_ends = ends * L + cols
    flat_starts = starts * L + cols
    counts = (ends - starts).astype(np.float64)
    started = [(tuples[:, i + 1] <= k).astype(np.float64) for i in range(L - 1)]
    for a in (flat_ends, flat_starts, counts, *started):
        a.setflags(write=False)
    return tuples, flat_ends, flat_starts, counts, started


def _enumerated_values(model: PhaseModel, samples, rho: tuple[float, ...] | None) -> tuple[np.ndarray, np.ndarray]:
    """Per-tuple log statistic values; the shared core of both brute forces."""
    x = np.asarray(samples, dtype=np.float64)
    k, L = x.shape[0], model.L
    _check_window(k, L)
    z = llr_matrix(model, x)
    prefix = np.empty((k + 1, L))
    prefix[0] = 0.0
    np.cumsum(z, axis=0, out=prefix[1:])
    flat = prefix.ravel()
    tuples, flat_ends, flat_starts, counts, started = _tuple_index_arrays(k, L)
    vals = (flat[flat_ends] - flat[flat_starts]).sum(axis=1)
    if rho is not None:
        if len(rho) != L - 1:
            raise ValueError(f"need L-1 = {L - 1} weights, got {len(rho)}")
        log1m = np.array([math.log1p(-r) for r in rho] + [0.0])
        vals = vals + counts @ log1m
        for i, r in enumerate(rho):
            vals = vals + started[i] * math.log(r)
    return tuples, vals


def _as_tuple_stat(tuples: np.ndarray, vals: np.ndarray) -> TupleStat:
    j = int(np.argmax(vals))
    raw = float(vals[j])
    return TupleStat(value=max(0.0, raw), raw=raw, argmax=tuple(int(v) for v in tuples[j]))


def glr_bruteforce(model: PhaseModel, samples) -> TupleStat:
    """Unweighted statistic: max over tuples of the summed phase LLRs.

    Empty phase segments contribute zero. Equals the dynamic-CuSum recursion
    after len(samples) steps.
    """
    tuples, vals = _enumerated_values(model, samples, rho=None)
    return _as_tuple_stat(tuples, vals)


def weighted_glr_bruteforce(model: PhaseModel, rho, samples) -> TupleStat:
    """Weighted statistic: each tuple additionally pays n_i*log(1-rho_i) per
    in-window phase-i sample and log(rho_i) whenever phase i+1 starts inside
    the window. Equals the weighted recursion after len(samples) steps."""
    rho = tuple(float(r) for r in rho)
    tuples, vals = _enumerated_values(model, samples, rho=rho)
    return _as_tuple_stat(tuples, vals)


# --- duration priors for the mixture diagnostics ----------------------------


@dataclass(frozen=True)
class GeometricDuration:
    """g(d) = rho * (1-rho)^d on d = 0, 1, ...; survivor G(x) = (1-rho)^(x+1)."""

    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")

    def log_pmf(self, d):
        return math.log(self.rho) + np.asarray(d) * math.log1p(-self.rho)

    def log_survivor(self, x):
        return (np.asarray(x) + 1) * math.log1p(-self.rho)


@dataclass(frozen=True)
class PointMassDuration:
    """All duration mass on a single value."""

    duration: int

    def log_pmf(self, d):
        return np.where(np.asarray(d) == self.duration, 0.0, -np.inf)

    def log_survivor(self, x):
        return np.where(np.asarray(x) < self.duration, 0.0, -np.inf)


@lru_cache(maxsize=64)
def _mixture_index(k: int):
    """Cached (v1, v2) pairs for the in-window mixture terms, grouped by v1."""
    v1 = np.repeat(np.arange(1, k + 1), np.arange(k, 0, -1))
    v2 = np.concatenate([np.arange(s, k + 1) for s in range(1, k + 1)])
    row = v1 - 1
    col = v2 - v1
    for a in (v1, v2, row, col):
        a.setflags(write=False)
    return v1, v2, row, col


def _mixture_term_matrix(model: PhaseModel, g, samples) -> np.ndarray:
    """Log-domain mixture terms as a (k, k+1) matrix, one row per change
    point v1, padded with -inf.

    Row v1 holds log g(d1) + log LR(phase split at v1+d1) for d1 = 0..k-v1,
    plus the tail term log G(k-v1) + log LR(all phase 1) in the last column:
    durations reaching past the window are aggregated into the survivor mass,
    never renormalized away.
    """
    x = np.asarray(samples, dtype=np.float64)
    k = x.shape[0]
    if model.L != 2:
        raise UnsupportedL(f"mixture diagnostics need L=2, got L={model.L}")
    if k < 1:
        raise ValueError("need at least one sample")
    if k > MAX_WINDOW:
        raise WindowTooLarge(f"mixture diagnostics capped at k <= {MAX_WINDOW}, got {k}")
    z = llr_matrix(model, x)
    s1 = np.concatenate([[0.0], np.cumsum(z[:, 0])])
    s2 = np.concatenate([[0.0], np.cumsum(z[:, 1])])
    v1, v2, row, col = _mixture_index(k)
    body = g.log_pmf(v2 - v1) + (s1[v2 - 1] - s1[v1 - 1]) + (s2[k] - s2[v2 - 1])
    v1_all = np.arange(1, k + 1)
    tail = g.log_survivor(k - v1_all) + (s1[k] - s1[v1_all - 1])
    terms = np.full((k, k + 1), -np.inf)
    terms[row, col] = body
    terms[:, k] = tail
    return terms


def mixture_glr(model: PhaseModel, g, samples) -> float:
    """Duration-mixture statistic: max over v1 of the log of the summed
    mixture terms. Not recursive; diagnostic only."""
    terms = _mixture_term_matrix(model, g, samples)
    return float(np.max(logsumexp(terms, axis=1)))


def mixture_sr_statistic(model: PhaseModel, g, samples) -> float:
    """Log of the mixture Shiryaev-Roberts statistic: the sum over all
    change points and durations. The plain statistic minus k is a martingale
    under the no-change measure, so its mean at k is exactly k."""
    terms = _mixture_term_matrix(model, g, samples)
    return float(logsumexp(terms, axis=None))
