"""Phase densities, log-likelihood ratios and information quantities.

A detection model is a pre-change density f0 plus L post-change densities
f1..fL: phases 1..L-1 are transient, phase L is persistent. Everything
downstream (recursions, oracles, simulation) touches densities only through
the evaluators defined here.

Two density families cover all supported models: Gaussians and normalized
step functions (piecewise-constant on a bounded interval). Scalar and array
evaluators share the same precomputed constants and the same operation
order, so both paths produce bit-identical values; the recursive detectors
(scalar path) and the Monte Carlo engine (array path) rely on this.

Points where a post-change density vanishes while f0 does not get the
``LLR_SENTINEL`` value (-1e12) instead of -inf, which keeps the recursions
inside ordinary float arithmetic while still losing every maximum against a
legitimate statistic value.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

__all__ = [
    "LLR_SENTINEL",
    "ModelError",
    "OutOfSupport",
    "DivergentKl",
    "Gaussian",
    "PiecewiseConstant",
    "Density",
    "PhaseModel",
    "log_likelihood_ratio",
    "llr_array",
    "llr_matrix",
    "kl_between",
    "kl_quadrature",
    "kl_divergence",
    "phi",
    "phi_array",
    "AlphaEstimate",
    "estimate_alpha",
    "model_from_dict",
    "model_to_dict",
    "load_model",
]

LLR_SENTINEL = -1.0e12

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelError(ValueError):
    """Invalid density or phase-model construction."""


class OutOfSupport(ModelError):
    """Observation outside the support of the pre-change density."""


class DivergentKl(ModelError):
    """KL divergence is infinite (numerator support escapes the denominator's)."""


@dataclass(frozen=True)
class Gaussian:
    mean: float
    stdev: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "stdev", float(self.stdev))
        if not math.isfinite(self.mean) or not math.isfinite(self.stdev):
            raise ModelError(f"gaussian parameters must be finite, got mean={self.mean}, stdev={self.stdev}")
        if self.stdev <= 0.0:
            raise ModelError(f"gaussian stdev must be > 0, got {self.stdev}")

    @cached_property
    def _log_norm(self) -> float:
        return math.log(self.stdev) + _HALF_LOG_2PI

    def logpdf(self, x: float) -> float:
        t = (x - self.mean) / self.stdev
        return -0.5 * (t * t) - self._log_norm

    def logpdf_array(self, xs: np.ndarray) -> np.ndarray:
        t = (np.asarray(xs, dtype=np.float64) - self.mean) / self.stdev
        return -0.5 * (t * t) - self._log_norm

    def pdf(self, x: float) -> float:
        return math.exp(self.logpdf(x))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, self.stdev, size=size)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Normalized step density: ``heights[i]`` on ``[breakpoints[i], breakpoints[i+1])``.

    The rightmost edge is closed, so the support is the full closed interval
    ``[breakpoints[0], breakpoints[-1]]``.
    """

    breakpoints: tuple[float, ...]
    heights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "heights", tuple(float(h) for h in self.heights))
        bp, hs = self.breakpoints, self.heights
        if len(bp) < 2 or len(hs) != len(bp) - 1:
            raise ModelError("step density needs n+1 breakpoints for n >= 1 heights")
        if any(not math.isfinite(b) for b in bp):
            raise ModelError("breakpoints must be finite")
        if any(a >= b for a, b in zip(bp, bp[1:])):
            raise ModelError("breakpoints must be strictly ascending")
        if any(h < 0.0 or not math.isfinite(h) for h in hs):
            raise ModelError("heights must be finite and nonnegative")
        mass = sum(h * (b - a) for h, a, b in zip(hs, bp, bp[1:]))
        if abs(mass - 1.0) > 1e-12:
            raise ModelError(f"step density mass is {mass!r}, must equal 1 within 1e-12")

    @cached_property
    def _bp(self) -> np.ndarray:
        return np.asarray(self.breakpoints, dtype=np.float64)

    @cached_property
    def _log_heights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.heights, dtype=np.float64))

    @cached_property
    def _cum_mass(self) -> np.ndarray:
        widths = np.diff(self._bp)
        return np.cumsum(np.asarray(self.heights) * widths)

    def piece_index(self, x: float) -> int:
        """Index of the piece containing x, or -1 outside the support."""
        bp = self.breakpoints
        if x == bp[-1]:
            return len(self.heights) - 1
        i = bisect.bisect_right(bp, x) - 1
        if i < 0 or i >= len(self.heights):
            return -1
        return i

    def logpdf(self, x: float) -> float:
        i = self.piece_index(x)
        if i < 0:
            return -math.inf
        return float(self._log_heights[i])

    def logpdf_array(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        bp = self._bp
        n = len(self.heights)
        idx = np.searchsorted(bp, xs, side="right") - 1
        idx = np.where(xs == bp[-1], n - 1, idx)
        valid = (idx >= 0) & (idx < n)
        out = np.full(xs.shape, -np.inf)
        out[valid] = self._log_heights[idx[valid]]
        return out

    def pdf(self, x: float) -> float:
        i = self.piece_index(x)
        return 0.0 if i < 0 else self.heights[i]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        cum = self._cum_mass
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
        prev = np.concatenate([[0.0], cum[:-1]])[idx]
        heights = np.asarray(self.heights)
        return self._bp[idx] + (u - prev) / heights[idx]


Density = Union[Gaussian, PiecewiseConstant]


@dataclass(frozen=True)
class PhaseModel:
    """Pre-change density plus the L post-change phase densities.

    ``densities[0]`` is f0, ``densities[i]`` the density of phase i; the last
    entry is the persistent density. Construction verifies that every
    KL(fi || f0) is finite and strictly positive, which also guarantees that
    every post-change support sits inside f0's support.
    """

    densities: tuple[Density, ...]
    kl: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "densities", tuple(self.densities))
        if len(self.densities) < 2:
            raise ModelError("a phase model needs f0 plus at least one post-change density")
        kls = []
        for i, fi in enumerate(self.densities[1:], start=1):
            v = kl_between(fi, self.densities[0])
            if not math.isfinite(v) or v <= 0.0:
                raise ModelError(f"KL(f{i}||f0) must be finite and positive, got {v!r}")
            kls.append(v)
        object.__setattr__(self, "kl", tuple(kls))

    @property
    def L(self) -> int:
        return len(self.densities) - 1


def _check_phase(model: PhaseModel, i: int) -> None:
    if not 1 <= i <= model.L:
        raise ValueError(f"phase index must be in 1..{model.L}, got {i}")


def log_likelihood_ratio(model: PhaseModel, i: int, x: float) -> float:
    """log fi(x) - log f0(x), with LLR_SENTINEL where fi vanishes.

    Raises OutOfSupport when f0(x) = 0: a valid model has every fi supported
    inside f0, so such a point is inconsistent with the model altogether.
    """
    _check_phase(model, i)
    lf0 = model.densities[0].logpdf(x)
    if lf0 == -math.inf:
        raise OutOfSupport(f"observation {x!r} is outside the pre-change support")
    lfi = model.densities[i].logpdf(x)
    if lfi == -math.inf:
        return LLR_SENTINEL
    return lfi - lf0


def llr_array(model: PhaseModel, i: int, xs: np.ndarray) -> np.ndarray:
    """Vectorized log-likelihood ratio for phase i (sentinel semantics)."""
    _check_phase(model, i)
    xs = np.asarray(xs, dtype=np.float64)
    lf0 = model.densities[0].logpdf_array(xs)
    if np.any(lf0 == -np.inf):
        bad = int(np.argmax(lf0 == -np.inf))
        raise OutOfSupport(f"observation {xs[bad]!r} (index {bad}) is outside the pre-change support")
    lfi = model.densities[i].logpdf_array(xs)
    return np.where(lfi == -np.inf, LLR_SENTINEL, lfi - lf0)


def llr_matrix(model: PhaseModel, xs: np.ndarray) -> np.ndarray:
    """All phase log-likelihood ratios at once, shape (len(xs), L)."""
    xs = np.asarray(xs, dtype=np.float64)
    lf0 = model.densities[0].logpdf_array(xs)
    if np.any(lf0 == -np.inf):
        bad = int(np.argmax(lf0 == -np.inf))
        raise OutOfSupport(f"observation {xs[bad]!r} (index {bad}) is outside the pre-change support")
    out = np.empty((xs.shape[0], model.L), dtype=np.float64)
    for i in range(1, model.L + 1):
        lfi = model.densities[i].logpdf_array(xs)
        out[:, i - 1] = np.where(lfi == -np.inf, LLR_SENTINEL, lfi - lf0)
    return out


def phi(model: PhaseModel, x: float) -> float:
    """log(max_i fi(x) / f0(x)) -- the envelope log-likelihood ratio."""
    lf0 = model.densities[0].logpdf(x)
    if lf0 == -math.inf:
        raise OutOfSupport(f"observation {x!r} is outside the pre-change support")
    best = -math.inf
    for fi in model.densities[1:]:
        v = fi.logpdf(x)
        if v > best:
            best = v
    if best == -math.inf:
        return LLR_SENTINEL
    return best - lf0


def phi_array(model: PhaseModel, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    lf0 = model.densities[0].logpdf_array(xs)
    if np.any(lf0 == -np.inf):
        bad = int(np.argmax(lf0 == -np.inf))
        raise OutOfSupport(f"observation {xs[bad]!r} (index {bad}) is outside the pre-change support")
    best = model.densities[1].logpdf_array(xs)
    for fi in model.densities[2:]:
        best = np.maximum(best, fi.logpdf_array(xs))
    return np.where(best == -np.inf, LLR_SENTINEL, best - lf0)


# --- KL divergences ---------------------------------------------------------


def kl_between(fi: Density, f0: Density) -> float:
    """KL(fi || f0) for any supported family pair.

    Gaussian/Gaussian uses the closed form, step/step sums exactly over the
    refinement of both breakpoint sets, step/Gaussian integrates each piece
    by adaptive quadrature (absolute tolerance 1e-10). A Gaussian numerator
    over a step denominator always diverges (unbounded vs bounded support).
    """
    if isinstance(fi, Gaussian) and isinstance(f0, Gaussian):
        r = fi.stdev / f0.stdev
        m = (fi.mean - f0.mean) / f0.stdev
        return math.log(f0.stdev / fi.stdev) + 0.5 * (r * r + m * m - 1.0)
    if isinstance(fi, PiecewiseConstant) and isinstance(f0, PiecewiseConstant):
        return _kl_step_step(fi, f0)
    if isinstance(fi, PiecewiseConstant) and isinstance(f0, Gaussian):
        total = 0.0
        for a, b, h in zip(fi.breakpoints, fi.breakpoints[1:], fi.heights):
            if h == 0.0:
                continue
            log_h = math.log(h)
            val, _ = integrate.quad(lambda x: h * (log_h - f0.logpdf(x)), a, b, epsabs=1e-10, limit=200)
            total += val
        return total
    if isinstance(fi, Gaussian) and isinstance(f0, PiecewiseConstant):
        raise DivergentKl("KL(gaussian || step) is infinite: unbounded support over a bounded one")
    raise ModelError(f"unsupported density pair: {type(fi).__name__} vs {type(f0).__name__}")


def _kl_step_step(fi: PiecewiseConstant, f0: PiecewiseConstant) -> float:
    edges = sorted(set(fi.breakpoints) | set(f0.breakpoints))
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        mid = 0.5 * (a + b)
        hi = fi.pdf(mid)
        if hi == 0.0:
            continue
        h0 = f0.pdf(mid)
        if h0 == 0.0:
            raise DivergentKl(f"fi positive on [{a}, {b}] where f0 vanishes")
        total += hi * (b - a) * math.log(hi / h0)
    return total


def kl_quadrature(fi: Density, f0: Density) -> float:
    """KL(fi || f0) by adaptive quadrature; the independent cross-check route."""
    if isinstance(fi, Gaussian):
        if isinstance(f0, PiecewiseConstant):
            raise DivergentKl("KL(gaussian || step) is infinite: unbounded support over a bounded one")

        def integrand(x: float) -> float:
            return fi.pdf(x) * (fi.logpdf(x) - f0.logpdf(x))

        left, _ = integrate.quad(integrand, -np.inf, fi.mean, epsabs=1e-10, limit=400)
        right, _ = integrate.quad(integrand, fi.mean, np.inf, epsabs=1e-10, limit=400)
        return left + right
    total = 0.0
    for a, b, h in zip(fi.breakpoints, fi.breakpoints[1:], fi.heights):
        if h == 0.0:
            continue
        mid = 0.5 * (a + b)
        if isinstance(f0, PiecewiseConstant) and f0.pdf(mid) == 0.0:
            raise DivergentKl(f"fi positive on [{a}, {b}] where f0 vanishes")
        log_h = math.log(h)
        val, _ = integrate.quad(lambda x: h * (log_h - f0.logpdf(x)), a, b, epsabs=1e-10, limit=200)
        total += val
    return total


def kl_divergence(model: PhaseModel, i: int) -> float:
    """I_i = KL(fi || f0); cached at model construction."""
    _check_phase(model, i)
    return model.kl[i - 1]


# --- Chernoff exponent for the regeneration tail ----------------------------


@dataclass(frozen=True)
class AlphaEstimate:
    """Monte Carlo certificate for the regeneration tail exponent.

    ``applicable`` is False when the estimated mean of the envelope ratio
    under f0 is not below zero by at least 3 standard errors; no exponent is
    produced in that case.
    """

    applicable: bool
    alpha: float | None
    mean_phi: float
    stderr_phi: float
    t_star: float | None
    n_samples: int


def _golden_min(fn, lo: float, hi: float, tol: float) -> tuple[float, float]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    t = 0.5 * (a + b)
    return t, fn(t)


def estimate_alpha(model: PhaseModel, n_samples: int, seed: int) -> AlphaEstimate:
    """Estimate the exponent alpha with P(no regeneration by m) <= exp(-alpha*m).

    Draws n_samples from f0, checks E[Phi] < 0 with a 3-standard-error gate,
    then minimizes the empirical cumulant bound theta(t) + t*E[Phi] over
    t in (0, 50] by golden-section search (tolerance 1e-6) on the same
    sample, and returns alpha as minus the minimum. Deterministic in seed.
    """
    if n_samples < 10_000:
        raise ValueError(f"need at least 10^4 samples for the certification gate, got {n_samples}")
    rng = np.random.default_rng(seed)
    xs = model.densities[0].sample(rng, n_samples)
    ph = phi_array(model, xs)
    mean = float(np.mean(ph))
    stderr = float(np.std(ph, ddof=1) / math.sqrt(n_samples))
    if mean + 3.0 * stderr >= 0.0:
        return AlphaEstimate(False, None, mean, stderr, None, n_samples)
    centered = ph - mean
    log_n = math.log(n_samples)

    def objective(t: float) -> float:
        return float(logsumexp(t * centered)) - log_n + t * mean

    t_star, val = _golden_min(objective, 1e-9, 50.0, tol=1e-6)
    return AlphaEstimate(True, -val, mean, stderr, t_star, n_samples)


# --- model description files -------------------------------------------------


def _density_from_dict(obj: dict) -> Density:
    if not isinstance(obj, dict) or "family" not in obj:
        raise ModelError(f"density entry must be an object with a 'family' key, got {obj!r}")
    family = obj["family"]
    if family == "gaussian":
        try:
            return Gaussian(mean=obj["mean"], stdev=obj["stdev"])
        except KeyError as e:
            raise ModelError(f"gaussian density needs 'mean' and 'stdev', missing {e}") from None
    if family == "step":
        try:
            return PiecewiseConstant(breakpoints=tuple(obj["breakpoints"]), heights=tuple(obj["heights"]))
        except KeyError as e:
            raise ModelError(f"step density needs 'breakpoints' and 'heights', missing {e}") from None
    raise ModelError(f"unknown density family {family!r}")


def _density_to_dict(d: Density) -> dict:
    if isinstance(d, Gaussian):
        return {"family": "gaussian", "mean": d.mean, "stdev": d.stdev}
    return {"family": "step", "breakpoints": list(d.breakpoints), "heights": list(d.heights)}


def model_from_dict(obj: dict) -> PhaseModel:
    if not isinstance(obj, dict):
        raise ModelError("model description must be a JSON object")
    try:
        L = obj["L"]
        entries = obj["densities"]
    except KeyError as e:
        raise ModelError(f"model description missing key {e}") from None
    if not isinstance(entries, list) or len(entries) != L + 1:
        raise ModelError(f"expected L+1 = {L + 1} densities, got {len(entries) if isinstance(entries, list) else entries!r}")
    return PhaseModel(densities=tuple(_density_from_dict(e) for e in entries))


def model_to_dict(model: PhaseModel) -> dict:
    return {"L": model.L, "densities": [_density_to_dict(d) for d in model.densities]}


def load_model(path: str) -> PhaseModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelError(f"model file {path} is not valid JSON: {e}") from None
    return model_from_dict(obj)
