"""Threshold selection, weight-range heuristics, and the first-order delay predictor.

Run-length guarantees drive the thresholds:

* weighted rule: ARL >= exp(b)/2 for any weights, so b = log(gamma) + log(2)
  meets an ARL target gamma outright.
* dynamic rule: ARL >= exp(b) / (1 + (b/alpha)^(L+1)) once the regeneration
  tail exponent alpha is certified; the threshold solves that bound for
  gamma on the increasing branch b >= log(gamma). The bound is non-monotone
  for small b, which is why the search is restricted to that branch (where
  b ~ log gamma lives).

The delay predictor converts transient durations into regime constants
c_i = d_i * I_i / log(gamma) and applies the first-order law: detection
spends whole transient phases until the accumulated information covers
log(gamma), then finishes at the rate of the first phase that closes the
gap. First-order only; no constant-term corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DesignError",
    "EmptyRange",
    "NoRoot",
    "RegimeVector",
    "DesignInput",
    "wdcusum_threshold",
    "dcusum_threshold",
    "rho_range",
    "regime_vector",
    "asymptotic_wadd",
    "RHO_UPPER_NOTE",
    "design_card",
]


class DesignError(ValueError):
    """Invalid design inputs."""


class EmptyRange(DesignError):
    """The weight-range heuristic is inapplicable at these scales."""


class NoRoot(RuntimeError):
    """Threshold bracket failed to contain a sign change (should not happen)."""


@dataclass(frozen=True)
class RegimeVector:
    """Regime constants c_1..c_{L-1} in [0, inf]; c_L = inf is implicit."""

    c: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if any(v < 0.0 or math.isnan(v) for v in self.c):
            raise DesignError(f"regime constants must be nonnegative (inf allowed), got {self.c}")


def wdcusum_threshold(gamma: float) -> float:
    """Threshold meeting ARL >= gamma for the weighted rule: log(gamma) + log(2)."""
    if not gamma > 1.0:
        raise DesignError(f"gamma must exceed 1, got {gamma}")
    return math.log(gamma) + math.log(2.0)


def dcusum_threshold(gamma: float, alpha: float, L: int) -> float:
    """Threshold meeting ARL >= gamma for the dynamic rule given exponent alpha.

    Solves exp(b) = gamma * (1 + (b/alpha)^(L+1)) by bisection on
    [log(gamma), log(gamma) + (L+1)*log(1 + log(gamma)/alpha) + 10] to
    absolute tolerance 1e-9; the root satisfies b ~ log(gamma).
    """
    if not gamma > 1.0:
        raise DesignError(f"gamma must exceed 1, got {gamma}")
    if not alpha > 0.0:
        raise DesignError(f"alpha must be positive, got {alpha}")
    if L < 1:
        raise DesignError(f"L must be >= 1, got {L}")
    log_gamma = math.log(gamma)
    power = L + 1

    def residual(b: float) -> float:
        # log-domain form of exp(b) - gamma * (1 + (b/alpha)^(L+1))
        return b - log_gamma - math.log1p((b / alpha) ** power)

    lo = log_gamma
    hi = log_gamma + power * math.log1p(log_gamma / alpha) + 10.0
    f_lo, f_hi = residual(lo), residual(hi)
    if not (f_lo <= 0.0 <= f_hi):
        raise NoRoot(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if residual(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rho_range(b: float, i1: float, delta1: float, delta2: float) -> tuple[float, float]:
    """Admissible weight interval exp(-delta2*b) < rho_1 < 1 - exp(-delta1*I_1).

    The lower end keeps the log(rho) offset small next to the threshold, the
    upper end keeps the transient drift loss a small fraction of I_1.
    """
    if b <= 0.0 or i1 <= 0.0:
        raise DesignError(f"need b > 0 and I_1 > 0, got b={b}, I_1={i1}")
    if not (0.0 < delta1 < 1.0 and 0.0 < delta2 < 1.0):
        raise DesignError(f"deltas must lie in (0, 1), got ({delta1}, {delta2})")
    lo = math.exp(-delta2 * b)
    hi = 1.0 - math.exp(-delta1 * i1)
    if lo >= hi:
        raise EmptyRange(f"weight range is empty at these scales: lower {lo:.6g} >= upper {hi:.6g}")
    return lo, hi


def regime_vector(durations, gamma: float, kl) -> RegimeVector:
    """Finite-sample plug-in c_i = d_i * I_i / log(gamma); first-order only."""
    if not gamma > 1.0:
        raise DesignError(f"gamma must exceed 1, got {gamma}")
    kl = tuple(float(v) for v in kl)
    durations = tuple(float(d) for d in durations)
    if len(durations) > len(kl):
        raise DesignError(f"more durations ({len(durations)}) than phase divergences ({len(kl)})")
    log_gamma = math.log(gamma)
    c = tuple(math.inf if math.isinf(d) else d * i / log_gamma for d, i in zip(durations, kl))
    return RegimeVector(c=c)


def asymptotic_wadd(gamma: float, c: RegimeVector, kl) -> float:
    """First-order worst-case delay prediction.

    With h the first phase index at which the regime constants accumulate to
    one (the implicit c_L = inf guarantees existence), the prediction is
    log(gamma) * (sum_{i<h} c_i/I_i + (1 - sum_{i<h} c_i)/I_h).
    """
    if not gamma > 1.0:
        raise DesignError(f"gamma must exceed 1, got {gamma}")
    kl = tuple(float(v) for v in kl)
    L = len(kl)
    if any(not v > 0.0 for v in kl):
        raise DesignError(f"phase divergences must be positive, got {kl}")
    if len(c.c) != L - 1:
        raise DesignError(f"need L-1 = {L - 1} regime constants, got {len(c.c)}")
    cs = c.c + (math.inf,)
    acc = 0.0
    h = L
    for j, cj in enumerate(cs, start=1):
        if acc + cj >= 1.0:
            h = j
            break
        acc += cj
    head = sum(ci / kl[i] for i, ci in enumerate(cs[: h - 1]))
    return math.log(gamma) * (head + (1.0 - acc) / kl[h - 1])


RHO_UPPER_NOTE = (
    "note: the weight upper endpoint is 1 - exp(-delta1*I1); for I1=0.045, "
    "delta1=0.3 this is 0.0134, not the sometimes-quoted 0.134 (a factor-of-ten slip)."
)


@dataclass(frozen=True)
class DesignInput:
    """Inputs for a design card: ARL target, phase divergences, heuristics."""

    gamma: float
    kl: tuple[float, ...]
    deltas: tuple[float, float] = (0.3, 0.3)
    alpha: float | None = None
    c: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.gamma > 1.0:
            raise DesignError(f"gamma must exceed 1, got {self.gamma}")
        object.__setattr__(self, "kl", tuple(float(v) for v in self.kl))
        if not self.kl or any(not v > 0.0 or math.isinf(v) for v in self.kl):
            raise DesignError(f"phase divergences must be positive and finite, got {self.kl}")
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if len(self.deltas) != 2 or any(not 0.0 < d < 1.0 for d in self.deltas):
            raise DesignError(f"deltas must be two values in (0, 1), got {self.deltas}")
        if self.alpha is not None and not self.alpha > 0.0:
            raise DesignError(f"alpha must be positive when given, got {self.alpha}")
        if self.c is not None:
            object.__setattr__(self, "c", tuple(float(v) for v in self.c))


def design_card(inp: DesignInput) -> dict:
    """All design outputs for one target, as a plain serializable dict.

    The weight-range heuristic is evaluated at b = log(gamma), the scale the
    heuristic is stated at (not the slightly larger certified threshold).
    """
    L = len(inp.kl)
    card: dict = {
        "gamma": inp.gamma,
        "L": L,
        "kl": list(inp.kl),
        "wdcusum_threshold": wdcusum_threshold(inp.gamma),
    }
    if inp.alpha is not None:
        card["alpha"] = inp.alpha
        card["dcusum_threshold"] = dcusum_threshold(inp.gamma, inp.alpha, L)
    else:
        card["dcusum_threshold"] = None
        card["dcusum_note"] = "unavailable: regeneration tail exponent (alpha) not certified"
    if L >= 2:
        b_heuristic = math.log(inp.gamma)
        card["rho_range_b"] = b_heuristic
        try:
            lo, hi = rho_range(b_heuristic, inp.kl[0], inp.deltas[0], inp.deltas[1])
            card["rho_range"] = [lo, hi]
        except EmptyRange as e:
            card["rho_range"] = None
            card["rho_range_error"] = str(e)
        card["rho_range_note"] = RHO_UPPER_NOTE
    if inp.c is not None:
        card["regime_constants"] = list(inp.c)
        card["predicted_wadd"] = asymptotic_wadd(inp.gamma, RegimeVector(inp.c), inp.kl)
    return card
