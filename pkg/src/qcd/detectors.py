"""Constant-memory recursions for the dynamic CuSum family.

Three stopping rules share one phase model:

* dynamic CuSum (``dcusum``): generalized-likelihood-ratio statistic over the
  change point and all phase boundaries, maintained by an L-entry recursion;
  alarm on statistic > b.
* duration-weighted dynamic CuSum (``wdcusum``): geometric duration weights
  rho_1..rho_{L-1} folded into the same recursion; alarm on statistic >= b.
  The asymmetric comparisons (strict vs non-strict) are deliberate and kept
  bit-exact even though they differ only on a null set for continuous models.
* classical CuSum (``cusum``): the single-phase rule, kept as an independent
  implementation so the L=1 reduction of the dynamic recursion can be checked
  against it exactly.

Each one-sample step reads only the previous L-vector of channel statistics
(simultaneous update), so memory use is constant in stream length. The
statistic exposed to callers is the positive part max(omega, 0); it hits 0
exactly when every channel is non-positive, at which point the dynamic CuSum
forgets the past entirely (regeneration).

Weighted update, channel i, previous channels ``prev`` (prev[0] is the
implicit always-zero channel):

    omega_i = max_{0<=j<=i} ( prev[j] + sum_{l=j}^{i-1} log rho_l )
              + Z_i(x) + log(1 - rho_i)

with rho_0 = 1 and rho_L = 0 fixed, so neither endpoint ever contributes a
log term. Fresh weighted states start at the LLR sentinel rather than 0:
starting at 0 would leak an unweighted restart into channels i >= 2 at k=1,
while the sentinel start reproduces the enumeration definition exactly (the
j=0 path supplies the fresh-start mass). The oracle-equality tests pin this
down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from .models import LLR_SENTINEL, PhaseModel, log_likelihood_ratio

__all__ = [
    "DCUSUM",
    "WDCUSUM",
    "CUSUM",
    "KINDS",
    "ConfigError",
    "StreamEnded",
    "DetectorConfig",
    "DetectorState",
    "StepOutcome",
    "RunResult",
    "initial_state",
    "dcusum_step",
    "wdcusum_step",
    "classical_cusum_step",
    "step",
    "run_until_stop",
    "wd_weight_tables",
]

DCUSUM = "dcusum"
WDCUSUM = "wdcusum"
CUSUM = "cusum"
KINDS = (DCUSUM, WDCUSUM, CUSUM)


class ConfigError(ValueError):
    """Detector configuration inconsistent with itself or with the model."""


class StreamEnded(RuntimeError):
    """Observation source exhausted before crossing and before max_steps."""


@dataclass(frozen=True)
class DetectorConfig:
    kind: str
    threshold: float
    rho: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if not math.isfinite(self.threshold) or self.threshold <= 0.0:
            raise ConfigError(f"threshold must be positive and finite, got {self.threshold}")
        if self.kind == WDCUSUM:
            if any(not 0.0 < r < 1.0 for r in self.rho):
                raise ConfigError(f"weights must lie strictly in (0, 1), got {self.rho}")
        elif self.rho:
            raise ConfigError(f"{self.kind} takes no weights, got rho={self.rho}")

    @property
    def strict_crossing(self) -> bool:
        """True when the alarm comparison is strict (> b); the weighted rule uses >= b."""
        return self.kind != WDCUSUM

    def crossed(self, statistic: float) -> bool:
        if self.strict_crossing:
            return statistic > self.threshold
        return statistic >= self.threshold

    def validate_for(self, model: PhaseModel) -> None:
        if self.kind == CUSUM and model.L != 1:
            raise ConfigError(f"classical cusum needs a single-phase model, got L={model.L}")
        if self.kind == WDCUSUM and len(self.rho) != model.L - 1:
            raise ConfigError(f"wdcusum needs L-1 = {model.L - 1} weights, got {len(self.rho)}")


@dataclass
class DetectorState:
    """Mutable per-stream state: the channel vector plus sample count.

    One state is owned by one stream. ``stopped_at`` latches the first
    crossing; callers may keep stepping past it for diagnostics.
    """

    omega: list[float]
    k: int = 0
    stopped_at: int | None = None

    def statistic(self) -> float:
        m = 0.0
        for w in self.omega:
            if w > m:
                m = w
        return m

    def regenerated(self) -> bool:
        return self.statistic() == 0.0


@dataclass(frozen=True)
class StepOutcome:
    statistic: float
    regenerated: bool
    crossed: bool


@dataclass(frozen=True)
class RunResult:
    stop_time: int | None
    final_statistic: float
    censored: bool
    steps: int


def initial_state(model: PhaseModel, kind: str) -> DetectorState:
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == WDCUSUM:
        return DetectorState(omega=[LLR_SENTINEL] * model.L)
    return DetectorState(omega=[0.0] * model.L)


@lru_cache(maxsize=128)
def wd_weight_tables(rho: tuple[float, ...]) -> tuple[tuple[tuple[float, ...], ...], tuple[float, ...]]:
    """Precomputed weight sums for the weighted update.

    Returns ``(wcum, log1m)`` where ``wcum[j][i] = sum_{l=j}^{i-1} log rho_l``
    (rho_0 = 1 contributes 0) for 0 <= j <= i <= L, and ``log1m[i-1] =
    log(1 - rho_i)`` with the final entry 0 for the persistent phase.
    """
    L = len(rho) + 1
    log_rho = (0.0,) + tuple(math.log(r) for r in rho)
    wcum = []
    for j in range(L + 1):
        row = [0.0] * (L + 1)
        acc = 0.0
        for i in range(j + 1, L + 1):
            acc = acc + log_rho[i - 1]
            row[i] = acc
        wcum.append(tuple(row))
    log1m = tuple(math.log1p(-r) for r in rho) + (0.0,)
    return tuple(wcum), log1m


def _outcome(state: DetectorState, threshold: float | None, strict: bool) -> StepOutcome:
    stat = state.statistic()
    crossed = False
    if threshold is not None:
        crossed = stat > threshold if strict else stat >= threshold
        if crossed and state.stopped_at is None:
            state.stopped_at = state.k
    return StepOutcome(statistic=stat, regenerated=stat == 0.0, crossed=crossed)


def dcusum_step(model: PhaseModel, state: DetectorState, x: float, threshold: float | None = None) -> StepOutcome:
    """One dynamic-CuSum update: omega_i = max(0, omega_1..omega_i) + Z_i(x).

    Prefix maxima are taken over the previous state only; all channels update
    simultaneously.
    """
    L = model.L
    prev = state.omega
    new = [0.0] * L
    m = 0.0
    for i in range(L):
        w = prev[i]
        if w > m:
            m = w
        new[i] = m + log_likelihood_ratio(model, i + 1, x)
    state.omega = new
    state.k += 1
    return _outcome(state, threshold, strict=True)


def wdcusum_step(
    model: PhaseModel,
    rho: Iterable[float],
    state: DetectorState,
    x: float,
    threshold: float | None = None,
) -> StepOutcome:
    """One weighted update; see the module docstring for the channel formula."""
    L = model.L
    rho = tuple(rho)
    if len(rho) != L - 1:
        raise ConfigError(f"wdcusum needs L-1 = {L - 1} weights, got {len(rho)}")
    wcum, log1m = wd_weight_tables(rho)
    prev = state.omega
    new = [0.0] * L
    for i in range(1, L + 1):
        best = wcum[0][i]
        for j in range(1, i + 1):
            cand = prev[j - 1] + wcum[j][i]
            if cand > best:
                best = cand
        new[i - 1] = best + log_likelihood_ratio(model, i, x) + log1m[i - 1]
    state.omega = new
    state.k += 1
    return _outcome(state, threshold, strict=False)


def classical_cusum_step(model: PhaseModel, state: DetectorState, x: float, threshold: float | None = None) -> StepOutcome:
    """Standalone single-phase CuSum: omega = max(omega, 0) + Z_1(x)."""
    if model.L != 1:
        raise ConfigError(f"classical cusum needs a single-phase model, got L={model.L}")
    w = state.omega[0]
    base = w if w > 0.0 else 0.0
    state.omega = [base + log_likelihood_ratio(model, 1, x)]
    state.k += 1
    return _outcome(state, threshold, strict=True)


def step(model: PhaseModel, config: DetectorConfig, state: DetectorState, x: float) -> StepOutcome:
    if config.kind == DCUSUM:
        return dcusum_step(model, state, x, threshold=config.threshold)
    if config.kind == WDCUSUM:
        return wdcusum_step(model, config.rho, state, x, threshold=config.threshold)
    return classical_cusum_step(model, state, x, threshold=config.threshold)


def run_until_stop(
    model: PhaseModel,
    config: DetectorConfig,
    stream: Iterable[float],
    max_steps: int,
) -> RunResult:
    """Consume observations until the kind-specific crossing, or censor.

    Raises StreamEnded if the source dries up first.
    """
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    config.validate_for(model)
    state = initial_state(model, config.kind)
    it = iter(stream)
    last = 0.0
    for k in range(1, max_steps + 1):
        try:
            x = next(it)
        except StopIteration:
            raise StreamEnded(f"stream ended after {k - 1} samples without crossing") from None
        out = step(model, config, state, x)
        last = out.statistic
        if out.crossed:
            return RunResult(stop_time=k, final_statistic=out.statistic, censored=False, steps=k)
    return RunResult(stop_time=None, final_statistic=last, censored=True, steps=max_steps)
