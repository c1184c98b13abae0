"""Seeded Monte Carlo estimation of run lengths, delays, and regeneration tails.

Every trial owns a counter-based RNG stream keyed by (master seed, context,
trial index), and the sampler draws in fixed-size blocks regardless of how
samples are consumed, so results are bit-identical no matter how many threads
execute the trials or how the detector chunks its reads. Aggregation is by
trial index, never by completion order.

Censoring: a trial that has not crossed by max_steps contributes max_steps to
the mean and is counted in n_censored. For run lengths that makes the
estimate a conservative lower bound, which is the safe direction when
certifying a false-alarm budget.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _engine
from .detectors import CUSUM, DCUSUM, WDCUSUM, DetectorConfig, wd_weight_tables
from .models import LLR_SENTINEL, PhaseModel, llr_matrix

__all__ = [
    "CHUNK",
    "InvalidScenario",
    "ScenarioSpec",
    "TrialResult",
    "StreamSampler",
    "sample_stream",
    "ArlEstimate",
    "WaddEstimate",
    "estimate_arl",
    "estimate_wadd",
    "OcRow",
    "OcReport",
    "oc_sweep",
    "RegenerationSurvey",
    "regeneration_survey",
    "trial_rng",
]

CHUNK = 8192


class InvalidScenario(ValueError):
    """Scenario inconsistent with the model or with the estimator's contract."""


def _as_time(v, name: str, minimum: int) -> float:
    if v == math.inf:
        return math.inf
    iv = int(v)
    if iv != v or iv < minimum:
        raise InvalidScenario(f"{name} must be an integer >= {minimum} or inf, got {v!r}")
    return float(iv)


@dataclass(frozen=True)
class ScenarioSpec:
    """Ground truth for one simulated stream: change point and phase durations.

    ``v1 = inf`` means no change ever happens (pure f0 stream). Durations of
    zero are legal (a transient phase may be skipped entirely); an infinite
    duration pins the stream in that phase forever.
    """

    v1: float
    durations: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "v1", _as_time(self.v1, "v1", 1))
        object.__setattr__(
            self, "durations", tuple(_as_time(d, "duration", 0) for d in self.durations)
        )

    @classmethod
    def no_change(cls) -> "ScenarioSpec":
        return cls(v1=math.inf)

    def validate_for(self, model: PhaseModel) -> None:
        if math.isinf(self.v1):
            return
        if len(self.durations) != model.L - 1:
            raise InvalidScenario(
                f"need L-1 = {model.L - 1} durations, got {len(self.durations)}"
            )

    def boundaries(self) -> tuple[float, ...]:
        """Phase start times v1..vL (entries become inf once unreachable)."""
        out = [self.v1]
        for d in self.durations:
            out.append(out[-1] + d)
        return tuple(out)

    def phase_at(self, k: int) -> int:
        """Phase index generating sample k (0 = pre-change)."""
        ph = 0
        for v in self.boundaries():
            if k >= v:
                ph += 1
            else:
                break
        return ph

    def scenario_id(self) -> str:
        if math.isinf(self.v1):
            return "v1=inf"
        def fmt(v: float) -> str:
            return "inf" if math.isinf(v) else str(int(v))
        head = f"v1={fmt(self.v1)}"
        if not self.durations:
            return head
        return head + ";d=" + ",".join(fmt(d) for d in self.durations)


@dataclass(frozen=True)
class TrialResult:
    stop_time: int | None
    crossed_in_phase: int | None


class StreamSampler:
    """Lazy phase-indexed observation source.

    Draws happen in fixed blocks of ``CHUNK`` samples split by phase
    boundaries, so the emitted sequence depends only on the RNG state, not on
    whether the consumer iterates one sample at a time or takes whole arrays.
    """

    def __init__(self, model: PhaseModel, scenario: ScenarioSpec, rng: np.random.Generator):
        scenario.validate_for(model)
        self._densities = model.densities
        self._scenario = scenario
        self._bounds = [b for b in scenario.boundaries() if not math.isinf(b)]
        self._rng = rng
        self._drawn = 0
        self._buf = np.empty(0)
        self._pos = 0

    def _refill(self) -> None:
        start = self._drawn + 1
        end = self._drawn + CHUNK
        parts = []
        cur = start
        while cur <= end:
            ph = self._scenario.phase_at(cur)
            nxt = math.inf
            for b in self._bounds:
                if b > cur:
                    nxt = b
                    break
            seg_end = min(end, nxt - 1)
            parts.append(self._densities[ph].sample(self._rng, int(seg_end - cur + 1)))
            cur = int(seg_end) + 1
        self._buf = parts[0] if len(parts) == 1 else np.concatenate(parts)
        self._pos = 0
        self._drawn = end

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= self._buf.shape[0]:
                self._refill()
            avail = self._buf.shape[0] - self._pos
            m = min(avail, n - filled)
            out[filled : filled + m] = self._buf[self._pos : self._pos + m]
            self._pos += m
            filled += m
        return out

    def __iter__(self) -> Iterator[float]:
        return self

    def __next__(self) -> float:
        if self._pos >= self._buf.shape[0]:
            self._refill()
        v = float(self._buf[self._pos])
        self._pos += 1
        return v


def sample_stream(model: PhaseModel, scenario: ScenarioSpec, rng: np.random.Generator) -> StreamSampler:
    """Observation source X_1, X_2, ... with the phase-indexed density."""
    return StreamSampler(model, scenario, rng)


def trial_rng(master_seed: int, key: tuple[int, ...], trial: int) -> np.random.Generator:
    """Counter-based stream for one trial; injective in (master_seed, key, trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((master_seed, *key, trial))))


# --- fast-path trial runner ---------------------------------------------------


def _prepared_tables(model: PhaseModel, config: DetectorConfig):
    if config.kind == WDCUSUM:
        wcum, log1m = wd_weight_tables(config.rho)
        return np.asarray(wcum, dtype=np.float64), np.asarray(log1m, dtype=np.float64)
    return None, None


def _initial_omega(model: PhaseModel, kind: str) -> np.ndarray:
    if kind == WDCUSUM:
        return np.full(model.L, LLR_SENTINEL)
    return np.zeros(model.L)


def _run_trial_stop(
    model: PhaseModel,
    config: DetectorConfig,
    scenario: ScenarioSpec,
    rng: np.random.Generator,
    max_steps: int,
    wcum: np.ndarray | None,
    log1m: np.ndarray | None,
) -> int | None:
    sampler = StreamSampler(model, scenario, rng)
    omega = _initial_omega(model, config.kind)
    b = config.threshold
    done = 0
    while done < max_steps:
        m = min(CHUNK, max_steps - done)
        z = llr_matrix(model, sampler.take(m))
        if config.kind == WDCUSUM:
            off = _engine.wdcusum_until_cross(z, omega, wcum, log1m, b)
        else:
            off = _engine.dcusum_until_cross(z, omega, b, True)
        if off >= 0:
            return done + int(off) + 1
        done += m
    return None


def _stop_times(
    model: PhaseModel,
    config: DetectorConfig,
    scenario: ScenarioSpec,
    n_trials: int,
    max_steps: int,
    master_seed: int,
    threads: int,
    key: tuple[int, ...],
) -> np.ndarray:
    """Stop time per trial index (-1 when censored); order-independent."""
    config.validate_for(model)
    scenario.validate_for(model)
    wcum, log1m = _prepared_tables(model, config)

    def one(i: int) -> int:
        rng = trial_rng(master_seed, key, i)
        st = _run_trial_stop(model, config, scenario, rng, max_steps, wcum, log1m)
        return -1 if st is None else st

    out = np.empty(n_trials, dtype=np.int64)
    if threads <= 1:
        for i in range(n_trials):
            out[i] = one(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, v in enumerate(pool.map(one, range(n_trials))):
                out[i] = v
    return out


# --- estimators ---------------------------------------------------------------


@dataclass(frozen=True)
class ArlEstimate:
    mean: float
    stderr: float
    n_trials: int
    n_censored: int
    max_steps: int

    @property
    def is_lower_estimate(self) -> bool:
        return self.n_censored > 0


@dataclass(frozen=True)
class WaddEstimate:
    mean: float
    stderr: float
    n_trials: int
    n_censored: int
    max_steps: int
    phase_histogram: tuple[int, ...]


def _mean_se(times: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(times))
    se = float(np.std(times, ddof=1) / math.sqrt(times.shape[0])) if times.shape[0] > 1 else 0.0
    return mean, se


def estimate_arl(
    model: PhaseModel,
    config: DetectorConfig,
    n_trials: int,
    max_steps: int,
    master_seed: int,
    threads: int = 1,
    key: tuple[int, ...] = (),
) -> ArlEstimate:
    """Mean stopping time over independent no-change streams.

    Censored trials contribute max_steps, so with censoring the mean is a
    reported lower estimate of the true run length.
    """
    if n_trials < 100:
        raise ValueError(f"need at least 100 trials for a usable estimate, got {n_trials}")
    stops = _stop_times(model, config, ScenarioSpec.no_change(), n_trials, max_steps, master_seed, threads, key)
    censored = int(np.sum(stops < 0))
    times = np.where(stops < 0, max_steps, stops).astype(np.float64)
    mean, se = _mean_se(times)
    return ArlEstimate(mean=mean, stderr=se, n_trials=n_trials, n_censored=censored, max_steps=max_steps)


def estimate_wadd(
    model: PhaseModel,
    config: DetectorConfig,
    scenario: ScenarioSpec,
    n_trials: int,
    max_steps: int,
    master_seed: int,
    threads: int = 1,
    key: tuple[int, ...] = (),
) -> WaddEstimate:
    """Mean detection delay with the change at the first sample.

    The worst case over change points is attained at v1 = 1 for both
    recursions (a fresh state is the least favorable pre-change history), so
    only v1 = 1 scenarios are accepted. The phase histogram counts which
    phase each trial crossed in.
    """
    if scenario.v1 != 1:
        raise InvalidScenario(f"delay estimation requires v1 = 1, got v1={scenario.v1}")
    if n_trials < 1:
        raise ValueError("need at least one trial")
    stops = _stop_times(model, config, scenario, n_trials, max_steps, master_seed, threads, key)
    censored = int(np.sum(stops < 0))
    times = np.where(stops < 0, max_steps, stops).astype(np.float64)
    mean, se = _mean_se(times)
    hist = [0] * (model.L + 1)
    for st in stops:
        if st >= 0:
            hist[scenario.phase_at(int(st))] += 1
    return WaddEstimate(
        mean=mean,
        stderr=se,
        n_trials=n_trials,
        n_censored=censored,
        max_steps=max_steps,
        phase_histogram=tuple(hist),
    )


# --- operating-characteristic sweeps -----------------------------------------


@dataclass(frozen=True)
class OcRow:
    threshold: float
    arl: float
    arl_se: float
    arl_trials: int
    arl_censored: int
    scenario_id: str
    wadd: float
    wadd_se: float
    wadd_trials: int
    wadd_censored: int


@dataclass(frozen=True)
class OcReport:
    """Threshold sweep: one row per (threshold, delay scenario).

    The CSV carries the row's delay trial counts; run-length trial counts and
    censoring live in the JSON mirror (fields arl_trials / arl_censored).
    """

    rows: tuple[OcRow, ...]

    CSV_HEADER = "b,arl,arl_se,scenario_id,wadd,wadd_se,n_trials,n_censored"

    def to_csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.threshold!r},{r.arl!r},{r.arl_se!r},{r.scenario_id},"
                f"{r.wadd!r},{r.wadd_se!r},{r.wadd_trials},{r.wadd_censored}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {
                    "b": r.threshold,
                    "arl": r.arl,
                    "arl_se": r.arl_se,
                    "arl_trials": r.arl_trials,
                    "arl_censored": r.arl_censored,
                    "scenario_id": r.scenario_id,
                    "wadd": r.wadd,
                    "wadd_se": r.wadd_se,
                    "n_trials": r.wadd_trials,
                    "n_censored": r.wadd_censored,
                }
                for r in self.rows
            ]
        }


def _default_arl_max_steps(threshold: float) -> int:
    # 50x the guaranteed run-length scale, capped to keep sweeps tractable;
    # censoring only makes the estimate more conservative.
    return int(min(50.0 * math.exp(threshold), 1_000_000.0))


def _default_wadd_max_steps(threshold: float, kl) -> int:
    return int(min(50.0 * threshold / min(kl) + 1_000.0, 1_000_000.0))


def oc_sweep(
    model: PhaseModel,
    kind: str,
    rho: tuple[float, ...],
    thresholds,
    scenarios,
    n_trials: int,
    master_seed: int,
    arl_trials: int = 2_000,
    arl_max_steps: int | None = None,
    wadd_max_steps: int | None = None,
    threads: int = 1,
) -> OcReport:
    """Run-length and delay estimates across a threshold grid.

    Deterministic in master_seed: each (threshold, scenario, trial) gets its
    own RNG stream, so the report is identical for any thread count.
    """
    thresholds = [float(b) for b in thresholds]
    if any(b2 <= b1 for b1, b2 in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be strictly ascending, got {thresholds}")
    scenarios = list(scenarios)
    rows = []
    for bi, b in enumerate(thresholds):
        config = DetectorConfig(kind=kind, threshold=b, rho=tuple(rho))
        config.validate_for(model)
        arl = estimate_arl(
            model,
            config,
            n_trials=arl_trials,
            max_steps=arl_max_steps if arl_max_steps is not None else _default_arl_max_steps(b),
            master_seed=master_seed,
            threads=threads,
            key=(0, bi),
        )
        for si, scen in enumerate(scenarios):
            wadd = estimate_wadd(
                model,
                config,
                scen,
                n_trials=n_trials,
                max_steps=wadd_max_steps if wadd_max_steps is not None else _default_wadd_max_steps(b, model.kl),
                master_seed=master_seed,
                threads=threads,
                key=(1, bi, si),
            )
            rows.append(
                OcRow(
                    threshold=b,
                    arl=arl.mean,
                    arl_se=arl.stderr,
                    arl_trials=arl.n_trials,
                    arl_censored=arl.n_censored,
                    scenario_id=scen.scenario_id(),
                    wadd=wadd.mean,
                    wadd_se=wadd.stderr,
                    wadd_trials=wadd.n_trials,
                    wadd_censored=wadd.n_censored,
                )
            )
    return OcReport(rows=tuple(rows))


# --- regeneration diagnostics -------------------------------------------------


@dataclass(frozen=True)
class RegenerationSurvey:
    """Empirical tail of the first time the dynamic-CuSum statistic hits 0."""

    m_grid: tuple[int, ...]
    survival: tuple[float, ...]
    n_trials: int
    n_steps: int
    n_never: int
    first_zero: tuple[int, ...]  # per-trial first hit; n_steps+1 means never within budget

    def survival_stderr(self, idx: int) -> float:
        p = self.survival[idx]
        return math.sqrt(p * (1.0 - p) / self.n_trials)


def regeneration_survey(
    model: PhaseModel,
    n_steps: int,
    n_trials: int,
    master_seed: int,
    m_grid=None,
    threads: int = 1,
) -> RegenerationSurvey:
    """Tail estimates P(no regeneration by m) under the no-change measure.

    Runs the dynamic CuSum from a fresh state on f0 streams and records the
    first step whose positive-part statistic is exactly zero.
    """
    if n_steps < 1_000:
        raise ValueError(f"need n_steps >= 1000 for a meaningful tail, got {n_steps}")
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if m_grid is None:
        m_grid = np.unique(np.round(np.geomspace(1, n_steps, 40)).astype(int))
    m_grid = tuple(int(m) for m in m_grid)
    scenario = ScenarioSpec.no_change()

    def one(i: int) -> int:
        rng = trial_rng(master_seed, (2,), i)
        sampler = StreamSampler(model, scenario, rng)
        omega = np.zeros(model.L)
        done = 0
        while done < n_steps:
            m = min(CHUNK, n_steps - done)
            z = llr_matrix(model, sampler.take(m))
            off = _engine.dcusum_first_zero(z, omega)
            if off >= 0:
                return done + int(off) + 1
            done += m
        return n_steps + 1

    first = np.empty(n_trials, dtype=np.int64)
    if threads <= 1:
        for i in range(n_trials):
            first[i] = one(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, v in enumerate(pool.map(one, range(n_trials))):
                first[i] = v
    survival = tuple(float(np.mean(first > m)) for m in m_grid)
    return RegenerationSurvey(
        m_grid=m_grid,
        survival=survival,
        n_trials=n_trials,
        n_steps=n_steps,
        n_never=int(np.sum(first > n_steps)),
        first_zero=tuple(int(v) for v in first),
    )
