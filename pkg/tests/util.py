"""Shared helpers for building randomized models and streams in tests."""

from __future__ import annotations

import numpy as np

from qcd.models import Gaussian, PhaseModel, PiecewiseConstant
from qcd.simulate import ScenarioSpec, StreamSampler, trial_rng


def random_gauss_model(rng: np.random.Generator, L: int) -> PhaseModel:
    densities = [Gaussian(0.0, 1.0)]
    for _ in range(L):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        densities.append(Gaussian(sign * float(rng.uniform(0.25, 2.0)), float(rng.uniform(0.7, 1.4))))
    return PhaseModel(tuple(densities))


STEP_BREAKS = (0.0, 0.5, 1.0, 1.5, 2.0)


def random_step_model(rng: np.random.Generator, L: int) -> PhaseModel:
    widths = np.diff(STEP_BREAKS)

    def one() -> PiecewiseConstant:
        h = rng.uniform(0.2, 1.0, size=len(widths))
        h = h / float(np.sum(h * widths))
        return PiecewiseConstant(STEP_BREAKS, tuple(float(v) for v in h))

    return PhaseModel(tuple(one() for _ in range(L + 1)))


def random_scenario(rng: np.random.Generator, L: int, max_v1: int = 8, max_d: int = 8) -> ScenarioSpec:
    v1 = int(rng.integers(1, max_v1 + 1))
    durations = tuple(int(rng.integers(0, max_d + 1)) for _ in range(L - 1))
    return ScenarioSpec(v1=v1, durations=durations)


def seeded_stream(model: PhaseModel, scenario: ScenarioSpec, seed: int, idx: int, k: int) -> np.ndarray:
    return StreamSampler(model, scenario, trial_rng(seed, (), idx)).take(k)
