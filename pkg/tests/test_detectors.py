import math

import numpy as np
import pytest

from qcd.detectors import (
    ConfigError,
    DetectorConfig,
    StreamEnded,
    classical_cusum_step,
    dcusum_step,
    initial_state,
    run_until_stop,
    step,
    wd_weight_tables,
    wdcusum_step,
)
from qcd.models import LLR_SENTINEL, log_likelihood_ratio
from qcd.simulate import ScenarioSpec, StreamSampler, trial_rng
from util import random_gauss_model, random_step_model, seeded_stream


class TestConfig:
    def test_threshold_must_be_positive(self):
        with pytest.raises(ConfigError):
            DetectorConfig(kind="dcusum", threshold=0.0)
        with pytest.raises(ConfigError):
            DetectorConfig(kind="dcusum", threshold=-1.0)

    def test_weights_strictly_inside_unit_interval(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ConfigError):
                DetectorConfig(kind="wdcusum", threshold=1.0, rho=(bad,))

    def test_rho_only_for_weighted(self):
        with pytest.raises(ConfigError):
            DetectorConfig(kind="dcusum", threshold=1.0, rho=(0.1,))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DetectorConfig(kind="page", threshold=1.0)

    def test_validate_for_model(self, fast_gauss2, gauss1):
        DetectorConfig(kind="cusum", threshold=1.0).validate_for(gauss1)
        with pytest.raises(ConfigError):
            DetectorConfig(kind="cusum", threshold=1.0).validate_for(fast_gauss2)
        with pytest.raises(ConfigError):
            DetectorConfig(kind="wdcusum", threshold=1.0, rho=(0.1, 0.2)).validate_for(fast_gauss2)

    def test_crossing_comparisons(self):
        d = DetectorConfig(kind="dcusum", threshold=2.0)
        w = DetectorConfig(kind="wdcusum", threshold=2.0, rho=(0.1,))
        assert not d.crossed(2.0) and d.crossed(2.0000001)
        assert w.crossed(2.0) and not w.crossed(1.9999999)


class TestInitialState:
    def test_dcusum_starts_at_zero(self, fast_gauss2):
        st = initial_state(fast_gauss2, "dcusum")
        assert st.omega == [0.0, 0.0] and st.k == 0 and st.stopped_at is None
        assert st.statistic() == 0.0

    def test_wdcusum_starts_at_sentinel(self, fast_gauss2):
        st = initial_state(fast_gauss2, "wdcusum")
        assert st.omega == [LLR_SENTINEL, LLR_SENTINEL]
        assert st.statistic() == 0.0  # positive part clamps the sentinels


class TestSingleStepValues:
    def test_dcusum_first_sample(self, step2):
        st = initial_state(step2, "dcusum")
        out = dcusum_step(step2, st, 0.5)
        z1 = log_likelihood_ratio(step2, 1, 0.5)
        z2 = log_likelihood_ratio(step2, 2, 0.5)
        assert st.omega == [z1, z2]
        assert out.statistic == pytest.approx(0.47, abs=1e-2)
        assert not out.regenerated and not out.crossed

    def test_wdcusum_first_sample(self, step2):
        st = initial_state(step2, "wdcusum")
        wdcusum_step(step2, (0.001,), st, 0.5)
        z1 = log_likelihood_ratio(step2, 1, 0.5)
        z2 = log_likelihood_ratio(step2, 2, 0.5)
        assert st.omega[0] == 0.0 + z1 + math.log1p(-0.001)
        assert st.omega[1] == math.log(0.001) + z2

    def test_regeneration_on_negative_evidence(self, fast_gauss2):
        st = initial_state(fast_gauss2, "dcusum")
        out = dcusum_step(fast_gauss2, st, -5.0)  # both ratios strongly negative
        assert out.statistic == 0.0 and out.regenerated

    def test_statistic_nonnegative_along_path(self, fast_gauss2):
        xs = seeded_stream(fast_gauss2, ScenarioSpec.no_change(), 21, 0, 300)
        st = initial_state(fast_gauss2, "dcusum")
        for x in xs:
            out = dcusum_step(fast_gauss2, st, float(x))
            assert out.statistic >= 0.0
            assert out.regenerated == (out.statistic == 0.0)


class TestWeightTables:
    def test_l2_tables(self):
        wcum, log1m = wd_weight_tables((0.01,))
        assert wcum[0][1] == 0.0
        assert wcum[0][2] == math.log(0.01)
        assert wcum[1][2] == math.log(0.01)
        assert wcum[2][2] == 0.0
        assert log1m == (math.log1p(-0.01), 0.0)

    def test_l3_tables(self):
        r1, r2 = 0.05, 0.2
        wcum, log1m = wd_weight_tables((r1, r2))
        assert wcum[0][3] == math.log(r1) + math.log(r2)
        assert wcum[1][3] == math.log(r1) + math.log(r2)
        assert wcum[2][3] == math.log(r2)
        assert wcum[3][3] == 0.0
        assert log1m[2] == 0.0


def _generic_weighted_step(model, wcum, log1m, prev, x):
    """The weighted update with injectable tables; mirrors wdcusum_step."""
    L = model.L
    new = [0.0] * L
    for i in range(1, L + 1):
        best = wcum[0][i]
        for j in range(1, i + 1):
            cand = prev[j - 1] + wcum[j][i]
            if cand > best:
                best = cand
        new[i - 1] = best + log_likelihood_ratio(model, i, x) + log1m[i - 1]
    return new


class TestReductions:
    def test_weighted_update_with_zero_weights_is_dynamic_update(self, fast_gauss2):
        # with every log-weight removed, the weighted recursion is the plain one
        L = fast_gauss2.L
        zero_wcum = tuple(tuple(0.0 for _ in range(L + 1)) for _ in range(L + 1))
        zero_log1m = (0.0,) * L
        xs = seeded_stream(fast_gauss2, ScenarioSpec(v1=10, durations=(10,)), 22, 0, 200)
        d_state = initial_state(fast_gauss2, "dcusum")
        w_prev = [0.0] * L
        for x in xs:
            w_prev = _generic_weighted_step(fast_gauss2, zero_wcum, zero_log1m, w_prev, float(x))
            dcusum_step(fast_gauss2, d_state, float(x))
            assert w_prev == d_state.omega

    def test_l1_dcusum_equals_classical_cusum_bitwise(self, gauss1):
        xs = seeded_stream(gauss1, ScenarioSpec(v1=5_000), 23, 0, 10_000)
        dyn = initial_state(gauss1, "dcusum")
        plain = initial_state(gauss1, "cusum")
        for x in xs:
            a = dcusum_step(gauss1, dyn, float(x))
            b = classical_cusum_step(gauss1, plain, float(x))
            assert a.statistic == b.statistic
            assert dyn.omega == plain.omega

    def test_l1_weighted_equals_dynamic(self, gauss1):
        # no transient phases means no weights at all
        xs = seeded_stream(gauss1, ScenarioSpec(v1=50), 24, 0, 500)
        dyn = initial_state(gauss1, "dcusum")
        wgt = initial_state(gauss1, "wdcusum")
        wdcusum_step(gauss1, (), wgt, float(xs[0]))
        dcusum_step(gauss1, dyn, float(xs[0]))
        # sentinel start differs from zero start only until the first positive part
        for x in xs[1:]:
            a = dcusum_step(gauss1, dyn, float(x))
            b = wdcusum_step(gauss1, (), wgt, float(x))
        assert a.statistic == b.statistic


class TestSpecializedTwoPhaseUpdate:
    def test_general_recursion_matches_closed_form_bitwise(self, slow_gauss2):
        rho1 = 0.01
        log_rho1 = math.log(rho1)
        log1m = math.log1p(-rho1)
        xs = seeded_stream(slow_gauss2, ScenarioSpec(v1=20, durations=(30,)), 25, 0, 400)
        st = initial_state(slow_gauss2, "wdcusum")
        spec_prev = list(st.omega)
        for x in xs:
            z1 = log_likelihood_ratio(slow_gauss2, 1, float(x))
            z2 = log_likelihood_ratio(slow_gauss2, 2, float(x))
            o1 = (spec_prev[0] if spec_prev[0] > 0.0 else 0.0) + z1 + log1m
            o2 = max(log_rho1, spec_prev[0] + log_rho1, spec_prev[1]) + z2
            wdcusum_step(slow_gauss2, (rho1,), st, float(x))
            assert st.omega[0] == o1
            assert st.omega[1] == o2
            spec_prev = [o1, o2]


class TestOrdering:
    def test_weighted_below_unweighted_with_bounded_gap(self):
        rng = np.random.default_rng(26)
        for trial in range(20):
            L = int(rng.integers(1, 4))
            model = random_gauss_model(rng, L) if trial % 2 == 0 else random_step_model(rng, L)
            rho = tuple(float(r) for r in rng.uniform(0.01, 0.4, size=L - 1))
            xs = seeded_stream(model, ScenarioSpec(v1=4, durations=(3,) * (L - 1)), 27, trial, 40)
            d_state = initial_state(model, "dcusum")
            w_state = initial_state(model, "wdcusum")
            gap_rate = max((abs(math.log1p(-r)) for r in rho), default=0.0)
            gap_const = sum(abs(math.log(r)) for r in rho)
            for k, x in enumerate(xs, start=1):
                d = dcusum_step(model, d_state, float(x)).statistic
                w = wdcusum_step(model, rho, w_state, float(x)).statistic
                assert w <= d + 1e-9
                assert d - w <= k * gap_rate + gap_const + 1e-9


class TestDriftWithinTransient:
    def test_mean_increment_conditioned_on_positive_channel(self):
        # on phase-1 data the first weighted channel drifts at I1 + log(1-rho1)
        from qcd.models import Gaussian, PhaseModel

        model = PhaseModel((Gaussian(0, 1), Gaussian(1, 1), Gaussian(0.5, 1)))
        rho = (0.05,)
        n = 100_000
        xs = StreamSampler(model, ScenarioSpec(v1=1, durations=(math.inf,)), trial_rng(28, (), 0)).take(n)
        st = initial_state(model, "wdcusum")
        increments = []
        prev = st.omega[0]
        for x in xs:
            wdcusum_step(model, rho, st, float(x))
            if prev > 0.0:
                increments.append(st.omega[0] - prev)
            prev = st.omega[0]
        inc = np.asarray(increments)
        target = model.kl[0] + math.log1p(-rho[0])
        se = float(np.std(inc, ddof=1) / math.sqrt(len(inc)))
        assert abs(float(np.mean(inc)) - target) <= 3 * se


class TestMarkovRestart:
    def test_restart_at_regeneration_reproduces_suffix(self, fast_gauss2):
        xs = seeded_stream(fast_gauss2, ScenarioSpec.no_change(), 29, 0, 200)
        st = initial_state(fast_gauss2, "dcusum")
        path = [dcusum_step(fast_gauss2, st, float(x)).statistic for x in xs]
        zeros = [i for i, s in enumerate(path) if s == 0.0]
        assert zeros, "expected at least one regeneration on a no-change stream"
        cut = zeros[len(zeros) // 2] + 1
        st2 = initial_state(fast_gauss2, "dcusum")
        for i, x in enumerate(xs[cut:], start=cut):
            out = dcusum_step(fast_gauss2, st2, float(x))
            assert out.statistic == path[i]


class TestRunUntilStop:
    def test_immediate_crossing(self, step2):
        cfg = DetectorConfig(kind="dcusum", threshold=0.4)
        res = run_until_stop(step2, cfg, iter([0.5, 0.5]), max_steps=10)
        assert res.stop_time == 1 and not res.censored
        assert res.final_statistic > 0.4

    def test_unreachable_threshold_censors(self, step2):
        cfg = DetectorConfig(kind="dcusum", threshold=1e15)
        res = run_until_stop(step2, cfg, iter([0.5] * 100), max_steps=100)
        assert res.censored and res.stop_time is None and res.steps == 100

    def test_stream_ended(self, step2):
        cfg = DetectorConfig(kind="dcusum", threshold=1e15)
        with pytest.raises(StreamEnded):
            run_until_stop(step2, cfg, iter([0.5, 0.5]), max_steps=100)

    def test_strict_vs_inclusive_crossing(self, step2):
        # threshold set exactly at the first-step statistic: the weighted rule
        # stops (>=), the dynamic rule does not (>)
        st = initial_state(step2, "wdcusum")
        wdcusum_step(step2, (0.3,), st, 0.5)
        exact_w = st.statistic()
        res_w = run_until_stop(
            step2, DetectorConfig(kind="wdcusum", threshold=exact_w, rho=(0.3,)), iter([0.5]), max_steps=1
        )
        assert res_w.stop_time == 1

        st = initial_state(step2, "dcusum")
        dcusum_step(step2, st, 0.5)
        exact_d = st.statistic()
        res_d = run_until_stop(
            step2, DetectorConfig(kind="dcusum", threshold=exact_d), iter([0.5]), max_steps=1
        )
        assert res_d.censored

    def test_max_steps_validated(self, step2):
        with pytest.raises(ValueError):
            run_until_stop(step2, DetectorConfig(kind="dcusum", threshold=1.0), iter([]), max_steps=0)

    def test_config_checked_against_model(self, fast_gauss2):
        with pytest.raises(ConfigError):
            run_until_stop(fast_gauss2, DetectorConfig(kind="cusum", threshold=1.0), iter([0.5]), max_steps=5)


class TestLatching:
    def test_stopped_at_never_changes(self, step2):
        cfg = DetectorConfig(kind="dcusum", threshold=0.4)
        st = initial_state(step2, "dcusum")
        for _ in range(5):
            step(step2, cfg, st, 0.5)
        assert st.stopped_at == 1
        assert st.k == 5
