import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcd.models import (
    LLR_SENTINEL,
    DivergentKl,
    Gaussian,
    ModelError,
    OutOfSupport,
    PhaseModel,
    PiecewiseConstant,
    estimate_alpha,
    kl_between,
    kl_divergence,
    kl_quadrature,
    llr_array,
    llr_matrix,
    load_model,
    log_likelihood_ratio,
    model_from_dict,
    model_to_dict,
    phi,
    phi_array,
)
from util import random_gauss_model, random_step_model


class TestDensityValidation:
    def test_gaussian_rejects_bad_stdev(self):
        with pytest.raises(ModelError):
            Gaussian(0.0, 0.0)
        with pytest.raises(ModelError):
            Gaussian(0.0, -1.0)
        with pytest.raises(ModelError):
            Gaussian(math.nan, 1.0)

    def test_step_rejects_unnormalized(self):
        with pytest.raises(ModelError, match="mass"):
            PiecewiseConstant((0, 1, 2), (0.8, 0.3))

    def test_step_rejects_bad_breakpoints(self):
        with pytest.raises(ModelError):
            PiecewiseConstant((0, 0, 2), (0.5, 0.5))
        with pytest.raises(ModelError):
            PiecewiseConstant((2, 0), (0.5,))
        with pytest.raises(ModelError):
            PiecewiseConstant((0,), ())

    def test_step_rejects_negative_heights(self):
        with pytest.raises(ModelError):
            PiecewiseConstant((0, 1, 2), (1.5, -0.5))

    def test_step_mass_tolerance_is_tight(self):
        # off by 1e-10 must be rejected, off by < 1e-12 accepted
        with pytest.raises(ModelError):
            PiecewiseConstant((0.0, 1.0), (1.0 + 1e-10,))
        PiecewiseConstant((0.0, 1.0), (1.0,))

    def test_phase_model_needs_positive_finite_kl(self):
        with pytest.raises(ModelError):
            PhaseModel((Gaussian(0, 1), Gaussian(0, 1)))  # KL = 0
        with pytest.raises(DivergentKl):
            PhaseModel((PiecewiseConstant((0, 1), (1.0,)), Gaussian(0, 1)))  # gaussian over step


class TestStepEvaluation:
    def test_boundary_conventions(self):
        d = PiecewiseConstant((0, 1, 2), (0.8, 0.2))
        assert d.pdf(0.0) == 0.8
        assert d.pdf(1.0) == 0.2  # interior breakpoints belong to the right piece
        assert d.pdf(2.0) == 0.2  # the right edge belongs to the support
        assert d.pdf(-0.01) == 0.0
        assert d.pdf(2.01) == 0.0

    def test_scalar_and_array_logpdf_agree_exactly(self):
        rng = np.random.default_rng(0)
        heights = (0.3, 1.1, (1.0 - 0.3 * 0.5 - 1.1 * 0.5) / 1.0)
        for d in (PiecewiseConstant((0, 0.5, 1.0, 2), heights), Gaussian(0.7, 1.3)):
            xs = rng.uniform(-1, 3, size=200)
            arr = d.logpdf_array(xs)
            for x, v in zip(xs, arr):
                assert d.logpdf(float(x)) == v


class TestLogLikelihoodRatio:
    def test_gaussian_midpoint_is_zero(self, fast_gauss2):
        assert log_likelihood_ratio(fast_gauss2, 1, 1.5) == 0.0

    def test_gaussian_closed_form_at_zero(self, fast_gauss2):
        assert log_likelihood_ratio(fast_gauss2, 1, 0.0) == -4.5

    def test_step_ratio_of_heights(self, step2):
        assert log_likelihood_ratio(step2, 1, 0.5) == pytest.approx(0.470004, abs=1e-6)

    def test_sentinel_when_numerator_vanishes(self):
        model = PhaseModel(
            (PiecewiseConstant((0, 2), (0.5,)), PiecewiseConstant((0, 1, 2), (1.0, 0.0)))
        )
        assert log_likelihood_ratio(model, 1, 1.5) == LLR_SENTINEL
        assert llr_array(model, 1, np.array([0.5, 1.5])).tolist() == [
            math.log(2.0),
            LLR_SENTINEL,
        ]

    def test_out_of_support_raises(self, step2):
        with pytest.raises(OutOfSupport):
            log_likelihood_ratio(step2, 1, 2.5)
        with pytest.raises(OutOfSupport):
            llr_matrix(step2, np.array([0.5, -1.0]))

    def test_phase_index_validated(self, fast_gauss2):
        with pytest.raises(ValueError):
            log_likelihood_ratio(fast_gauss2, 0, 1.0)
        with pytest.raises(ValueError):
            log_likelihood_ratio(fast_gauss2, 3, 1.0)

    @given(
        m1=st.floats(-3, 3),
        m0=st.floats(-3, 3),
        s1=st.floats(0.5, 2),
        s0=st.floats(0.5, 2),
        x=st.floats(-10, 10),
    )
    @settings(max_examples=200)
    def test_antisymmetry_is_exact(self, m1, m0, s1, s0, x):
        if abs(m1 - m0) < 1e-3 and abs(s1 - s0) < 1e-3:
            return  # construction would reject near-zero divergence
        fwd = PhaseModel((Gaussian(m0, s0), Gaussian(m1, s1)))
        rev = PhaseModel((Gaussian(m1, s1), Gaussian(m0, s0)))
        assert log_likelihood_ratio(fwd, 1, x) == -log_likelihood_ratio(rev, 1, x)

    def test_scalar_matches_matrix(self, fast_gauss2, step2):
        rngs = np.random.default_rng(7)
        for model, lo, hi in ((fast_gauss2, -4, 6), (step2, 0, 2)):
            xs = rngs.uniform(lo, hi, size=300)
            mat = llr_matrix(model, xs)
            for i in range(1, model.L + 1):
                for j, x in enumerate(xs):
                    assert log_likelihood_ratio(model, i, float(x)) == mat[j, i - 1]


class TestPhi:
    def test_step_envelope(self, step2):
        assert phi(step2, 0.5) == pytest.approx(0.470004, abs=1e-6)

    def test_symmetric_gaussians_at_origin(self, slow_gauss2):
        assert phi(slow_gauss2, 0.0) == pytest.approx(-0.045, abs=1e-12)

    def test_single_phase_reduces_to_llr(self, gauss1):
        for x in (-2.0, 0.0, 1.3):
            assert phi(gauss1, x) == log_likelihood_ratio(gauss1, 1, x)

    def test_phi_equals_max_llr_exactly(self, fast_gauss2, step2):
        rng = np.random.default_rng(11)
        for model, lo, hi in ((fast_gauss2, -4, 6), (step2, 0, 2)):
            for x in rng.uniform(lo, hi, size=500):
                x = float(x)
                expect = max(log_likelihood_ratio(model, i, x) for i in range(1, model.L + 1))
                assert phi(model, x) == expect

    def test_phi_array_matches_scalar(self, slow_gauss2):
        xs = np.linspace(-3, 3, 101)
        arr = phi_array(slow_gauss2, xs)
        for x, v in zip(xs, arr):
            assert phi(slow_gauss2, float(x)) == v


class TestKlDivergence:
    def test_gaussian_mean_shift(self):
        assert kl_between(Gaussian(0.3, 1), Gaussian(0, 1)) == pytest.approx(0.045, abs=1e-15)

    def test_identical_densities_is_zero(self):
        assert kl_between(Gaussian(0, 1), Gaussian(0, 1)) == 0.0

    def test_large_shift(self, fast_gauss2):
        assert kl_divergence(fast_gauss2, 1) == pytest.approx(4.5, abs=1e-12)
        assert kl_divergence(fast_gauss2, 2) == pytest.approx(0.5, abs=1e-12)

    def test_step_step_exact_refinement(self, step2):
        # direct integral of f1 log(f1/f0) over the two pieces
        expect = 0.8 * math.log(0.8 / 0.5) + 0.2 * math.log(0.2 / 0.5)
        assert kl_divergence(step2, 1) == pytest.approx(expect, abs=1e-15)

    def test_step_over_gaussian_quadrature_vs_closed_form(self):
        # int_a^b log N(x; mu, s) dx has the closed form
        # -( (b-mu)^3 - (a-mu)^3 )/(6 s^2) - (b-a) log(s sqrt(2 pi))
        fi = PiecewiseConstant((-0.5, 0.25, 1.0), (0.9, (1.0 - 0.9 * 0.75) / 0.75))
        f0 = Gaussian(0.2, 1.1)

        def log_norm_integral(a, b, mu, s):
            return -((b - mu) ** 3 - (a - mu) ** 3) / (6 * s * s) - (b - a) * math.log(
                s * math.sqrt(2 * math.pi)
            )

        expect = 0.0
        for a, b, h in zip(fi.breakpoints, fi.breakpoints[1:], fi.heights):
            expect += h * (b - a) * math.log(h) - h * log_norm_integral(a, b, f0.mean, f0.stdev)
        assert kl_between(fi, f0) == pytest.approx(expect, abs=1e-9)

    def test_gaussian_over_step_diverges(self):
        with pytest.raises(DivergentKl):
            kl_between(Gaussian(1, 1), PiecewiseConstant((0, 2), (0.5,)))

    def test_step_escaping_step_support_diverges(self):
        f0 = PiecewiseConstant((0, 1, 2), (1.0, 0.0))
        fi = PiecewiseConstant((0, 2), (0.5,))
        with pytest.raises(DivergentKl):
            kl_between(fi, f0)

    @given(
        m1=st.floats(-2, 2),
        m0=st.floats(-2, 2),
        s1=st.floats(0.6, 1.8),
        s0=st.floats(0.6, 1.8),
    )
    @settings(max_examples=25, deadline=None)
    def test_quadrature_agrees_with_closed_form(self, m1, m0, s1, s0):
        fi, f0 = Gaussian(m1, s1), Gaussian(m0, s0)
        assert kl_quadrature(fi, f0) == pytest.approx(kl_between(fi, f0), abs=1e-8)

    def test_quadrature_agrees_for_steps(self, step2):
        fi, f0 = step2.densities[1], step2.densities[0]
        assert kl_quadrature(fi, f0) == pytest.approx(kl_between(fi, f0), abs=1e-10)

    def test_kl_is_monte_carlo_mean_of_llr(self, fast_gauss2, step2):
        # every supported family pair: gauss/gauss, step/step, step/gauss
        step_over_gauss = PhaseModel(
            (Gaussian(0.5, 1.0), PiecewiseConstant((0, 1, 2), (0.8, 0.2)))
        )
        n = 100_000
        for j, (model, i) in enumerate(
            ((fast_gauss2, 1), (fast_gauss2, 2), (step2, 1), (step2, 2), (step_over_gauss, 1))
        ):
            rng = np.random.default_rng(100 + j)
            xs = model.densities[i].sample(rng, n)
            zs = llr_array(model, i, xs)
            mean = float(np.mean(zs))
            se = float(np.std(zs, ddof=1) / math.sqrt(n))
            assert abs(mean - kl_divergence(model, i)) <= 4 * se


class TestEstimateAlpha:
    def test_not_applicable_when_envelope_mean_positive(self, step2, slow_gauss2):
        for model in (step2, slow_gauss2):
            est = estimate_alpha(model, 20_000, seed=5)
            assert not est.applicable
            assert est.alpha is None
            assert est.mean_phi > 0

    def test_applicable_with_positive_alpha(self, fast_gauss2):
        est = estimate_alpha(fast_gauss2, 200_000, seed=6)
        assert est.applicable
        assert est.alpha is not None and est.alpha > 0
        # E[max(3X - 4.5, X - 0.5)] under N(0,1), split at X = 2:
        # (-phi(2) - 0.5 Phi(2)) + (3 phi(2) - 4.5 (1 - Phi(2))) ~ -0.483
        assert est.mean_phi == pytest.approx(-0.483, abs=0.02)

    def test_deterministic_in_seed(self, fast_gauss2):
        a = estimate_alpha(fast_gauss2, 20_000, seed=9)
        b = estimate_alpha(fast_gauss2, 20_000, seed=9)
        assert a == b
        c = estimate_alpha(fast_gauss2, 20_000, seed=10)
        assert c.alpha != a.alpha

    def test_sample_size_precondition(self, fast_gauss2):
        with pytest.raises(ValueError):
            estimate_alpha(fast_gauss2, 9_999, seed=0)


class TestModelFiles:
    def test_round_trip(self, fast_gauss2, step2, tmp_path):
        for model in (fast_gauss2, step2):
            obj = model_to_dict(model)
            again = model_from_dict(json.loads(json.dumps(obj)))
            assert model_to_dict(again) == obj
            path = tmp_path / "m.json"
            path.write_text(json.dumps(obj))
            assert model_to_dict(load_model(str(path))) == obj

    def test_field_names_are_exact(self, step2):
        obj = model_to_dict(step2)
        assert obj["L"] == 2
        assert obj["densities"][0] == {"family": "step", "breakpoints": [0.0, 2.0], "heights": [0.5]}

    def test_l_mismatch_rejected(self, fast_gauss2):
        obj = model_to_dict(fast_gauss2)
        obj["L"] = 3
        with pytest.raises(ModelError):
            model_from_dict(obj)

    def test_unknown_family_rejected(self):
        with pytest.raises(ModelError):
            model_from_dict({"L": 1, "densities": [{"family": "cauchy"}, {"family": "gaussian", "mean": 0, "stdev": 1}]})

    def test_bad_json_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ModelError):
            load_model(str(p))


class TestRandomModelHelpers:
    def test_generators_build_valid_models(self):
        rng = np.random.default_rng(3)
        for L in (1, 2, 3):
            gm = random_gauss_model(rng, L)
            sm = random_step_model(rng, L)
            assert gm.L == L and sm.L == L
            assert all(v > 0 for v in gm.kl) and all(v > 0 for v in sm.kl)
