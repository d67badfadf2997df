"""Absorption, moments, bounds and criterion checks."""
from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import Alternating, brute_dist, rand_env
from defbranch import (
    CONVERGES,
    CRITERIA,
    DIVERGES,
    INCONCLUSIVE,
    Constant,
    FiniteSupport,
    NamedFamily,
    Prefix,
    PreconditionError,
    absorption_profile,
    absorption_scan,
    conditioned_mean_bound,
    criteria_verdicts,
    envelope_ratios,
    fixed_point_bracket,
    growth_rate,
    late_extinction_bounds,
    moments,
    survival_bounds,
)

THETA_A = 0.6267890062732586
THETA_B = 0.7298437881283575


class TestAbsorption:
    def test_frozen_two_generations(self, env_a):
        prof = absorption_profile(env_a, 2)
        assert prof.p_extinct == pytest.approx(0.541125, abs=1e-15)
        assert prof.p_killed == pytest.approx(0.1855, abs=1e-15)
        assert prof.survival == pytest.approx(0.273375, rel=1e-12)
        assert prof.p_absorbed == pytest.approx(0.726625, abs=1e-12)

    def test_horizon_zero(self, env_a):
        prof = absorption_profile(env_a, 0)
        assert prof.survival == 1.0
        assert prof.p_extinct == 0.0
        assert prof.log_survival == 0.0

    def test_scan_matches_profiles(self, alt_env):
        scan = absorption_scan(alt_env, 17)
        for n in (0, 1, 5, 17):
            prof = absorption_profile(alt_env, n)
            got = scan.profile(n)
            assert got.p_extinct == pytest.approx(prof.p_extinct, abs=1e-14)
            assert got.p_killed == pytest.approx(prof.p_killed, abs=1e-14)
            assert got.log_survival == pytest.approx(prof.log_survival, abs=1e-11)

    def test_mass_accounting_random(self):
        rng = np.random.default_rng(57)
        for _ in range(20):
            env = rand_env(rng)
            prof = absorption_profile(env, int(rng.integers(1, 9)))
            total = prof.p_extinct + prof.p_killed + prof.survival
            assert total == pytest.approx(1.0, abs=1e-11)

    def test_deep_horizon_keeps_log_resolution(self, env_a):
        prof = absorption_profile(env_a, 2000)
        # survival underflows linear floats long before n = 2000
        assert prof.survival == 0.0
        assert math.isfinite(prof.log_survival)
        assert prof.log_survival < -1100.0
        # 1 - p_absorbed is pure cancellation by now
        assert prof.p_extinct + prof.p_killed == pytest.approx(1.0, abs=1e-12)


class TestMoments:
    def test_frozen_small_cases(self, env_a):
        m1 = moments(env_a, 1)
        assert m1.mean == pytest.approx(0.9, abs=1e-15)
        assert m1.ratio == pytest.approx(2.0 / 0.9, rel=1e-13)
        assert m1.second == pytest.approx(1.8, rel=1e-13)
        m2 = moments(env_a, 2)
        assert m2.mean == pytest.approx(0.729, abs=1e-15)
        assert m2.ratio == pytest.approx(4.11522633744856, rel=1e-12)
        assert m2.second == pytest.approx(2.187, rel=1e-12)

    def test_against_dict_dp(self):
        rng = np.random.default_rng(61)
        for _ in range(15):
            env = rand_env(rng, allow_lf=False)
            n = int(rng.integers(1, 5))
            dist, _ = brute_dist(env, n)
            want_mean = sum(z * p for z, p in dist.items())
            want_second = sum(z * z * p for z, p in dist.items())
            m = moments(env, n)
            assert m.mean == pytest.approx(want_mean, rel=1e-12)
            assert m.second == pytest.approx(want_second, rel=1e-11)

    def test_lf_against_moebius_fit(self, env_b):
        # compositions of Moebius maps are Moebius: fit q + r/(1-ps)
        # through three exact values and read the moments off the fit
        from conftest import brute_compose, fit_lf

        for n in (1, 2, 3, 4):
            f0 = brute_compose(env_b, 0, n, 0.0)
            fh = brute_compose(env_b, 0, n, 0.5)
            f1 = brute_compose(env_b, 0, n, 1.0)
            q, r, p = fit_lf(f0, fh, f1)
            mean = r * p / (1 - p) ** 2
            second_fac = 2 * r * p**2 / (1 - p) ** 3
            m = moments(env_b, n)
            assert m.mean == pytest.approx(mean, rel=1e-9)
            assert m.second == pytest.approx(second_fac + mean, rel=1e-9)

    def test_log_fields(self, env_b):
        m = moments(env_b, 7)
        assert m.mean == pytest.approx(math.exp(m.log_mean), rel=1e-14)
        assert m.second == pytest.approx(math.exp(m.log_second), rel=1e-13)


class TestSurvivalBounds:
    def test_holds_on_examples(self, env_a, env_b, alt_env):
        for env in (env_a, env_b, alt_env):
            for n in (1, 3, 10, 60):
                sb = survival_bounds(env, n)
                assert sb.holds
                assert sb.moment_lower <= sb.survival * (1 + 1e-9)
                assert sb.survival <= sb.inf_mean_product * (1 + 1e-9)
                assert sb.inv_lo <= 1.0 / sb.survival * (1 + 1e-9)
                assert 1.0 / sb.survival <= sb.inv_hi * (1 + 1e-9)

    def test_holds_on_randoms(self):
        rng = np.random.default_rng(71)
        for _ in range(40):
            env = rand_env(rng)
            sb = survival_bounds(env, int(rng.integers(1, 25)))
            assert sb.holds

    def test_certified_constant(self, env_a):
        sb = survival_bounds(env_a, 12)
        assert sb.c_prime == max(1.0, 2.0 * sb.c_used)
        assert sb.c_used == pytest.approx(2.0)  # law A c12
        assert sb.survival <= sb.c_prime * sb.moment_lower * (1 + 1e-9)
        assert sb.c_prime_empirical <= sb.c_prime * (1 + 1e-9)

    def test_explicit_c_respected(self, env_a):
        sb = survival_bounds(env_a, 5, c=7.0)
        assert sb.c_used == 7.0
        assert sb.c_prime == 14.0

    def test_single_child_env_degenerates(self, env_1b):
        sb = survival_bounds(env_1b, 30)
        assert sb.c_used == 0.0
        assert sb.holds
        # no variance terms: both reciprocal ends meet at 1/mean
        assert sb.inv_lo == pytest.approx(sb.inv_hi, rel=1e-12)
        assert sb.moment_lower == pytest.approx(sb.survival, rel=1e-9)

    def test_zero_c_with_variance_terms_rejected(self, env_a):
        with pytest.raises(PreconditionError, match="c = 0"):
            survival_bounds(env_a, 3, c=0.0)


class TestCriteria:
    def test_reporting_order_and_shape(self, env_1a):
        out = criteria_verdicts(env_1a, horizons=(50, 100))
        assert tuple(v.criterion for v in out) == CRITERIA
        for v in out:
            assert v.horizons == (50, 100)
            assert len(v.partials) == 2
            assert v.verdict in (CONVERGES, DIVERGES, INCONCLUSIVE)

    def test_named_families_analytic(self, env_1a, env_1b, env_2a, env_2b):
        def verdicts(env):
            return {v.criterion: v for v in criteria_verdicts(env, horizons=(100, 1000))}

        va = verdicts(env_1a)
        assert va["one_child_gap"].verdict == DIVERGES
        assert va["mean_product_infimum"].verdict == DIVERGES
        assert va["one_child_gap"].analytic

        vb = verdicts(env_1b)
        assert vb["one_child_gap"].verdict == CONVERGES
        assert vb["mean_product_infimum"].verdict == CONVERGES
        assert vb["defect_mean_series"].verdict == CONVERGES
        assert vb["var_mean_series"].verdict == CONVERGES
        assert vb["tail_ratio_sup"].verdict == CONVERGES

        v2a = verdicts(env_2a)
        assert v2a["defect_mean_series"].verdict == DIVERGES
        assert v2a["var_mean_series"].verdict == CONVERGES
        assert v2a["tail_ratio_sup"].verdict == CONVERGES

        v2b = verdicts(env_2b)
        assert v2b["defect_mean_series"].verdict == CONVERGES
        assert v2b["var_mean_series"].verdict == CONVERGES
        # growing mean products: the infimum is the first value, positive
        assert v2b["mean_product_infimum"].verdict == CONVERGES

    def test_slope_heuristic_power_defect(self):
        fast = NamedFamily("power-defect", {"a": 0.5, "b": 2.0})
        slow = NamedFamily("power-defect", {"a": 0.5, "b": 0.5})
        vf = {v.criterion: v for v in criteria_verdicts(fast, horizons=(100, 1000, 10000))}
        vs = {v.criterion: v for v in criteria_verdicts(slow, horizons=(100, 1000, 10000))}
        gap_f = vf["one_child_gap"]
        gap_s = vs["one_child_gap"]
        assert not gap_f.analytic and not gap_s.analytic
        assert gap_f.verdict == CONVERGES
        assert gap_f.slope == pytest.approx(-2.0, abs=0.1)
        assert gap_s.verdict == DIVERGES
        assert gap_s.slope == pytest.approx(-0.5, abs=0.1)

    def test_borderline_is_inconclusive(self):
        edge = NamedFamily("power-defect", {"a": 0.5, "b": 1.0})
        v = {x.criterion: x for x in criteria_verdicts(edge, horizons=(100, 1000, 10000))}
        assert v["one_child_gap"].verdict == INCONCLUSIVE

    def test_partials_monotone(self, env_2a):
        out = criteria_verdicts(env_2a, horizons=(10, 100, 1000))
        for v in out:
            if v.criterion in ("one_child_gap", "defect_mean_series", "var_mean_series"):
                ps = list(v.partials)
                assert ps == sorted(ps)


class TestFixedPointBracket:
    def test_alternating_envelope(self, alt_env):
        br = fixed_point_bracket(alt_env, upto=16)
        assert br.ok
        assert br.rho == pytest.approx(THETA_A, abs=1e-9)
        assert br.sigma == pytest.approx(THETA_B, abs=1e-9)
        assert br.theta.shape == (16,)

    def test_constant_env_degenerate_bracket(self, env_a):
        br = fixed_point_bracket(env_a, upto=8)
        assert br.ok
        assert br.rho == br.sigma

    def test_fallback_rho_without_sigma(self):
        env = Constant(FiniteSupport([0.5, 0.5]))  # proper subcritical: no fixed point
        br = fixed_point_bracket(env, upto=4)
        assert not br.ok
        assert br.rho == pytest.approx(0.5)
        assert br.sigma is None
        assert "fell back" in br.reason

    def test_no_bracket_at_all(self):
        env = Constant(FiniteSupport([0.0, 0.9]))
        br = fixed_point_bracket(env, upto=4)
        assert not br.ok
        assert br.rho is None
        assert "no bracket" in br.reason


class TestEnvelopeRatios:
    def test_constant_env_ratios_stabilize(self, env_a):
        theta = THETA_A
        r150 = envelope_ratios(env_a, theta, theta, 0.05, 150)
        r300 = envelope_ratios(env_a, theta, theta, 0.05, 300)
        for field in ("mean_over_mu_rho", "surv_nu_rho"):
            a, b = getattr(r150, field), getattr(r300, field)
            assert a > 0.0 and math.isfinite(a)
            assert b == pytest.approx(a, rel=0.02)
        # above sigma the same ratios must not blow up
        assert r300.mean_over_mu_sigma_eps <= r150.mean_over_mu_sigma_eps * 1.01
        assert r300.surv_nu_sigma_eps <= r150.surv_nu_sigma_eps * 1.01

    def test_parameter_validation(self, env_a):
        with pytest.raises(PreconditionError):
            envelope_ratios(env_a, 0.7, 0.6, 0.05, 10)  # rho > sigma
        with pytest.raises(PreconditionError):
            envelope_ratios(env_a, 0.5, 0.6, 0.0, 10)  # eps = 0
        with pytest.raises(PreconditionError):
            envelope_ratios(env_a, 0.5, 0.98, 0.05, 10)  # sigma + eps >= 1


class TestGrowthRates:
    def test_constant_env_approaches_derivative_at_theta(self, env_a, env_b, law_a, law_b):
        for env, law, mr, sr in (
            (env_a, law_a, -0.5694095447940655, -0.5723348603190092),
            (env_b, law_b, -0.699231215640345, -0.7018487254899418),
        ):
            g = growth_rate(env, 500)
            target = math.log(law.pgf(law.fixed_point(), 1))
            assert g.mean_rate == pytest.approx(mr, abs=1e-12)
            assert g.survival_rate == pytest.approx(sr, abs=1e-12)
            assert g.mean_rate == pytest.approx(target, abs=0.02)
            assert g.survival_rate == pytest.approx(target, abs=0.02)
            # the two rates squeeze together as n grows
            g2 = growth_rate(env, 1000)
            assert abs(g2.mean_rate - g2.survival_rate) < abs(
                g.mean_rate - g.survival_rate
            )


class TestLateExtinction:
    def test_holds_at_fixed_point(self, env_a):
        for n in (3, 8):
            le = late_extinction_bounds(env_a, THETA_A, n)
            assert le.holds_extinct
            assert le.holds_killed
            assert le.q_l_ok
            assert le.exact_extinct <= le.upper_extinct * (1 + 1e-9)
            assert le.exact_killed >= le.lower_killed * (1 - 1e-9)
            assert le.proxy_horizon >= max(2 * n, 64)

    def test_alternating_at_sigma(self, alt_env):
        le = late_extinction_bounds(alt_env, THETA_B, 5)
        assert le.holds_extinct and le.holds_killed and le.q_l_ok

    def test_rejects_non_invariant_sigma(self, env_a):
        with pytest.raises(PreconditionError, match="sigma"):
            late_extinction_bounds(env_a, 0.3, 4)  # f(0.3) = 0.4905 > 0.3

    def test_explicit_proxy_horizon(self, env_a):
        le = late_extinction_bounds(env_a, THETA_A, 4, proxy_horizon=300)
        assert le.proxy_horizon == 300
        assert le.holds_extinct and le.holds_killed


class TestConditionedMean:
    def test_frozen_law_a(self, env_a):
        cm = conditioned_mean_bound(env_a, 10)
        assert cm.exact == pytest.approx(4.289546282915147, rel=1e-12)
        assert cm.c == pytest.approx(19.15843781214602, rel=1e-12)
        assert cm.alpha == pytest.approx(0.45)
        assert cm.beta == pytest.approx(0.9)
        assert cm.holds
        # c is hand-checkable: 1 / (e alpha^2 beta ln(1/beta))
        want_c = 1.0 / (math.e * 0.45**2 * 0.9 * math.log(1 / 0.9))
        assert cm.c == pytest.approx(want_c, rel=1e-12)

    def test_against_dict_dp(self, env_a):
        for n in (1, 2, 4, 6):
            dist, _ = brute_dist(env_a, n)
            surv = sum(p for z, p in dist.items() if z >= 1)
            want = sum(z * p for z, p in dist.items()) / surv
            cm = conditioned_mean_bound(env_a, n)
            assert cm.exact == pytest.approx(want, rel=1e-10)

    def test_lf_against_moebius_fit(self, env_b):
        # a Moebius composition stays Moebius, and conditioning a
        # geometric-tail law on survival gives mean 1/(1-p) exactly
        from conftest import brute_compose, fit_lf

        for n in (1, 2, 4, 6):
            f0 = brute_compose(env_b, 0, n, 0.0)
            fh = brute_compose(env_b, 0, n, 0.5)
            f1 = brute_compose(env_b, 0, n, 1.0)
            _, _, p = fit_lf(f0, fh, f1)
            cm = conditioned_mean_bound(env_b, n)
            assert cm.exact == pytest.approx(1.0 / (1.0 - p), rel=1e-9)

    def test_cond_tail_is_relative(self, env_a):
        cm = conditioned_mean_bound(env_a, 60)
        assert cm.cond_tail < 1e-10
        assert cm.degree_used >= 64

    def test_identity_env_rejected(self):
        env = Constant(FiniteSupport([0.0, 1.0]))
        with pytest.raises(PreconditionError, match="f_i\\(0\\)"):
            conditioned_mean_bound(env, 5)

    def test_proper_env_rejected(self):
        env = Constant(FiniteSupport([0.5, 0.5]))
        with pytest.raises(PreconditionError, match="f_i\\(1\\)"):
            conditioned_mean_bound(env, 5)

    def test_prefix_window_hypotheses(self):
        # a single bad generation inside the window must trip the check
        env = Prefix((FiniteSupport([0.0, 0.9]),), FiniteSupport([0.45, 0.0, 0.45]))
        with pytest.raises(PreconditionError):
            conditioned_mean_bound(env, 3)
