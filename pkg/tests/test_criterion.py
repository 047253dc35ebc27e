"""Criterion tests: grid aggregation against full summation, tail-exponent
fits on synthetic power laws, the exact periodic dichotomy, and end-to-end
verdicts on the canonical environments."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from stratwalk.criterion import (
    CriterionReport,
    Verdict,
    classify,
    condensed_series,
    geometric_grid,
    main_series,
    periodic_exact,
    series_summary,
    tail_exponent,
    transience_series,
)
from stratwalk.diophantine import family_cf
from stratwalk.dispersion import DispersionTable
from stratwalk.dynamics import build_propi
from stratwalk.environment import (
    GeneralQP,
    PeriodicEnvironment,
    VerticallyFlatQP,
    cp_alternating_env,
    cp_ramp_env,
)
from stratwalk.errors import HorizonExceeded, WrongKind
from stratwalk.functions import TrigPoly, zero

THIRD = Fraction(1, 3)


def golden_cf():
    return family_cf("constant", k=1)


@pytest.fixture(scope="module")
def flat_zero_env():
    return VerticallyFlatQP(zero(), golden_cf(), x=0.27)


@pytest.fixture(scope="module")
def gq_zero_env():
    # same null environment through the general (non-flat) code path
    return GeneralQP(zero(), zero(), golden_cf(), x=0.27)


@pytest.fixture(scope="module")
def ramp_env():
    return cp_ramp_env()


class _SyntheticQuadratic:
    """Stands in for a table with Phi(n) = n^2 on the flat evaluation path."""

    class _Env:
        flat = True

    env = _Env()

    def flat_phi(self, n):
        v = float(n) * float(n)
        return v, v


class TestGrid:
    def test_endpoints_and_monotone(self):
        g = geometric_grid(5000, 1.05)
        assert g[0] == 1 and g[-1] == 5000
        assert np.all(np.diff(g) >= 1)

    def test_unit_steps_up_to_rounding_threshold(self):
        g = geometric_grid(100, 1.05)
        assert list(g[:20]) == list(range(1, 21))

    def test_ratio_bound_past_burn_in(self):
        g = geometric_grid(10**5, 1.05).astype(float)
        r = g[1:] / g[:-1]
        assert r[g[:-1] >= 100].max() <= 1.06

    def test_guards(self):
        with pytest.raises(ValueError):
            geometric_grid(0)
        with pytest.raises(ValueError):
            geometric_grid(10, ratio=1.0)


class TestSeriesSummary:
    def test_basel(self):
        s = series_summary(lambda n: 1.0 / n**2, 10**4)
        assert abs(s.total - math.pi**2 / 6) < 1e-3

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_grid_matches_full_summation(self, p):
        # the grid-with-correction aggregate vs the plain sum over n <= 1e5
        exact = math.fsum(n**-p for n in range(1, 10**5 + 1))
        s = series_summary(lambda n: float(n) ** -p, 10**5)
        assert abs(s.total - exact) <= 1e-3 * exact

    def test_harmonic_decade_masses(self):
        s = series_summary(lambda n: 1.0 / n, 10**4)
        for _, inc in s.decade_increments[1:]:
            assert abs(inc - math.log(10)) <= 0.03 * math.log(10)

    def test_partials_monotone_for_positive_terms(self):
        s = series_summary(lambda n: 1.0 / n**1.5, 10**4)
        assert np.all(np.diff(s.partials) >= 0)

    def test_threaded_evaluation_identical(self):
        a = series_summary(lambda n: 1.0 / n**2, 10**4, threads=1)
        b = series_summary(lambda n: 1.0 / n**2, 10**4, threads=4)
        assert np.array_equal(a.partials, b.partials)

    def test_single_term(self):
        s = series_summary(lambda n: 7.0, 1)
        assert s.total == 7.0 and len(s.ns) == 1

    def test_as_dict_shapes(self):
        d = series_summary(lambda n: 1.0 / n, 100).as_dict()
        assert len(d["ns"]) == len(d["terms"]) == len(d["partials"])
        assert d["decade_increments"][0][0] == 1


class TestTailFit:
    @pytest.mark.parametrize("p", [0.7, 1.0, 1.3])
    def test_exact_power_law(self, p):
        s = series_summary(lambda n: 3.0 * float(n) ** -p, 10**4)
        fit = tail_exponent(s)
        assert abs(fit.slope - p) < 1e-9
        assert fit.stderr < 1e-9
        assert fit.window[1] == 10**4

    @pytest.mark.parametrize("s_exp", [1.0, 1.5, 2.0])
    def test_synthetic_inverse_tables(self, s_exp):
        # integer-floored inverses of Phi(n) = n^s give term n^{-2+1/s};
        # the fitted decay exponent lands on 2 - 1/s
        def term(n):
            inv = int(float(n) ** (1.0 / s_exp))
            return inv * inv / (max(inv, 1) * float(n) ** 2)

        fit = tail_exponent(series_summary(term, 10**5))
        assert abs(fit.slope - (2.0 - 1.0 / s_exp)) < 0.05

    def test_underdetermined_is_nan(self):
        fit = tail_exponent(series_summary(lambda n: 1.0, 2))
        assert math.isnan(fit.slope)


class TestMainSeries:
    def test_flat_zero_terms_are_harmonic(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=1 << 13)
        s = main_series(table, 3000)
        np.testing.assert_allclose(s.terms, 1.0 / s.ns.astype(float), rtol=1e-12)
        assert abs(tail_exponent(s).slope - 1.0) < 1e-9

    def test_general_zero_constant(self, gq_zero_env):
        # Phi ~ 2n and Phi_+ ~ sqrt(2) n give n * term -> sqrt(2)/4
        table = DispersionTable(gq_zero_env, horizon=1 << 16)
        s = main_series(table, 20000)
        tail = s.ns[-5:].astype(float) * s.terms[-5:]
        np.testing.assert_allclose(tail, math.sqrt(2) / 4, rtol=0.02)

    def test_ramp_exponent(self, ramp_env):
        table = DispersionTable(ramp_env, horizon=1 << 13)
        fit = tail_exponent(main_series(table, 3000))
        assert abs(fit.slope - 1.5) <= 0.1

    def test_single_term(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=256)
        s = main_series(table, 1)
        assert len(s.ns) == 1

    def test_small_table_raises(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=64)
        with pytest.raises(HorizonExceeded):
            main_series(table, 4000)


class TestTransienceSeries:
    def test_synthetic_basel(self):
        s_plus, s_full, sup = transience_series(_SyntheticQuadratic(), 10**4)
        assert abs(s_full.total - math.pi**2 / 6) < 1e-3
        assert abs(s_plus.total - math.pi**2 / 6) < 1e-3
        assert sup == 1.0

    def test_flat_zero_diverging_trend(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=1 << 13)
        s_plus, _, _ = transience_series(table, 3000)
        incs = [v for _, v in s_plus.decade_increments]
        assert min(incs[-2:]) >= 0.9 * max(incs[-2:])

    def test_ramp_converging_trend(self, ramp_env):
        table = DispersionTable(ramp_env, horizon=1 << 13)
        s_plus, _, sup = transience_series(table, 3000)
        incs = [v for _, v in s_plus.decade_increments]
        for a, b in zip(incs, incs[1:]):
            assert b <= 0.3 * a
        # V-shaped drift: phi/phi_+ tends to sqrt(2)
        assert 1.3 <= sup <= 1.5


class TestCondensedSeries:
    def test_flat_zero_is_inverse_sqrt_two(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=1 << 13)
        c = condensed_series(table, 2.0)
        np.testing.assert_allclose(c.terms, 1.0 / math.sqrt(2), atol=1e-6)

    def test_mild_coboundary_bounded_below(self):
        # f = u - u o T keeps the ratio cocycle bounded: terms plateau
        cf = golden_cf()
        th = float(cf.theta_mid())
        al = 2 * math.pi * th
        f = TrigPoly(0.0, (0.5 * (1 - math.cos(al)),), (0.5 * math.sin(al),))
        env = GeneralQP(f, zero(), cf, x=0.27)
        c = condensed_series(DispersionTable(env, horizon=1 << 13), 2.0)
        assert min(c.terms[3:]) > 0.4
        assert max(c.terms) < 1.0

    def test_propi_terms_decay_through_burn_in(self):
        # every fresh tent level multiplies w by ~e^{m^2} while v stays
        # linear, so the blocks fall hard until the truncation saturates;
        # the decay to zero proper would need untruncated levels
        cf = family_cf("power", s=6)
        f, _, _ = build_propi(cf, 3)
        env = GeneralQP(f, zero(), cf, x=0.31)
        c = condensed_series(DispersionTable(env, horizon=1 << 14), 2.0)
        assert c.terms[0] > 0.7
        assert min(c.terms) < 0.35 * c.terms[0]

    def test_levels_and_base_guard(self, flat_zero_env):
        table = DispersionTable(flat_zero_env, horizon=1 << 10)
        assert len(condensed_series(table, 2.0, levels=5).terms) == 5
        with pytest.raises(ValueError):
            condensed_series(table, 1.0)


class TestPeriodicExact:
    def test_alternating_recurrent(self):
        assert periodic_exact(cp_alternating_env()) == Verdict.EXACT_RECURRENT

    def test_constant_drift_transient(self):
        env = PeriodicEnvironment(
            [{"alpha": THIRD, "beta": THIRD, "gamma": THIRD, "mu": {1: 1}}]
        )
        assert env.exact_drift_total() == Fraction(1, 2)
        assert periodic_exact(env) == Verdict.EXACT_TRANSIENT

    def test_mixed_parameter_cancellation(self):
        # gamma = 1/3, eps = +1 against gamma = 1/2, eps = -1/2
        laws = [
            {"alpha": THIRD, "beta": THIRD, "gamma": THIRD, "mu": {1: 1}},
            {
                "alpha": Fraction(1, 4),
                "beta": Fraction(1, 4),
                "gamma": Fraction(1, 2),
                "mu": {-1: Fraction(3, 4), 1: Fraction(1, 4)},
            },
        ]
        env = PeriodicEnvironment(laws)
        assert env.exact_drift_total() == 0
        assert periodic_exact(env) == Verdict.EXACT_RECURRENT

    def test_float_laws_fall_back_to_rounded_sum(self):
        laws = [
            {"alpha": 0.3, "beta": 0.3, "gamma": 0.4, "mu": {1: 0.5, -1: 0.5}},
        ]
        env = PeriodicEnvironment(laws)
        assert env.exact_drift_total() is None
        assert periodic_exact(env) == Verdict.EXACT_RECURRENT

    def test_wrong_kind(self, ramp_env):
        with pytest.raises(WrongKind):
            periodic_exact(ramp_env)
        lopsided = PeriodicEnvironment(
            [{"alpha": Fraction(1, 4), "beta": Fraction(5, 12), "gamma": THIRD,
              "mu": {1: 1}}]
        )
        with pytest.raises(WrongKind):
            periodic_exact(lopsided)


class TestClassify:
    def test_periodic_dispatch(self):
        r = classify(cp_alternating_env())
        assert r.verdict == Verdict.EXACT_RECURRENT
        assert r.diagnostics["rule"] == "periodic-exact"
        assert r.exact_total == 0
        assert r.fit is None

    def test_flat_zero_recurrent(self, flat_zero_env):
        r = classify(flat_zero_env, budget=3000)
        assert r.verdict == Verdict.RECURRENT_LIKELY
        assert r.diagnostics["rule"] == "decade-mass-bounded"
        assert abs(r.fit.slope - 1.0) < 0.01

    def test_general_zero_recurrent(self, gq_zero_env):
        r = classify(gq_zero_env, budget=20000)
        assert r.verdict == Verdict.RECURRENT_LIKELY
        assert abs(r.fit.slope - 1.0) < 0.05
        assert r.diagnostics["rotation_series"]["basis"] == "family"
        assert r.condensed is not None

    def test_ramp_transient(self, ramp_env):
        r = classify(ramp_env, budget=3000)
        assert r.verdict == Verdict.TRANSIENT_LIKELY
        assert r.diagnostics["rule"] == "tail-exponent"
        assert abs(r.fit.slope - 1.5) <= 0.1
        assert r.diagnostics["transience_corroborated"]

    def test_thresholds_are_knobs(self, flat_zero_env):
        r = classify(flat_zero_env, budget=3000, thresholds=(1.2, 1.3))
        assert r.verdict == Verdict.RECURRENT_LIKELY
        assert r.diagnostics["rule"] == "tail-exponent"
        with pytest.raises(ValueError):
            classify(flat_zero_env, thresholds=(0.0, 1.0))

    def test_deterministic(self, ramp_env):
        a = classify(ramp_env, budget=2000).as_dict()
        b = classify(ramp_env, budget=2000).as_dict()
        assert a == b

    def test_report_json_round_trip(self, flat_zero_env):
        r = classify(flat_zero_env, budget=2000)
        blob = json.dumps(r.as_dict())
        back = json.loads(blob)
        assert back["verdict"] == Verdict.RECURRENT_LIKELY
        assert back["note"]

    def test_converging_counter_reports_exhaustion(self):
        # one-sided geometric ratios make v_minus plateau near 6; no cap can
        # certify its inverse, so the verdict degrades honestly
        law = {
            "alpha": Fraction(1, 4),
            "beta": Fraction(3, 10),
            "gamma": Fraction(9, 20),
            "mu": {1: Fraction(1, 2), -1: Fraction(1, 2)},
        }
        env = PeriodicEnvironment([law])
        assert not env.flat
        r = classify(env, budget=500, k_cap=20000)
        assert r.verdict == Verdict.INCONCLUSIVE
        assert r.diagnostics["rule"] == "table-range-exhausted"
