"""Dispersion table tests: brute-force oracles, closed forms, and the
window/inverse bookkeeping."""

import math
import threading
from fractions import Fraction

import numpy as np
import pytest

from stratwalk.diophantine import family_cf
from stratwalk.dispersion import DispersionTable
from stratwalk.environment import (
    GeneralQP,
    PeriodicEnvironment,
    VerticallyFlatQP,
    cp_ramp_env,
)
from stratwalk.errors import HorizonExceeded, WrongKind
from stratwalk.functions import cosine, indicator_pm, sawtooth


THIRD = Fraction(1, 3)
HALF = Fraction(1, 2)


def golden_cf():
    return family_cf("constant", k=1)


@pytest.fixture(scope="module")
def zero_env():
    # alpha = beta and epsilon = 0: trivial ratio cocycle, trivial inner sums
    law = {"alpha": THIRD, "beta": THIRD, "gamma": THIRD, "mu": {1: HALF, -1: HALF}}
    return PeriodicEnvironment([law])


@pytest.fixture(scope="module")
def ones_env():
    # alpha = beta, epsilon = 1: gamma*eps/alpha == 1 in every stratum
    law = {"alpha": THIRD, "beta": THIRD, "gamma": THIRD, "mu": {1: 1}}
    return PeriodicEnvironment([law])


@pytest.fixture(scope="module")
def saw_env():
    return GeneralQP(sawtooth() * Fraction(2, 5), cosine(0.7, 1), golden_cf(),
                     x=0.31, gamma0=Fraction(1, 4))


@pytest.fixture(scope="module")
def flatqp_env():
    return VerticallyFlatQP(indicator_pm(), golden_cf(), x=0.29)


@pytest.fixture(scope="module")
def biased_env():
    law = {
        "alpha": Fraction(1, 4),
        "beta": Fraction(3, 10),
        "gamma": Fraction(9, 20),
        "mu": {1: HALF, -1: HALF},
    }
    return PeriodicEnvironment([law])


@pytest.fixture(scope="module")
def zero_table(zero_env):
    return DispersionTable(zero_env, horizon=4200)


@pytest.fixture(scope="module")
def ones_table(ones_env):
    return DispersionTable(ones_env, horizon=300)


@pytest.fixture(scope="module")
def saw_table(saw_env):
    return DispersionTable(saw_env, horizon=20000)


@pytest.fixture(scope="module")
def flat_table(flatqp_env):
    return DispersionTable(flatqp_env, horizon=4096)


@pytest.fixture(scope="module")
def ramp_table():
    return DispersionTable(cp_ramp_env(), horizon=2048)


# ---------------------------------------------------------------------------
# independent oracles


def _ratio_logs(env, lo, hi):
    """log rho_k for k in [lo, hi], by direct products of the strata ratios."""
    assert lo <= 0 <= hi
    al, be, _, _ = env.arrays(lo, hi + 1)
    r = np.log(be) - np.log(al)
    out = np.empty(hi - lo + 1)
    for k in range(lo, hi + 1):
        if k >= 0:
            out[k - lo] = math.fsum(r[j - lo] for j in range(1, k + 1))
        else:
            out[k - lo] = -math.fsum(r[j - lo] for j in range(k + 1, 1))
    return out


def _oracle_window(env, m, n, lim):
    """(A, B) = (-v_-^{-1}(m), v_+^{-1}(n)) by direct cumulative scan.

    Mirrors the table's upward tie resolution at 1e-9 relative."""
    rho = np.exp(_ratio_logs(env, -lim - 1, lim))
    a0, b0, _, _ = env.arrays(0, 1)
    vp = np.cumsum(rho[lim + 1 :])
    b = max(int(np.searchsorted(vp, n * (1 + 1e-9), side="right")) - 1, 0)
    vm = (b0[0] / a0[0]) * np.cumsum(rho[lim::-1])
    a = max(int(np.searchsorted(vm, m * (1 + 1e-9), side="right")) - 1, 0)
    return -a, b


def _oracle_phi(env, m, n, lim=400):
    lo, hi = _oracle_window(env, m, n, lim)
    rho = np.exp(_ratio_logs(env, lo, hi))
    al, _, ga, ep = env.arrays(lo, hi + 1)
    g = ga * ep / al
    s = np.concatenate([[0.0], np.cumsum(g / rho)])
    tot = 0.0
    for ki in range(len(rho)):
        for li in range(ki, len(rho)):
            inner = s[li + 1] - s[ki]
            tot += rho[ki] * rho[li] * (rho[ki] ** -2.0 + rho[li] ** -2.0 + inner * inner)
    return math.sqrt(tot), lo, hi


def _psi_brute(env, a, b, pad=600):
    d = env.drift(-pad, pad)
    csum = np.concatenate([[0.0], np.cumsum(d)])

    def f(n):  # cocycle value at n from the padded window
        return csum[n + pad] - csum[pad]

    vals = [f(n) for n in range(a, b + 1)]
    return sum((vals[j] - vals[i]) ** 2 for i in range(len(vals)) for j in range(i + 1, len(vals)))


# ---------------------------------------------------------------------------
# rho and the range counters


class TestRho:
    def test_flat_ratio_is_one(self, zero_table):
        for n in (-40, -1, 0, 1, 17):
            assert zero_table.rho(n) == 1.0

    def test_zero_index(self, saw_table, biased_env):
        assert saw_table.rho(0) == 1.0
        assert DispersionTable(biased_env, horizon=50, k_cap=4000).rho(0) == 1.0

    def test_product_formula_general(self, saw_env, saw_table):
        al, be, _, _ = saw_env.arrays(-2, 4)
        want_pos = (be[3] * be[4] * be[5]) / (al[3] * al[4] * al[5])  # strata 1..3
        assert saw_table.rho(3) == pytest.approx(want_pos, rel=1e-10)
        want_neg = (al[2] * al[1]) / (be[2] * be[1])  # strata 0, -1
        assert saw_table.rho(-2) == pytest.approx(want_neg, rel=1e-10)

    def test_out_of_range(self, zero_table):
        with pytest.raises(HorizonExceeded):
            zero_table.log_rho(zero_table.k_plus + 1)


class TestRangeCounters:
    def test_zero_env_counts(self, zero_table):
        for n in (0, 1, 7, 100):
            assert zero_table.v_plus(n) == pytest.approx(n + 1, rel=1e-12)
            assert zero_table.w_plus(n) == pytest.approx(n + 1, rel=1e-12)
            assert zero_table.v_minus(n) == pytest.approx(n + 1, rel=1e-12)
            assert zero_table.w_minus(n) == pytest.approx(n + 1, rel=1e-12)

    def test_general_oracle_sums(self, saw_env, saw_table):
        rho = np.exp(_ratio_logs(saw_env, -20, 20))
        a0, b0, _, _ = saw_env.arrays(0, 1)
        for n in (0, 2, 5, 17):
            vp = rho[20 : 21 + n].sum()
            assert saw_table.v_plus(n) == pytest.approx(vp, rel=1e-10)
            vm = (b0[0] / a0[0]) * rho[19 - n : 20].sum()
            assert saw_table.v_minus(n) == pytest.approx(vm, rel=1e-10)
            wp = (1.0 / rho[20 : 21 + n]).sum()
            assert saw_table.w_plus(n) == pytest.approx(wp, rel=1e-10)
            wm = (a0[0] / b0[0]) * (1.0 / rho[19 - n : 20]).sum()
            assert saw_table.w_minus(n) == pytest.approx(wm, rel=1e-10)

    def test_prefactor_override(self, biased_env):
        t = DispersionTable(biased_env, horizon=50, prefactor=1.0, k_cap=4000)
        rho = np.exp(_ratio_logs(biased_env, -6, 0))
        assert t.v_minus(2) == pytest.approx(rho[3:6].sum(), rel=1e-10)

    def test_inverse_sandwich(self, saw_table, biased_env):
        bt = DispersionTable(biased_env, horizon=200, k_cap=4000)
        for table, ys in ((saw_table, (1.0, 3.7, 10.2, 9000.0)), (bt, (1.0, 8.5, 150.0))):
            for y in ys:
                k = table.v_plus_inv(y)
                assert table.v_plus(k) <= y < table.v_plus(k + 1)
                yw = min(y, 800.0)  # the w tables are only as long as the v ranges
                j = table.w_minus_inv(yw)
                assert table.w_minus(j) <= yw < table.w_minus(j + 1)

    def test_inverse_clamp_and_horizon(self, saw_table):
        assert saw_table.v_plus_inv(0.5) == 0
        assert saw_table.v_plus_inv(0.0) == 0
        with pytest.raises(HorizonExceeded):
            saw_table.v_plus_inv(2.0 * saw_table.v_plus(saw_table.k_plus))

    def test_converging_counter_hits_cap(self):
        # beta < alpha: rho decays and v_+ plateaus below the horizon
        law = {"alpha": Fraction(3, 10), "beta": Fraction(1, 4),
               "gamma": Fraction(9, 20), "mu": {1: HALF, -1: HALF}}
        t = DispersionTable(PeriodicEnvironment([law]), horizon=10, k_cap=2000)
        assert t.v_plus_inv(1.4) >= 0
        with pytest.raises(HorizonExceeded):
            t.v_plus_inv(8.0)  # the geometric series tops out near 6


# ---------------------------------------------------------------------------
# flat engine


class TestPsi:
    def test_zero(self, zero_table):
        assert zero_table.psi(-5, 9) == 0.0
        assert zero_table.psi(3, 3) == 0.0

    def test_linear_cocycle_hand_value(self):
        # drift 1 everywhere: cocycle f_n = n, psi(1,3) = 1 + 4 + 1 = 6
        from stratwalk.environment import ExplicitEnvironment

        def rule(ns):
            third = np.full(len(ns), 1.0 / 3.0)
            return third, third.copy(), third.copy(), np.full(len(ns), 2.0)

        t = DispersionTable(ExplicitEnvironment(rule, flat=True), horizon=64)
        assert t.psi(1, 3) == pytest.approx(6.0, abs=1e-9)

    def test_matches_bruteforce(self, flatqp_env, flat_table):
        for a, b in ((1, 200), (-160, -3), (-40, 80), (0, 1)):
            want = _psi_brute(flatqp_env, a, b)
            assert flat_table.psi(a, b) == pytest.approx(want, rel=1e-9, abs=1e-9)

    def test_prefix_path_matches_direct(self, flatqp_env):
        wide = DispersionTable(flatqp_env, horizon=1024, direct_cap=1)
        narrow = DispersionTable(flatqp_env, horizon=1024, direct_cap=1 << 14)
        for a, b in ((-900, 900), (-700, 13), (2, 1000)):
            assert wide.psi(a, b) == pytest.approx(narrow.psi(a, b), rel=1e-10)

    def test_window_and_kind_guards(self, flat_table, saw_table):
        with pytest.raises(HorizonExceeded):
            flat_table.psi(-5000, 0)
        with pytest.raises(WrongKind):
            saw_table.psi(0, 5)
        with pytest.raises(WrongKind):
            saw_table.flat_phi(10)

    def test_superadditivity_and_reverse_triangle(self, flat_table):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b, c = sorted(rng.integers(-300, 300, size=3))
            if not a < b < c:
                continue
            pac = flat_table.psi(a, c)
            pab = flat_table.psi(a, b - 1)
            pbc = flat_table.psi(b + 1, c)
            slack = 1e-9 * (1.0 + pac)
            assert pac / (c - a) >= pab / (b - a) + pbc / (c - b) - slack
            assert math.sqrt(pac) >= math.sqrt(pab) + math.sqrt(pbc) - 1e-9 * (1 + math.sqrt(pac))


class TestFlatPhi:
    def test_zero_env_identity(self, zero_table):
        for n in (0, 1, 2, 37, 1000):
            phi, phip = zero_table.flat_phi(n)
            assert phi == pytest.approx(n, abs=1e-9)
            assert phip == pytest.approx(n, abs=1e-9)

    def test_definition_identities(self, flat_table):
        for n in (1, 17, 130, 700):
            phi, phip = flat_table.flat_phi(n)
            assert phi ** 2 == pytest.approx(n * n + flat_table.psi(-n, n), rel=1e-12)
            assert phip ** 2 == pytest.approx(
                n * n + flat_table.psi(-n, 0) + flat_table.psi(0, n), rel=1e-12
            )
            assert phip <= phi + 1e-9

    def test_monotone_and_dominates_n(self, flat_table, ramp_table):
        for table in (flat_table, ramp_table):
            prev = (0.0, 0.0)
            for n in range(1, 600):
                cur = table.flat_phi(n)
                assert cur[0] >= prev[0] - 1e-9 and cur[1] >= prev[1] - 1e-9
                assert cur[0] >= n - 1e-9 and cur[1] >= n - 1e-9
                prev = cur

    def test_ramp_grows_quadratically(self, ramp_table):
        # one-defect drift: the cocycle is a V-shape, phi(n) ~ n^2/sqrt(12)
        for n in (300, 500, 900):
            ratio = ramp_table.flat_phi(n)[0] / n ** 2
            assert 0.2 < ratio < 0.4

    def test_doubling_growth_past_threshold(self, flat_table, ramp_table):
        thresh = 2.0 ** 0.25
        for table in (flat_table, ramp_table):
            bad = [
                n for n in range(1, 500)
                if table.flat_phi(2 * n)[1] < thresh * table.flat_phi(n)[1] * (1 - 1e-12)
            ]
            assert max(bad, default=0) <= 64

    def test_convergent_scale_bound(self, flat_table):
        # phi(m q_k)^2 stays within a grid-wide constant of 2 phi_+(m q_k)^2 + C m^4 q_k^2
        qs = [q for q in golden_cf().q if q <= 900]
        worst = -math.inf
        for q in qs:
            for m in range(1, 5):
                if m * q > 900:
                    continue
                phi, phip = flat_table.flat_phi(m * q)
                worst = max(worst, (phi ** 2 - 2.0 * phip ** 2) / (m ** 4 * q ** 2))
        assert worst < 50.0


# ---------------------------------------------------------------------------
# general engine


class TestGeneralPhi:
    def test_degenerate_window_zero_env(self, zero_table):
        assert zero_table.general_phi(0, 0) ** 2 == pytest.approx(2.0, rel=1e-12)
        assert zero_table.phi_plus(0) == pytest.approx(2.0 ** 0.5 * zero_table.phi(0), rel=1e-12)

    def test_degenerate_window_ones_env(self, ones_table):
        # the single (0,0) pair contributes 2 + g_0^2 = 3
        assert ones_table.general_phi(0, 0) ** 2 == pytest.approx(3.0, rel=1e-12)

    def test_zero_env_closed_form(self, zero_table):
        for n in (1, 5, 50, 2000):
            assert zero_table.phi(n) == pytest.approx(math.sqrt(2 * n * (2 * n - 1)), rel=1e-10)
            assert zero_table.phi_plus(n) == pytest.approx(math.sqrt(2 * n * (n + 1)), rel=1e-10)
        assert zero_table.phi(2000) / 2000 == pytest.approx(2.0, rel=1e-3)

    def test_ones_env_inner_sum(self, ones_table):
        for n in (1, 3, 30, 100):
            want = 0.0
            for k in range(-(n - 1), n):
                for l in range(k, n):
                    want += 2.0 + (l - k + 1) ** 2
            assert ones_table.phi(n) ** 2 == pytest.approx(want, rel=1e-10)

    @pytest.mark.parametrize("mn", [(0, 0), (1, 1), (3, 7), (40, 40), (120, 60)])
    def test_bruteforce_oracle_general(self, saw_env, saw_table, mn):
        m, n = mn
        want, lo, hi = _oracle_phi(saw_env, m, n)
        assert saw_table._window(m, n) == (lo, hi)
        assert saw_table.general_phi(m, n) == pytest.approx(want, rel=1e-8)

    def test_bruteforce_oracle_flat_env(self, flatqp_env, flat_table):
        for m, n in ((2, 2), (25, 60), (90, 90)):
            want, lo, hi = _oracle_phi(flatqp_env, m, n)
            assert flat_table._window(m, n) == (lo, hi)
            assert flat_table.general_phi(m, n) == pytest.approx(want, rel=1e-8)

    def test_bruteforce_oracle_biased(self, biased_env):
        # v_- plateaus near 6 here, so keep m below it; v_+ grows geometrically
        t = DispersionTable(biased_env, horizon=200, k_cap=4000)
        for m, n in ((5, 5), (3, 12), (5, 150)):
            want, lo, hi = _oracle_phi(biased_env, m, n, lim=120)
            assert t._window(m, n) == (lo, hi)
            assert t.general_phi(m, n) == pytest.approx(want, rel=1e-8)

    def test_bank_path_matches_direct(self, saw_env):
        banked = DispersionTable(saw_env, horizon=3000, direct_cap=1)
        direct = DispersionTable(saw_env, horizon=3000, direct_cap=1 << 14)
        for n in (10, 200, 1500, 2800):
            assert banked.phi(n) == pytest.approx(direct.phi(n), rel=1e-9)
            assert banked.phi_plus(n) == pytest.approx(direct.phi_plus(n), rel=1e-9)

    def test_phi_str_forms(self, zero_table, saw_env, saw_table):
        for n in (1, 5, 50):
            assert zero_table.phi_str(n) == pytest.approx(math.sqrt(n * (2 * n - 1)), rel=1e-10)
        for n in (1, 9, 80):
            _, lo, hi = _oracle_phi(saw_env, n, n)
            rho = np.exp(_ratio_logs(saw_env, lo, hi))
            want = math.sqrt(n * (1.0 / rho).sum())
            assert saw_table.phi_str(n) == pytest.approx(want, rel=1e-9)

    def test_ordering_constants(self, saw_table):
        # Phi_str <~ Phi_+ <~ Phi as two-sided constant fits across ~3 decades
        ns = sorted({int(round(1.3 ** k)) for k in range(1, 27)})
        r1 = [saw_table.phi_str(n) / saw_table.phi_plus(n) for n in ns]
        r2 = [saw_table.phi_plus(n) / saw_table.phi(n) for n in ns]
        assert 0.0 < max(r1) < 4.0
        assert 0.0 < max(r2) < 4.0
        assert min(r2) > 0.05

    def test_monotone_and_dominates_n(self, saw_table, ones_table):
        for table, top in ((saw_table, 2000), (ones_table, 250)):
            ns = sorted({int(round(1.25 ** k)) for k in range(32) if 1.25 ** k <= top})
            vals = [table.phi(n) for n in ns]
            valsp = [table.phi_plus(n) for n in ns]
            valss = [table.phi_str(n) for n in ns]
            for seq in (vals, valsp, valss):
                assert all(b >= a * (1 - 1e-12) for a, b in zip(seq, seq[1:]))
            for n, v, vp in zip(ns, vals, valsp):
                assert v >= n - 1e-9 and vp >= n - 1e-9

    def test_approx_forms_comparable(self, saw_table):
        ns = sorted({int(round(1.4 ** k)) for k in range(1, 25)})
        for n in ns:
            ra = saw_table.phi(n) / saw_table.phi_approx(n)
            rb = saw_table.phi_plus(n) / saw_table.phi_plus_approx(n)
            assert 0.05 < ra < 20.0
            assert 0.05 < rb < 20.0

    def test_window_sum_calibration(self, saw_table):
        # sum of rho over the window between v_+^{-1}(n/4) and v_+^{-1}(n) is ~ n
        for n in (2000, 8000, 18000):
            b_hi = saw_table.v_plus_inv(n)
            b_lo = saw_table.v_plus_inv(n / 4.0)
            total = saw_table.v_plus(b_hi) - (saw_table.v_plus(b_lo - 1) if b_lo >= 1 else 0.0)
            assert n / 32.0 <= total <= 32.0 * n


class TestPsiVariants:
    def test_zero_env_plusplus_closed_form(self, zero_table):
        for n in (1, 4, 30):
            want = 0.0
            for k in range(0, n):
                for l in range(k, n):
                    want += (l - k + 1) ** 2
            assert zero_table.psi_variants(n)[2] ** 2 == pytest.approx(want, rel=1e-10)

    def test_half_window_identity(self, saw_table):
        for n in (1, 12, 50):
            full, plus, pp, pm = saw_table.psi_variants(n)
            assert plus ** 2 == pytest.approx(pp ** 2 + pm ** 2 - 1.0, rel=1e-10)
            assert plus <= full * (1 + 1e-12)

    def test_growth_against_window(self, saw_table):
        ns = (30, 100, 1000, 10000)
        cs = []
        for n in ns:
            full = saw_table.psi_variants(n)[0]
            b = saw_table.v_plus_inv(n)
            cs.append(full ** 2 / max(b, 1) ** 2)
        assert min(cs) > 0.05


# ---------------------------------------------------------------------------
# inverses, dominated variation, maintenance


class TestInverse:
    def test_identity_grid(self, zero_table):
        assert zero_table.inverse("flat_phi", 4000.0) == 4000
        assert zero_table.inverse("flat_phi", 7.3) == 7

    def test_round_trip_strict(self, zero_table):
        for n in (3, 40, 800):
            assert zero_table.inverse("phi", zero_table.phi(n)) == n

    def test_sandwich_general(self, saw_table):
        for which, fn in (("phi", saw_table.phi), ("phi_plus", saw_table.phi_plus),
                          ("phi_str", saw_table.phi_str)):
            for x in (5.0, 123.4, 4000.0):
                k = saw_table.inverse(which, x)
                assert fn(k) <= x * (1 + 1e-12)
                assert fn(k + 1) > x * (1 - 1e-12)

    def test_below_initial_value(self, saw_table):
        assert saw_table.inverse("phi", 0.3) == 0

    def test_unknown_name(self, saw_table):
        with pytest.raises(ValueError):
            saw_table.inverse("nope", 1.0)

    def test_horizon_propagates(self, ramp_table):
        with pytest.raises(HorizonExceeded):
            ramp_table.inverse("flat_phi", 2.0e9)


class TestDominatedVariation:
    def test_linear_table(self, zero_table):
        dv = zero_table.dominated_variation("flat_phi", 2.0, [10.0, 100.0, 500.0])
        assert dv.c_k == pytest.approx(2.0, abs=1e-12)
        assert not dv.skipped

    def test_quadratic_table(self, ramp_table):
        dv = ramp_table.dominated_variation("flat_phi", 2.0, [1e3, 3e3, 1e4, 3e4, 1e5])
        assert dv.c_k == pytest.approx(math.sqrt(2.0), abs=0.06)
        assert dv.witness in (1e3, 3e3, 1e4, 3e4, 1e5)

    def test_skips_past_horizon(self, ramp_table):
        dv = ramp_table.dominated_variation("flat_phi", 2.0, [1e4, 2e9])
        assert dv.skipped == (2e9,)
        assert dv.c_k > 1.0

    def test_rejects_small_k(self, ramp_table):
        with pytest.raises(ValueError):
            ramp_table.dominated_variation("flat_phi", 1.0, [10.0])


class TestMaintenance:
    def test_extend_doubles(self, saw_env):
        t = DispersionTable(saw_env, horizon=100)
        with pytest.raises(HorizonExceeded):
            t.v_plus_inv(5000.0)
        t.extend(5000)
        assert t.horizon >= 5000
        k = t.v_plus_inv(5000.0)
        assert t.v_plus(k) <= 5000.0 < t.v_plus(k + 1)

    def test_concurrent_queries(self, flatqp_env):
        t = DispersionTable(flatqp_env, horizon=512)
        out = []

        def work():
            out.append((t.phi(200), t.flat_phi(200)[0], t.psi_variants(64)[0]))

        threads = [threading.Thread(target=work) for _ in range(6)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert len({v for v, _, _ in out}) == 1
        assert len(out) == 6
