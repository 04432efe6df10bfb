import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from anytime_crc.boundaries import (BoundaryConfig, CorrectionMethod, anytime_condition, b_value,
                                    boundary_table, correction_term, f_value, gamma_anytime,
                                    gamma_duchi, gamma_fixed_subgamma, gamma_standard, h_value,
                                    m_star_iid, stitched_boundary_general, stitching_constants)
from anytime_crc.errors import ConfigurationError, DomainError, InfeasibleError

CFG = BoundaryConfig(loss_bound=1.0, delta=0.1)
LOG_TERM = math.log(math.pi**2 / 0.6)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kwargs", [
    {"loss_bound": 0.0}, {"loss_bound": -1.0}, {"delta": 0.0}, {"delta": 1.0},
    {"delta": float("nan")}, {"m": 0.0}, {"eta": 1.0},
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        BoundaryConfig(**kwargs)


def test_method_parse_aliases():
    assert CorrectionMethod.parse("duchi") is CorrectionMethod.FIXED_DUCHI
    assert CorrectionMethod.parse("Shift-Anytime") is CorrectionMethod.SHIFT_ANYTIME
    with pytest.raises(ConfigurationError):
        CorrectionMethod.parse("bogus")


# ---------------------------------------------------------------- h, f, b

def test_h_below_m_is_log_term():
    # log(pi^2 / 0.6) = 2.80029...; the published rounding 2.8004 is off in the 4th decimal
    assert h_value(0.5, BoundaryConfig(m=1.0)) == pytest.approx(2.8004, abs=2e-4)
    assert h_value(1.0, BoundaryConfig(m=1.0)) == pytest.approx(LOG_TERM, rel=1e-15)


def test_h_log_term_forced_to_two():
    cfg = BoundaryConfig(m=3.0, delta=math.pi**2 / (6 * math.e**2))
    assert h_value(3.0, cfg) == pytest.approx(2.0, rel=1e-14)


def test_h_at_four_m():
    cfg = BoundaryConfig(m=2.5)
    assert h_value(10.0, cfg) == pytest.approx(2 * math.log(3) + LOG_TERM, rel=1e-14)
    assert h_value(10.0, cfg) == pytest.approx(4.9976, abs=2e-4)


def test_f_at_zero_is_linear_term():
    cfg = BoundaryConfig(loss_bound=3.0, m=7.0)
    assert f_value(0.0, cfg) == pytest.approx(2.42 * 3.0 * h_value(0.0, cfg), rel=1e-15)


def test_f_and_b_example():
    cfg = BoundaryConfig(m=100.0)
    assert f_value(100.0, cfg) == pytest.approx(30.87, abs=5e-3)
    assert b_value(100.0, cfg) == pytest.approx(24.10, abs=5e-3)
    assert b_value(0.0, cfg) == 0.0


def test_b_plus_linear_term_is_f():
    cfg = BoundaryConfig(loss_bound=2.0, m=5.0, delta=0.05)
    v = np.random.default_rng(1).uniform(0, 1e6, 500)
    np.testing.assert_allclose(b_value(v, cfg) + 2.42 * 2.0 * h_value(v, cfg), f_value(v, cfg),
                               rtol=1e-14)


def test_f_matches_arbitrary_precision_tabulation():
    cfg = BoundaryConfig(loss_bound=1.0, m=100.0, delta=0.1)
    v = np.concatenate([[0.0, 50.0, 100.0], np.geomspace(1e-3, 1e8, 400)])
    got = f_value(v, cfg)
    for vi, gi in zip(v, got):
        assert oracles.rel_err(gi, oracles.f(vi, 100.0, 1.0, 0.1)) <= 1e-12


def test_f_dense_tabulation_longdouble():
    # 10^6-point tabulation in extended precision over [0, 1e8]
    cfg = BoundaryConfig(loss_bound=1.0, m=100.0, delta=0.1)
    v = np.linspace(0.0, 1e8, 10**6)
    vl = v.astype(np.longdouble)
    m = np.longdouble(100)
    hl = 2 * np.log(np.log2(np.maximum(vl, m) / m) + 1) + np.log(np.longdouble(np.pi) ** 2 / (6 * np.longdouble(0.1)))
    fl = np.longdouble("1.44") * np.sqrt(vl * hl) + np.longdouble("2.42") * hl
    rel = np.abs((f_value(v, cfg) - fl) / fl)
    assert float(rel.max()) <= 1e-9


@pytest.mark.parametrize("fn", [h_value, f_value, b_value])
def test_nondecreasing_in_v(fn):
    cfg = BoundaryConfig(m=10.0)
    v = np.linspace(0, 1e5, 10**4)
    assert np.all(np.diff(fn(v, cfg)) >= 0)


def test_negative_v_rejected():
    with pytest.raises(DomainError):
        h_value(-1.0, CFG)
    with pytest.raises(DomainError):
        f_value(float("nan"), CFG)


def test_formulas_deterministic():
    v = np.geomspace(1, 1e7, 100)
    assert np.array_equal(f_value(v, CFG), f_value(v, CFG))
    assert gamma_anytime(12345, 0.05, CFG, 325) == gamma_anytime(12345, 0.05, CFG, 325)


# ---------------------------------------------------------------- stitching

def test_stitching_constants_eta_two():
    k1, k2 = stitching_constants(2.0)
    assert k1 == pytest.approx((2**0.25 + 2**-0.25) / math.sqrt(2), rel=1e-15)
    assert k1 == pytest.approx(1.4356, abs=2e-4)
    assert k2 == pytest.approx(1.2071, abs=1e-4)


def test_stitching_rejects_eta_le_one():
    with pytest.raises(ConfigurationError):
        stitching_constants(1.0)


def test_stitched_zero_scale_at_m():
    cfg = BoundaryConfig(m=7.0, delta=0.2)
    k1, _ = stitching_constants(2.0)
    want = k1 * math.sqrt(7.0 * math.log(math.pi**2 / (6 * 0.2)))
    assert stitched_boundary_general(7.0, 0.0, cfg) == pytest.approx(want, rel=1e-14)


def test_stitched_dominated_by_explicit_form():
    cfg = BoundaryConfig(loss_bound=1.0, m=50.0, delta=0.1)
    v = np.concatenate([np.linspace(0, 1e3, 5000), np.geomspace(1e3, 1e9, 5000)])
    d = h_value(v, cfg)
    general = stitched_boundary_general(v, 1.0, cfg)
    assert np.all(general <= 1.44 * np.sqrt(v * d) + 2.42 * d)
    assert np.all(general <= 1.44 * np.sqrt(np.maximum(v, 50.0) * d) + 2.42 * d)


def test_stitched_custom_h():
    cfg = BoundaryConfig(m=1.0)
    default = stitched_boundary_general(64.0, 1.0, cfg)
    same = stitched_boundary_general(64.0, 1.0, cfg,
                                     log_h=lambda k: 2 * np.log(k + 1) + math.log(math.pi**2 / 6))
    assert default == pytest.approx(same, rel=1e-15)


# ---------------------------------------------------------------- m*

def test_m_star_reference_value():
    assert m_star_iid(0.05, CFG) == 325
    assert m_star_iid(0.1, CFG) == 159


def test_m_star_matches_linear_scan_oracle():
    for alpha, delta in [(0.05, 0.1), (0.2, 0.05), (0.3, 0.01)]:
        cfg = BoundaryConfig(delta=delta)
        assert m_star_iid(alpha, cfg) == oracles.m_star_scan(alpha, 1.0, delta)


def test_m_star_certificate():
    m = m_star_iid(0.05, CFG)
    assert anytime_condition(m, 0.05, CFG) <= 0.05
    assert anytime_condition(m - 1, 0.05, CFG) > 0.05


def test_m_star_monotone_in_alpha_and_delta():
    assert m_star_iid(0.5, CFG) < m_star_iid(0.05, CFG)
    assert m_star_iid(0.05, BoundaryConfig(delta=0.01)) >= m_star_iid(0.05, CFG)


def test_m_star_cap_raises_with_context():
    with pytest.raises(InfeasibleError, match="alpha=0.05"):
        m_star_iid(0.05, CFG, cap=100)


def test_m_star_rejects_alpha_out_of_range():
    with pytest.raises(DomainError):
        m_star_iid(1.0, CFG)


# ---------------------------------------------------------------- anytime gamma

def test_gamma_anytime_at_m_star():
    assert gamma_anytime(325, 0.05, CFG, 325) <= 0.05


def test_gamma_anytime_le_alpha_iff_n_ge_m_star():
    ns = np.arange(1, 20001)
    g = gamma_anytime(ns, 0.05, CFG, 325)
    assert np.array_equal(g <= 0.05, ns >= 325)
    assert np.all(g > 0)


def test_gamma_anytime_nonincreasing_after_m_star_except_stitch_onset():
    # Once alpha (B - alpha) n passes m*, the iterated-log term switches on and
    # briefly outpaces the 1/n decay: gamma rises by < 1e-7 over a short window.
    ns = np.arange(325, 200001)
    g = gamma_anytime(ns, 0.05, CFG, 325)
    up = np.flatnonzero(np.diff(g) > 0)
    v = 0.05 * 0.95 * ns[up + 1]
    assert up.size < 100
    assert np.all((v > 325) & (v < 1.02 * 325))
    assert np.max(np.diff(g)[up]) < 1e-7


def test_gamma_anytime_dual_implementation():
    got = gamma_anytime(10**4, 0.05, CFG, 325)
    alpha, B, delta, m = 0.05, 1.0, 0.1, 325.0
    v = alpha * (B - alpha) * 1e4
    hh = 2 * math.log(math.log2(max(v, m) / m) + 1) + math.log(math.pi**2 / (6 * delta))
    want = (1.44 * math.sqrt(v * hh) + 2.42 * B * hh) / 1e4
    assert abs(got - want) <= 1e-12 * want


def test_gamma_anytime_lil_rate():
    ns = 10.0 ** np.arange(3, 9)
    g = gamma_anytime(ns, 0.05, CFG, 325)
    assert np.max(g * np.sqrt(ns / np.log(np.log(ns)))) <= 10.0


def test_gamma_anytime_safe_boundary_only_changes_small_v():
    ns = np.arange(1, 5000)
    raw = gamma_anytime(ns, 0.05, CFG, 325)
    safe = gamma_anytime(ns, 0.05, CFG, 325, safe_boundary=True)
    assert np.all(safe >= raw)
    big = 0.05 * 0.95 * ns >= 325
    assert np.array_equal(safe[big], raw[big])


def test_gamma_anytime_rejects_zero_n():
    with pytest.raises(DomainError):
        gamma_anytime(0, 0.05, CFG, 325)


# ---------------------------------------------------------------- fixed-time gammas

def test_gamma_standard_examples():
    assert gamma_standard(100, 0.1) == pytest.approx(0.01, abs=1e-15)
    assert gamma_standard(19, 0.05) == pytest.approx(0.05, abs=1e-15)


def test_gamma_standard_bounds():
    # ceil((1-a)(n+1)) - (1-a) n lies in [1 - a, 2 - a), so 0 < gamma < (2 - a)/n;
    # the tighter 1/n fails at small n (gamma_1 = 1.05 for a = 0.05)
    ns = np.unique(np.round(np.geomspace(1, 1e6, 3000)).astype(np.int64))
    for alpha in (0.05, 0.1, 0.3):
        g = gamma_standard(ns, alpha)
        assert np.all(g > 0)
        # n * gamma is formed as rank - (1 - alpha) n after a division by n: allow 1e-9 slack
        assert np.all(g * ns >= (1 - alpha) - 1e-9)
        assert np.all(g * ns < (2 - alpha) + 1e-9)
    assert gamma_standard(1, 0.05) > 1.0


def test_gamma_duchi_examples():
    assert gamma_duchi(1000, 0.1, 1.0) == 0.0
    assert gamma_duchi(1000, 0.1, 0.1) == pytest.approx(0.02366, abs=5e-6)
    ns = np.arange(1, 10**5)
    assert np.all(np.diff(gamma_duchi(ns, 0.1, 0.1)) < 0)


def test_gamma_subgamma_examples():
    assert gamma_fixed_subgamma(500, 0.1, 1.0, 1.0) == 0.0
    base = gamma_fixed_subgamma(300, 0.1, 0.05, 1.0)
    assert gamma_fixed_subgamma(300, 0.2, 0.05, 2.0) == pytest.approx(2 * base, rel=1e-14)


def test_gamma_subgamma_tail_monte_carlo():
    # mean of n = 200 centered Bernoulli(alpha) variables exceeds gamma' w.p. <= delta
    rng = np.random.default_rng(2024)
    alpha, n, delta = 0.1, 200, 0.05
    means = rng.binomial(n, alpha, size=10**5) / n - alpha
    g = gamma_fixed_subgamma(n, alpha, delta, 1.0)
    assert np.mean(means >= g) <= delta
    assert np.mean(-means >= g) <= delta


def test_conservatism_ordering():
    ns = np.arange(325, 10**5)
    assert np.all(gamma_anytime(ns, 0.05, CFG, 325) >= gamma_duchi(ns, 0.05, 0.1))


def test_all_corrections_vanish():
    n = 10**9
    for method in CorrectionMethod:
        if method is CorrectionMethod.SHIFT_ANYTIME:
            with pytest.raises(ConfigurationError):
                correction_term(method, n, 0.05, CFG)
            continue
        assert correction_term(method, n, 0.05, CFG) < 1e-3


@pytest.mark.parametrize("n", [1, 7, 100, 999, 10**4, 123457, 10**6])
@pytest.mark.parametrize("alpha", [0.05, 0.1, 0.25])
def test_gammas_match_arbitrary_precision(n, alpha):
    m = m_star_iid(alpha, CFG)
    assert oracles.rel_err(gamma_anytime(n, alpha, CFG, m), oracles.gamma_anytime(n, alpha, 1.0, 0.1, m)) <= 1e-12
    assert oracles.rel_err(gamma_standard(n, alpha), oracles.gamma_standard(n, alpha)) <= 1e-9
    assert oracles.rel_err(gamma_duchi(n, alpha, 0.1), oracles.gamma_duchi(n, alpha, 0.1)) <= 1e-12
    assert oracles.rel_err(gamma_fixed_subgamma(n, alpha, 0.1, 1.0),
                           oracles.gamma_subgamma(n, alpha, 0.1, 1.0)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**7), st.floats(0.01, 0.99))
def test_gamma_standard_exact_ceiling(n, alpha):
    assert oracles.rel_err(gamma_standard(n, alpha), oracles.gamma_standard(n, alpha)) <= 1e-9


# ---------------------------------------------------------------- table

def test_boundary_table_contains_m_star_rows():
    rows = boundary_table(0.05, CFG, n_max=10**5, points=20)
    ns = [r["n"] for r in rows]
    assert 324 in ns and 325 in ns
    first = next(r["n"] for r in rows if r["gamma_anytime"] <= 0.05)
    assert first == 325
    for r in rows:
        assert r["gamma_anytime"] == gamma_anytime(r["n"], 0.05, CFG, 325)
        assert r["gamma_duchi"] == gamma_duchi(r["n"], 0.05, 0.1)
        assert r["gamma_standard"] == gamma_standard(r["n"], 0.05)
