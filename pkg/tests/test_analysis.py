import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from bbchain.analysis import (
    BandwidthParams, DomainError, NoSolution, SafetyParams, baseline_ttb, crypto_op_bounds,
    min_committee, per_round_send_bound, poisson_sf, safety_bound, safety_report, slot_period,
    throughput_estimate,
)

mpmath.mp.dps = 60


def mp_poisson_sf(mu, k):
    mu = mpmath.mpf(mu)
    return 1 - mpmath.fsum(mpmath.exp(-mu) * mu ** j / mpmath.factorial(j) for j in range(k + 1))


def mp_safety(f, m, tau, lam):
    f = mpmath.mpf(f)
    denom = mpmath.mpf("0.9") * (mpmath.mpf("0.86") - f ** tau)
    return 1 - lam * f ** m / denom - lam * f ** tau / denom - mp_poisson_sf(807, lam)


@pytest.mark.parametrize("mu,k", [(807, 1000), (807, 900), (807, 807), (807, 700), (2, 0), (2, 5), (50, 10)])
def test_poisson_tail_matches_mpmath(mu, k):
    ours = poisson_sf(mu, k)
    ref = float(mp_poisson_sf(mu, k))
    assert ours == pytest.approx(ref, rel=1e-11, abs=1e-300)


def test_poisson_tail_chernoff_sanity():
    lam = int(807 + 30 * math.sqrt(807))
    assert poisson_sf(807, lam) < 1e-6


@pytest.mark.parametrize("f,m,tau,lam", [(0.7, 79, 91, 1000), (0.7, 80, 91, 1000), (0.4, 35, 40, 1000), (0.5, 20, 30, 900)])
def test_safety_bound_matches_exact_arithmetic(f, m, tau, lam):
    ours = safety_bound(SafetyParams(f, m, tau, lam))
    ref = mp_safety(f, m, tau, lam)
    # compare the failure probability, which is where the information lives
    assert (1 - ours) == pytest.approx(float(1 - ref), rel=1e-9)
    assert ours == pytest.approx(float(ref), rel=1e-12)


def test_f_to_zero_limit():
    rep = safety_report(SafetyParams(1e-9, 10, 10, 1000))
    assert rep.bound == pytest.approx(1 - poisson_sf(807, 1000), rel=1e-15)


def test_committee_size_reproduction():
    eps = 2.0 ** -30
    assert safety_bound(SafetyParams(0.7, 79, 91, 1000)) >= 1 - eps
    assert min_committee(0.7, 91, 1000, eps) in (79, 80)
    assert min_committee(0.7, 91, 1000, 1.0) == 1


def test_lower_fraction_needs_at_most_35():
    eps = 2.0 ** -30
    m = min_committee(0.4, 91, 1000, eps)
    assert m <= 35
    assert safety_bound(SafetyParams(0.4, 35, 91, 1000)) >= 1 - eps


def test_near_total_corruption_needs_huge_tau():
    with pytest.raises(NoSolution):
        min_committee(0.99, 91, 1000, 2.0 ** -30)
    assert min_committee(0.99, 3000, 1000, 2.0 ** -30) > 1000


def test_domain_errors():
    with pytest.raises(DomainError):
        SafetyParams(1.0, 10, 10, 10)
    with pytest.raises(DomainError):
        SafetyParams(0.5, 0, 10, 10)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.9), st.integers(1, 120), st.integers(20, 200))
def test_safety_bound_monotone_in_m(f, m, tau):
    try:
        a = safety_bound(SafetyParams(f, m, tau, 1000))
        b = safety_bound(SafetyParams(f, m + 1, tau, 1000))
    except DomainError:
        return
    assert b >= a


def spreadsheet_Y(w, l, s, m, lh=256, ls=768, ln=256):
    depth = math.ceil(math.log2(s))
    return w * (2 * (lh + ls + m) + max(math.ceil(l / (s - 1)) + (lh + 1) * depth,
                                        ln + (lh + 1) * depth + ls + m))


def test_send_bound_reference_point():
    p = BandwidthParams(w=40, l=16_000_000, s=800, m=80)
    y = per_round_send_bound(p)
    assert y.Y == spreadsheet_Y(40, 16_000_000, 800, 80) == 992160
    assert y.data_branch
    # the overhead terms keep exact Y about 24% above the w*l/s shorthand here
    assert y.Y / y.approx == pytest.approx(1.2402, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10**8), st.integers(2, 2000), st.integers(1, 200))
def test_send_bound_matches_formula_and_scales_in_w(w, l, s, m):
    p = BandwidthParams(w=w, l=l, s=s, m=m)
    assert per_round_send_bound(p).Y == spreadsheet_Y(w, l, s, m)
    assert per_round_send_bound(BandwidthParams(w=2 * w, l=l, s=s, m=m)).Y == 2 * spreadsheet_Y(w, l, s, m)


def test_small_object_takes_signature_branch():
    assert not per_round_send_bound(BandwidthParams(w=3, l=8, s=2, m=4)).data_branch


@pytest.mark.parametrize("w", [10, 20, 40])
def test_ttb_close_to_half_over_w(w):
    rs = [throughput_estimate(BandwidthParams(w=w, l=0, s=960, m=80, d=6, delta=12, gamma=g, B=20e6)).R
          for g in (1, 2, 10)]
    for r in rs:
        assert abs(r - 1 / (2 * w)) <= 0.1 / (2 * w)
    assert (max(rs) - min(rs)) / max(rs) < 0.01


def test_throughput_solution_saturates_budget():
    p = BandwidthParams(w=42, l=0, s=800, m=80, d=6, delta=12, gamma=217, B=20e6)
    tp = throughput_estimate(p, 0.9)
    Y = per_round_send_bound(BandwidthParams(w=42, l=tp.l0, s=800, m=80)).Y
    Y_more = per_round_send_bound(BandwidthParams(w=42, l=tp.l0 + 800, s=800, m=80)).Y
    assert 217 * Y <= 0.9 * 20e6 * 12 < 217 * Y_more
    # deployment-style run: about 163 Kbps, within 25%
    assert tp.T == pytest.approx(163e3, rel=0.25)


def test_slot_period():
    p = BandwidthParams(w=42, l=16_000_000, s=800, m=80, d=6, delta=12, B=20e6)
    period = slot_period(p, 0.9)
    gamma = round(p.rounds * 12 / period)
    assert gamma * per_round_send_bound(p).Y <= 0.9 * 20e6 * 12
    assert 90 < period < 110


def test_op_bounds_reference_point():
    ops = crypto_op_bounds(217, 12, 42)
    assert (ops.sign_adds, ops.sig_verify_pass, ops.sig_verify_fail, ops.merkle_verify_pass,
            ops.merkle_verify_fail) == (55, 55, 42, 19, 42)
    assert ops.signature_ops == 152 and ops.hashes == 610


def test_op_bounds_edges():
    idle = crypto_op_bounds(0, 12, 42)
    assert idle.signature_ops == 42 and idle.sign_adds == 0 and idle.merkle_verify_pass == 0
    assert crypto_op_bounds(240, 24, 42).sign_adds * 2 == crypto_op_bounds(240, 12, 42).sign_adds


def test_baselines():
    assert baseline_ttb("dolev-strong", n=10_000, f=0.7, w=40, d=6) < 3.6e-6
    assert baseline_ttb("hirt-raykov", n=500) <= 1 / 500
    assert baseline_ttb("wan", w=40, d=6) == pytest.approx(1 / 240)
    assert baseline_ttb("overlaybb", w=40, d=6, m=80) == pytest.approx(1 / 80)
    with pytest.raises(ValueError):
        baseline_ttb("nope")
