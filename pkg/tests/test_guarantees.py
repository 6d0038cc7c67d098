import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upmdp.errors import InvalidInput
from upmdp.guarantees import (
    certificate,
    classical_convex_bound,
    empirical_risk,
    epsilon_bounds,
    hitting_set_bound,
    mu_bound,
    blocking_sets,
    support_bound_det_blocked,
    support_bound_det_hitting,
    support_by_removal,
    support_count_behavioural,
    support_count_imdp,
    support_count_mixed,
    xi_relative_residual,
    xi_roots,
    xi_value,
)
from upmdp.imdp import build_interval_mdp, robust_value_iteration
from upmdp.mdp import DeterministicPolicy
from upmdp.model import sample_scenarios

mp.mp.dps = 60


def mp_xi_terms(N, k, beta, t):
    """Positive part and list of negative terms of xi_k(t) in high precision."""
    t, beta = mp.mpf(t), mp.mpf(beta)
    neg = [beta / (6 * N) * mp.binomial(i, k) * t ** (i - k) for i in range(N + 1, 4 * N + 1)]
    if k < N:
        pos = mp.binomial(N, k) * t ** (N - k)
        neg += [beta / (2 * N) * mp.binomial(i, k) * t ** (i - k) for i in range(k, N)]
    else:
        pos = mp.mpf(1)
    return pos, neg


def mp_residual(N, k, beta, t):
    pos, neg = mp_xi_terms(N, k, beta, t)
    return float(abs(pos - mp.fsum(neg)) / max([pos] + neg))


@pytest.mark.parametrize("N", [20, 50])
@pytest.mark.parametrize("beta", [1e-3, 1e-5])
def test_roots_have_tiny_residual_in_high_precision(N, beta):
    for k in sorted({0, 1, 2, N // 3, math.ceil(N / 2), N - 2, N - 1, N}):
        lo, hi = xi_roots(N, k, beta)
        if k < N:
            assert mp_residual(N, k, beta, lo) < 1e-8
        assert mp_residual(N, k, beta, hi) < 1e-8
        assert xi_relative_residual(N, k, beta, hi) == pytest.approx(mp_residual(N, k, beta, hi), abs=1e-12)


def test_sign_structure_around_roots():
    N, k, beta = 20, 5, 1e-3
    lo, hi = xi_roots(N, k, beta)
    assert xi_value(N, k, beta, 0.5 * lo) < 0
    assert xi_value(N, k, beta, 0.5 * (lo + hi)) > 0
    assert xi_value(N, k, beta, 1.01 * hi) < 0


def test_epsilon_bounds_shape():
    for N in (20, 50, 200):
        prev = -1.0
        for k in range(N + 1):
            lo, hi = epsilon_bounds(N, k, 1e-5)
            assert 0.0 <= lo <= hi <= 1.0
            assert hi >= prev - 1e-12
            prev = hi
        assert epsilon_bounds(N, N, 1e-5)[1] == 1.0


def test_mu_closed_form():
    assert mu_bound(200, 0, 1e-5) == pytest.approx(0.0806, abs=1e-3)
    for k in (0, 3, 50, 199):
        ref = 1 - (mp.mpf(1e-5) / (200 * mp.binomial(200, k))) ** (mp.mpf(1) / (200 - k))
        assert mu_bound(200, k, 1e-5) == pytest.approx(float(ref), rel=1e-12)
    assert mu_bound(200, 200, 1e-5) == 1.0
    mus = [mu_bound(200, k, 1e-5) for k in range(201)]
    assert all(a <= b for a, b in zip(mus, mus[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(1, 5), st.floats(1e-9, 0.5))
def test_convex_bound_solves_binomial_tail(N, d, beta):
    d = min(d, N)
    eps = classical_convex_bound(N, d, beta)
    tail = mp.fsum(mp.binomial(N, i) * mp.mpf(eps) ** i * (1 - mp.mpf(eps)) ** (N - i) for i in range(d))
    assert float(tail) == pytest.approx(beta, rel=1e-6)


def test_convex_bound_table_value():
    assert classical_convex_bound(200, 1, 1e-5) == pytest.approx(0.056, abs=5e-4)


def test_argument_checks():
    with pytest.raises(InvalidInput):
        epsilon_bounds(10, 11, 0.1)
    with pytest.raises(InvalidInput):
        mu_bound(10, 1, 1.5)
    with pytest.raises(InvalidInput):
        classical_convex_bound(10, 0, 0.1)


def test_support_counts_simple():
    assert support_count_mixed(np.array([0.5, 1e-12, 0.5, 0.0])) == 2
    assert support_count_behavioural(np.array([0.3, 0.30005, 0.5]), 0.3) == 2


def test_imdp_support_counts_extreme_scenarios(toy):
    sc = sample_scenarios(toy, 60, 9)
    imdp = build_interval_mdp(toy, sc)
    k = support_count_imdp(toy, sc, imdp)
    extreme = set(np.argmin(sc.samples, axis=0)) | set(np.argmax(sc.samples, axis=0))
    assert k == len(extreme)


def test_removal_audit_is_contained_in_imdp_support(toy):
    sc = sample_scenarios(toy, 30, 2)

    def solve(samples):
        return robust_value_iteration(build_interval_mdp(toy, samples))[1]

    essential = support_by_removal(solve, sc.samples)
    extreme = set(np.argmin(sc.samples, axis=0)) | set(np.argmax(sc.samples, axis=0))
    assert 1 <= len(essential) and set(essential) <= extreme
    with pytest.raises(InvalidInput):
        support_by_removal(solve, np.zeros((60, 4)))


def test_deterministic_support_bounds():
    R = np.array([
        [0.5, 0.4, 0.9],  # optimal row, worst column 1
        [0.3, 0.6, 0.2],
        [0.2, 0.7, 0.8],
        [0.9, 0.1, 0.9],
    ])
    assert support_bound_det_blocked(R, 0, 0.4) == 3
    sets = blocking_sets(R, 0.4, 0)
    assert sets == [{1}, {0, 2}, {0}]
    assert hitting_set_bound(sets) == 2
    assert hitting_set_bound(sets, "union") == 3
    assert support_bound_det_hitting(R, 0.4) == 2
    with pytest.raises(InvalidInput):
        hitting_set_bound([{1}, set()])


def test_greedy_hitting_set_prefers_frequent_then_low_index():
    assert hitting_set_bound([{0, 1}, {1, 2}, {1, 3}]) == 1
    assert hitting_set_bound([{2, 5}, {2, 5}]) == 1


def test_certificates_pick_the_matching_bound():
    c = certificate("behavioural", 0.3, 200, 1e-5, 3, seed=1)
    assert c.bound_kind == "eps_hi" and c.bound == epsilon_bounds(200, 3, 1e-5)[1]
    c = certificate("imdp", 0.3, 200, 1e-5, 0)
    assert c.bound_kind == "mu" and c.bound == pytest.approx(0.0806, abs=1e-3)
    c = certificate("per-sample", 0.3, 200, 1e-5, 1)
    assert c.bound_kind == "convex" and c.to_json()["convex"] == pytest.approx(0.056, abs=5e-4)
    with pytest.raises(InvalidInput):
        certificate("nope", 0.3, 200, 1e-5, 1)
    with pytest.raises(InvalidInput):
        certificate("mixed", 0.3, 10, 1e-5, 11)


def test_empirical_risk_is_seeded(toy):
    pol = DeterministicPolicy([1, 0, 0, 0])  # value gamma * p01
    r = empirical_risk(toy, pol, 0.5 * toy.gamma, 4000, seed=3)
    assert r == pytest.approx(0.5, abs=0.03)
    assert r == empirical_risk(toy, pol, 0.5 * toy.gamma, 4000, seed=3)
