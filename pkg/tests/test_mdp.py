import itertools

import numpy as np
import pytest
from conftest import random_behavioural, random_deterministic, random_mdp

from upmdp.errors import InvalidDiscount, InvalidPolicy, NonConvergence
from upmdp.mdp import (
    BehaviouralPolicy,
    DeterministicPolicy,
    Mdp,
    MixedPolicy,
    bellman_value,
    equivalent_behavioural,
    equivalent_mixed,
    occupancy,
    optimal_value_and_policy,
    q_function,
    realise_mixed,
    solution,
    validate_mdp,
)


def coin_mdp(gamma=0.9):
    # s0 --a--> goal 0.5 / bad 0.5 ; s0 --b--> s1 ; s1 --a--> goal
    return Mdp.build(
        ["s0", "s1", "goal", "bad"], ["a", "b"],
        {("s0", "a"): {"goal": 0.5, "bad": 0.5}, ("s0", "b"): {"s1": 1.0},
         ("s1", "a"): {"goal": 1.0},
         ("goal", "a"): {"goal": 1.0}, ("bad", "a"): {"bad": 1.0}},
        {"s0": 1.0}, gamma, goal=["goal"], safe=["s0", "s1", "goal"])


def oracle_values(mdp, dist):
    """Plain-loop linear system for the reach-avoid values."""
    S = mdp.n_states
    lhs = np.eye(S)
    rhs = np.zeros(S)
    for s in range(S):
        if mdp.goal[s]:
            rhs[s] = 1.0
            continue
        if not mdp.safe[s]:
            continue
        for a in range(mdp.n_actions):
            for t in range(S):
                lhs[s, t] -= mdp.gamma * dist[s, a] * mdp.trans[s, a, t]
    return np.linalg.solve(lhs, rhs)


def test_hand_computed_values():
    m = coin_mdp(0.9)
    a = DeterministicPolicy([0, 0, 0, 0])
    b = DeterministicPolicy([1, 0, 0, 0])
    assert solution(m, a) == pytest.approx(0.45, abs=1e-12)
    assert solution(m, b) == pytest.approx(0.81, abs=1e-12)
    v = bellman_value(m, b)
    assert v[2] == 1.0 and v[3] == 0.0
    pol, lam = optimal_value_and_policy(m)
    assert pol.action_of[0] == 1 and lam == pytest.approx(0.81, abs=1e-12)
    pol, lam = optimal_value_and_policy(m, "min")
    assert lam == pytest.approx(0.45, abs=1e-12)


def test_undiscounted_values_are_reach_probabilities():
    # s0 loops on itself w.p. 0.5, otherwise goal or bad evenly
    m = Mdp.build(["s0", "goal", "bad"], ["a"],
                  {("s0", "a"): {"s0": 0.5, "goal": 0.25, "bad": 0.25},
                   ("goal", "a"): {"goal": 1.0}, ("bad", "a"): {"bad": 1.0}},
                  {"s0": 1.0}, 1.0, ["goal"], ["s0", "goal"])
    pol = DeterministicPolicy([0, 0, 0])
    assert solution(m, pol) == pytest.approx(0.5, abs=1e-8)
    with pytest.raises(NonConvergence):
        bellman_value(m, pol, tol=1e-15, max_iter=10)


def test_solve_and_iterate_agree(gen):
    for _ in range(10):
        m = random_mdp(gen, 6, 3, 0.95)
        pol = random_behavioural(gen, m)
        a = bellman_value(m, pol, method="solve")
        b = bellman_value(m, pol, tol=1e-12, method="iterate")
        np.testing.assert_allclose(a, b, atol=1e-10)
        np.testing.assert_allclose(a, oracle_values(m, pol.dist), atol=1e-10)


def test_value_vector_invariants(gen):
    m = random_mdp(gen, 6, 2, 0.9)
    v = bellman_value(m, random_behavioural(gen, m))
    assert np.all((0 <= v) & (v <= 1))
    assert np.all(v[m.goal] == 1.0) and np.all(v[m.avoid] == 0.0)


def test_q_function_averages_to_value(gen):
    for _ in range(10):
        m = random_mdp(gen, 5, 3)
        pol = random_behavioural(gen, m)
        q = q_function(m, pol)
        v = bellman_value(m, pol)
        nt = ~m.terminal
        np.testing.assert_allclose((pol.dist * q).sum(axis=1)[nt], v[nt], atol=1e-8)
        assert np.all(q[~m.enabled] == 0.0)


def test_occupancy_matches_resolvent(gen):
    for _ in range(10):
        m = random_mdp(gen, 5, 2, 0.8)
        pol = random_behavioural(gen, m)
        P = np.einsum("sat,sa->st", m.trans, pol.dist)
        oracle = (1 - m.gamma) * m.rho @ np.linalg.inv(np.eye(m.n_states) - m.gamma * P)
        eta = occupancy(m, pol)
        np.testing.assert_allclose(eta, oracle, atol=1e-10)
        assert eta.sum() == pytest.approx(1.0, abs=1e-10)


def test_occupancy_needs_discount():
    with pytest.raises(InvalidDiscount):
        occupancy(coin_mdp(1.0), DeterministicPolicy([0, 0, 0, 0]))


def test_optimal_matches_enumeration(gen):
    for _ in range(10):
        m = random_mdp(gen, 5, 2)
        choices = [m.enabled_actions(s) for s in range(m.n_states)]
        vals = [solution(m, DeterministicPolicy(a)) for a in itertools.product(*choices)]
        _, best = optimal_value_and_policy(m)
        _, worst = optimal_value_and_policy(m, "min")
        assert best == pytest.approx(max(vals), abs=1e-9)
        assert worst == pytest.approx(min(vals), abs=1e-9)


def test_mixed_value_is_weighted_sum(gen):
    m = random_mdp(gen, 5, 3)
    atoms = []
    while len(atoms) < 3:
        p = random_deterministic(gen, m)
        if p not in [a for a, _ in atoms]:
            atoms.append((p, 1 / 3))
    mixed = MixedPolicy(tuple(atoms))
    assert solution(m, mixed) == pytest.approx(sum(solution(m, p) / 3 for p, _ in atoms), abs=1e-12)


def test_policy_validation():
    m = coin_mdp()
    with pytest.raises(InvalidPolicy):
        solution(m, DeterministicPolicy([0, 1, 0, 0]))  # s1 has no action b
    with pytest.raises(InvalidPolicy):
        solution(m, BehaviouralPolicy(np.full((4, 2), 0.4)))
    with pytest.raises(InvalidPolicy):
        MixedPolicy(((DeterministicPolicy([0, 0, 0, 0]), 0.5), (DeterministicPolicy([0, 0, 0, 0]), 0.5)))
    with pytest.raises(InvalidPolicy):
        MixedPolicy(((DeterministicPolicy([0, 0, 0, 0]), 0.7),))


def test_validate_mdp_reports_violations():
    m = coin_mdp()
    assert validate_mdp(m) == []
    trans = m.trans.copy()
    trans[0, 0, 2] = 0.6
    trans[2, 0] = [0.5, 0, 0.5, 0]
    bad = Mdp(m.states, m.actions, trans, m.enabled, np.array([0.5, 0, 0, 0]), 1.5, m.goal, m.safe)
    kinds = {v.kind for v in validate_mdp(bad)}
    assert kinds == {"row-sum", "not-absorbing", "initial-distribution", "discount"}
    row = [v for v in validate_mdp(bad) if v.kind == "row-sum"][0]
    assert (row.state, row.action) == ("s0", "a")


def test_equivalent_mixed_and_behavioural(gen):
    for _ in range(10):
        m = random_mdp(gen, 5, 2)
        pol = random_behavioural(gen, m)
        target = solution(m, pol)
        mixed = equivalent_mixed(m, pol)
        assert solution(m, mixed) == pytest.approx(target, abs=1e-8)
        back = equivalent_behavioural(m, mixed, tol=1e-7)
        assert solution(m, back) == pytest.approx(target, abs=1e-6)


def test_realisation_endpoints_and_discount():
    m = coin_mdp()
    hi = DeterministicPolicy([1, 0, 0, 0])
    r = realise_mixed(m, MixedPolicy(((hi, 1.0),)))
    assert r.t == 1.0 and r.steps == 0 and r.value == pytest.approx(0.81)
    with pytest.raises(InvalidDiscount):
        realise_mixed(coin_mdp(1.0), MixedPolicy(((hi, 1.0),)))
