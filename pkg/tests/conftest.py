import numpy as np
import pytest

from upmdp.bench import builtin_toy_model
from upmdp.mdp import BehaviouralPolicy, DeterministicPolicy, Mdp

ACCEPTANCE_LINES: list[str] = []


def random_mdp(gen: np.random.Generator, n_states: int = 5, n_actions: int = 3, gamma: float = 0.9,
               disable: float = 0.3) -> Mdp:
    """Random MDP with one goal, one avoid state and random enabled-action sets."""
    S, A = n_states, n_actions
    goal = np.zeros(S, dtype=bool)
    goal[S - 2] = True
    safe = np.ones(S, dtype=bool)
    safe[S - 1] = False
    enabled = gen.random((S, A)) > disable
    enabled[:, 0] = True
    trans = gen.dirichlet(np.full(S, 0.5), size=(S, A))
    for s in (S - 2, S - 1):
        enabled[s] = False
        enabled[s, 0] = True
        trans[s] = 0.0
        trans[s, :, s] = 1.0
    trans[~enabled] = 0.0
    trans[~enabled, 0] = 1.0  # keep disabled rows stochastic; never read
    rho = gen.dirichlet(np.ones(S - 2))
    rho = np.concatenate([rho, [0.0, 0.0]])
    return Mdp(tuple(f"s{i}" for i in range(S)), tuple(f"a{j}" for j in range(A)), trans, enabled, rho, gamma,
               goal, safe)


def random_behavioural(gen: np.random.Generator, mdp: Mdp) -> BehaviouralPolicy:
    d = gen.random(mdp.enabled.shape) * mdp.enabled
    return BehaviouralPolicy(d / d.sum(axis=1, keepdims=True))


def random_deterministic(gen: np.random.Generator, mdp: Mdp) -> DeterministicPolicy:
    return DeterministicPolicy([gen.choice(np.flatnonzero(row)) for row in mdp.enabled])


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy():
    return builtin_toy_model()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
