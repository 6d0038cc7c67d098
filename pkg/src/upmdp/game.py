"""Zero-sum game between a policy player and a scenario adversary.

Rows of the reward matrix are deterministic policies, columns are sampled
scenarios, and each entry is the satisfaction value of that policy on that
scenario's MDP.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, PolicySpaceTooLarge
from .mdp import DEFAULT_TOL, DeterministicPolicy, MixedPolicy, batch_solution
from .model import ScenarioSet, UpMdpTemplate

POLICY_CAP = 10**6
WEIGHT_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class RewardMatrix:
    values: np.ndarray  # (n_policies, n_scenarios)
    policies: tuple[DeterministicPolicy, ...]
    scenario_index: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self) -> str:
        n = self.values.shape[1]
        lines = ["policy," + ",".join(f"u{j}" for j in self.scenario_index[:n])]
        for i, row in enumerate(self.values):
            lines.append(f"{i}," + ",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class MixedStrategyPair:
    s_p: np.ndarray
    s_sigma: np.ndarray
    value: float
    iterations: int
    gap: float


def _as_array(R) -> np.ndarray:
    return R.values if isinstance(R, RewardMatrix) else np.asarray(R, dtype=float)


def count_deterministic_policies(template: UpMdpTemplate) -> int:
    nt = np.flatnonzero(~template.terminal)
    return math.prod(int(template.enabled[s].sum()) for s in nt)


def enumerate_deterministic_policies(template: UpMdpTemplate,
                                     cap: int = POLICY_CAP) -> list[DeterministicPolicy]:
    """All deterministic policies, lexicographic over non-terminal states.

    Terminal states always take their first enabled action.
    """
    count = count_deterministic_policies(template)
    if count > cap:
        raise PolicySpaceTooLarge(count, cap)
    nt = np.flatnonzero(~template.terminal)
    base = np.argmax(template.enabled, axis=1)
    choices = [np.flatnonzero(template.enabled[s]).tolist() for s in nt]
    out = []
    for combo in itertools.product(*choices):
        a = base.copy()
        a[nt] = combo
        out.append(DeterministicPolicy(a))
    return out


def reward_matrix(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray,
                  policies: list[DeterministicPolicy] | None = None, jobs: int = 1,
                  tol: float = DEFAULT_TOL) -> RewardMatrix:
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if policies is None:
        policies = enumerate_deterministic_policies(template)
    trans = template.instantiate_batch(samples)
    A = template.n_actions

    def row(pol):
        d = pol.as_behavioural(A).dist
        return batch_solution(trans, d, template.rho, template.goal, template.terminal, template.gamma, tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, policies))
    else:
        rows = [row(p) for p in policies]
    values = np.clip(np.array(rows).reshape(len(policies), len(samples)), 0.0, 1.0)
    return RewardMatrix(values, tuple(policies), tuple(range(len(samples))))


def exploitability(R, s_p: np.ndarray, s_sigma: np.ndarray) -> float:
    R = _as_array(R)
    return float(np.max(R @ s_sigma) - np.min(s_p @ R))


def fictitious_play(R, max_iters: int = 100_000, tol: float = 1e-3) -> MixedStrategyPair:
    """Simultaneous fictitious play with lowest-index tie-breaking.

    Both players best-respond to the other's empirical mixture; the
    empirical mixtures are returned together with the exploitability gap
    ``max_i (R s_sigma)_i - min_j (s_p R)_j``, which bounds how far either is
    from the game value.
    """
    R = _as_array(R)
    if R.size == 0:
        raise InvalidInput("reward matrix is empty")
    m, n = R.shape
    row_counts = np.zeros(m)
    col_counts = np.zeros(n)
    row_payoff = np.zeros(m)  # R @ col_counts
    col_payoff = np.zeros(n)  # row_counts @ R
    i, j = int(np.argmax(R.min(axis=1))), int(np.argmin(R.max(axis=0)))
    gap = math.inf
    t = 0
    while t < max_iters:
        row_counts[i] += 1
        col_counts[j] += 1
        row_payoff += R[:, j]
        col_payoff += R[i, :]
        t += 1
        gap = (row_payoff.max() - col_payoff.min()) / t
        if gap <= tol:
            break
        i = int(np.argmax(row_payoff))
        j = int(np.argmin(col_payoff))
    s_p = row_counts / t
    s_sigma = col_counts / t
    gap = exploitability(R, s_p, s_sigma)
    return MixedStrategyPair(s_p, s_sigma, float(s_p @ R @ s_sigma), t, max(gap, 0.0))


def stackelberg_maxmin(R) -> tuple[int, float, np.ndarray]:
    """Best deterministic row against a per-row worst column.

    Returns ``(row, value, argmin column of every row)``; ties go to the
    lowest index.
    """
    R = _as_array(R)
    worst = np.argmin(R, axis=1)
    mins = R[np.arange(R.shape[0]), worst]
    row = int(np.argmax(mins))
    return row, float(mins[row]), worst


@dataclass(frozen=True, eq=False)
class MneResult:
    policy: MixedPolicy
    lambda_star: float
    s_sigma: np.ndarray
    game: MixedStrategyPair
    matrix: RewardMatrix
    rows: tuple[int, ...]  # matrix rows kept in the mixed policy


def prune_strategy(s_p: np.ndarray, floor: float = WEIGHT_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    keep = np.flatnonzero(s_p >= floor)
    w = s_p[keep] / s_p[keep].sum()
    return keep, w


def mne_policy(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray, max_iters: int = 100_000,
               tol: float = 1e-3, weight_floor: float = WEIGHT_FLOOR, cap: int = POLICY_CAP,
               jobs: int = 1, matrix: RewardMatrix | None = None) -> MneResult:
    """Mixed policy from an approximate Nash equilibrium of the scenario game.

    ``lambda_star`` is the exact worst-scenario value of the returned mixed
    policy, ``min_j sum_i w_i R[i, j]``; it is never below
    ``value - gap`` of the fictitious-play run.
    """
    R = matrix if matrix is not None else reward_matrix(
        template, scenarios, enumerate_deterministic_policies(template, cap), jobs)
    eq = fictitious_play(R, max_iters, tol)
    keep, w = prune_strategy(eq.s_p, weight_floor)
    policy = MixedPolicy(tuple((R.policies[i], float(x)) for i, x in zip(keep, w)))
    lam = float(np.min(w @ R.values[keep]))
    return MneResult(policy, lam, eq.s_sigma, eq, R, tuple(int(i) for i in keep))


@dataclass(frozen=True, eq=False)
class StackelbergResult:
    policy: DeterministicPolicy
    lambda_star: float
    row: int
    worst_column: int
    matrix: RewardMatrix


def stackelberg_policy(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray,
                       cap: int = POLICY_CAP, jobs: int = 1,
                       matrix: RewardMatrix | None = None) -> StackelbergResult:
    R = matrix if matrix is not None else reward_matrix(
        template, scenarios, enumerate_deterministic_policies(template, cap), jobs)
    row, value, worst = stackelberg_maxmin(R)
    return StackelbergResult(R.policies[row], value, row, int(worst[row]), R)
