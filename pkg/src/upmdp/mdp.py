"""Concrete MDPs and reach-avoid model checking.

States are either goal states, safe states, or avoid states (neither goal
nor safe).  Goal and avoid states are terminal: they are absorbing, goal
states carry value 1 and avoid states value 0.  The satisfaction value of a
policy is the discounted probability of reaching a goal state while staying
in safe states, where the discount multiplies every transition taken::

    B(s) = sum_a pi(a|s) * sum_s' gamma * P(s, a)(s') * B(s')

on non-terminal states.  ``solution`` weights this by the initial
distribution.

Arrays are used throughout: transitions are ``(S, A, S)``, behavioural
policies ``(S, A)``, values ``(S,)``.  Functions whose name starts with
``batch_`` accept a leading batch axis on the transition tensor so that a
single policy can be checked against many sampled MDPs at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import (
    InvalidDiscount,
    InvalidPolicy,
    NonConvergence,
    TargetOutOfRange,
)

ROW_TOL = 1e-9
DEFAULT_TOL = 1e-9
MAX_ITER = 10**6


@dataclass(frozen=True, eq=False)
class Mdp:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    trans: np.ndarray  # (S, A, S)
    enabled: np.ndarray  # (S, A) bool
    rho: np.ndarray  # (S,)
    gamma: float
    goal: np.ndarray  # (S,) bool
    safe: np.ndarray  # (S,) bool

    @classmethod
    def build(cls, states: Sequence[str], actions: Sequence[str], rows: dict,
              rho: dict, gamma: float, goal: Sequence[str], safe: Sequence[str]) -> "Mdp":
        """Build from names; ``rows`` maps ``(state, action)`` to ``{succ: prob}``.

        A pair absent from ``rows`` is a disabled action.
        """
        s_idx = {s: i for i, s in enumerate(states)}
        a_idx = {a: i for i, a in enumerate(actions)}
        S, A = len(states), len(actions)
        trans = np.zeros((S, A, S))
        enabled = np.zeros((S, A), dtype=bool)
        for (s, a), row in rows.items():
            enabled[s_idx[s], a_idx[a]] = True
            for t, p in row.items():
                trans[s_idx[s], a_idx[a], s_idx[t]] += p
        r = np.zeros(S)
        for s, p in rho.items():
            r[s_idx[s]] = p
        return cls(tuple(states), tuple(actions), trans, enabled, r, float(gamma),
                   _mask(goal, s_idx, S), _mask(safe, s_idx, S))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def avoid(self) -> np.ndarray:
        return ~self.goal & ~self.safe

    @property
    def terminal(self) -> np.ndarray:
        return self.goal | self.avoid

    def enabled_actions(self, s: int) -> list[int]:
        return np.flatnonzero(self.enabled[s]).tolist()


def _mask(names, index, size):
    m = np.zeros(size, dtype=bool)
    for n in names:
        m[index[n]] = True
    return m


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    action_of: np.ndarray  # (S,) int

    def __post_init__(self):
        object.__setattr__(self, "action_of", np.asarray(self.action_of, dtype=int))

    def as_behavioural(self, n_actions: int) -> "BehaviouralPolicy":
        dist = np.zeros((len(self.action_of), n_actions))
        dist[np.arange(len(self.action_of)), self.action_of] = 1.0
        return BehaviouralPolicy(dist)

    def key(self) -> tuple[int, ...]:
        return tuple(int(a) for a in self.action_of)

    def __eq__(self, other):
        return isinstance(other, DeterministicPolicy) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class BehaviouralPolicy:
    dist: np.ndarray  # (S, A)

    def __post_init__(self):
        object.__setattr__(self, "dist", np.asarray(self.dist, dtype=float))

    @classmethod
    def uniform(cls, mdp: Mdp) -> "BehaviouralPolicy":
        en = mdp.enabled.astype(float)
        return cls(en / en.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class MixedPolicy:
    """Finite distribution over deterministic policies, drawn once per run."""

    atoms: tuple[tuple[DeterministicPolicy, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        atoms = tuple((p, float(w)) for p, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise InvalidPolicy("mixed policy needs at least one atom")
        w = np.array([w for _, w in atoms])
        if np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
            raise InvalidPolicy(f"mixed weights must be non-negative and sum to 1, got {w.tolist()}")
        if len({p.key() for p, _ in atoms}) != len(atoms):
            raise InvalidPolicy("mixed policy atoms must be distinct")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])


Policy = Union[DeterministicPolicy, BehaviouralPolicy, MixedPolicy]


def as_distribution(mdp: Mdp, pol: DeterministicPolicy | BehaviouralPolicy) -> np.ndarray:
    """(S, A) action distribution of a deterministic or behavioural policy, validated."""
    if isinstance(pol, DeterministicPolicy):
        a = pol.action_of
        if a.shape != (mdp.n_states,):
            raise InvalidPolicy(f"expected {mdp.n_states} actions, got shape {a.shape}")
        if np.any(a < 0) or np.any(a >= mdp.n_actions) or not np.all(mdp.enabled[np.arange(mdp.n_states), a]):
            raise InvalidPolicy("deterministic policy picks a disabled action")
        return pol.as_behavioural(mdp.n_actions).dist
    if isinstance(pol, BehaviouralPolicy):
        d = pol.dist
        if d.shape != (mdp.n_states, mdp.n_actions):
            raise InvalidPolicy(f"expected shape {(mdp.n_states, mdp.n_actions)}, got {d.shape}")
        if np.any(d < 0) or np.any(np.abs(d.sum(axis=1) - 1.0) > ROW_TOL):
            raise InvalidPolicy("behavioural rows must be distributions")
        if np.any(d[~mdp.enabled] > 0):
            raise InvalidPolicy("behavioural policy puts mass on a disabled action")
        return d
    raise TypeError(f"not a deterministic or behavioural policy: {type(pol).__name__}")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    state: str | None = None
    action: str | None = None
    detail: str = ""

    def __str__(self):
        where = ""
        if self.state is not None:
            where = f" at ({self.state}, {self.action})" if self.action is not None else f" at {self.state}"
        return f"{self.kind}{where}: {self.detail}"


def validate_mdp(mdp: Mdp) -> list[Violation]:
    out: list[Violation] = []
    S, A = mdp.n_states, mdp.n_actions
    if mdp.trans.shape != (S, A, S) or mdp.enabled.shape != (S, A) or mdp.rho.shape != (S,):
        return [Violation("shape", detail=f"trans {mdp.trans.shape}, enabled {mdp.enabled.shape}, rho {mdp.rho.shape}")]
    if not 0.0 < mdp.gamma <= 1.0:
        out.append(Violation("discount", detail=f"gamma={mdp.gamma} not in (0, 1]"))
    if abs(mdp.rho.sum() - 1.0) > ROW_TOL or np.any(mdp.rho < 0):
        out.append(Violation("initial-distribution", detail=f"sum={mdp.rho.sum()!r}"))
    terminal = mdp.terminal
    for s in range(S):
        acts = np.flatnonzero(mdp.enabled[s])
        if acts.size == 0:
            out.append(Violation("no-enabled-action", mdp.states[s], detail="state has no enabled action"))
        for a in acts:
            row = mdp.trans[s, a]
            sn, an = mdp.states[s], mdp.actions[a]
            if np.any(row < 0) or np.any(row > 1):
                out.append(Violation("row-range", sn, an, detail="entry outside [0, 1]"))
            if abs(row.sum() - 1.0) > ROW_TOL:
                out.append(Violation("row-sum", sn, an, detail=f"sum={row.sum()!r}"))
            if terminal[s] and abs(row[s] - 1.0) > ROW_TOL:
                label = "goal" if mdp.goal[s] else "avoid"
                out.append(Violation("not-absorbing", sn, an,
                                     detail=f"{label} state keeps self-loop probability {row[s]!r}"))
    return out


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------

def induced_chain(trans: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """(…, S, S) Markov chain induced by an action distribution."""
    return np.einsum("...sat,sa->...st", trans, dist)


def batch_values(trans: np.ndarray, dist: np.ndarray, goal: np.ndarray, terminal: np.ndarray,
                 gamma: float, tol: float = DEFAULT_TOL, method: str = "solve",
                 max_iter: int = MAX_ITER) -> np.ndarray:
    """State values of one policy on a stack of transition tensors ``(K, S, A, S)``.

    With ``gamma < 1`` the fixed point is found by a direct linear solve
    (``method="solve"``) or by iteration with the contraction stop
    ``gamma * delta / (1 - gamma) < tol``.  ``gamma == 1`` always iterates from
    zero, which yields the least fixed point, i.e. the reach probability.
    """
    chain = induced_chain(trans, dist)
    batch_shape = chain.shape[:-2]
    S = chain.shape[-1]
    nt = np.flatnonzero(~terminal)
    g = np.flatnonzero(goal)
    v = np.zeros(batch_shape + (S,))
    v[..., g] = 1.0
    if nt.size == 0:
        return v
    inner = chain[..., nt[:, None], nt]
    direct = gamma * chain[..., nt[:, None], g].sum(axis=-1)
    if gamma < 1.0 and method == "solve":
        lhs = np.eye(nt.size) - gamma * inner
        v[..., nt] = np.linalg.solve(lhs, direct[..., None])[..., 0]
    else:
        x = np.zeros(batch_shape + (nt.size,))
        for _ in range(max_iter):
            x_new = direct + gamma * np.einsum("...ij,...j->...i", inner, x)
            delta = np.max(np.abs(x_new - x)) if x.size else 0.0
            x = x_new
            if gamma < 1.0:
                if gamma * delta / (1.0 - gamma) < tol:
                    break
            elif delta < tol:
                break
        else:
            raise NonConvergence(f"value iteration did not reach tol={tol} within {max_iter} sweeps")
        v[..., nt] = x
    return np.clip(v, 0.0, 1.0)


def batch_solution(trans: np.ndarray, dist: np.ndarray, rho: np.ndarray, goal: np.ndarray,
                   terminal: np.ndarray, gamma: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Satisfaction value of one policy on each MDP of a transition stack."""
    return batch_values(trans, dist, goal, terminal, gamma, tol) @ rho


def bellman_value(mdp: Mdp, pol: DeterministicPolicy | BehaviouralPolicy,
                  tol: float = DEFAULT_TOL, method: str = "solve",
                  max_iter: int = MAX_ITER) -> np.ndarray:
    """Per-state satisfaction values (1 on goal, 0 on avoid states)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    dist = as_distribution(mdp, pol)
    return batch_values(mdp.trans, dist, mdp.goal, mdp.terminal, mdp.gamma, tol, method, max_iter)


def solution(mdp: Mdp, pol: Policy, tol: float = DEFAULT_TOL) -> float:
    """Initial-distribution weighted satisfaction value of any policy class.

    A mixed policy commits to one deterministic atom per run, so its value is
    the weighted sum of atom values.
    """
    if isinstance(pol, MixedPolicy):
        return float(sum(w * solution(mdp, p, tol) for p, w in pol.atoms))
    return float(bellman_value(mdp, pol, tol) @ mdp.rho)


def q_function(mdp: Mdp, pol: DeterministicPolicy | BehaviouralPolicy,
               tol: float = DEFAULT_TOL) -> np.ndarray:
    """(S, A) action values ``gamma * P(s, a) . B``; terminal rows hold ``B(s)``.

    Disabled actions are reported as 0.
    """
    v = bellman_value(mdp, pol, tol)
    q = mdp.gamma * (mdp.trans @ v)
    term = mdp.terminal
    q[term] = v[term][:, None]
    q[~mdp.enabled] = 0.0
    return np.clip(q, 0.0, 1.0)


def occupancy(mdp: Mdp, pol: DeterministicPolicy | BehaviouralPolicy,
              tol: float = 1e-12) -> np.ndarray:
    """Normalised discounted state occupancy ``(1 - gamma) sum_k gamma^k P_k``.

    The geometric series is summed by repeated doubling until the neglected
    tail mass ``gamma^n`` drops below ``tol``.
    """
    if mdp.gamma >= 1.0:
        raise InvalidDiscount("occupancy measure requires gamma < 1")
    dist = as_distribution(mdp, pol)
    step = mdp.gamma * induced_chain(mdp.trans, dist)
    total = np.eye(mdp.n_states)
    power = step
    tail = mdp.gamma
    while tail >= tol:
        total = total + power @ total
        power = power @ power
        tail = tail * tail
    return (1.0 - mdp.gamma) * (mdp.rho @ total)


# ---------------------------------------------------------------------------
# optimisation over deterministic policies
# ---------------------------------------------------------------------------

def _default_actions(mdp: Mdp) -> np.ndarray:
    return np.argmax(mdp.enabled, axis=1)


def optimal_value_and_policy(mdp: Mdp, direction: str = "max", tol: float = DEFAULT_TOL,
                             max_iter: int = MAX_ITER) -> tuple[DeterministicPolicy, float]:
    """Best (``max``) or worst (``min``) deterministic policy and its value.

    Value iteration to the contraction tolerance, then, for ``gamma < 1``,
    policy-iteration sweeps until the greedy policy is stable, so the
    returned value is the exact value of the returned policy.  Ties between
    actions go to the lowest action index.
    """
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    sign = 1.0 if direction == "max" else -1.0
    nt = ~mdp.terminal
    v = mdp.goal.astype(float)
    pad = np.where(mdp.enabled, 0.0, -np.inf)

    def greedy(values):
        q = sign * mdp.gamma * (mdp.trans @ values) + pad
        return q, np.argmax(q, axis=1)

    for _ in range(max_iter):
        q, _ = greedy(v)
        best = sign * q.max(axis=1)
        delta = np.max(np.abs(best[nt] - v[nt])) if nt.any() else 0.0
        v = np.where(nt, best, v)
        if mdp.gamma < 1.0:
            if mdp.gamma * delta / (1.0 - mdp.gamma) < tol:
                break
        elif delta < tol:
            break
    else:
        raise NonConvergence(f"value iteration did not reach tol={tol} within {max_iter} sweeps")

    actions = np.where(nt, greedy(v)[1], _default_actions(mdp))
    if mdp.gamma < 1.0:
        for _ in range(10 * mdp.n_states + 10):
            pol = DeterministicPolicy(actions)
            v = bellman_value(mdp, pol, tol)
            q, cand = greedy(v)
            current = q[np.arange(mdp.n_states), actions]
            improve = nt & (q[np.arange(mdp.n_states), cand] > current + 1e-12)
            if not improve.any():
                break
            actions = np.where(improve, cand, actions)
    pol = DeterministicPolicy(actions)
    return pol, solution(mdp, pol, tol)


# ---------------------------------------------------------------------------
# realisation equivalence
# ---------------------------------------------------------------------------

def equivalent_mixed(mdp: Mdp, pol: BehaviouralPolicy, tol: float = DEFAULT_TOL) -> MixedPolicy:
    """Mixed policy over the best and worst deterministic policies with the same value."""
    hi_pol, lam_max = optimal_value_and_policy(mdp, "max", tol)
    lo_pol, lam_min = optimal_value_and_policy(mdp, "min", tol)
    target = solution(mdp, pol, tol)
    if lam_max - lam_min < tol or hi_pol == lo_pol:
        return MixedPolicy(((hi_pol, 1.0),))
    w = min(1.0, max(0.0, (target - lam_min) / (lam_max - lam_min)))
    if w == 1.0:
        return MixedPolicy(((hi_pol, 1.0),))
    if w == 0.0:
        return MixedPolicy(((lo_pol, 1.0),))
    return MixedPolicy(((hi_pol, w), (lo_pol, 1.0 - w)))


@dataclass(frozen=True)
class Realisation:
    policy: BehaviouralPolicy
    t: float
    steps: int
    value: float


def realise_mixed(mdp: Mdp, pol: MixedPolicy, tol: float = 1e-6) -> Realisation:
    """Bisection along ``t * best + (1 - t) * worst`` for a behavioural twin of ``pol``.

    The satisfaction value is continuous along this segment when
    ``gamma < 1`` and spans ``[lam_min, lam_max]``, so bisection on the
    bracket ``f(lo) <= target <= f(hi)`` terminates without monotonicity.
    """
    if mdp.gamma >= 1.0:
        raise InvalidDiscount("behavioural realisation requires gamma < 1")
    inner_tol = min(DEFAULT_TOL, tol * 1e-3)
    hi_pol, lam_max = optimal_value_and_policy(mdp, "max", inner_tol)
    lo_pol, lam_min = optimal_value_and_policy(mdp, "min", inner_tol)
    target = solution(mdp, pol, inner_tol)
    if target < lam_min - tol or target > lam_max + tol:
        raise TargetOutOfRange(f"target {target} outside [{lam_min}, {lam_max}]")
    hi = hi_pol.as_behavioural(mdp.n_actions).dist
    lo = lo_pol.as_behavioural(mdp.n_actions).dist

    def at(t):
        d = t * hi + (1.0 - t) * lo
        return d, float(batch_solution(mdp.trans, d, mdp.rho, mdp.goal, mdp.terminal, mdp.gamma, inner_tol))

    if abs(lam_max - target) <= tol:
        return Realisation(BehaviouralPolicy(hi), 1.0, 0, lam_max)
    if abs(lam_min - target) <= tol:
        return Realisation(BehaviouralPolicy(lo), 0.0, 0, lam_min)
    a, b = 0.0, 1.0
    steps = 0
    while True:
        steps += 1
        m = 0.5 * (a + b)
        d, val = at(m)
        if abs(val - target) <= tol or b - a < 1e-15:
            return Realisation(BehaviouralPolicy(d), m, steps, val)
        if val < target:
            a = m
        else:
            b = m


def equivalent_behavioural(mdp: Mdp, pol: MixedPolicy, tol: float = 1e-6) -> BehaviouralPolicy:
    return realise_mixed(mdp, pol, tol).policy
