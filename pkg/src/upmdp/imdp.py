"""Interval MDPs built from scenario min/max, solved against a rectangular adversary."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleIntervals, NonConvergence
from .mdp import DEFAULT_TOL, MAX_ITER, DeterministicPolicy
from .model import ScenarioSet, UpMdpTemplate

FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class IntervalMdp:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    enabled: np.ndarray
    lo: np.ndarray  # (S, A, S)
    hi: np.ndarray  # (S, A, S)
    rho: np.ndarray
    gamma: float
    goal: np.ndarray
    safe: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.goal | (~self.goal & ~self.safe)

    def check_feasible(self) -> None:
        lo_sum = self.lo.sum(axis=-1)
        hi_sum = self.hi.sum(axis=-1)
        bad = self.enabled & ((lo_sum > 1.0 + FEAS_TOL) | (hi_sum < 1.0 - FEAS_TOL))
        if bad.any():
            s, a = np.argwhere(bad)[0]
            raise InfeasibleIntervals(self.states[s], self.actions[a], float(lo_sum[s, a]), float(hi_sum[s, a]))

    def to_json(self) -> dict:
        """Model-file layout with ``[lo, hi]`` pairs in place of expressions."""
        rows = []
        for s, a in np.argwhere(self.enabled):
            succ = np.flatnonzero(self.hi[s, a] > 0)
            rows.append({"from": self.states[s], "action": self.actions[a],
                         "to": {self.states[t]: [float(self.lo[s, a, t]), float(self.hi[s, a, t])] for t in succ}})
        return {
            "states": list(self.states),
            "actions": list(self.actions),
            "gamma": self.gamma,
            "initial": {self.states[i]: float(p) for i, p in enumerate(self.rho) if p > 0},
            "labels": {"goal": [s for s, g in zip(self.states, self.goal) if g],
                       "safe": [s for s, g in zip(self.states, self.safe) if g]},
            "transitions": rows,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def build_interval_mdp(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray) -> IntervalMdp:
    """Exact per-transition min and max over the instantiated scenarios."""
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if len(samples) == 0:
        raise ValueError("need at least one scenario")
    lo = hi = None
    for start in range(0, len(samples), 1024):
        trans = template.instantiate_batch(samples[start:start + 1024], offset=start)
        blo, bhi = trans.min(axis=0), trans.max(axis=0)
        lo = blo if lo is None else np.minimum(lo, blo)
        hi = bhi if hi is None else np.maximum(hi, bhi)
    return IntervalMdp(template.states, template.actions, template.enabled, lo, hi, template.rho,
                       template.gamma, template.goal, template.safe)


def worst_case_distribution(lo: np.ndarray, hi: np.ndarray, values: np.ndarray,
                            adversary: str = "min") -> np.ndarray:
    """Adversarial distributions inside ``[lo, hi]`` rows (last axis = successors).

    Every successor starts at its lower bound; the free mass ``1 - sum lo`` then
    fills successors in order of value (lowest first when the adversary
    minimises), each up to its upper bound.  Ties go to the lower state index.
    """
    order = np.argsort(values if adversary == "min" else -values, kind="stable")
    lo_o = lo[..., order]
    room = (hi - lo)[..., order]
    free = 1.0 - lo.sum(axis=-1, keepdims=True)
    before = np.cumsum(room, axis=-1) - room
    take = np.clip(free - before, 0.0, room)
    out = np.empty_like(lo)
    out[..., order] = lo_o + take
    return out


def robust_value_iteration(imdp: IntervalMdp, direction: str = "max", tol: float = DEFAULT_TOL,
                           max_iter: int = MAX_ITER) -> tuple[DeterministicPolicy, float]:
    """Pessimistic value iteration; the adversary picks each (s, a) row independently.

    Returns the greedy policy at the fixed point and the robust value from
    the initial distribution.
    """
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    imdp.check_feasible()
    adversary = "min" if direction == "max" else "max"
    sign = 1.0 if direction == "max" else -1.0
    nt = ~imdp.terminal
    pad = np.where(imdp.enabled, 0.0, -np.inf)
    v = imdp.goal.astype(float)
    gamma = imdp.gamma

    def backup(values):
        dist = worst_case_distribution(imdp.lo, imdp.hi, values, adversary)
        return sign * gamma * (dist @ values) + pad

    for _ in range(max_iter):
        q = backup(v)
        best = sign * q.max(axis=1)
        delta = np.max(np.abs(best[nt] - v[nt])) if nt.any() else 0.0
        v = np.where(nt, best, v)
        if gamma < 1.0:
            if gamma * delta / (1.0 - gamma) < tol:
                break
        elif delta < tol:
            break
    else:
        raise NonConvergence(f"robust value iteration did not reach tol={tol} within {max_iter} sweeps")
    actions = np.where(nt, np.argmax(backup(v), axis=1), np.argmax(imdp.enabled, axis=1))
    return DeterministicPolicy(actions), float(v @ imdp.rho)
