"""Projected subgradient ascent on the worst-scenario value of a behavioural policy."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import EmptyInput, EmptyVector, InvalidDiscount
from .mdp import DEFAULT_TOL, BehaviouralPolicy, Mdp, batch_solution, occupancy, q_function
from .model import ScenarioSet, UpMdpTemplate


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort based)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise EmptyVector("cannot project an empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def project_rows(x: np.ndarray, enabled: np.ndarray) -> np.ndarray:
    """Project every row onto the simplex over its enabled actions."""
    out = np.zeros_like(x)
    for s in range(x.shape[0]):
        acts = np.flatnonzero(enabled[s])
        out[s, acts] = project_simplex(x[s, acts])
    return out


def gradient(mdp: Mdp, pol: BehaviouralPolicy, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Partial derivatives of ``solution`` in each ``pi(a|s)``, with occupancy and Q frozen.

    Equal to ``eta(s) * Q(s, a) / (1 - gamma)``: the normalised occupancy times
    the action value, rescaled to expected discounted visits.  Terminal
    states and disabled actions get 0 since the value does not depend on them.
    """
    if mdp.gamma >= 1.0:
        raise InvalidDiscount("gradient requires gamma < 1")
    eta = occupancy(mdp, pol, min(tol, 1e-12))
    q = q_function(mdp, pol, tol)
    g = (eta / (1.0 - mdp.gamma))[:, None] * q
    g[mdp.terminal] = 0.0
    g[~mdp.enabled] = 0.0
    return g


def worst_case_sample(values, tol: float, gen: np.random.Generator) -> int:
    """Uniform random index among the values within ``tol`` of the minimum."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInput("no scenario values")
    ties = np.flatnonzero(values <= values.min() + tol)
    if ties.size == 1:
        return int(ties[0])
    return int(ties[gen.integers(ties.size)])


@dataclass(frozen=True)
class SubgradientConfig:
    step: str = "sqrt"  # "sqrt": c/sqrt(k+1), "harmonic": c/(k+1)
    c: float = 1.0
    max_iters: int = 10_000
    window: int = 200
    conv_tol: float = 1e-5
    seed: int = 0
    value_tol: float = 1e-4
    init: str = "uniform"  # or "dirichlet"
    model_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("step constant must be positive")
        if self.step not in ("sqrt", "harmonic"):
            raise ValueError(f"unknown step schedule {self.step!r}")
        if self.init not in ("uniform", "dirichlet"):
            raise ValueError(f"unknown initialisation {self.init!r}")

    def alpha(self, k: int) -> float:
        return self.c / math.sqrt(k + 1) if self.step == "sqrt" else self.c / (k + 1)


@dataclass
class IterationTrace:
    iters: list[int] = field(default_factory=list)
    worst_idx: list[int] = field(default_factory=list)
    f: list[float] = field(default_factory=list)
    f_star: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)

    def append(self, k, j, f, f_star, alpha):
        self.iters.append(k)
        self.worst_idx.append(j)
        self.f.append(f)
        self.f_star.append(f_star)
        self.alpha.append(alpha)

    def __len__(self):
        return len(self.iters)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iter,worst_idx,f,f_star,alpha\n")
        for row in zip(self.iters, self.worst_idx, self.f, self.f_star, self.alpha):
            buf.write("{},{},{!r},{!r},{!r}\n".format(*row))
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SubgradientResult:
    policy: BehaviouralPolicy
    lambda_star: float
    trace: IterationTrace
    values: np.ndarray  # per-scenario value of the returned policy


def _initial_policy(template: UpMdpTemplate, cfg: SubgradientConfig) -> np.ndarray:
    en = template.enabled.astype(float)
    if cfg.init == "uniform":
        return en / en.sum(axis=1, keepdims=True)
    gen = rngmod.stream(cfg.seed, rngmod.INIT)
    d = gen.dirichlet(np.ones(template.n_actions), size=template.n_states) * en
    return d / d.sum(axis=1, keepdims=True)


def subgradient_ascent(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray,
                       config: SubgradientConfig = SubgradientConfig()) -> SubgradientResult:
    """Maximise ``min_u solution(M[u], pi)`` over behavioural policies.

    Each iteration evaluates the current policy on every scenario, picks a
    worst scenario (random among near-ties), steps along that scenario's
    gradient and projects each state's row back onto the simplex.  The best
    policy seen so far (the record) is returned, not the last iterate.
    """
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if len(samples) == 0:
        raise EmptyInput("subgradient ascent needs at least one scenario")
    if template.gamma >= 1.0:
        raise InvalidDiscount("subgradient ascent requires gamma < 1")
    trans = template.instantiate_batch(samples)
    rho, goal, term, gamma = template.rho, template.goal, template.terminal, template.gamma
    gen = rngmod.stream(config.seed, rngmod.TIE_BREAK)

    pi = _initial_policy(template, config)
    best_pi, best_vals, f_star = pi, None, -math.inf
    trace = IterationTrace()
    for k in range(config.max_iters):
        vals = batch_solution(trans, pi, rho, goal, term, gamma, config.model_tol)
        f = float(vals.min())
        if f > f_star:
            f_star, best_pi, best_vals = f, pi, vals
        j = worst_case_sample(vals, config.value_tol, gen)
        alpha = config.alpha(k)
        trace.append(k, j, f, f_star, alpha)
        if k >= config.window and f_star - trace.f_star[k - config.window] < config.conv_tol:
            break
        g = gradient(template.mdp(trans[j]), BehaviouralPolicy(pi), config.model_tol)
        step = pi + alpha * g
        nt = ~term
        pi = pi.copy()
        pi[nt] = project_rows(step[nt], template.enabled[nt])
    return SubgradientResult(BehaviouralPolicy(best_pi), float(best_vals.min()), trace, best_vals)

