"""Scenario-approach risk certificates.

Two families of bounds are provided:

* the two-sided wait-and-judge bound ``(eps_lo, eps_hi)`` obtained from the
  two roots of the polynomial ``xi_k(t)``, used for mixed and behavioural
  policies under a non-degeneracy assumption;
* the one-sided bound ``mu(k) = 1 - (beta / (N * C(N, k)))^(1/(N-k))``, which
  needs no non-degeneracy and is used for interval-MDP and deterministic
  max-min policies.

Support counts for each policy class are computed here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import bdtr, gammaln, logsumexp

from . import rng as rngmod
from .errors import InvalidInput, NoSignChange
from .evaluate import scenario_values
from .imdp import IntervalMdp
from .mdp import Policy
from .model import ScenarioSet, UpMdpTemplate, draw_parameters

SUPPORT_TOL = 1e-4
WEIGHT_FLOOR = 1e-9
ENDPOINT_TOL = 1e-12
BLOCK_TOL = 1e-9
RISK_MARGIN = 1e-9


def _log_binom(n, k):
    n = np.asarray(n, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _check_nkb(N: int, k: int, beta: float) -> None:
    if N < 1 or not 0 <= k <= N:
        raise InvalidInput(f"need N >= 1 and 0 <= k <= N, got N={N}, k={k}")
    if not 0.0 < beta < 1.0:
        raise InvalidInput(f"beta must lie in (0, 1), got {beta}")


def _xi_terms(N: int, k: int, beta: float):
    """(log coefficient, exponent) of the positive and negative parts of ``xi_k``."""
    tail_i = np.arange(N + 1, 4 * N + 1)
    neg_c = [math.log(beta / (6 * N)) + _log_binom(tail_i, k)]
    neg_e = [tail_i - k]
    if k < N:
        pos = (float(_log_binom(N, k)), N - k)
        head_i = np.arange(k, N)
        neg_c.insert(0, math.log(beta / (2 * N)) + _log_binom(head_i, k))
        neg_e.insert(0, head_i - k)
    else:
        pos = (0.0, 0)
    return pos, np.concatenate(neg_c), np.concatenate(neg_e).astype(float)


def xi_value(N: int, k: int, beta: float, t: float) -> float:
    """Direct evaluation of ``xi_k(t)``; overflows for large ``t`` and ``N``."""
    (pc, pe), nc, ne = _xi_terms(N, k, beta)
    t = float(t)
    return math.exp(pc) * t**pe - float(np.sum(np.exp(nc) * t**ne))


def xi_relative_residual(N: int, k: int, beta: float, t: float) -> float:
    """``|xi_k(t)|`` divided by the magnitude of its largest term."""
    (pc, pe), nc, ne = _xi_terms(N, k, beta)
    if t == 0:
        pos = math.exp(pc) if pe == 0 else 0.0
        neg = np.exp(nc[ne == 0])
        return abs(pos - neg.sum()) / max(pos, float(neg.max(initial=0.0)))
    lt = math.log(t)
    lp = pc + pe * lt
    ln = nc + ne * lt
    top = max(lp, float(ln.max()))
    return abs(math.exp(lp - top) - float(np.exp(ln - top).sum()))


def xi_roots(N: int, k: int, beta: float) -> tuple[float, float]:
    """Roots ``(t_lo, t_hi)`` of ``xi_k`` on ``[0, inf)``; ``t_lo = 0`` when ``k = N``.

    Works on ``u = log t`` with ``g(u) = log(positive part) - log(negative
    part)``, both parts accumulated by log-sum-exp so that terms of degree up
    to ``4N - k`` never overflow.  ``g`` is concave (a linear term minus a
    log-sum-exp), so for ``k < N`` its maximiser separates the two roots.
    """
    _check_nkb(N, k, beta)
    (pc, pe), nc, ne = _xi_terms(N, k, beta)

    def g(u):
        return (pc + pe * u) - logsumexp(nc + ne * u)

    def slope(u):
        w = nc + ne * u
        return pe - float(np.exp(w - logsumexp(w)) @ ne)

    def expand(f, u0, step, want_sign):
        u = u0 + step
        for _ in range(80):
            if np.sign(f(u)) == want_sign:
                return u
            step *= 2.0
            u = u0 + step
        raise NoSignChange(f"no sign change for xi_k (N={N}, k={k}, beta={beta})")

    def solve(f, a, b):
        return brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=1000)

    cap = 40 * math.log(2.0)
    if k == N:
        # g decreases from +inf: single root
        a = 0.0 if g(0.0) > 0 else expand(g, 0.0, -1.0, 1.0)
        b = expand(g, a, 1.0, -1.0)
        if b > cap:
            raise NoSignChange("upper root beyond 2^40")
        return 0.0, math.exp(solve(g, a, b))
    a = 0.0 if slope(0.0) > 0 else expand(slope, 0.0, -1.0, 1.0)
    b = expand(slope, a, 1.0, -1.0)
    peak = solve(slope, a, b)
    if g(peak) <= 0:
        raise NoSignChange(f"xi_k has no positive part for N={N}, k={k}, beta={beta}")
    lo = expand(g, peak, -1.0, -1.0)
    hi = expand(g, peak, 1.0, -1.0)
    if hi > cap:
        raise NoSignChange("upper root beyond 2^40")
    return math.exp(solve(g, lo, peak)), math.exp(solve(g, peak, hi))


def epsilon_bounds(N: int, k: int, beta: float) -> tuple[float, float]:
    t_lo, t_hi = xi_roots(N, k, beta)
    return max(0.0, 1.0 - t_hi), 1.0 - t_lo


def mu_bound(N: int, k: int, beta: float) -> float:
    _check_nkb(N, k, beta)
    if k == N:
        return 1.0
    log_root = (math.log(beta) - math.log(N) - float(_log_binom(N, k))) / (N - k)
    return float(-math.expm1(log_root))


def classical_convex_bound(N: int, d: int, beta: float) -> float:
    """Smallest ``eps`` with ``sum_{i<d} C(N,i) eps^i (1-eps)^(N-i) <= beta``."""
    if not 1 <= d <= N:
        raise InvalidInput(f"need 1 <= d <= N, got d={d}, N={N}")
    if not 0.0 < beta < 1.0:
        raise InvalidInput(f"beta must lie in (0, 1), got {beta}")
    if d == 1:
        return float(-math.expm1(math.log(beta) / N))
    return float(brentq(lambda e: bdtr(d - 1, N, e) - beta, 0.0, 1.0, xtol=1e-15, rtol=1e-14))


# ---------------------------------------------------------------------------
# support counting
# ---------------------------------------------------------------------------

def support_count_mixed(s_sigma, floor: float = WEIGHT_FLOOR) -> int:
    return int(np.count_nonzero(np.asarray(s_sigma) > floor))


def support_count_behavioural(values, lambda_star: float, tol: float = SUPPORT_TOL) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(values) - lambda_star) <= tol))


def support_count_imdp(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray,
                       imdp: IntervalMdp, tol: float = ENDPOINT_TOL) -> int:
    """Scenarios that sit at an endpoint of at least one parametric transition interval.

    Transitions whose expression mentions no parameter are skipped; they
    cannot vary between scenarios.
    """
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    keys = sorted({(e.state, e.action, e.succ) for e in template.entries
                   if not e.is_constant and not template.terminal[e.state]})
    if not keys:
        return 0
    s, a, t = (np.array(x) for x in zip(*keys))
    hit = np.zeros(len(samples), dtype=bool)
    for start in range(0, len(samples), 1024):
        trans = template.instantiate_batch(samples[start:start + 1024], offset=start)
        p = trans[:, s, a, t]
        at_end = (np.abs(p - imdp.lo[s, a, t]) <= tol) | (np.abs(p - imdp.hi[s, a, t]) <= tol)
        hit[start:start + len(p)] = at_end.any(axis=1)
    return int(hit.sum())


def _worst_column(R: np.ndarray, row_star: int) -> int:
    return int(np.argmin(R[row_star]))


def support_bound_det_blocked(R, row_star: int, lambda_star: float) -> int:
    """Rows that do at least as well as ``lambda_star`` on the optimal row's worst scenario."""
    R = getattr(R, "values", R)
    R = np.asarray(R, dtype=float)
    col = _worst_column(R, row_star)
    return int(np.count_nonzero(R[:, col] >= lambda_star - BLOCK_TOL))


def blocking_sets(R, lambda_star: float, row_star: int | None = None) -> list[set[int]]:
    """For each blocked row, the scenarios that keep its worst value at or below ``lambda_star``."""
    R = np.asarray(getattr(R, "values", R), dtype=float)
    if row_star is None:
        row_star = int(np.argmax(R.min(axis=1)))
    col = _worst_column(R, row_star)
    out = []
    for i in np.flatnonzero(R[:, col] >= lambda_star - BLOCK_TOL):
        out.append(set(np.flatnonzero(R[i] <= lambda_star + BLOCK_TOL).tolist()))
    return out


def hitting_set_bound(sets: list[set[int]], mode: str = "greedy") -> int:
    """Upper bound on the minimum hitting set of ``sets``.

    ``union`` returns the size of the union; ``greedy`` builds a hitting set
    by repeatedly taking the element that hits the most remaining sets
    (lowest index on ties).
    """
    sets = [s for s in sets]
    if any(len(s) == 0 for s in sets):
        raise InvalidInput("a blocking set is empty; no hitting set exists")
    if mode == "union":
        return len(set().union(*sets)) if sets else 0
    if mode != "greedy":
        raise ValueError(f"unknown mode {mode!r}")
    remaining = list(sets)
    chosen = 0
    while remaining:
        counts: dict[int, int] = {}
        for s in remaining:
            for u in s:
                counts[u] = counts.get(u, 0) + 1
        pick = min(counts, key=lambda u: (-counts[u], u))
        remaining = [s for s in remaining if pick not in s]
        chosen += 1
    return chosen


def support_bound_det_hitting(R, lambda_star: float, mode: str = "greedy",
                              row_star: int | None = None) -> int:
    return hitting_set_bound(blocking_sets(R, lambda_star, row_star), mode)


def support_by_removal(solve, samples: np.ndarray, tol: float = 1e-6, max_n: int = 50) -> list[int]:
    """Audit: indices whose removal alone changes the optimal value by more than ``tol``.

    ``solve`` maps a sample array to an optimal value.  Costs ``N + 1``
    solves, hence the size cap.
    """
    samples = np.asarray(samples)
    if len(samples) > max_n:
        raise InvalidInput(f"removal audit limited to N <= {max_n}, got {len(samples)}")
    base = solve(samples)
    out = []
    for i in range(len(samples)):
        if abs(solve(np.delete(samples, i, axis=0)) - base) > tol:
            out.append(i)
    return out


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

METHODS = ("imdp", "mixed", "behavioural", "deterministic-maxmin", "per-sample")


@dataclass(frozen=True)
class RiskCertificate:
    method: str
    n: int
    beta: float
    k: int
    lambda_star: float
    eps_lo: float | None = None
    eps_hi: float | None = None
    mu: float | None = None
    convex: float | None = None
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)

    @property
    def bound_kind(self) -> str:
        if self.eps_hi is not None:
            return "eps_hi"
        if self.mu is not None:
            return "mu"
        return "convex"

    @property
    def bound(self) -> float:
        return {"eps_hi": self.eps_hi, "mu": self.mu, "convex": self.convex}[self.bound_kind]

    def to_json(self) -> dict:
        out = {"method": self.method, "n": self.n, "beta": self.beta, "k": self.k}
        if self.bound_kind == "eps_hi":
            out.update(eps_lo=self.eps_lo, eps_hi=self.eps_hi)
        elif self.bound_kind == "mu":
            out["mu"] = self.mu
        else:
            out["convex"] = self.convex
        out.update(lambda_star=self.lambda_star, seed=self.seed, tolerances=dict(self.tolerances))
        return out


def certificate(method: str, lambda_star: float, N: int, beta: float, k: int,
                seed: int | None = None, tolerances: dict | None = None) -> RiskCertificate:
    """Attach the bound matching ``method`` to a synthesised value.

    ``k`` is the support count (or its upper bound) for the method; for
    ``per-sample`` it is the number of support constraints of the convex
    per-sample problem, normally 1.
    """
    if method not in METHODS:
        raise InvalidInput(f"unknown method {method!r}")
    if not 0 <= k <= N:
        raise InvalidInput(f"support count {k} outside [0, {N}]")
    tol = dict(tolerances or {})
    if method in ("mixed", "behavioural"):
        lo, hi = epsilon_bounds(N, k, beta)
        return RiskCertificate(method, N, beta, k, lambda_star, eps_lo=lo, eps_hi=hi, seed=seed, tolerances=tol)
    if method in ("imdp", "deterministic-maxmin"):
        return RiskCertificate(method, N, beta, k, lambda_star, mu=mu_bound(N, k, beta), seed=seed,
                               tolerances=tol)
    return RiskCertificate(method, N, beta, k, lambda_star, convex=classical_convex_bound(N, max(k, 1), beta),
                           seed=seed, tolerances=tol)


def empirical_risk(template: UpMdpTemplate, policy: Policy, lambda_star: float, M: int, seed: int,
                   jobs: int = 1, purpose: str = rngmod.VALIDATION) -> float:
    """Fraction of ``M`` fresh scenarios on which ``policy`` falls below ``lambda_star``."""
    if M < 1:
        raise InvalidInput("need at least one validation draw")
    samples = draw_parameters(template, M, rngmod.stream(seed, purpose))
    vals = scenario_values(template, policy, samples, jobs=jobs)
    return float(np.mean(vals < lambda_star - RISK_MARGIN))
