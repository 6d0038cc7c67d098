"""Evaluate one policy of any class on many parameter vectors."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .mdp import DEFAULT_TOL, MixedPolicy, Policy, as_distribution, batch_solution
from .model import UpMdpTemplate

CHUNK = 2048


def scenario_values(template: UpMdpTemplate, pol: Policy, samples: np.ndarray,
                    tol: float = DEFAULT_TOL, jobs: int = 1) -> np.ndarray:
    """Satisfaction value of ``pol`` on ``M[v]`` for every row ``v`` of ``samples``.

    Work is split into fixed chunks so the result does not depend on ``jobs``.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, template.n_params)
    if len(samples) == 0:
        return np.zeros(0)
    skeleton = template.mdp(np.zeros((template.n_states, template.n_actions, template.n_states)))
    if isinstance(pol, MixedPolicy):
        atoms = [(as_distribution(skeleton, p), w) for p, w in pol.atoms]
    else:
        atoms = [(as_distribution(skeleton, pol), 1.0)]

    def chunk(start):
        trans = template.instantiate_batch(samples[start:start + CHUNK], offset=start)
        return sum(w * batch_solution(trans, d, template.rho, template.goal, template.terminal,
                                      template.gamma, tol) for d, w in atoms)

    starts = range(0, len(samples), CHUNK)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    return np.concatenate(parts)
