"""Uncertain parametric MDP templates, parameter distributions and scenarios."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import rng as rngmod
from .errors import (
    NormalizationError,
    ParseError,
    SchemaError,
    UnknownParameter,
)
from .expr import Expr, eval_expr, parameters, parse_expr, to_text
from .mdp import Mdp

log = logging.getLogger(__name__)

ROW_TOL = 1e-9
NEG_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# parameter distributions
# ---------------------------------------------------------------------------

def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class Box:
    """Independent uniform coordinates on ``[low, high]``."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.low), _vec(self.high)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise SchemaError("box bounds need matching lengths and low <= high", "distribution")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return self.low + (self.high - self.low) * gen.random((n, self.dim))

    def to_json(self) -> dict:
        return {"type": "uniform", "low": self.low.tolist(), "high": self.high.tolist()}


@dataclass(frozen=True, eq=False)
class Triangular:
    low: np.ndarray
    mode: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo, mo, hi = _vec(self.low), _vec(self.mode), _vec(self.high)
        if not (lo.shape == mo.shape == hi.shape) or np.any(lo > mo) or np.any(mo > hi):
            raise SchemaError("triangular bounds need low <= mode <= high", "distribution")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "mode", mo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        # inverse CDF; degenerate coordinates collapse to their mode
        u = gen.random((n, self.dim))
        width = self.high - self.low
        safe = np.where(width > 0, width, 1.0)
        c = (self.mode - self.low) / safe
        left = self.low + np.sqrt(u * safe * (self.mode - self.low))
        right = self.high - np.sqrt((1.0 - u) * safe * (self.high - self.mode))
        out = np.where(u < c, left, right)
        return np.where(width > 0, out, self.mode)

    def to_json(self) -> dict:
        return {"type": "triangular", "low": self.low.tolist(), "mode": self.mode.tolist(),
                "high": self.high.tolist()}


@dataclass(frozen=True, eq=False)
class BoxMixture:
    weights: np.ndarray
    components: tuple[Box, ...]

    def __post_init__(self):
        w = _vec(self.weights)
        comps = tuple(self.components)
        if len(comps) == 0 or w.size != len(comps):
            raise SchemaError("mixture needs one weight per component", "distribution")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SchemaError("mixture weights must be non-negative and sum to 1", "distribution")
        if len({c.dim for c in comps}) != 1:
            raise SchemaError("mixture components differ in dimension", "distribution")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        which = gen.choice(len(self.components), size=n, p=self.weights)
        u = gen.random((n, self.dim))
        lo = np.stack([c.low for c in self.components])[which]
        hi = np.stack([c.high for c in self.components])[which]
        return lo + (hi - lo) * u

    def to_json(self) -> dict:
        return {"type": "mixture", "weights": self.weights.tolist(),
                "components": [{"low": c.low.tolist(), "high": c.high.tolist()} for c in self.components]}


ParameterDistribution = Union[Box, Triangular, BoxMixture]


def distribution_from_json(obj, n_params: int) -> ParameterDistribution:
    if not isinstance(obj, dict) or "type" not in obj:
        raise SchemaError("expected an object with a 'type' field", "distribution")
    kind = obj["type"]
    try:
        if kind == "uniform":
            dist = Box(obj["low"], obj["high"])
        elif kind == "triangular":
            dist = Triangular(obj["low"], obj["mode"], obj["high"])
        elif kind == "mixture":
            dist = BoxMixture(obj["weights"], tuple(Box(c["low"], c["high"]) for c in obj["components"]))
        else:
            raise SchemaError(f"unknown distribution type {kind!r}", "distribution.type")
    except KeyError as exc:
        raise SchemaError(f"missing field {exc.args[0]!r}", "distribution") from None
    if dist.dim != n_params:
        raise SchemaError(f"distribution has {dist.dim} coordinates but the model declares {n_params} params",
                          "distribution")
    return dist


def fingerprint(dist: ParameterDistribution) -> str:
    blob = json.dumps(dist.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    state: int
    action: int
    succ: int
    expr: Expr

    @property
    def is_constant(self) -> bool:
        return not parameters(self.expr)


@dataclass(frozen=True, eq=False)
class UpMdpTemplate:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    enabled: np.ndarray
    entries: tuple[Entry, ...]
    rho: np.ndarray
    gamma: float
    goal: np.ndarray
    safe: np.ndarray
    params: tuple[str, ...]
    distribution: ParameterDistribution
    name: str = ""

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def n_transitions(self) -> int:
        return len(self.entries)

    @property
    def avoid(self) -> np.ndarray:
        return ~self.goal & ~self.safe

    @property
    def terminal(self) -> np.ndarray:
        return self.goal | self.avoid

    def mdp(self, trans: np.ndarray) -> Mdp:
        """Wrap one instantiated transition tensor with this template's skeleton."""
        return Mdp(self.states, self.actions, trans, self.enabled, self.rho, self.gamma,
                   self.goal, self.safe)

    def instantiate_batch(self, samples: np.ndarray, offset: int = 0) -> np.ndarray:
        """Transition tensors ``(K, S, A, S)`` for parameter rows ``(K, n_params)``."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        K = samples.shape[0]
        if samples.shape[1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {samples.shape[1]}")
        values = {name: samples[:, i] for i, name in enumerate(self.params)}
        trans = np.zeros((K, self.n_states, self.n_actions, self.n_states))
        for e in self.entries:
            trans[:, e.state, e.action, e.succ] += eval_expr(e.expr, values)
        bad = (trans < -NEG_CLAMP) | (trans > 1.0 + NEG_CLAMP)
        if bad.any():
            k, s, a, t = np.argwhere(bad)[0]
            raise NormalizationError(self.states[s], self.actions[a], float(trans[k, s, a].sum()),
                                     offset + int(k), samples[k].tolist())
        np.clip(trans, 0.0, 1.0, out=trans)
        sums = trans.sum(axis=-1)
        off = (np.abs(sums - 1.0) > ROW_TOL) & self.enabled[None]
        if off.any():
            k, s, a = np.argwhere(off)[0]
            raise NormalizationError(self.states[s], self.actions[a], float(sums[k, s, a]),
                                     offset + int(k), samples[k].tolist())
        return trans

    def to_json(self) -> dict:
        rows: dict[tuple[int, int], dict[str, str]] = {}
        for e in self.entries:
            rows.setdefault((e.state, e.action), {})[self.states[e.succ]] = to_text(e.expr)
        return {
            "name": self.name,
            "states": list(self.states),
            "actions": list(self.actions),
            "gamma": self.gamma,
            "initial": {self.states[i]: float(p) for i, p in enumerate(self.rho) if p > 0},
            "labels": {"goal": [s for s, g in zip(self.states, self.goal) if g],
                       "safe": [s for s, g in zip(self.states, self.safe) if g]},
            "params": list(self.params),
            "distribution": self.distribution.to_json(),
            "transitions": [{"from": self.states[s], "action": self.actions[a], "to": to}
                            for (s, a), to in sorted(rows.items())],
        }


def instantiate(template: UpMdpTemplate, params) -> Mdp:
    """Concrete MDP at one parameter vector."""
    return template.mdp(template.instantiate_batch(np.asarray(params, dtype=float)[None])[0])


def build_template(states: Sequence[str], actions: Sequence[str], rows: dict, initial: dict,
                   gamma: float, goal: Sequence[str], safe: Sequence[str], params: Sequence[str],
                   distribution: ParameterDistribution, name: str = "") -> UpMdpTemplate:
    """Assemble a template; ``rows`` maps ``(state, action)`` to ``{succ: expr text}``.

    Goal and avoid states are made absorbing: whatever rows they carry are
    replaced by self-loops.
    """
    states, actions, params = tuple(states), tuple(actions), tuple(params)
    loc = "model"
    if len(set(states)) != len(states):
        raise SchemaError("duplicate state names", f"{loc}.states")
    if len(set(actions)) != len(actions):
        raise SchemaError("duplicate action names", f"{loc}.actions")
    if len(set(params)) != len(params):
        raise SchemaError("duplicate parameter names", f"{loc}.params")
    s_idx = {s: i for i, s in enumerate(states)}
    a_idx = {a: i for i, a in enumerate(actions)}
    S, A = len(states), len(actions)
    for label, names in (("goal", goal), ("safe", safe)):
        for s in names:
            if s not in s_idx:
                raise SchemaError(f"unknown state {s!r}", f"{loc}.labels.{label}")
    goal_m = np.zeros(S, dtype=bool)
    goal_m[[s_idx[s] for s in goal]] = True
    safe_m = np.zeros(S, dtype=bool)
    safe_m[[s_idx[s] for s in safe]] = True
    terminal = goal_m | ~safe_m

    if not 0.0 < float(gamma) <= 1.0:
        raise SchemaError(f"gamma={gamma} not in (0, 1]", f"{loc}.gamma")
    rho = np.zeros(S)
    for s, p in initial.items():
        if s not in s_idx:
            raise SchemaError(f"unknown state {s!r}", f"{loc}.initial")
        rho[s_idx[s]] = float(p)
    if abs(rho.sum() - 1.0) > ROW_TOL or np.any(rho < 0):
        raise SchemaError(f"initial distribution sums to {rho.sum()!r}", f"{loc}.initial")

    enabled = np.zeros((S, A), dtype=bool)
    entries: list[Entry] = []
    known = set(params)
    for (s, a), row in rows.items():
        where = f"{loc}.transitions[{s}, {a}]"
        if s not in s_idx:
            raise SchemaError(f"unknown state {s!r}", where)
        if a not in a_idx:
            raise SchemaError(f"unknown action {a!r}", where)
        si, ai = s_idx[s], a_idx[a]
        enabled[si, ai] = True
        if terminal[si]:
            if set(row) != {s}:
                log.warning("terminal state %s: replacing row of action %s by a self-loop", s, a)
            continue
        for t, text in row.items():
            if t not in s_idx:
                raise SchemaError(f"unknown successor {t!r}", where)
            try:
                node = parse_expr(str(text))
            except ParseError as exc:
                raise ParseError(f"{where} -> {t}: {exc.args[0]}", exc.offset, exc.expected) from None
            unknown = sorted(parameters(node) - known)
            if unknown:
                raise UnknownParameter(unknown[0], f"{where} -> {t}")
            entries.append(Entry(si, ai, s_idx[t], node))
    one = parse_expr("1")
    for si in range(S):
        if terminal[si]:
            if not enabled[si].any():
                enabled[si, 0] = True
            for ai in np.flatnonzero(enabled[si]):
                entries.append(Entry(si, int(ai), si, one))
        elif not enabled[si].any():
            raise SchemaError(f"state {states[si]!r} has no enabled action", f"{loc}.transitions")
    entries.sort(key=lambda e: (e.state, e.action, e.succ))
    return UpMdpTemplate(states, actions, enabled, tuple(entries), rho, float(gamma), goal_m, safe_m,
                         params, distribution, name)


_REQUIRED = ("states", "actions", "gamma", "initial", "labels", "params", "distribution", "transitions")


def template_from_json(obj: dict, source: str = "model") -> UpMdpTemplate:
    if not isinstance(obj, dict):
        raise SchemaError("top level must be an object", source)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError(f"missing required field {key!r}", source)
    labels = obj["labels"]
    if not isinstance(labels, dict) or "goal" not in labels or "safe" not in labels:
        raise SchemaError("labels needs 'goal' and 'safe' lists", f"{source}.labels")
    if not isinstance(obj["gamma"], (int, float)):
        raise SchemaError("gamma must be a number", f"{source}.gamma")
    rows: dict = {}
    for i, tr in enumerate(obj["transitions"]):
        try:
            key = (tr["from"], tr["action"])
            to = tr["to"]
        except (KeyError, TypeError):
            raise SchemaError("each transition needs 'from', 'action' and 'to'",
                              f"{source}.transitions[{i}]") from None
        if key in rows:
            raise SchemaError(f"duplicate transition row {key}", f"{source}.transitions[{i}]")
        rows[key] = {t: str(v) for t, v in to.items()}
    dist = distribution_from_json(obj["distribution"], len(obj["params"]))
    return build_template(obj["states"], obj["actions"], rows, obj["initial"], obj["gamma"],
                          labels["goal"], labels["safe"], obj["params"], dist, obj.get("name", ""))


def load_model(path) -> UpMdpTemplate:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno})", str(path)) from None
    return template_from_json(obj, str(path))


def save_model(template: UpMdpTemplate, path) -> None:
    Path(path).write_text(json.dumps(template.to_json(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioSet:
    samples: np.ndarray  # (N, n_params)
    seed: int
    fingerprint: str

    def __len__(self) -> int:
        return self.samples.shape[0]

    def to_json(self) -> dict:
        return {"seed": int(self.seed), "n": len(self), "fingerprint": self.fingerprint,
                "samples": self.samples.tolist()}

    @classmethod
    def from_json(cls, obj: dict, n_params: int | None = None) -> "ScenarioSet":
        try:
            samples = np.asarray(obj["samples"], dtype=float)
            n, seed = int(obj["n"]), int(obj["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad scenario file: {exc}", "scenarios") from None
        if samples.size == 0:
            samples = samples.reshape(0, n_params or 0)
        if samples.ndim != 2 or samples.shape[0] != n:
            raise SchemaError(f"'n'={n} does not match {samples.shape[0]} samples", "scenarios")
        if n_params is not None and samples.shape[1] != n_params:
            raise SchemaError(f"samples have {samples.shape[1]} coordinates, model has {n_params}", "scenarios")
        return cls(samples, seed, obj.get("fingerprint", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")


def draw_parameters(template: UpMdpTemplate, n: int, gen: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros((0, template.n_params))
    return template.distribution.sample(gen, n)


def sample_scenarios(template: UpMdpTemplate, n: int, seed: int,
                     purpose: str = rngmod.SCENARIOS) -> ScenarioSet:
    """``n`` i.i.d. parameter vectors; each is checked to instantiate cleanly."""
    if n < 0:
        raise ValueError("n must be non-negative")
    samples = draw_parameters(template, n, rngmod.stream(seed, purpose))
    for start in range(0, n, 1024):
        template.instantiate_batch(samples[start:start + 1024], offset=start)
    return ScenarioSet(samples, int(seed), fingerprint(template.distribution))

