"""Built-in models, the per-sample baseline and the experiment runner."""

from __future__ import annotations

import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import InvalidGrid, InvalidInput, InvalidPolicy, SchemaError, UpmdpError
from .evaluate import scenario_values
from .game import mne_policy, stackelberg_policy
from .guarantees import (
    RiskCertificate,
    certificate,
    empirical_risk,
    support_bound_det_hitting,
    support_count_behavioural,
    support_count_imdp,
    support_count_mixed,
)
from .imdp import build_interval_mdp, robust_value_iteration
from .mdp import BehaviouralPolicy, DeterministicPolicy, MixedPolicy, Policy, optimal_value_and_policy
from .model import Box, ParameterDistribution, ScenarioSet, UpMdpTemplate, build_template, draw_parameters, \
    load_model, sample_scenarios
from .subgradient import SubgradientConfig, subgradient_ascent

METHODS = ("imdp", "mne", "stackelberg", "subgradient", "per-sample")
ROW_HEADER = "model,method,n,beta,lambda_star,bound_kind,bound,k,time_s,emp_risk,emp_risk_nopars,seed"


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------

def builtin_toy_model(gamma: float = 0.99, distribution: ParameterDistribution | None = None) -> UpMdpTemplate:
    """Two-step chain: ``a0`` advances one state, ``a1`` jumps two (saturating at goal).

    Each move succeeds with its own parameter and otherwise lands in the
    critical state.
    """
    rows = {
        ("s0", "a0"): {"s1": "p00", "critical": "1 - p00"},
        ("s0", "a1"): {"goal": "p01", "critical": "1 - p01"},
        ("s1", "a0"): {"goal": "p10", "critical": "1 - p10"},
        ("s1", "a1"): {"goal": "p11", "critical": "1 - p11"},
    }
    if distribution is None:
        distribution = Box(np.zeros(4), np.ones(4))
    return build_template(["s0", "s1", "goal", "critical"], ["a0", "a1"], rows, {"s0": 1.0}, gamma,
                          goal=["goal"], safe=["s0", "s1", "goal"], params=["p00", "p01", "p10", "p11"],
                          distribution=distribution, name="toy")


_MOVES = {"N": (0, 1), "S": (0, -1), "E": (1, 0), "W": (-1, 0)}


def builtin_gridworld(width: int, height: int, wind_params=((0.0, 0.2), (0.1, 0.4)), wind: str = "S",
                      obstacles=(), goal=None, start=(0, 0), gamma: float = 0.99) -> UpMdpTemplate:
    """Grid with four move actions and a wind gust after every move.

    Columns are split evenly into ``len(wind_params)`` zones; zone ``z`` has
    wind parameter ``w{z}`` drawn uniformly from ``wind_params[z]``.  From
    cell ``c`` with move ``d`` the drone reaches ``c + d``; if that is a free
    cell, then with probability ``w{z}`` (``z`` the zone of ``c``) it is pushed
    one more cell in the wind direction.  Leaving the grid or entering an
    obstacle is a failure; the extra ``crash`` state absorbs runs that leave
    the grid.
    """
    if width < 1 or height < 1:
        raise InvalidGrid(f"grid must be at least 1x1, got {width}x{height}")
    if wind not in _MOVES:
        raise InvalidGrid(f"wind direction must be one of {sorted(_MOVES)}, got {wind!r}")
    zones = [tuple(map(float, z)) for z in wind_params]
    if not zones or len(zones) > width:
        raise InvalidGrid(f"need between 1 and {width} wind zones, got {len(zones)}")
    if any(not 0.0 <= lo <= hi <= 1.0 for lo, hi in zones):
        raise InvalidGrid("wind ranges must satisfy 0 <= low <= high <= 1")
    goal = (width - 1, height - 1) if goal is None else tuple(goal)
    start = tuple(start)
    obstacles = {tuple(o) for o in obstacles}

    def inside(c):
        return 0 <= c[0] < width and 0 <= c[1] < height

    for what, c in (("goal", goal), ("start", start), *(("obstacle", o) for o in obstacles)):
        if not inside(c):
            raise InvalidGrid(f"{what} cell {c} lies outside the {width}x{height} grid")
    if goal in obstacles or start in obstacles:
        raise InvalidGrid("goal and start must not be obstacles")

    def name(c):
        return f"x{c[0]}y{c[1]}" if inside(c) else "crash"

    cells = [(x, y) for y in range(height) for x in range(width)]
    states = [name(c) for c in cells] + ["crash"]
    zone_of = [min(x * len(zones) // width, len(zones) - 1) for x in range(width)]
    wx, wy = _MOVES[wind]
    rows = {}
    for c in cells:
        if c == goal or c in obstacles:
            continue
        p = f"w{zone_of[c[0]]}"
        for act, (dx, dy) in _MOVES.items():
            land = (c[0] + dx, c[1] + dy)
            if not inside(land) or land == goal or land in obstacles:
                rows[(name(c), act)] = {name(land): "1"}
            else:
                pushed = (land[0] + wx, land[1] + wy)
                rows[(name(c), act)] = {name(land): f"1 - {p}", name(pushed): p}
    safe = [name(c) for c in cells if c not in obstacles]
    dist = Box(np.array([z[0] for z in zones]), np.array([z[1] for z in zones]))
    return build_template(states, list(_MOVES), rows, {name(start): 1.0}, gamma, goal=[name(goal)], safe=safe,
                          params=[f"w{i}" for i in range(len(zones))], distribution=dist,
                          name=f"grid:{width}x{height}")


def resolve_model(spec: str) -> UpMdpTemplate:
    """``toy``, ``grid:WxH`` or a path to a model file (``./toy`` forces a path)."""
    if spec == "toy":
        return builtin_toy_model()
    if spec.startswith("grid:"):
        try:
            w, h = (int(x) for x in spec[5:].lower().split("x"))
        except ValueError:
            raise InvalidGrid(f"expected grid:WxH, got {spec!r}") from None
        return builtin_gridworld(w, h)
    return load_model(spec)


# ---------------------------------------------------------------------------
# policy files
# ---------------------------------------------------------------------------

def policy_to_json(template: UpMdpTemplate, pol) -> dict:
    acts = template.actions
    if isinstance(pol, DeterministicPolicy):
        return {"class": "deterministic", "actions": dict(zip(template.states, (acts[a] for a in pol.action_of)))}
    if isinstance(pol, BehaviouralPolicy):
        return {"class": "behavioural",
                "dist": {s: {acts[a]: float(p) for a, p in enumerate(row) if p > 0}
                         for s, row in zip(template.states, pol.dist)}}
    if isinstance(pol, MixedPolicy):
        return {"class": "mixed",
                "atoms": [{"weight": float(w), **policy_to_json(template, p)} for p, w in pol.atoms]}
    if isinstance(pol, PerSamplePolicies):
        return {"class": "per-sample", "policies": [policy_to_json(template, p) for p in pol.policies]}
    raise TypeError(f"cannot serialise {type(pol).__name__}")


def policy_from_json(template: UpMdpTemplate, obj: dict) -> Policy:
    s_idx = {s: i for i, s in enumerate(template.states)}
    a_idx = {a: i for i, a in enumerate(template.actions)}

    def lookup(table, key, what):
        if key not in table:
            raise InvalidPolicy(f"unknown {what} {key!r} in policy file")
        return table[key]

    try:
        kind = obj["class"]
        if kind == "deterministic":
            a = np.argmax(template.enabled, axis=1)
            for s, act in obj["actions"].items():
                a[lookup(s_idx, s, "state")] = lookup(a_idx, act, "action")
            return DeterministicPolicy(a)
        if kind == "behavioural":
            d = np.zeros((template.n_states, template.n_actions))
            for s, row in obj["dist"].items():
                for act, p in row.items():
                    d[lookup(s_idx, s, "state"), lookup(a_idx, act, "action")] = float(p)
            return BehaviouralPolicy(d)
        if kind == "mixed":
            return MixedPolicy(tuple((policy_from_json(template, {**atom, "class": "deterministic"}),
                                      float(atom["weight"])) for atom in obj["atoms"]))
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise SchemaError(f"malformed policy file: {exc}", "policy") from None
    raise SchemaError(f"unsupported policy class {obj.get('class')!r}", "policy.class")


# ---------------------------------------------------------------------------
# per-sample baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerSamplePolicies:
    """One optimal deterministic policy per scenario; no single policy is certified."""

    policies: tuple[DeterministicPolicy, ...]
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class BaselineResult:
    per_sample: PerSamplePolicies
    lambda_star: float  # worst per-sample optimum
    certificate: RiskCertificate

    @property
    def pairs(self) -> list[tuple[DeterministicPolicy, float]]:
        return list(zip(self.per_sample.policies, self.per_sample.values.tolist()))


def optimal_per_sample(template: UpMdpTemplate, samples: np.ndarray) -> PerSamplePolicies:
    pols, vals = [], []
    for start in range(0, len(samples), 1024):
        for trans in template.instantiate_batch(samples[start:start + 1024], offset=start):
            p, v = optimal_value_and_policy(template.mdp(trans))
            pols.append(p)
            vals.append(v)
    return PerSamplePolicies(tuple(pols), np.array(vals))


def per_sample_baseline(template: UpMdpTemplate, scenarios: ScenarioSet | np.ndarray,
                        beta: float = 1e-5) -> BaselineResult:
    """Optimal policy per scenario; the certified value is the smallest optimum.

    That value solves a one-dimensional convex scenario program, hence the
    classical bound with one decision variable.
    """
    samples = scenarios.samples if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if len(samples) == 0:
        raise InvalidInput("baseline needs at least one scenario")
    res = optimal_per_sample(template, samples)
    lam = float(res.values.min())
    seed = scenarios.seed if isinstance(scenarios, ScenarioSet) else None
    return BaselineResult(res, lam, certificate("per-sample", lam, len(samples), beta, 1, seed))


def baseline_risk(template: UpMdpTemplate, lambda_star: float, M: int, seed: int) -> float:
    """Fraction of fresh scenarios whose optimum is below ``lambda_star``."""
    v = draw_parameters(template, M, rngmod.stream(seed, rngmod.VALIDATION))
    return float(np.mean(optimal_per_sample(template, v).values < lambda_star - 1e-9))


def baseline_risk_nopars(template: UpMdpTemplate, lambda_star: float, M: int, seed: int) -> float:
    """Synthesise on one fresh draw, test on another; fraction below ``lambda_star``."""
    gen = rngmod.stream(seed, rngmod.VALIDATION_NOPARS)
    v1 = draw_parameters(template, M, gen)
    v2 = draw_parameters(template, M, gen)
    pols = optimal_per_sample(template, v1).policies
    groups: dict[DeterministicPolicy, list[int]] = {}
    for i, p in enumerate(pols):
        groups.setdefault(p, []).append(i)
    fails = 0
    for p, idx in groups.items():
        fails += int(np.sum(scenario_values(template, p, v2[idx]) < lambda_star - 1e-9))
    return fails / M


# ---------------------------------------------------------------------------
# synthesis dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisOptions:
    beta: float = 1e-5
    max_iters: int | None = None  # method default when None
    tol: float | None = None
    step_c: float = 1.0
    hitting: str = "greedy"
    jobs: int = 1
    seed: int = 0


@dataclass(eq=False)
class Synthesis:
    method: str
    policy: object
    lambda_star: float
    certificate: RiskCertificate
    extras: dict = field(default_factory=dict)  # trace, matrix, imdp, game, baseline


def synthesize(template: UpMdpTemplate, scenarios: ScenarioSet, method: str,
               opts: SynthesisOptions = SynthesisOptions()) -> Synthesis:
    N, beta = len(scenarios), opts.beta
    seed = scenarios.seed
    if method == "imdp":
        imdp = build_interval_mdp(template, scenarios)
        pol, lam = robust_value_iteration(imdp, tol=opts.tol or 1e-9)
        k = support_count_imdp(template, scenarios, imdp)
        cert = certificate("imdp", lam, N, beta, k, seed, {"endpoint": 1e-12, "value": opts.tol or 1e-9})
        return Synthesis(method, pol, lam, cert, {"imdp": imdp})
    if method == "mne":
        res = mne_policy(template, scenarios, max_iters=opts.max_iters or 100_000, tol=opts.tol or 1e-3,
                         jobs=opts.jobs)
        k = support_count_mixed(res.s_sigma)
        cert = certificate("mixed", res.lambda_star, N, beta, k, seed,
                           {"weight_floor": 1e-9, "gap": res.game.gap, "fp_tol": opts.tol or 1e-3})
        return Synthesis(method, res.policy, res.lambda_star, cert, {"matrix": res.matrix, "game": res.game})
    if method == "stackelberg":
        res = stackelberg_policy(template, scenarios, jobs=opts.jobs)
        k = support_bound_det_hitting(res.matrix, res.lambda_star, opts.hitting, res.row)
        cert = certificate("deterministic-maxmin", res.lambda_star, N, beta, k, seed,
                           {"block": 1e-9, "hitting": opts.hitting})
        return Synthesis(method, res.policy, res.lambda_star, cert, {"matrix": res.matrix})
    if method == "subgradient":
        cfg = SubgradientConfig(c=opts.step_c, max_iters=opts.max_iters or 10_000,
                                conv_tol=opts.tol or 1e-5, seed=opts.seed)
        res = subgradient_ascent(template, scenarios, cfg)
        k = support_count_behavioural(res.values, res.lambda_star, cfg.value_tol)
        cert = certificate("behavioural", res.lambda_star, N, beta, k, seed,
                           {"support": cfg.value_tol, "conv_tol": cfg.conv_tol})
        return Synthesis(method, res.policy, res.lambda_star, cert, {"trace": res.trace})
    if method == "per-sample":
        base = per_sample_baseline(template, scenarios, beta)
        return Synthesis(method, base.per_sample, base.lambda_star, base.certificate, {"baseline": base})
    raise InvalidInput(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "toy"
    method: str = "subgradient"
    n: int = 200
    beta: float = 1e-5
    seed: int = 0
    validation_seed: int | None = None  # defaults to seed
    m: int = 10_000
    jobs: int = 1
    max_iters: int | None = None
    tol: float | None = None
    step_c: float = 1.0
    hitting: str = "greedy"
    out: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput("N must be at least 1")
        if self.m < 1:
            raise InvalidInput("M must be at least 1")
        if not 0.0 < self.beta < 1.0:
            raise InvalidInput(f"beta must lie in (0, 1), got {self.beta}")
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    @property
    def vseed(self) -> int:
        return self.seed if self.validation_seed is None else self.validation_seed

    def options(self) -> SynthesisOptions:
        return SynthesisOptions(self.beta, self.max_iters, self.tol, self.step_c, self.hitting, self.jobs,
                                self.seed)


@dataclass(frozen=True)
class ExperimentRow:
    model: str
    method: str
    n: int
    beta: float
    lambda_star: float
    bound_kind: str
    bound: float
    k: int
    time_s: float
    emp_risk: float
    emp_risk_nopars: float
    seed: int

    def csv_line(self) -> str:
        return ",".join(_fmt(getattr(self, f.name)) for f in dataclasses.fields(self))


def _fmt(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def rows_to_csv(rows, invocation: dict | None = None) -> str:
    buf = io.StringIO()
    if invocation is not None:
        buf.write("# " + json.dumps(invocation, sort_keys=True) + "\n")
    buf.write(ROW_HEADER + "\n")
    for r in rows:
        buf.write(r.csv_line() + "\n")
    return buf.getvalue()


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except UpmdpError as exc:
        exc.stage = name
        exc.args = (f"{name}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def run_experiment(config: ExperimentConfig, invocation: dict | None = None,
                   template: UpMdpTemplate | None = None) -> tuple[ExperimentRow, Synthesis]:
    """Sample, synthesise, certify and validate one configuration.

    ``time_s`` covers sampling, synthesis and certification, not validation.
    When ``config.out`` is set the row, policy, certificate and scenarios
    are written there (plus the iteration trace for the subgradient method),
    each carrying ``invocation``.
    """
    invocation = dict(invocation or {"config": dataclasses.asdict(config)})
    if template is None:
        template = _stage("load", resolve_model, config.model)
    t0 = time.perf_counter()
    scenarios = _stage("sample", sample_scenarios, template, config.n, config.seed)
    syn = _stage("synthesize", synthesize, template, scenarios, config.method, config.options())
    elapsed = time.perf_counter() - t0
    lam = syn.lambda_star
    if config.method == "per-sample":
        emp = _stage("validate", baseline_risk, template, lam, config.m, config.vseed)
        nopars = _stage("validate", baseline_risk_nopars, template, lam, config.m, config.vseed)
    else:
        emp = _stage("validate", empirical_risk, template, syn.policy, lam, config.m, config.vseed, config.jobs)
        # a single robust policy never looks at the parameters, so only the stream differs
        nopars = _stage("validate", empirical_risk, template, syn.policy, lam, config.m, config.vseed, config.jobs,
                        rngmod.VALIDATION_NOPARS)
    cert = syn.certificate
    row = ExperimentRow(template.name or config.model, config.method, config.n, config.beta, lam,
                        cert.bound_kind, float(cert.bound), cert.k, elapsed, emp, nopars, config.seed)
    if config.out:
        write_artifacts(Path(config.out), template, scenarios, syn, [row], invocation)
    return row, syn


def write_artifacts(out: Path, template: UpMdpTemplate, scenarios: ScenarioSet, syn: Synthesis, rows,
                    invocation: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)

    def dump(name, obj):
        (out / name).write_text(json.dumps({**obj, "invocation": invocation}, indent=2) + "\n", encoding="utf-8")

    if rows:
        (out / "row.csv").write_text(rows_to_csv(rows, invocation), encoding="utf-8")
    dump("policy.json", policy_to_json(template, syn.policy))
    dump("certificate.json", {**syn.certificate.to_json(), "rng": rngmod.describe()})
    dump("scenarios.json", scenarios.to_json())
    if "trace" in syn.extras:
        text = "# " + json.dumps(invocation, sort_keys=True) + "\n" + syn.extras["trace"].to_csv()
        (out / "trace.csv").write_text(text, encoding="utf-8")
    if "imdp" in syn.extras:
        dump("imdp.json", syn.extras["imdp"].to_json())
