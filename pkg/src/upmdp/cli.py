"""``upmdp`` command line.

Exit codes: 0 success, 1 usage error, 2 model or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import rng as rngmod
from .bench import (
    METHODS,
    ExperimentConfig,
    SynthesisOptions,
    policy_from_json,
    resolve_model,
    rows_to_csv,
    run_experiment,
    synthesize,
    write_artifacts,
)
from .errors import ModelError, NumericalError
from .guarantees import classical_convex_bound, empirical_risk, epsilon_bounds, mu_bound
from .mdp import validate_mdp
from .model import draw_parameters, sample_scenarios, save_model

PROBES = 100


def g6(x: float) -> str:
    return f"{x:.6g}"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="upmdp", description="Robust policy synthesis for uncertain parametric MDPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="toy, grid:WxH or a model file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)

    def synthesis(sp):
        sp.add_argument("--n", type=int, default=200, help="number of scenarios")
        sp.add_argument("--beta", type=float, default=1e-5)
        sp.add_argument("--max-iters", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--step-c", type=float, default=1.0)

    s = sub.add_parser("synth", help="synthesise a policy and its risk certificate")
    common(s)
    synthesis(s)
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--out", type=Path)
    s.add_argument("--dump-matrix", type=Path, help="write the reward matrix (game methods) as CSV")

    b = sub.add_parser("bound", help="evaluate a risk bound")
    # "garatti" is the older name of the xi family, kept for scripts
    b.add_argument("--family", choices=("xi", "garatti", "mu", "convex"), required=True,
                   help="xi prints eps_lo eps_hi; mu and xi need --k, convex uses --d")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--k", type=int)
    b.add_argument("--d", type=int, default=1)

    v = sub.add_parser("validate", help="empirical risk of a policy on fresh scenarios")
    common(v)
    v.add_argument("--policy", type=Path, required=True)
    v.add_argument("--lambda", dest="lam", type=float,
                   help="threshold; defaults to the certificate next to the policy")
    v.add_argument("--trials", type=int, default=10_000)

    e = sub.add_parser("bench", help="run experiment rows over methods and seeds")
    common(e)
    synthesis(e)
    e.add_argument("--method", choices=METHODS, action="append", help="repeatable; default all")
    e.add_argument("--seeds", type=int, default=1, help="master seeds seed..seed+seeds-1")
    e.add_argument("--trials", type=int, default=10_000)
    e.add_argument("--out", type=Path)

    c = sub.add_parser("check", help="load a model and probe sampled instantiations")
    common(c)
    c.add_argument("--export", type=Path, help="write the resolved model as JSON")
    return p


def _invocation(argv, args) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    return {"argv": list(argv), "flags": flags, "rng": rngmod.describe()}


def cmd_synth(args, inv) -> int:
    template = resolve_model(args.model)
    scenarios = sample_scenarios(template, args.n, args.seed)
    opts = SynthesisOptions(args.beta, args.max_iters, args.tol, args.step_c, "greedy", args.jobs, args.seed)
    t0 = time.perf_counter()
    syn = synthesize(template, scenarios, args.method, opts)
    elapsed = time.perf_counter() - t0
    if args.out:
        write_artifacts(args.out, template, scenarios, syn, [], inv)
    if args.dump_matrix:
        if "matrix" not in syn.extras:
            raise UsageError(f"--dump-matrix needs a game method (mne, stackelberg), not {args.method}")
        args.dump_matrix.write_text("# " + json.dumps(inv, sort_keys=True) + "\n" + syn.extras["matrix"].to_csv())
    cert = syn.certificate
    print(f"method={args.method} lambda*={g6(syn.lambda_star)} {cert.bound_kind}={g6(cert.bound)} "
          f"k={cert.k} time={elapsed:.3g}s")
    return 0


def cmd_bound(args, inv) -> int:
    if args.family == "convex":
        print(g6(classical_convex_bound(args.n, args.d, args.beta)))
        return 0
    if args.k is None:
        raise UsageError(f"--k is required for --family {args.family}")
    if args.family == "mu":
        print(g6(mu_bound(args.n, args.k, args.beta)))
    else:
        lo, hi = epsilon_bounds(args.n, args.k, args.beta)
        print(f"{g6(lo)} {g6(hi)}")
    return 0


def cmd_validate(args, inv) -> int:
    template = resolve_model(args.model)
    obj = json.loads(args.policy.read_text(encoding="utf-8"))
    lam = args.lam
    if lam is None:
        cert_path = args.policy.with_name("certificate.json")
        if not cert_path.exists():
            raise UsageError("--lambda is required when no certificate.json sits next to the policy")
        lam = float(json.loads(cert_path.read_text(encoding="utf-8"))["lambda_star"])
    policy = policy_from_json(template, obj)
    risk = empirical_risk(template, policy, lam, args.trials, args.seed, args.jobs)
    print(f"emp_risk={g6(risk)} lambda={g6(lam)} trials={args.trials}")
    return 0


def cmd_bench(args, inv) -> int:
    methods = args.method or list(METHODS)
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        for m in methods:
            out = str(args.out / f"{m}-seed{seed}") if args.out else None
            cfg = ExperimentConfig(args.model, m, args.n, args.beta, seed, None, args.trials, args.jobs,
                                   args.max_iters, args.tol, args.step_c, "greedy", out)
            row, _ = run_experiment(cfg, inv)
            rows.append(row)
            print(f"{m} seed={seed} lambda*={g6(row.lambda_star)} {row.bound_kind}={g6(row.bound)} k={row.k} "
                  f"time={row.time_s:.3g}s emp={g6(row.emp_risk)} nopars={g6(row.emp_risk_nopars)}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "rows.csv").write_text(rows_to_csv(rows, inv), encoding="utf-8")
    return 0


def cmd_check(args, inv) -> int:
    template = resolve_model(args.model)
    samples = draw_parameters(template, PROBES, rngmod.stream(args.seed, rngmod.PROBES))
    for i, v in enumerate(samples):
        mdp = template.mdp(template.instantiate_batch(v[None], offset=i)[0])
        problems = validate_mdp(mdp)
        if problems:
            print(f"probe {i}: {problems[0]}", file=sys.stderr)
            return 2
    if args.export:
        save_model(template, args.export)
    print("ok")
    return 0


COMMANDS = {"synth": cmd_synth, "bound": cmd_bound, "validate": cmd_validate, "bench": cmd_bench,
            "check": cmd_check}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, _invocation(argv, args))
    except UsageError as exc:
        print(f"upmdp: error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, OSError, json.JSONDecodeError) as exc:
        print(f"upmdp: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"upmdp: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:  # out-of-range flag values rejected by a config object
        print(f"upmdp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
