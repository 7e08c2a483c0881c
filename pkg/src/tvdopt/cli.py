"""
Batch experiment runner.

A run is described by a JSON file::

    {
      "scenario": "least_squares",          # or "waypoint"
      "steps": 3000,                        # ticks K per replication
      "replications": 25,
      "seed": 2016,
      "policy": {"mode": "full", "epsilon": 0.001, "eta": 0.5,
                 "nu": null, "nu_factor": 0.25, "delivery": "instant",
                 "use_network_size": false},
      "params": {...},                      # scenario parameters, see scenarios
      "out": "runs/ls",
      "save_raw": false,                    # per-replication traces and message logs
      "check_invariants": true,
      "log_guarantee": false,               # check the epsilon-gradient guarantee
      "workers": 1
    }

``nu`` wins over ``nu_factor``; with ``nu`` null the threshold is
``nu_factor * epsilon``, recomputed when ``--epsilon`` overrides the file.
Two presets ship with the package (``ls_paper``, ``waypoint_paper``) and can
be named instead of a path.

``run`` writes ``trace.csv`` (mean over replications per tick) and
``summary.json``, plus ``details.json`` with the inputs of the bound and
the guarantee reports. ``validate`` prints the step-size and graph
conditions without simulating.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import (BoundInputs, gamma_of, proof_rate, theorem1_bound, trailing_error)
from .netgraph import GraphError, expected_laplacian, lambda2, lambda_max
from .scenarios import make_config, make_scenario, make_topology
from .solver import InvariantError, StepSizes, run_replication
from .trigger import MODES, PolicyParams, verify_epsilon_guarantee

TRACE_HEADER = "k,mean_sq_error,bound,pdf_msgs,snapshot_msgs,everytime_msgs"
SUMMARY_KEYS = ("m_f", "L", "G", "delta_x", "gamma", "rho", "bound", "trailing_error",
                "pdf_msg_ratio", "snapshot_msg_ratio")
PRESETS = ("ls_paper", "waypoint_paper")


class ConfigError(ValueError):
    """The run configuration is malformed or out of range."""


#%% CONFIGURATION

@dataclass
class PolicyConfig:
    mode: str = "full"
    epsilon: float = 1e-3
    eta: float = 0.5
    nu: float | None = None
    nu_factor: float | None = 0.25
    delivery: str = "instant"
    use_network_size: bool = False

    def params(self, n: int) -> PolicyParams:
        nu = self.nu
        if nu is None:
            if self.nu_factor is None:
                raise ConfigError("policy needs either nu or nu_factor")
            nu = self.nu_factor * self.epsilon
        try:
            return PolicyParams(self.epsilon, self.eta, nu, self.mode, self.delivery,
                                n if self.use_network_size else None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class RunConfig:
    """Everything a run needs; `params` holds scenario overrides."""

    scenario: str
    steps: int = 3000
    replications: int = 25
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    params: dict = field(default_factory=dict)
    out: str = "out"
    save_raw: bool = False
    check_invariants: bool = True
    log_guarantee: bool = False
    workers: int = 1

    def validate(self) -> None:
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps!r}")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError(f"replications must be a positive integer, got {self.replications!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        self.scenario_config()
        self.policy.params(2)

    def scenario_config(self):
        try:
            return make_config(self.scenario, self.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, seed=None, steps=None, reps=None, policy=None, epsilon=None,
                       out=None) -> "RunConfig":
        pol = dataclasses.replace(self.policy)
        if policy is not None:
            pol.mode = policy
        if epsilon is not None:
            pol.epsilon = epsilon
        cfg = dataclasses.replace(
            self, policy=pol, params=dict(self.params),
            seed=self.seed if seed is None else seed,
            steps=self.steps if steps is None else steps,
            replications=self.replications if reps is None else reps,
            out=self.out if out is None else out)
        cfg.validate()
        return cfg


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    if "scenario" not in data:
        raise ConfigError("config needs a 'scenario' entry")
    pol = data.pop("policy", {}) or {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config entries: {unknown}")
    pol_known = {f.name for f in dataclasses.fields(PolicyConfig)}
    if set(pol) - pol_known:
        raise ConfigError(f"unknown policy entries: {sorted(set(pol) - pol_known)}")
    cfg = RunConfig(policy=PolicyConfig(**pol), **data)
    cfg.validate()
    return cfg


def load_config(source: str | Path) -> RunConfig:
    """Read a config file, or a bundled preset by name."""
    name = str(source)
    if name in PRESETS:
        text = resources.files("tvdopt.presets").joinpath(f"{name}.json").read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {name}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {name} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


#%% RANDOM STREAMS

def topology_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def replication_rngs(seed: int, r: int) -> tuple[np.random.Generator, ...]:
    """``(graph, sample, scenario)`` generators of replication `r`, shared across policies."""
    children = np.random.SeedSequence(seed, spawn_key=(1, r)).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


#%% RUNNING

@dataclass
class ReplicationSummary:
    index: int
    errors: np.ndarray
    counts: np.ndarray              # (K, 3): pdf, snapshot, every-time messages
    m_f: float
    L: float
    G: float
    delta_x: float
    guarantee: object = None        # GuaranteeReport
    messages: list | None = None


@dataclass
class ExperimentResult:
    config: RunConfig
    mean_errors: np.ndarray
    mean_counts: np.ndarray
    bound: float | None
    bound_inputs: BoundInputs
    bound_problems: list
    rho: float
    summary: dict
    replications: list


def _replication(task) -> ReplicationSummary:
    cfg, model, r = task
    graph_rng, sample_rng, scen_rng = replication_rngs(cfg.seed, r)
    scenario = make_scenario(cfg.scenario_config(), model, scen_rng)
    policy = cfg.policy.params(scenario.n)
    steps = StepSizes(*scenario.default_stepsizes())
    res = run_replication(scenario, policy, steps, cfg.steps, graph_rng, sample_rng, scen_rng,
                          check_invariants=cfg.check_invariants, log_guarantee=cfg.log_guarantee,
                          log_messages=cfg.save_raw)
    report = None
    if cfg.log_guarantee:
        report = verify_epsilon_guarantee(res.guarantee_log, policy.epsilon, scenario.radius)
    msgs = [m.to_record() for m in res.messages] if res.messages is not None else None
    counts = np.stack([res.pdf_msgs, res.snapshot_msgs, res.everytime_msgs], axis=1)
    return ReplicationSummary(r, res.errors, counts, res.m_f, res.L, res.G, res.delta_x, report, msgs)


def _rho(alpha, m_f, L):
    return 1.0 + alpha ** 2 * L ** 2 - alpha * m_f


def run_experiment(cfg: RunConfig, workers: int | None = None) -> ExperimentResult:
    """
    Run every replication and aggregate them by replication index.

    The constants are pooled conservatively across replications (smallest
    m_f, largest L, G and delta_x). The bound is None when its
    preconditions fail; the reasons are in ``bound_problems``.
    """
    cfg.validate()
    model = make_topology(cfg.scenario_config(), topology_rng(cfg.seed))
    tasks = [(cfg, model, r) for r in range(cfg.replications)]
    workers = cfg.workers if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_replication, tasks))
    else:
        reps = [_replication(t) for t in tasks]
    reps.sort(key=lambda s: s.index)

    errors = np.mean([s.errors for s in reps], axis=0)
    counts = np.mean([s.counts for s in reps], axis=0)
    totals = np.sum([s.counts.sum(axis=0) for s in reps], axis=0).astype(float)

    probe = make_scenario(cfg.scenario_config(), model, replication_rngs(cfg.seed, 0)[2])
    alpha, beta = probe.default_stepsizes()
    gamma = gamma_of(model, beta)
    inputs = BoundInputs(alpha, beta, cfg.policy.epsilon, probe.n,
                         min(s.m_f for s in reps), max(s.L for s in reps),
                         max(s.G for s in reps), max(s.delta_x for s in reps), gamma, probe.radius)
    problems = inputs.problems()
    bound = None if problems else theorem1_bound(inputs)
    rho = _rho(alpha, inputs.m_f, inputs.L)
    every = totals[2]
    summary = {
        "m_f": inputs.m_f, "L": inputs.L, "G": inputs.G, "delta_x": inputs.delta_x,
        "gamma": gamma, "rho": rho, "bound": bound,
        "trailing_error": trailing_error(errors),
        "pdf_msg_ratio": totals[0] / every if every else None,
        "snapshot_msg_ratio": totals[1] / every if every else None,
    }
    return ExperimentResult(cfg, errors, counts, bound, inputs, problems, rho, summary, reps)


#%% OUTPUT

def _fmt(x) -> str:
    return "nan" if x is None else format(float(x), ".17g")


def trace_lines(errors, counts, bound) -> list[str]:
    lines = [TRACE_HEADER]
    b = _fmt(bound)
    for k, (e, c) in enumerate(zip(errors, counts), start=1):
        lines.append(",".join([str(k), _fmt(e), b, _fmt(c[0]), _fmt(c[1]), _fmt(c[2])]))
    return lines


def write_outputs(result: ExperimentResult, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text("\n".join(trace_lines(result.mean_errors, result.mean_counts,
                                                         result.bound)) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    cfg = result.config
    details = {
        "config": dataclasses.asdict(cfg),
        "bound_inputs": result.bound_inputs.to_dict(),
        "bound_problems": result.bound_problems,
        "guarantee": [None if s.guarantee is None else
                      {"max_ratio": s.guarantee.max_ratio, "checked": s.guarantee.checked,
                       "violations": [list(v) for v in s.guarantee.violations]}
                      for s in result.replications],
    }
    (out / "details.json").write_text(json.dumps(details, indent=2) + "\n")
    if cfg.save_raw:
        raw = out / "raw"
        raw.mkdir(exist_ok=True)
        for s in result.replications:
            per = trace_lines(s.errors, s.counts, result.bound)
            (raw / f"rep_{s.index:03d}.csv").write_text("\n".join(per) + "\n")
            if s.messages is not None:
                with open(raw / f"messages_{s.index:03d}.jsonl", "w") as fh:
                    for rec in s.messages:
                        fh.write(json.dumps(rec) + "\n")
    return out


#%% VALIDATION

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list
    constants: dict

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}" + (f"  ({c.detail})" if c.detail else "")
               for c in self.checks]
        out += [f"  {k} = {v:.10g}" for k, v in self.constants.items()]
        return out


def validate_config(cfg: RunConfig) -> ValidationReport:
    """
    Step-size and graph conditions of the configured problem.

    m_f and L are the extremes of the expected Hessian over the first
    ``steps`` ticks of replication 0; only the problem data is advanced,
    the iteration itself is not run.
    """
    checks, consts = [], {}
    scfg = cfg.scenario_config()
    try:
        model = make_topology(scfg, topology_rng(cfg.seed))
    except GraphError as exc:
        return ValidationReport([Check("edge set E connected", False, str(exc))], consts)
    checks.append(Check("edge set E connected", True, f"{len(model.edges)} edges"))
    scen_rng = replication_rngs(cfg.seed, 0)[2]
    sc = make_scenario(scfg, model, scen_rng)
    alpha, beta = sc.default_stepsizes()
    m_f, L = np.inf, 0.0
    for t in range(cfg.steps):
        lo, hi = sc.hessian_bounds()
        m_f, L = min(m_f, lo), max(L, hi)
        if t + 1 < cfg.steps:
            sc.advance(scen_rng)
    Wb = expected_laplacian(model)
    lam2, lamn = lambda2(Wb), lambda_max(Wb)
    gamma = 1.0 - beta * lam2
    rho = _rho(alpha, m_f, L)
    consts.update(alpha=alpha, beta=beta, m_f=m_f, L=L, lambda2=lam2, lambda_n=lamn,
                  gamma=gamma, rho=rho, proof_rate=proof_rate(alpha, beta, m_f, L, lam2, gamma))
    checks.append(Check("beta < 1/n", bool(beta < 1.0 / sc.n),
                        f"beta = {beta:.6g}, 1/n = {1.0 / sc.n:.6g}"))
    checks.append(Check("0 < alpha < m_f/L^2", bool(0.0 < alpha < m_f / L ** 2),
                        f"alpha = {alpha:.6g}, m_f/L^2 = {m_f / L ** 2:.6g}"))
    checks.append(Check("0 < gamma < 1", bool(0.0 < gamma < 1.0), f"gamma = {gamma:.6g}"))
    checks.append(Check("0 < rho < 1", bool(0.0 < rho < 1.0), f"rho = {rho:.6g}"))
    return ValidationReport(checks, consts)


#%% ENTRY POINT

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvdopt", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run replications and write trace.csv and summary.json")
    run.add_argument("--config", required=True, help="config path or preset name")
    run.add_argument("--seed", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--policy", choices=MODES)
    run.add_argument("--epsilon", type=float)
    run.add_argument("--out")
    val = sub.add_parser("validate", help="check step sizes and graph conditions")
    val.add_argument("--config", required=True, help="config path or preset name")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            report = validate_config(cfg)
            print("\n".join(report.lines()))
            return 0 if report.ok else 1
        cfg = cfg.with_overrides(args.seed, args.steps, args.reps, args.policy, args.epsilon,
                                 args.out)
        result = run_experiment(cfg)
    except (ConfigError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return 2
    out = write_outputs(result, cfg.out)
    for p in result.bound_problems:
        print(f"bound undefined: {p}", file=sys.stderr)
    s = result.summary
    print(f"wrote {out / 'trace.csv'}; trailing error {s['trailing_error']:.6g}, "
          f"bound {_fmt(s['bound'])}, pdf ratio {_fmt(s['pdf_msg_ratio'])}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
