"""Declarative experiment runner: spec parsing, seeded sweeps, summaries."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithm import AlgoConfig, MqlUcbAgent
from .baselines import BaselineConfig, LsviUcbAgent, UniformRandomAgent
from .env import MdpSpec, chain2, goal_mdp, make_hard_instance, make_tabular_linear, random_mdp
from .metrics import RunMetrics
from .runner import run_agent

SPEC_SCHEMA = "expspec/v1"
SUMMARY_SCHEMA = "summary/v1"
OUT_ENV = "MQLUCB_OUT"
GENERATORS = ("chain2", "random", "goal", "hard")
AGENT_KINDS = ("mql_ucb", "lsvi_ucb", "lsvi_ucb_rare", "uniform")


class SpecError(ValueError):
    """Invalid experiment spec; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    label: str
    config: dict = field(default_factory=dict)
    budget: int | None = None


@dataclass(frozen=True)
class InstanceSpec:
    generator: str | None = None
    params: dict = field(default_factory=dict)
    file: str | None = None
    seed: int = 0
    per_run: bool = False  # draw a fresh instance per run seed


@dataclass(frozen=True)
class ExperimentSpec:
    instance: InstanceSpec
    agents: tuple[AgentSpec, ...]
    K: int
    seeds: tuple[int, ...]
    out: str | None = None
    emit_traces: bool = True

    def with_seed_offset(self, offset: int) -> "ExperimentSpec":
        return ExperimentSpec(self.instance, self.agents, self.K,
                              tuple(s + offset for s in self.seeds), self.out, self.emit_traces)


def _int(d: dict, key: str, path: str, default=None, minimum=None):
    v = d.get(key, default)
    if v is None:
        if default is None and key in d:
            raise SpecError(f"{path}.{key}", "must be an integer")
        return v
    if isinstance(v, bool) or not isinstance(v, int):
        raise SpecError(f"{path}.{key}", f"must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise SpecError(f"{path}.{key}", f"must be >= {minimum}")
    return v


def _check_keys(d: dict, allowed: set, path: str) -> None:
    if not isinstance(d, dict):
        raise SpecError(path, "must be an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise SpecError(f"{path}.{extra[0]}", "unknown field")


def _parse_agent(d: dict, i: int) -> AgentSpec:
    path = f"agents[{i}]"
    _check_keys(d, {"kind", "label", "config", "budget"}, path)
    kind = d.get("kind")
    if kind not in AGENT_KINDS:
        raise SpecError(f"{path}.kind", f"expected one of {AGENT_KINDS}, got {kind!r}")
    cfg = d.get("config", {})
    if not isinstance(cfg, dict):
        raise SpecError(f"{path}.config", "must be an object")
    try:
        if kind == "mql_ucb":
            AlgoConfig.from_dict(cfg).validate()
        elif kind.startswith("lsvi"):
            _check_keys(cfg, {"lam", "c_beta"}, f"{path}.config")
            BaselineConfig(**cfg).validate()
        elif cfg:
            raise ValueError(f"{sorted(cfg)[0]}: uniform takes no config")
    except (TypeError, ValueError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"{path}.config", str(e)) from None
    budget = _int(d, "budget", path, minimum=0)
    label = d.get("label", kind if budget is None else f"{kind}_budget{budget}")
    if not isinstance(label, str) or not label or "/" in label:
        raise SpecError(f"{path}.label", "must be a nonempty string without '/'")
    return AgentSpec(kind, label, dict(cfg), budget)


def _parse_instance(d: dict) -> InstanceSpec:
    _check_keys(d, {"generator", "params", "file", "seed", "per_run"}, "instance")
    gen, file = d.get("generator"), d.get("file")
    if (gen is None) == (file is None):
        raise SpecError("instance", "give exactly one of 'generator' or 'file'")
    if gen is not None and gen not in GENERATORS:
        raise SpecError("instance.generator", f"expected one of {GENERATORS}, got {gen!r}")
    params = d.get("params", {})
    if not isinstance(params, dict):
        raise SpecError("instance.params", "must be an object")
    if file is not None and not isinstance(file, str):
        raise SpecError("instance.file", "must be a path string")
    per_run = d.get("per_run", False)
    if not isinstance(per_run, bool):
        raise SpecError("instance.per_run", "must be true or false")
    return InstanceSpec(gen, dict(params), file, _int(d, "seed", "instance", 0), per_run)


def parse_spec(d: dict) -> ExperimentSpec:
    _check_keys(d, {"schema", "instance", "agents", "K", "seeds", "out", "emit"}, "spec")
    if d.get("schema") != SPEC_SCHEMA:
        raise SpecError("schema", f"expected {SPEC_SCHEMA!r}, got {d.get('schema')!r}")
    if "instance" not in d:
        raise SpecError("instance", "missing")
    inst = _parse_instance(d["instance"])
    agents = d.get("agents")
    if not isinstance(agents, list) or not agents:
        raise SpecError("agents", "need at least one agent")
    parsed = tuple(_parse_agent(a, i) for i, a in enumerate(agents))
    labels = [a.label for a in parsed]
    dup = next((l for l in labels if labels.count(l) > 1), None)
    if dup:
        raise SpecError(f"agents[{labels.index(dup, labels.index(dup) + 1)}].label", f"duplicate label {dup!r}")
    if "K" not in d:
        raise SpecError("K", "missing")
    K = _int(d, "K", "spec", minimum=1)
    seeds = d.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise SpecError("seeds", "need at least one seed")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int):
            raise SpecError(f"seeds[{i}]", f"must be an integer, got {s!r}")
    if len(set(seeds)) != len(seeds):
        raise SpecError("seeds", "seeds must be distinct")
    out = d.get("out")
    if out is not None and not isinstance(out, str):
        raise SpecError("out", "must be a path string")
    emit = d.get("emit", {})
    _check_keys(emit, {"traces"}, "emit")
    traces = emit.get("traces", True)
    if not isinstance(traces, bool):
        raise SpecError("emit.traces", "must be true or false")
    return ExperimentSpec(inst, parsed, K, tuple(seeds), out, traces)


def load_spec(path: str | Path) -> ExperimentSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SpecError("spec", f"not valid JSON ({e})") from None
    return parse_spec(d)


# ---------------------------------------------------------------------------
# execution


def build_instance(inst: InstanceSpec, K: int, run_seed: int, base_dir: Path | None = None) -> MdpSpec:
    if inst.file is not None:
        p = Path(inst.file)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        return MdpSpec.load(p)
    rng = np.random.default_rng(inst.seed + run_seed if inst.per_run else inst.seed)
    p = inst.params
    try:
        if inst.generator == "chain2":
            return chain2()
        if inst.generator == "random":
            return random_mdp(p.get("S", 4), p.get("A", 3), p.get("H", 3), rng,
                              concentration=p.get("concentration", 1.0))
        if inst.generator == "goal":
            return goal_mdp(p.get("S", 4), p.get("A", 3), p.get("H", 3), rng,
                            concentration=p.get("concentration", 1.0), goal_prob=p.get("goal_prob", 0.3))
        return make_hard_instance(p.get("d", 8), p.get("H", 6), K, rng).mdp
    except TypeError as e:
        raise SpecError("instance.params", str(e)) from None


def make_agent(a: AgentSpec, mdp: MdpSpec, K: int):
    if a.kind == "mql_ucb":
        return MqlUcbAgent(mdp, make_tabular_linear(mdp), AlgoConfig.from_dict(a.config), K)
    if a.kind == "uniform":
        return UniformRandomAgent(mdp)
    rule = "every_episode" if a.kind == "lsvi_ucb" else "det_doubling"
    return LsviUcbAgent(mdp, make_tabular_linear(mdp), BaselineConfig(**a.config, rule=rule))


def execute_run(spec: ExperimentSpec, agent_idx: int, seed: int, base_dir: str | None = None) -> RunMetrics:
    a = spec.agents[agent_idx]
    mdp = build_instance(spec.instance, spec.K, seed, Path(base_dir) if base_dir else None)
    agent = make_agent(a, mdp, spec.K)
    return run_agent(mdp, agent, spec.K, np.random.default_rng(seed), budget=a.budget,
                     seed=seed, name=a.label)


def trace_name(label: str, seed: int) -> str:
    return f"{label}_seed{seed}.csv"


def _mean_stderr(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


@dataclass
class ExperimentResult:
    runs: list[RunMetrics]
    failures: list[dict]
    summary: dict
    out_dir: Path | None


def resolve_out(spec: ExperimentSpec, out: str | None = None) -> Path | None:
    target = out or spec.out or os.environ.get(OUT_ENV)
    return Path(target) if target else None


def run_experiment(spec: ExperimentSpec, *, workers: int = 1, out: str | Path | None = None,
                   base_dir: str | Path | None = None) -> ExperimentResult:
    """Run every (agent, seed) pair; write traces and ``summary.json``.

    A failing run is recorded in the summary and does not stop the others.
    """
    out_dir = resolve_out(spec, str(out) if out else None)
    jobs = [(i, s) for i in range(len(spec.agents)) for s in spec.seeds]
    bd = str(base_dir) if base_dir else None
    results: list[RunMetrics | BaseException] = []
    if workers <= 1:
        for i, s in jobs:
            try:
                results.append(execute_run(spec, i, s, bd))
            except Exception as e:  # noqa: BLE001 - failures are reported, not raised
                results.append(e)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(execute_run, spec, i, s, bd) for i, s in jobs]
            for f in futs:
                try:
                    results.append(f.result())
                except Exception as e:  # noqa: BLE001
                    results.append(e)
    runs, failures = [], []
    for (i, s), r in zip(jobs, results):
        if isinstance(r, BaseException):
            failures.append({"agent": spec.agents[i].label, "seed": s,
                             "error": f"{type(r).__name__}: {r}"})
        else:
            runs.append(r)
    summary = summarize(spec, runs, failures)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if spec.emit_traces:
            for r in runs:
                r.write(out_dir / trace_name(r.agent, r.seed))
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(runs, failures, summary, out_dir)


def summarize(spec: ExperimentSpec, runs: list[RunMetrics], failures: list[dict]) -> dict:
    agents = {}
    for a in spec.agents:
        mine = sorted((r for r in runs if r.agent == a.label), key=lambda r: r.seed)
        finals = [r.final_regret for r in mine]
        mean, se = _mean_stderr(finals)
        agents[a.label] = {
            "kind": a.kind,
            "seeds": [r.seed for r in mine],
            "final_regret": finals,
            "mean_final_regret": mean,
            "stderr_final_regret": se,
            "switches": [r.total_switches for r in mine],
            "var_k": [r.var_k for r in mine],
        }
    inst = spec.instance
    return {
        "schema": SUMMARY_SCHEMA,
        "K": spec.K,
        "seeds": list(spec.seeds),
        "instance": {"generator": inst.generator, "file": inst.file, "params": inst.params,
                     "seed": inst.seed, "per_run": inst.per_run},
        "agents": agents,
        "failures": failures,
    }


# ---------------------------------------------------------------------------
# comparison


def load_traces(dirs) -> dict[str, list[RunMetrics]]:
    """Group every ``*.csv`` trace under ``dirs`` by agent label."""
    groups: dict[str, list[RunMetrics]] = {}
    for d in dirs:
        for p in sorted(Path(d).glob("*.csv")):
            m = RunMetrics.read(p)
            groups.setdefault(m.agent, []).append(m)
    return groups


def compare_regret(groups: dict[str, list[RunMetrics]]) -> dict:
    """Checkpoint statistics per agent over a common (K, seeds) grid."""
    if len(groups) < 2:
        raise ValueError("need traces from at least two agents")
    grids = {label: (runs[0].K if runs else 0, tuple(sorted(r.seed for r in runs)))
             for label, runs in groups.items()}
    for label, runs in groups.items():
        if len({r.K for r in runs}) > 1:
            raise ValueError(f"{label}: runs have different K")
    ref_label, ref = next(iter(grids.items()))
    for label, g in grids.items():
        if g != ref:
            raise ValueError(f"run grid of {label!r} {g} does not match {ref_label!r} {ref}")
    K = ref[0]
    checkpoints = [max(1, K // 4), max(1, K // 2), K]
    table = {}
    for label, runs in groups.items():
        row = {}
        for c in checkpoints:
            mean, se = _mean_stderr([r.regret_at(c) for r in runs])
            row[str(c)] = {"mean": mean, "stderr": se}
        sw = np.array([r.total_switches for r in runs])
        subl = [r.sublinearity_ratio() for r in runs]
        table[label] = {
            "cum_regret": row,
            "switches": {"mean": float(sw.mean()), "min": int(sw.min()), "max": int(sw.max())},
            "sublinearity": float(np.nanmean(subl)) if not all(map(math.isnan, subl)) else math.nan,
        }
    return {"K": K, "seeds": list(ref[1]), "checkpoints": checkpoints, "agents": table}


def format_comparison(cmp: dict) -> str:
    cps = cmp["checkpoints"]
    head = ["agent"] + [f"R({c})" for c in cps] + ["switches", "sublin"]
    rows = [head]
    for label, a in cmp["agents"].items():
        cells = [label]
        for c in cps:
            v = a["cum_regret"][str(c)]
            cells.append(f"{v['mean']:.2f} ± {v['stderr']:.2f}")
        s = a["switches"]
        cells.append(f"{s['mean']:.1f} [{s['min']}, {s['max']}]")
        cells.append(f"{a['sublinearity']:.3f}")
        rows.append(cells)
    widths = [max(len(r[j]) for r in rows) for j in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
