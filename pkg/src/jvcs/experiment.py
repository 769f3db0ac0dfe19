"""Experiment orchestration: (method, seed) runs, D6 sweeps and result files.

Per run, four files are written under the output directory::

    <stem>_trace.csv     tree_index,best_value      (deterministic)
    <stem>_timing.csv    tree_index,wall_time       (seconds, monotonic)
    <stem>_strategy.json best tree, nested
    <stem>_strategy.dot  best tree, Graphviz

plus one ``summary.csv`` with method,seed,expected_value,runtime rows.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bayesnet import BayesianNetwork
from .domain import Scenario, VerificationProblem
from .export import to_dot, to_json
from .scenarios import TEMPLATES, generate_scenario
from .search import METHODS, SearchConfig, SearchResult, run_search

log = logging.getLogger(__name__)

D6_GRID = (0.1, 0.25, 0.5, 1.0, 1.5, 2.0)
SUMMARY_FIELDS = ("method", "seed", "expected_value", "runtime")


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    methods: list[str]
    seeds: list[int]
    out_dir: str
    network: str | None = None
    scenario: str | None = None
    template: str | None = None
    scenario_seed: int = 0
    budget: int = 5000
    trace_every: int = 50
    config: dict = field(default_factory=dict)  # SearchConfig overrides for every method
    method_config: dict = field(default_factory=dict)  # method -> overrides
    d6_grid: list[float] | None = None
    jobs: int = 1

    def validate(self) -> None:
        if not self.seeds:
            raise SpecError("seeds must not be empty")
        if not self.methods and self.d6_grid is None:
            raise SpecError("no methods to run")
        for m in self.methods:
            if m not in METHODS:
                raise SpecError(f"unknown method {m!r}")
        if (self.network is None) != (self.scenario is None):
            raise SpecError("network and scenario files go together")
        if self.network is None and self.template is None:
            raise SpecError("give either network+scenario files or a template")
        if self.template is not None and self.template not in TEMPLATES:
            raise SpecError(f"unknown template {self.template!r}")
        for p in (self.network, self.scenario):
            if p is not None and not Path(p).is_file():
                raise SpecError(f"missing file {p}")
        if self.jobs < 1:
            raise SpecError("jobs must be at least 1")
        self.load_problem()  # cross-validates the two files

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentSpec":
        path = Path(path)
        data = json.loads(path.read_text())
        for key in ("network", "scenario", "out_dir"):
            if data.get(key) is not None:
                data[key] = str((path.parent / data[key]).resolve())
        data.update({k: v for k, v in overrides.items() if v is not None})
        spec = cls(**data)
        spec.validate()
        return spec

    def load_problem(self) -> VerificationProblem:
        if self.network is not None:
            net = BayesianNetwork.load(self.network)
            return VerificationProblem(Scenario.load(self.scenario, net))
        return VerificationProblem(generate_scenario(self.template, self.scenario_seed))

    def runs(self) -> list["Run"]:
        out = []
        for method in self.methods:
            for seed in self.seeds:
                out.append(Run(method, method, seed, self._config(method, seed)))
        for d6 in self.d6_grid or ():
            for seed in self.seeds:
                cfg = self._config("UCBRB1", seed)
                cfg["d6"] = d6
                out.append(Run(f"UCBRB1[d6={d6:g}]", "UCBRB1", seed, cfg))
        return out

    def _config(self, method: str, seed: int) -> dict:
        cfg = {"budget": self.budget, "trace_every": self.trace_every}
        cfg.update(self.config)
        cfg.update(self.method_config.get(method, {}))
        cfg.update(method=method, seed=seed)
        return cfg


@dataclass
class Run:
    label: str
    method: str
    seed: int
    config: dict

    @property
    def stem(self) -> str:
        safe = self.label.replace("[", "_").replace("]", "").replace("=", "-")
        return f"{safe}_seed{self.seed}"


@dataclass
class SummaryRow:
    method: str
    seed: int
    expected_value: float
    runtime: float


def write_run_outputs(
    out_dir: str | Path, stem: str, problem: VerificationProblem, result: SearchResult
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tree_index", "best_value"])
        w.writerows((i, repr(float(v))) for i, v in result.trace)
    with open(out / f"{stem}_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tree_index", "wall_time"])
        w.writerows((i, f"{t:.6f}") for i, t in result.wall_times)
    (out / f"{stem}_strategy.json").write_bytes(to_json(problem, result.best_tree))
    (out / f"{stem}_strategy.dot").write_bytes(to_dot(problem, result.best_tree))


def _execute(spec: ExperimentSpec, run: Run) -> SummaryRow:
    problem = spec.load_problem()
    result = run_search(problem, SearchConfig(**run.config))
    write_run_outputs(spec.out_dir, run.stem, problem, result)
    log.info("%s seed %d: %.2f in %.1fs", run.label, run.seed, result.best_value, result.runtime)
    return SummaryRow(run.label, run.seed, result.best_value, result.runtime)


def write_summary(path: str | Path, rows: list[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r.method, r.seed, repr(float(r.expected_value)), f"{r.runtime:.3f}"])


def run_experiment(spec: ExperimentSpec) -> list[SummaryRow]:
    """Run every (method, seed) pair and every D6 grid point; the summary is
    rewritten after each finished run so partial results survive."""
    Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
    runs = spec.runs()
    rows: list[SummaryRow | None] = [None] * len(runs)
    summary = Path(spec.out_dir) / "summary.csv"

    def flush():
        write_summary(summary, [r for r in rows if r is not None])

    if spec.jobs == 1:
        for i, run in enumerate(runs):
            rows[i] = _execute(spec, run)
            flush()
    else:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [pool.submit(_execute, spec, run) for run in runs]
            for i, fut in enumerate(futures):
                rows[i] = fut.result()
                flush()
    (Path(spec.out_dir) / "experiment.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    return [r for r in rows if r is not None]
