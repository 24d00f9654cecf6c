"""Benchmark harness: config parsing, seeded runs, sweeps, CSV reporting.

A single JSON document configures a run:

    {
      "gmm":    {"dim": 2, "weights": [...], "means": [[...]], "variances": [[...]]},
      "reward": {"kind": "rare-mode", "params": {}, "beta": 0.1},
      "process": "vp-sde",
      "sampler": "rbf",
      "nfe": 500,
      "steps": 10,
      "seeds": [0, 1, 2],
      "sampler_opts": {"k": 25},
      "out": "results.csv"
    }

Omitted gmm/reward blocks fall back to the benchmark defaults.  Records are
written as CSV with the fixed column order

    seed,method,process,nfe_budget,steps,best_reward,diversity_mpd,nfe_used,wall_ms

floats serialised to 12 significant digits.  For a fixed (config, seed) all
columns except wall_ms are identical regardless of harness parallelism.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as streams
from .analytic_flow import GaussianMixtureModel, default_benchmark_gmm, velocity_at
from .engine import PROCESS_NAMES, StepPlan, denoise_interval, make_plan
from .errors import ConfigError, InvariantError
from .rewards import (
    RewardSpec,
    evaluate_reward,
    rare_mode_reward,
    ring_reward,
    target_point_reward,
)
from .samplers import SAMPLER_NAMES, SAMPLERS, SearchBudget

CSV_COLUMNS = (
    "seed",
    "method",
    "process",
    "nfe_budget",
    "steps",
    "best_reward",
    "diversity_mpd",
    "nfe_used",
    "wall_ms",
)

DEFAULT_SWEEP_BUDGETS = (50, 100, 300, 500, 1000)
DIVERSITY_BRANCHES = 50


@dataclass(frozen=True)
class ExperimentConfig:
    gmm: GaussianMixtureModel
    reward: RewardSpec
    process: str
    sampler: str
    nfe: int
    steps: int
    seeds: tuple[int, ...]
    sampler_opts: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self) -> None:
        if self.process not in PROCESS_NAMES:
            raise ConfigError(f"unknown process {self.process!r}")
        if self.sampler not in SAMPLER_NAMES:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.nfe < self.steps:
            raise ConfigError("nfe must be at least steps")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


def _gmm_from_dict(doc: dict) -> GaussianMixtureModel:
    try:
        gmm = GaussianMixtureModel(
            weights=np.asarray(doc["weights"], dtype=float),
            means=np.asarray(doc["means"], dtype=float),
            variances=np.asarray(doc["variances"], dtype=float),
        )
    except KeyError as exc:
        raise ConfigError(f"gmm config missing key {exc}") from exc
    if "dim" in doc and int(doc["dim"]) != gmm.dim:
        raise ConfigError(f"gmm dim {doc['dim']} does not match means of dim {gmm.dim}")
    return gmm


def _reward_from_dict(doc: dict, gmm: GaussianMixtureModel) -> RewardSpec:
    kind = doc.get("kind", "rare-mode")
    params = doc.get("params", {})
    beta = float(doc.get("beta", 0.1))
    if kind == "target-point":
        if "target" not in params:
            raise ConfigError("target-point reward needs params.target")
        return target_point_reward(params["target"], beta)
    if kind == "ring":
        if "radius" not in params:
            raise ConfigError("ring reward needs params.radius")
        return ring_reward(float(params["radius"]), beta)
    if kind == "rare-mode":
        return rare_mode_reward(gmm, params.get("component"), beta)
    raise ConfigError(f"unknown reward kind {kind!r}")


def load_config(doc: dict | str | Path) -> ExperimentConfig:
    """Build an ExperimentConfig from a dict, a JSON string, or a file path."""
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    gmm = _gmm_from_dict(doc["gmm"]) if "gmm" in doc else default_benchmark_gmm()
    reward = _reward_from_dict(doc.get("reward", {}), gmm)
    try:
        return ExperimentConfig(
            gmm=gmm,
            reward=reward,
            process=doc.get("process", "vp-sde"),
            sampler=doc.get("sampler", "rbf"),
            nfe=int(doc.get("nfe", 500)),
            steps=int(doc.get("steps", 10)),
            seeds=tuple(int(s) for s in doc.get("seeds", [0])),
            sampler_opts=dict(doc.get("sampler_opts", {})),
            out=doc.get("out"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class RunRecord:
    seed: int
    method: str
    process: str
    nfe_budget: int
    steps: int
    best_reward: float
    diversity_mpd: float
    nfe_used: int
    wall_ms: float

    def validate(self) -> None:
        if self.nfe_used > self.nfe_budget:
            raise InvariantError(
                f"record spent {self.nfe_used} NFEs over budget {self.nfe_budget}"
            )
        if not self.diversity_mpd >= 0.0:
            raise InvariantError("diversity_mpd must be nonnegative")
        if not math.isfinite(self.best_reward):
            raise InvariantError("best_reward must be finite")


def diversity_mpd(points) -> float:
    """Mean pairwise Euclidean distance over >= 2 points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ConfigError("diversity needs at least two points")
    dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    iu = np.triu_indices(pts.shape[0], 1)
    return float(dists[iu].mean())


def branched_proposals(
    plan: StepPlan,
    gmm: GaussianMixtureModel,
    seed: int,
    k: int = DIVERSITY_BRANCHES,
) -> np.ndarray:
    """The same-initial-latent diversity protocol.

    ``k`` branches share one initial latent and diverge from the first
    denoise step on, each evolving under the plan's own (stochastic)
    dynamics with a per-branch noise stream; for deterministic plans all
    branches coincide and the diversity is exactly zero.  Returns the
    endpoints, shape (k, dim).
    """
    velocity = lambda x, t: velocity_at(gmm, plan.src_schedule, t, x)
    x1 = streams.stream(seed, streams.DIVERSITY, 0).standard_normal(gmm.dim)
    xs = np.tile(x1, (k, 1))
    grid = plan.grid
    for i in range(plan.steps):
        z = None
        if plan.is_stochastic() and grid[i + 1] > 0.0:
            z = np.stack(
                [
                    streams.stream(seed, streams.DIVERSITY, i + 1, j).standard_normal(gmm.dim)
                    for j in range(k)
                ]
            )
        xs = denoise_interval(plan, xs, grid[i], grid[i + 1], z, velocity)
    return xs


def _plan_for(config: ExperimentConfig, process: str | None = None, steps: int | None = None) -> StepPlan:
    return make_plan(process or config.process, steps or config.steps)


def _run_sampler(config: ExperimentConfig, plan: StepPlan, nfe: int, seed: int):
    budget = SearchBudget.uniform(nfe, plan.steps)
    sampler = SAMPLERS[config.sampler]
    result = sampler(plan, config.gmm, config.reward, budget, seed, **config.sampler_opts)
    return result


def run_experiment(config: ExperimentConfig, seed: int, nfe: int | None = None) -> RunRecord:
    """Execute one seeded run and measure branched-proposal diversity."""
    nfe = config.nfe if nfe is None else nfe
    plan = _plan_for(config)
    start = time.perf_counter()
    result = _run_sampler(config, plan, nfe, seed)
    wall_ms = (time.perf_counter() - start) * 1000.0
    div = diversity_mpd(branched_proposals(plan, config.gmm, seed))
    record = RunRecord(
        seed=seed,
        method=config.sampler,
        process=config.process,
        nfe_budget=nfe,
        steps=config.steps,
        best_reward=result.best_reward,
        diversity_mpd=div,
        nfe_used=result.nfe_used,
        wall_ms=wall_ms,
    )
    record.validate()
    return record


def _record_task(args) -> RunRecord:
    doc, seed, nfe, process, mode = args
    config = load_config(doc)
    if process is not None:
        config = replace(config, process=process)
    if mode == "run":
        return run_experiment(config, seed, nfe)
    if mode == "diversity":
        return diversity_record(config, seed)
    raise ConfigError(f"unknown task mode {mode!r}")


def _parallel_records(tasks, jobs: int) -> list[RunRecord]:
    if jobs <= 1:
        return [_record_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_record_task, tasks))


def _config_doc(config: ExperimentConfig) -> dict:
    """Round-trip a config into its JSON document (for worker processes)."""
    reward_params = {}
    if config.reward.kind == "target-point":
        reward_params["target"] = config.reward.params["target"].tolist()
    elif config.reward.kind == "ring":
        reward_params["radius"] = config.reward.params["radius"]
    return {
        "gmm": {
            "weights": config.gmm.weights.tolist(),
            "means": config.gmm.means.tolist(),
            "variances": config.gmm.variances.tolist(),
        },
        "reward": {
            "kind": config.reward.kind,
            "params": reward_params,
            "beta": config.reward.kl_temperature,
        },
        "process": config.process,
        "sampler": config.sampler,
        "nfe": config.nfe,
        "steps": config.steps,
        "seeds": list(config.seeds),
        "sampler_opts": config.sampler_opts,
        "out": config.out,
    }


def run_table(config: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """One record per configured seed."""
    doc = _config_doc(config)
    tasks = [(doc, seed, config.nfe, None, "run") for seed in config.seeds]
    return sort_records(_parallel_records(tasks, jobs))


def sweep(
    config: ExperimentConfig,
    budgets=DEFAULT_SWEEP_BUDGETS,
    jobs: int = 1,
) -> list[RunRecord]:
    """One record per (budget, seed); budgets must be sorted ascending."""
    budgets = [int(b) for b in budgets]
    if budgets != sorted(budgets):
        raise ConfigError("budgets must be sorted ascending")
    doc = _config_doc(config)
    tasks = [
        (doc, seed, budget, None, "run") for budget in budgets for seed in config.seeds
    ]
    return sort_records(_parallel_records(tasks, jobs))


def ablate_interpolant(config: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """Run all five processes under identical seeds and budget."""
    if config.sampler == "bon":
        raise ConfigError("ablation needs a sampler with stochastic proposals")
    doc = _config_doc(config)
    tasks = [
        (doc, seed, config.nfe, process, "run")
        for process in PROCESS_NAMES
        for seed in config.seeds
    ]
    return sort_records(_parallel_records(tasks, jobs))


def diversity_record(config: ExperimentConfig, seed: int) -> RunRecord:
    """Diversity-only record: no sampler run; best_reward is the best branch."""
    plan = _plan_for(config)
    start = time.perf_counter()
    endpoints = branched_proposals(plan, config.gmm, seed)
    wall_ms = (time.perf_counter() - start) * 1000.0
    rewards = np.asarray(evaluate_reward(config.reward, endpoints))
    protocol_nfe = DIVERSITY_BRANCHES * config.steps  # measurement cost, not the search budget
    record = RunRecord(
        seed=seed,
        method="diversity",
        process=config.process,
        nfe_budget=protocol_nfe,
        steps=config.steps,
        best_reward=float(rewards.max()),
        diversity_mpd=diversity_mpd(endpoints),
        nfe_used=protocol_nfe,
        wall_ms=wall_ms,
    )
    record.validate()
    return record


def diversity_table(config: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """Branched-proposal diversity for all five processes across seeds."""
    doc = _config_doc(config)
    tasks = [
        (doc, seed, None, process, "diversity")
        for process in PROCESS_NAMES
        for seed in config.seeds
    ]
    return sort_records(_parallel_records(tasks, jobs))


def sort_records(records: list[RunRecord]) -> list[RunRecord]:
    """Deterministic output order regardless of execution order."""
    return sorted(
        records, key=lambda r: (r.seed, r.nfe_budget, PROCESS_NAMES.index(r.process), r.method)
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(records: list[RunRecord], path: str | Path) -> None:
    """Validate and write records with the fixed column order."""
    for rec in records:
        rec.validate()
    path = Path(path)
    if path.parent != Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, col)) for col in CSV_COLUMNS])
