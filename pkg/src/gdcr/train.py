"""SAPO / GRPO training loop over the simulated search environment."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Mapping

import numpy as np

from gdcr.advantage import DEFAULT_EPS, GroupMember, OutcomeReward, TrajectoryAdvantage, TrajectoryGroup, outcome_reward
from gdcr.entities import Lexicon, build_lexicon
from gdcr.graph import ERGraph, NoiseSpec, corrupt_graph
from gdcr.policy import N_FEATURES, ClipConfig, DecisionRecord, PolicyParams, objective_gradient, surrogate_objective
from gdcr.reward import StepRewardSeries, history_best_distance, score_trajectory
from gdcr.sim import (
    RolloutConfig,
    TaskInstance,
    WorldGraph,
    derive_seed,
    generate_world,
    rollout,
    synthesize_suite,
)
from gdcr.trajectory import Trajectory

log = logging.getLogger(__name__)

MODES = ("sapo", "grpo")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    nodes: int = 200
    degree: float = 4.0
    rewire_prob: float = 0.1
    world_seed: int = 0
    tasks: int = 100
    walk_length: int = 3
    side_branches: int = 1
    side_questions: bool = True
    task_seed: int = 1
    max_steps: int = 20
    top_k: int = 5
    distractor_rate: float = 0.0
    cite_mode: bool = False


@dataclass(frozen=True)
class NoiseConfig:
    mode: str
    rate: float
    seed: int = 0
    rounding: str = "floor"


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    mode: str = "sapo"
    group_size: int = 8
    lam: float = 0.5
    k: float = 2.0
    eps_low: float = 0.2
    eps_high: float = 0.28
    adv_eps: float = DEFAULT_EPS
    learning_rate: float = 1.0
    iterations: int = 40
    tasks_per_iteration: int = 16
    temperature: float = 1.0
    eval_rollouts: int = 4
    eval_seed: int = 12345
    env: EnvConfig = field(default_factory=EnvConfig)
    noise: NoiseConfig | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.lam < 0 or self.k < 1 or self.learning_rate < 0 or self.iterations < 0:
            raise ConfigError("lambda, k, learning_rate or iterations out of range")
        if self.tasks_per_iteration < 1 or self.eval_rollouts < 0:
            raise ConfigError("tasks_per_iteration must be >= 1")
        ClipConfig(self.eps_low, self.eps_high)

    @property
    def effective_lambda(self) -> float:
        # GRPO is SAPO without the step term
        return 0.0 if self.mode == "grpo" else self.lam

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> TrainConfig:
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        env = obj.pop("env", None) or {}
        noise = obj.pop("noise", None)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        env_known = {f.name for f in fields(EnvConfig)}
        if set(env) - env_known:
            raise ConfigError(f"unknown env keys: {sorted(set(env) - env_known)}")
        try:
            return cls(
                **obj,
                env=EnvConfig(**env),
                noise=NoiseConfig(**noise) if noise else None,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SimEnv:
    """World, task suite and the (possibly corrupted) graphs used for reward."""

    world: WorldGraph
    tasks: list[TaskInstance]
    reward_graphs: list[ERGraph]
    lexicons: list[Lexicon]
    rollout_config: RolloutConfig
    rejected: int = 0

    @classmethod
    def build(cls, env: EnvConfig, noise: NoiseConfig | None = None) -> SimEnv:
        world = generate_world(env.nodes, env.degree, env.world_seed, env.rewire_prob)
        tasks, rejected = synthesize_suite(
            world, env.tasks, env.walk_length, env.task_seed, env.side_branches, side_questions=env.side_questions
        )
        return cls.from_parts(world, tasks, env, noise, rejected)

    @classmethod
    def from_parts(cls, world: WorldGraph, tasks: list[TaskInstance], env: EnvConfig, noise: NoiseConfig | None = None, rejected: int = 0) -> SimEnv:
        graphs = []
        for i, task in enumerate(tasks):
            g = task.task_graph
            if noise is not None:
                spec = NoiseSpec(noise.mode, noise.rate, derive_seed(noise.seed, i), noise.rounding)
                g = corrupt_graph(g, spec, label_pool=world.labels)
            graphs.append(g)
        lexicons = [build_lexicon(g) for g in graphs]
        rc = RolloutConfig(env.max_steps, env.top_k, env.distractor_rate, env.cite_mode)
        return cls(world, tasks, graphs, lexicons, rc, rejected)


@dataclass
class ScoredRollout:
    task_index: int
    trajectory: Trajectory
    decisions: list[DecisionRecord]
    series: StepRewardSeries
    outcome: OutcomeReward


@dataclass
class RunArtifacts:
    config: TrainConfig
    initial_params: PolicyParams
    params: PolicyParams
    metrics: list[dict]
    final_success_rate: float
    eval_rollouts: list[ScoredRollout]
    last_batch: list[tuple[list[ScoredRollout], list[TrajectoryAdvantage]]]


def run_rollout(env: SimEnv, params: PolicyParams, task_index: int, seed: int, k: float, trajectory_id: str) -> ScoredRollout:
    task = env.tasks[task_index]
    traj, recs = rollout(params, task, env.world, env.rollout_config.max_steps, seed, env.rollout_config, trajectory_id=trajectory_id)
    series = score_trajectory(traj, env.reward_graphs[task_index], env.lexicons[task_index], k)
    outcome = outcome_reward(traj, task.gold_answer)
    return ScoredRollout(task_index, traj, recs, series, outcome)


def rollout_metrics(batch: list[ScoredRollout]) -> dict:
    final_best = []
    for r in batch:
        best = history_best_distance(r.series, include_final=False)
        if best and np.isfinite(best[-1]):
            final_best.append(best[-1])
    return {
        "success_rate": float(np.mean([r.outcome.scalar for r in batch])) if batch else 0.0,
        "mean_r_g": float(np.mean([np.mean(r.series.r_g) for r in batch])) if batch else 0.0,
        "mean_steps": float(np.mean([len(r.trajectory.steps) for r in batch])) if batch else 0.0,
        "mean_final_best_distance": float(np.mean(final_best)) if final_best else None,
    }


def evaluate(env: SimEnv, params: PolicyParams, rollouts_per_task: int, seed: int, k: float) -> list[ScoredRollout]:
    out = []
    for ti in range(len(env.tasks)):
        for j in range(rollouts_per_task):
            out.append(run_rollout(env, params, ti, derive_seed(seed, ti, j), k, f"eval-{ti:04d}-{j}"))
    return out


def train(
    env: SimEnv,
    config: TrainConfig,
    params: PolicyParams | None = None,
    on_iteration: Callable[[dict], None] | None = None,
) -> RunArtifacts:
    """Sample groups, score with GDCR, build SAPO advantages, take one ascent step per iteration."""
    params = params or PolicyParams.zeros(N_FEATURES, config.temperature)
    initial = params
    clip = ClipConfig(config.eps_low, config.eps_high)
    lam = config.effective_lambda
    rng = np.random.default_rng(derive_seed(config.seed, 0))
    n_tasks = len(env.tasks)
    metrics = []
    last_batch: list = []
    for it in range(config.iterations):
        batch_tasks = rng.choice(n_tasks, size=min(config.tasks_per_iteration, n_tasks), replace=False)
        grad = np.zeros_like(params.to_vector())
        objective = 0.0
        all_rollouts: list[ScoredRollout] = []
        last_batch = []
        for ti in sorted(int(t) for t in batch_tasks):
            group = [
                run_rollout(env, params, ti, derive_seed(config.seed, 1, it, ti, g), config.k, f"it{it:04d}-{ti:04d}-{g}")
                for g in range(config.group_size)
            ]
            tg = TrajectoryGroup(env.tasks[ti].task_id, tuple(
                GroupMember(r.trajectory, r.series, r.outcome, tuple(r.decisions)) for r in group
            ))
            advs = tg.advantages(lam, config.adv_eps)
            decisions = tg.decisions
            grad += objective_gradient(decisions, advs, params, clip)
            objective += surrogate_objective(decisions, advs, params, clip)
            all_rollouts.extend(group)
            last_batch.append((group, advs))
        n_groups = len(batch_tasks)
        grad /= n_groups
        # temperature is held fixed: it only rescales the weights
        step = config.learning_rate * grad
        n = params.feature_weights.shape[0]
        params = PolicyParams(params.feature_weights + step[:n], params.temperature, params.cite_weights + step[n : 2 * n])
        row = {"iteration": it, "objective": objective / n_groups, **rollout_metrics(all_rollouts)}
        row["feature_weights"] = [float(x) for x in params.feature_weights]
        metrics.append(row)
        if on_iteration:
            on_iteration(row)
        log.debug("iteration %d success %.3f", it, row["success_rate"])

    eval_runs = evaluate(env, params, config.eval_rollouts, config.eval_seed, config.k) if config.eval_rollouts else []
    final = float(np.mean([r.outcome.scalar for r in eval_runs])) if eval_runs else float("nan")
    return RunArtifacts(config, initial, params, metrics, final, eval_runs, last_batch)
