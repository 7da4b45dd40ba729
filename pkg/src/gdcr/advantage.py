"""Outcome rewards and SAPO advantages (group-normalized outcome + clipped step signal)."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from gdcr.entities import normalize_text
from gdcr.reward import StepRewardSeries
from gdcr.trajectory import Trajectory

DEFAULT_EPS = 1e-6
DEFAULT_LAMBDA = 0.5


class GroupTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class OutcomeReward:
    correctness: int
    format_valid: int

    @property
    def scalar(self) -> float:
        # format validity gates correctness
        return float(self.correctness * self.format_valid)


def answer_matches(answer: str, gold_forms: Iterable[str], match: str = "contains") -> bool:
    """Simulated judge: normalized exact match, or a gold surface form as a whole phrase in the answer."""
    ans = normalize_text(answer)
    forms = [f for f in (normalize_text(g) for g in gold_forms) if f]
    if ans in forms:
        return True
    if match == "exact":
        return False
    return any(re.search(rf"(?<!\w){re.escape(f)}(?!\w)", ans) for f in forms)


def outcome_reward(
    traj: Trajectory,
    gold_answer: str,
    aliases: Sequence[str] = (),
    match: str = "contains",
) -> OutcomeReward:
    if not traj.format_valid:
        return OutcomeReward(0, 0)
    correct = answer_matches(traj.final_answer, [gold_answer, *aliases], match)
    return OutcomeReward(int(correct), 1)


def _normalize(values: np.ndarray, eps: float) -> np.ndarray:
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    if scale > 1e150:
        # normalization is scale-free up to eps; rescale to keep sums finite
        values, eps = values / scale, eps / scale
    centered = values - values.mean()
    std = values.std()
    denom = std + eps
    if denom == 0.0:
        return np.zeros_like(values)
    return centered / denom


def group_outcome_advantages(rewards: Sequence[float], eps: float = DEFAULT_EPS) -> list[float]:
    """(R_i - mean) / (std + eps) over the group, population std."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards per group, got {len(rewards)}")
    return [float(x) for x in _normalize(np.asarray(rewards, dtype=np.float64), eps)]


def step_advantages(r_g: Sequence[float], eps: float = DEFAULT_EPS) -> list[float]:
    """Normalize GDCR within one trajectory and clip to [-1, 1]."""
    if len(r_g) == 0:
        return []
    z = _normalize(np.asarray(r_g, dtype=np.float64), eps)
    return [float(x) for x in np.clip(z, -1.0, 1.0)]


def combine(outcome_adv: float, step_adv: Sequence[float], lam: float = DEFAULT_LAMBDA) -> list[float]:
    """Per-step advantage A_t = A_o + lam * |A_o| * A_tg."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    scale = lam * abs(outcome_adv)
    return [outcome_adv + scale * s for s in step_adv]


@dataclass(frozen=True)
class TrajectoryAdvantage:
    trajectory_id: str
    outcome_advantage: float
    step_advantage: tuple[float, ...]
    combined: tuple[float, ...]


def group_advantages(
    series: Sequence[StepRewardSeries],
    outcomes: Sequence[OutcomeReward],
    lam: float = DEFAULT_LAMBDA,
    eps: float = DEFAULT_EPS,
) -> list[TrajectoryAdvantage]:
    """Advantages for one group of trajectories sampled for the same query."""
    if len(series) != len(outcomes):
        raise ValueError("series and outcomes differ in length")
    a_o = group_outcome_advantages([o.scalar for o in outcomes], eps)
    out = []
    for s, a in zip(series, a_o):
        steps = step_advantages(s.r_g, eps)
        out.append(TrajectoryAdvantage(s.trajectory_id, a, tuple(steps), tuple(combine(a, steps, lam))))
    return out


@dataclass(frozen=True)
class GroupMember:
    trajectory: Trajectory
    series: StepRewardSeries
    outcome: OutcomeReward
    # DecisionRecords from the rollout; empty for externally produced trajectories
    decisions: tuple = ()


@dataclass(frozen=True)
class TrajectoryGroup:
    """G trajectories sampled for one query."""

    query_id: str
    members: tuple[GroupMember, ...]

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise GroupTooSmall(f"need at least 2 members per group, got {len(self.members)}")
        for m in self.members:
            if m.trajectory.graph_id and m.trajectory.graph_id != self.query_id:
                raise ValueError(f"member {m.trajectory.trajectory_id!r} belongs to {m.trajectory.graph_id!r}")

    @property
    def group_size(self) -> int:
        return len(self.members)

    @property
    def decisions(self) -> list:
        return [list(m.decisions) for m in self.members]

    def advantages(self, lam: float = DEFAULT_LAMBDA, eps: float = DEFAULT_EPS) -> list[TrajectoryAdvantage]:
        return group_advantages([m.series for m in self.members], [m.outcome for m in self.members], lam, eps)


def advantage_record(series: StepRewardSeries, adv: TrajectoryAdvantage) -> dict:
    return {
        "trajectory_id": adv.trajectory_id,
        "outcome_advantage": adv.outcome_advantage,
        "steps": [
            {"r_cite": s.r_cite, "r_ret": s.r_ret, "r_g": s.r_g, "step_advantage": sa, "combined": c}
            for s, sa, c in zip(series.steps, adv.step_advantage, adv.combined)
        ],
    }
