"""Graph-distance contribution rewards and step-advantage policy optimization for search agents."""

from gdcr.advantage import OutcomeReward, TrajectoryAdvantage, combine, group_advantages, outcome_reward, step_advantages
from gdcr.entities import Lexicon, build_lexicon, link_entities, normalize_text
from gdcr.graph import UNREACHABLE, ERGraph, build_graph, contribution_score, corrupt_graph, shortest_distance
from gdcr.reward import StepReward, StepRewardSeries, history_best_distance, score_trajectory
from gdcr.trajectory import Trajectory, parse_tagged_transcript

__version__ = "0.1.0"

__all__ = [
    "UNREACHABLE", "ERGraph", "Lexicon", "OutcomeReward", "StepReward", "StepRewardSeries", "Trajectory",
    "TrajectoryAdvantage", "build_graph", "build_lexicon", "combine", "contribution_score", "corrupt_graph",
    "group_advantages", "history_best_distance", "link_entities", "normalize_text", "outcome_reward",
    "parse_tagged_transcript", "score_trajectory", "shortest_distance", "step_advantages",
]
