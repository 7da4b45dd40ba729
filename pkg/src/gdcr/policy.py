"""Softmax search policy and the clipped group-relative surrogate objective.

A decision is one softmax choice over candidate entities. ``query``
decisions pick the next entity to search; ``cite`` decisions choose between
skipping (all-zero feature row) and citing one entity in the thought. Every
decision of step t shares the step's combined advantage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from gdcr.advantage import TrajectoryAdvantage

QUERY_FEATURES = ("recency", "novelty", "obs_frequency", "clue_match", "bias")
N_FEATURES = len(QUERY_FEATURES)

DEFAULT_EPS_LOW = 0.2
DEFAULT_EPS_HIGH = 0.28


class EmptyCandidateSet(ValueError):
    pass


class MissingAdvantage(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolicyParams:
    feature_weights: np.ndarray
    temperature: float = 1.0
    cite_weights: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "feature_weights", np.asarray(self.feature_weights, dtype=np.float64))
        object.__setattr__(self, "cite_weights", np.asarray(self.cite_weights, dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES, temperature: float = 1.0) -> PolicyParams:
        return cls(np.zeros(n_features), temperature, np.zeros(n_features))

    def weights_for(self, kind: str) -> np.ndarray:
        return self.cite_weights if kind == "cite" else self.feature_weights

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.feature_weights, self.cite_weights, [self.temperature]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_features: int = N_FEATURES) -> PolicyParams:
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:n_features].copy(), float(vec[-1]), vec[n_features : 2 * n_features].copy())

    def to_dict(self) -> dict:
        return {
            "feature_names": list(QUERY_FEATURES),
            "feature_weights": [float(x) for x in self.feature_weights],
            "cite_weights": [float(x) for x in self.cite_weights],
            "temperature": float(self.temperature),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> PolicyParams:
        fw = obj["feature_weights"]
        return cls(np.asarray(fw, float), float(obj.get("temperature", 1.0)), np.asarray(obj.get("cite_weights", np.zeros(len(fw))), float))


@dataclass(frozen=True)
class DecisionRecord:
    step_index: int
    candidate_set: tuple[str, ...]
    chosen_index: int
    features: np.ndarray
    logits_old: np.ndarray
    logprob_old: float
    kind: str = "query"

    def __post_init__(self) -> None:
        if not 0 <= self.chosen_index < len(self.candidate_set):
            raise ValueError("chosen_index out of range")


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = DEFAULT_EPS_LOW
    eps_high: float = DEFAULT_EPS_HIGH

    def __post_init__(self) -> None:
        if not 0 < self.eps_low < 1:
            raise ValueError("eps_low must lie in (0, 1)")
        if self.eps_high < self.eps_low:
            raise ValueError("eps_high must be >= eps_low")


def logits(params: PolicyParams, features: np.ndarray, kind: str = "query") -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise EmptyCandidateSet("no candidates")
    return features @ params.weights_for(kind) / params.temperature


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def decision_logprob(params: PolicyParams, record: DecisionRecord, features: np.ndarray | None = None) -> float:
    feats = record.features if features is None else features
    return float(log_softmax(logits(params, feats, record.kind))[record.chosen_index])


def importance_ratio(params_new: PolicyParams, record: DecisionRecord, features: np.ndarray | None = None) -> float:
    return float(np.exp(decision_logprob(params_new, record, features) - record.logprob_old))


def make_record(
    params: PolicyParams,
    step_index: int,
    candidates: Sequence[str],
    features: np.ndarray,
    chosen_index: int,
    kind: str = "query",
) -> DecisionRecord:
    if len(candidates) == 0:
        raise EmptyCandidateSet("no candidates")
    if len(candidates) != len(features):
        raise ValueError("one feature row per candidate required")
    if not 0 <= chosen_index < len(candidates):
        raise ValueError("chosen_index out of range")
    z = logits(params, features, kind)
    return DecisionRecord(step_index, tuple(candidates), chosen_index, np.asarray(features, float), z, float(log_softmax(z)[chosen_index]), kind)


def _logprob_and_grad(params: PolicyParams, rec: DecisionRecord) -> tuple[float, np.ndarray]:
    """log pi(chosen) and its gradient in the to_vector() layout."""
    n = params.feature_weights.shape[0]
    w = params.weights_for(rec.kind)
    tau = params.temperature
    scores = rec.features @ w
    lp = log_softmax(scores / tau)
    p = np.exp(lp)
    grad = np.zeros(2 * n + 1)
    g_w = (rec.features[rec.chosen_index] - p @ rec.features) / tau
    if rec.kind == "cite":
        grad[n : 2 * n] = g_w
    else:
        grad[:n] = g_w
    grad[-1] = -(scores[rec.chosen_index] - p @ scores) / tau**2
    return float(lp[rec.chosen_index]), grad


def _step_advantages(decisions: Sequence[DecisionRecord], adv: TrajectoryAdvantage) -> list[float]:
    out = []
    for rec in decisions:
        if not 0 <= rec.step_index < len(adv.combined):
            raise MissingAdvantage(f"no advantage for step {rec.step_index} of {adv.trajectory_id!r}")
        out.append(adv.combined[rec.step_index])
    return out


def _objective(
    decisions: Sequence[Sequence[DecisionRecord]],
    advantages: Sequence[TrajectoryAdvantage],
    params: PolicyParams,
    clip: ClipConfig,
    want_grad: bool,
) -> tuple[float, np.ndarray | None]:
    if len(decisions) != len(advantages):
        raise MissingAdvantage("decision lists and advantages differ in length")
    G = len(decisions)
    lo, hi = 1.0 - clip.eps_low, 1.0 + clip.eps_high
    total = 0.0
    grad = np.zeros(2 * params.feature_weights.shape[0] + 1) if want_grad else None
    for recs, adv in zip(decisions, advantages):
        step_adv = _step_advantages(recs, adv)
        if not recs:
            continue
        weight = 1.0 / (G * len(recs))
        for rec, a in zip(recs, step_adv):
            if want_grad:
                lp, g = _logprob_and_grad(params, rec)
            else:
                lp = decision_logprob(params, rec)
            rho = float(np.exp(lp - rec.logprob_old))
            unclipped = rho * a
            clipped = min(max(rho, lo), hi) * a
            # ties go to the unclipped branch
            if unclipped <= clipped:
                total += weight * unclipped
                if want_grad:
                    grad += (weight * a * rho) * g
            else:
                total += weight * clipped
    return total, grad


def surrogate_objective(
    decisions: Sequence[Sequence[DecisionRecord]],
    advantages: Sequence[TrajectoryAdvantage],
    params: PolicyParams,
    clip: ClipConfig = ClipConfig(),
) -> float:
    """Clipped surrogate J averaged per trajectory, then over the group."""
    return _objective(decisions, advantages, params, clip, want_grad=False)[0]


def objective_gradient(
    decisions: Sequence[Sequence[DecisionRecord]],
    advantages: Sequence[TrajectoryAdvantage],
    params: PolicyParams,
    clip: ClipConfig = ClipConfig(),
) -> np.ndarray:
    """Gradient of J in ``PolicyParams.to_vector()`` layout (weights, cite weights, temperature)."""
    return _objective(decisions, advantages, params, clip, want_grad=True)[1]


def with_weights(params: PolicyParams, feature_weights: np.ndarray, cite_weights: np.ndarray | None = None) -> PolicyParams:
    return replace(params, feature_weights=feature_weights, cite_weights=params.cite_weights if cite_weights is None else cite_weights)
