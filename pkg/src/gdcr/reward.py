"""Graph-distance contribution reward: per-step cite/retrieve credit along a trajectory."""

from __future__ import annotations

from dataclasses import dataclass

from gdcr.entities import Lexicon, link_entities
from gdcr.graph import UNREACHABLE, ERGraph, InvalidDecay, contribution_from_distance
from gdcr.trajectory import Trajectory


class LexiconGraphMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StepReward:
    cited_cumulative: frozenset[str]
    retrieved_cumulative: frozenset[str]
    delta_cited: frozenset[str]
    delta_retrieved: frozenset[str]
    r_cite: float
    r_ret: float
    r_g: float
    # None: no graph entity touched at this step; UNREACHABLE: only unreachable ones
    d_t: float | None
    is_final: bool = False


@dataclass(frozen=True)
class StepRewardSeries:
    steps: tuple[StepReward, ...]
    k: float
    # distance to the answer for every node that entered a delta set
    node_distances: dict[str, float]
    trajectory_id: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def r_g(self) -> list[float]:
        return [s.r_g for s in self.steps]

    @property
    def d(self) -> list[float | None]:
        return [s.d_t for s in self.steps]

    def contribution(self, node: str) -> float:
        return contribution_from_distance(self.node_distances[node], self.k)


def _credit(nodes: frozenset[str], dist: dict[str, float], k: float) -> float:
    # sorted so float sums do not depend on set iteration order
    return float(sum(contribution_from_distance(dist[v], k) for v in sorted(nodes)))


def score_trajectory(traj: Trajectory, graph: ERGraph, lexicon: Lexicon, k: float = 2.0) -> StepRewardSeries:
    if k < 1:
        raise InvalidDecay(f"decay factor must be >= 1, got {k}")
    stray = lexicon.node_ids - set(graph.node_ids)
    if stray:
        raise LexiconGraphMismatch(f"lexicon nodes not in graph: {sorted(stray)[:5]}")
    dist = graph.distances
    cited: frozenset[str] = frozenset()
    retrieved: frozenset[str] = frozenset()
    out = []
    touched: dict[str, float] = {}
    for step in traj.steps:
        # the thought is written before this step's observation arrives, so
        # only entities already retrieved by earlier steps can be cited
        mentioned = link_entities(step.thought, lexicon).node_ids
        delta_c = (mentioned & retrieved) - cited
        cited = cited | delta_c
        r_cite = _credit(delta_c, dist, k)

        observed = link_entities(step.observation, lexicon).node_ids if step.observation else frozenset()
        delta_o = observed - retrieved
        retrieved = retrieved | delta_o
        r_ret = _credit(delta_o, dist, k)

        new = delta_c | delta_o
        for v in new:
            touched[v] = dist[v]
        d_t = min((dist[v] for v in new), default=None)
        out.append(
            StepReward(
                cited_cumulative=cited,
                retrieved_cumulative=retrieved,
                delta_cited=delta_c,
                delta_retrieved=delta_o,
                r_cite=r_cite,
                r_ret=r_ret,
                r_g=r_cite + r_ret,
                d_t=d_t,
                is_final=step.action.name == "answer",
            )
        )
    return StepRewardSeries(tuple(out), float(k), touched, traj.trajectory_id)


def history_best_distance(series: StepRewardSeries | list, include_final: bool = True) -> list[float]:
    """Prefix minimum of the step distances; UNREACHABLE before any defined value.

    Accepts a scored series or a plain list of distances (None = absent).
    With ``include_final=False`` the answer step is dropped from the output.
    """
    if isinstance(series, StepRewardSeries):
        values = [s.d_t for s in series.steps if include_final or not s.is_final]
    else:
        values = list(series)
    best = UNREACHABLE
    out = []
    for d in values:
        if d is not None and d < best:
            best = d
        out.append(best)
    return out
