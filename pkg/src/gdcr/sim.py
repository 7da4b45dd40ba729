"""Synthetic search environment: world graphs, graph-augmented tasks, a search tool, and rollouts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from gdcr.entities import normalize_text
from gdcr.graph import ERGraph, UnknownNode, bfs_distances, build_graph, graph_from_dict, graph_to_dict, validate_task_graph
from gdcr.policy import N_FEATURES, DecisionRecord, PolicyParams, log_softmax, make_record
from gdcr.trajectory import ActionRecord, Step, Trajectory

DEFAULT_TOP_K = 5
DEFAULT_MAX_RETRIES = 50
WRONG_ANSWER = "unknown"

CATEGORIES = (
    "river", "composer", "city", "novel", "painter", "mountain", "festival", "chemist",
    "dynasty", "island", "opera", "engineer", "monastery", "poet", "harbor", "treaty",
)
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "th", "sh")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "n", "r", "s", "l", "th", "x")


class InvalidSize(ValueError):
    pass


class SynthesisExhausted(RuntimeError):
    pass


class UnknownEntity(UnknownNode):
    pass


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from non-negative integer parts (independent streams per rollout)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> np.uint64(1))


# -- world ------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldGraph:
    labels: tuple[str, ...]
    categories: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    seed: int
    node_count: int
    mean_degree: float
    rewire_prob: float
    connected: bool

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[set[int]] = [set() for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def index(self) -> dict[str, int]:
        return {normalize_text(lab): i for i, lab in enumerate(self.labels)}

    def distances_from(self, node: int) -> dict[int, int]:
        return bfs_distances(dict(enumerate(self.neighbors)), node)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "node_count": self.node_count,
            "mean_degree": self.mean_degree,
            "rewire_prob": self.rewire_prob,
            "connected": self.connected,
            "labels": list(self.labels),
            "categories": list(self.categories),
            "adjacency": [list(n) for n in self.neighbors],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> WorldGraph:
        edges = sorted({(min(u, v), max(u, v)) for u, nbrs in enumerate(obj["adjacency"]) for v in nbrs})
        return cls(
            tuple(obj["labels"]), tuple(obj["categories"]), tuple(edges), int(obj["seed"]),
            int(obj["node_count"]), float(obj["mean_degree"]), float(obj["rewire_prob"]), bool(obj["connected"]),
        )


def _entity_names(count: int, rng: np.random.Generator) -> list[str]:
    def word() -> str:
        n_syll = int(rng.integers(2, 4))
        parts = [_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll)]
        return ("".join(parts) + _CODAS[rng.integers(len(_CODAS))]).capitalize()

    seen, names = set(), []
    while len(names) < count:
        name = f"{word()} {word()}"
        if name.casefold() not in seen:
            seen.add(name.casefold())
            names.append(name)
    return names


def _is_connected(n: int, edges: set[tuple[int, int]]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    return len(bfs_distances(adj, 0)) == n


def generate_world(node_count: int, mean_degree: float, seed: int, rewire_prob: float = 0.1) -> WorldGraph:
    """Small-world graph: ring lattice, random extra edges for odd degrees, then rewiring."""
    if node_count < 10:
        raise InvalidSize(f"node_count must be >= 10, got {node_count}")
    if mean_degree < 2 or mean_degree >= node_count - 1:
        raise InvalidSize(f"mean_degree must lie in [2, node_count - 1), got {mean_degree}")
    if not 0.0 <= rewire_prob <= 1.0:
        raise InvalidSize("rewire_prob must lie in [0, 1]")
    rng = _rng(seed)
    n = node_count
    target = int(round(n * mean_degree / 2))
    half = int(mean_degree // 2)
    edges: list[tuple[int, int]] = []
    present: set[tuple[int, int]] = set()

    def add(u: int, v: int) -> bool:
        e = (min(u, v), max(u, v))
        if u == v or e in present:
            return False
        present.add(e)
        edges.append(e)
        return True

    for j in range(1, half + 1):
        for u in range(n):
            add(u, (u + j) % n)
    while len(edges) < target:
        add(int(rng.integers(n)), int(rng.integers(n)))

    for i, (u, v) in enumerate(list(edges)):
        if rng.random() >= rewire_prob:
            continue
        for _ in range(20):
            w = int(rng.integers(n))
            e = (min(u, w), max(u, w))
            if w != u and e not in present:
                present.discard(edges[i])
                present.add(e)
                edges[i] = e
                break

    labels = _entity_names(n, rng)
    cats = [CATEGORIES[i] for i in rng.integers(len(CATEGORIES), size=n)]
    return WorldGraph(tuple(labels), tuple(cats), tuple(sorted(edges)), int(seed), n, float(mean_degree), float(rewire_prob), _is_connected(n, present))


# -- tasks --------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    question_entities: tuple[str, ...]
    answer_node: str
    task_graph: ERGraph
    question_text: str
    gold_answer: str
    # task-graph node id -> world node index
    world_nodes: dict[str, int]
    clue_categories: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "question_entities": list(self.question_entities),
            "answer_node": self.answer_node,
            "question_text": self.question_text,
            "gold_answer": self.gold_answer,
            "world_nodes": dict(self.world_nodes),
            "clue_categories": list(self.clue_categories),
            "graph": graph_to_dict(self.task_graph),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> TaskInstance:
        graph = graph_from_dict(obj["graph"])
        return cls(
            obj["task_id"], tuple(obj["question_entities"]), obj["answer_node"], graph,
            obj["question_text"], obj["gold_answer"], {k: int(v) for k, v in obj["world_nodes"].items()},
            tuple(obj["clue_categories"]),
        )


def world_oracle(world: WorldGraph, binding: dict[str, int]) -> Callable[[str], set[str]]:
    """Retrieval oracle over task-graph ids: what searching a node surfaces in the world."""
    back = {w: g for g, w in binding.items()}

    def oracle(node_id: str) -> set[str]:
        return {back[v] for v in world.neighbors[binding[node_id]] if v in back}

    return oracle


def synthesize_task(
    world: WorldGraph,
    walk_length: int,
    seed: int,
    side_branches: int = 1,
    max_retries: int = DEFAULT_MAX_RETRIES,
    task_id: str = "",
    side_questions: bool = True,
) -> tuple[TaskInstance, int]:
    """Random-walk task synthesis with the three structural checks.

    Returns the accepted task and the number of rejected candidates.
    """
    if walk_length < 2:
        raise ValueError("walk_length must be >= 2")
    rng = _rng(seed)
    rejected = 0
    for _ in range(max_retries):
        task = _candidate_task(world, walk_length, side_branches, rng, task_id, side_questions)
        if task is not None:
            report = validate_task_graph(task.task_graph, task.question_entities, world_oracle(world, task.world_nodes))
            if report.ok:
                return task, rejected
        rejected += 1
    raise SynthesisExhausted(f"no valid task after {max_retries} attempts")


def _candidate_task(
    world: WorldGraph, walk_length: int, side_branches: int, rng: np.random.Generator, task_id: str, side_questions: bool
) -> TaskInstance | None:
    path = [int(rng.integers(world.node_count))]
    for _ in range(walk_length):
        options = [v for v in world.neighbors[path[-1]] if v not in path]
        if not options:
            return None
        path.append(options[int(rng.integers(len(options)))])
    members = set(path)
    sides: list[int] = []
    triples = []

    def rel(v: int) -> str:
        return f"related {world.categories[v]}"

    for u, v in zip(path, path[1:]):
        triples.append((world.labels[u], rel(v), world.labels[v]))
    for _ in range(side_branches):
        anchor = path[int(rng.integers(len(path) - 1))]
        options = [v for v in world.neighbors[anchor] if v not in members]
        if not options:
            continue
        side = options[int(rng.integers(len(options)))]
        members.add(side)
        sides.append(side)
        triples.append((world.labels[anchor], rel(side), world.labels[side]))

    answer = path[-1]
    graph = build_graph(triples, world.labels[answer], graph_id=task_id)
    binding = {normalize_text(world.labels[v]): v for v in members}
    origin = path[0]
    hops = [world.categories[v] for v in path[1:]]
    clue = ", then ".join(f"a {c}" for c in hops[:-1])
    text = f"Starting from {world.labels[origin]}, follow {clue} to reach a {hops[-1]}."
    if sides and side_questions:
        named = " and ".join(world.labels[v] for v in sides)
        text += f" The chain also touches something linked to {named}."
        question = (origin, *sides)
    else:
        question = (origin,)
    text += f" Which {hops[-1]} is it?"
    return TaskInstance(
        task_id=task_id,
        question_entities=tuple(normalize_text(world.labels[v]) for v in question),
        answer_node=normalize_text(world.labels[answer]),
        task_graph=graph,
        question_text=text,
        gold_answer=world.labels[answer],
        world_nodes=binding,
        clue_categories=tuple(sorted(set(hops))),
    )


def synthesize_suite(
    world: WorldGraph,
    n_tasks: int,
    walk_length: int,
    seed: int,
    side_branches: int = 1,
    max_retries: int = DEFAULT_MAX_RETRIES,
    side_questions: bool = True,
) -> tuple[list[TaskInstance], int]:
    tasks, rejected = [], 0
    for i in range(n_tasks):
        task, r = synthesize_task(
            world, walk_length, derive_seed(seed, i), side_branches, max_retries, f"task-{i:04d}", side_questions
        )
        tasks.append(task)
        rejected += r
    return tasks, rejected


# -- search tool --------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    queried_entity: int
    snippets: tuple[tuple[str, str], ...]
    entities: tuple[int, ...]

    def text(self) -> str:
        lines = [f"Search returned {len(self.snippets)} results:"]
        for i, (title, body) in enumerate(self.snippets, 1):
            lines.append(f"[{i}] {title}\n{body}")
        return "\n".join(lines)


def search_tool(
    world: WorldGraph,
    query_entity: int,
    top_k: int = DEFAULT_TOP_K,
    distractor_rate: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> Observation:
    if not 0 <= query_entity < world.node_count:
        raise UnknownEntity(query_entity)
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed)
    nbrs = world.neighbors[query_entity]
    if len(nbrs) > top_k:
        picked = [nbrs[i] for i in rng.choice(len(nbrs), size=top_k, replace=False)]
    else:
        picked = list(nbrs)
    results = []
    nbr_set = set(nbrs)
    for v in picked:
        if distractor_rate > 0 and rng.random() < distractor_rate:
            while True:
                v = int(rng.integers(world.node_count))
                if v != query_entity and v not in nbr_set:
                    break
        results.append(v)
    snippets = tuple(
        (world.labels[v], f"{world.labels[v]} is a {world.categories[v]} that came up for this search.") for v in results
    )
    return Observation(query_entity, snippets, tuple(results))


# -- rollouts -----------------------------------------------------------------------

@dataclass
class _Known:
    first_seen: int
    last_seen: int
    obs_count: int = 0
    queried: int = 0
    cited: bool = False


def entity_features(info: _Known, step: int, clue_match: bool) -> np.ndarray:
    return np.array(
        [
            1.0 / (1.0 + step - info.last_seen),
            1.0 if info.queried == 0 else 0.0,
            float(np.log1p(info.obs_count)),
            1.0 if clue_match else 0.0,
            1.0,
        ]
    )


Chooser = Callable[[list[int], np.ndarray, np.random.Generator], int]


@dataclass(frozen=True)
class RolloutConfig:
    max_steps: int = 20
    top_k: int = DEFAULT_TOP_K
    distractor_rate: float = 0.0
    cite_mode: bool = False


def _sample(logp: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(np.exp(logp))
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))


def oracle_chooser(world: WorldGraph, task: TaskInstance) -> Chooser:
    """Always query the candidate nearest the answer in the world graph (novel ones first)."""
    dist = world.distances_from(task.world_nodes[task.answer_node])

    def choose(candidates: list[int], features: np.ndarray, rng: np.random.Generator) -> int:
        keys = [(-features[i, 1], dist.get(c, 10**9), i) for i, c in enumerate(candidates)]
        return min(keys)[2]

    return choose


def rollout(
    policy: PolicyParams,
    task: TaskInstance,
    world: WorldGraph,
    max_steps: int = 20,
    seed: int = 0,
    config: RolloutConfig | None = None,
    chooser: Chooser | None = None,
    trajectory_id: str = "",
) -> tuple[Trajectory, list[DecisionRecord]]:
    """Run one search episode and return the trajectory with its decision records.

    The agent queries an entity from its frontier each step. The episode
    ends one step after the answer entity first shows up in an observation
    (that step cites it and answers), or after ``max_steps`` searches with a
    wrong answer.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    cfg = config or RolloutConfig(max_steps=max_steps)
    rng = _rng(seed)
    answer = task.world_nodes[task.answer_node]
    clues = set(task.clue_categories)
    question = [task.world_nodes[q] for q in task.question_entities]
    known: dict[int, _Known] = {q: _Known(0, 0) for q in question}
    labels = world.labels

    steps: list[Step] = []
    records: list[DecisionRecord] = []
    prev_new: list[int] = []
    found = False

    def cite_phase(t: int, must_cite: set[int]) -> list[int]:
        if not cfg.cite_mode:
            return list(prev_new)
        cited = []
        for v in prev_new:
            if v in must_cite:
                cited.append(v)
                continue
            f = entity_features(known[v], t, world.categories[v] in clues)
            feats = np.vstack([np.zeros(N_FEATURES), f])
            z = feats @ policy.cite_weights / policy.temperature
            choice = _sample(log_softmax(z), rng)
            records.append(make_record(policy, t - 1, ("skip", normalize_text(labels[v])), feats, choice, kind="cite"))
            if choice == 1:
                cited.append(v)
        for v in cited:
            known[v].cited = True
        return cited

    for t in range(1, cfg.max_steps + 1):
        cited = cite_phase(t, set())
        thought = _thought(labels, cited, t)

        if cfg.cite_mode:
            pool = [v for v in known if v in question or known[v].cited]
        else:
            pool = list(known)
        feats = np.vstack([entity_features(known[v], t, world.categories[v] in clues) for v in pool])
        if chooser is not None:
            choice = chooser(pool, feats, rng)
            rec = make_record(policy, t - 1, tuple(normalize_text(labels[v]) for v in pool), feats, choice)
        else:
            z = feats @ policy.feature_weights / policy.temperature
            choice = _sample(log_softmax(z), rng)
            rec = make_record(policy, t - 1, tuple(normalize_text(labels[v]) for v in pool), feats, choice)
        records.append(rec)
        target = pool[choice]
        known[target].queried += 1

        obs = search_tool(world, target, cfg.top_k, cfg.distractor_rate, rng)
        prev_new = []
        for v in dict.fromkeys(obs.entities):
            info = known.get(v)
            if info is None:
                known[v] = _Known(t, t, 1)
                prev_new.append(v)
            else:
                info.last_seen = t
                info.obs_count += 1
        steps.append(Step(thought, ActionRecord("search", {"query": labels[target]}), obs.text()))
        if answer in obs.entities:
            found = True
            break

    t = len(steps) + 1
    if found:
        if answer not in prev_new:
            prev_new.append(answer)
        cited = cite_phase(t, {answer})
        thought = _thought(labels, cited, t) + f" {labels[answer]} satisfies every clue in the question."
        final = labels[answer]
    else:
        cited = cite_phase(t, set())
        thought = _thought(labels, cited, t) + " The search budget is exhausted without a confident answer."
        final = WRONG_ANSWER
    steps.append(Step(thought, ActionRecord("answer", {"text": final}), ""))
    traj = Trajectory(task.question_text, tuple(steps), final, trajectory_id, task.task_graph.graph_id or task.task_id)
    return traj, records


def _thought(labels: Sequence[str], cited: list[int], t: int) -> str:
    if t == 1:
        return "I will start from the entity named in the question."
    if not cited:
        return "The last results add nothing new worth noting."
    names = [labels[v] for v in cited]
    listed = names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]
    return f"The results mention {listed}."
