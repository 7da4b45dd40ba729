"""Training-time entity-relation graphs: construction, distances, validation and corruption."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from gdcr.entities import normalize_text

UNREACHABLE = math.inf

NODE_DELETION = "node_deletion"
NOISY_NODE_INJECTION = "noisy_node_injection"
ANSWER_PERTURBATION = "answer_perturbation"
NOISE_MODES = (NODE_DELETION, NOISY_NODE_INJECTION, ANSWER_PERTURBATION)
ROUNDING_MODES = ("floor", "stochastic")


class GraphError(ValueError):
    pass


class EmptyGraph(GraphError):
    pass


class AnswerNodeMissing(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    pass


class InvalidDecay(GraphError):
    pass


@dataclass(frozen=True)
class EntityNode:
    id: str
    canonical_label: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not normalize_text(self.canonical_label):
            raise GraphError(f"node {self.id!r} has an empty label")
        seen = set()
        for alias in self.aliases:
            a = normalize_text(alias)
            if a in seen:
                raise GraphError(f"node {self.id!r} has duplicate alias {alias!r}")
            seen.add(a)


@dataclass(frozen=True)
class ERGraph:
    """Immutable ER graph with a designated answer node.

    Edges are directed (subject, relation, object) triples but distances
    ignore direction and relation labels.
    """

    nodes: tuple[EntityNode, ...]
    edges: tuple[tuple[str, str, str], ...]
    answer_node: str
    graph_id: str = ""
    _index: dict[str, EntityNode] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, EntityNode] = {}
        for node in self.nodes:
            if node.id in index:
                raise GraphError(f"duplicate node id {node.id!r}")
            index[node.id] = node
        object.__setattr__(self, "_index", index)
        if self.answer_node not in index:
            raise AnswerNodeMissing(f"answer node {self.answer_node!r} not in graph")
        for s, _, o in self.edges:
            if s not in index or o not in index:
                raise GraphError(f"edge ({s!r}, {o!r}) references a missing node")
            if s == o:
                raise GraphError(f"self-loop on {s!r}")

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> EntityNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @cached_property
    def adjacency(self) -> dict[str, frozenset[str]]:
        adj: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for s, _, o in self.edges:
            adj[s].add(o)
            adj[o].add(s)
        return {k: frozenset(v) for k, v in adj.items()}

    @cached_property
    def distances(self) -> dict[str, float]:
        """Hop distance of every node to the answer; UNREACHABLE when disconnected."""
        found = bfs_distances(self.adjacency, self.answer_node)
        return {n: found.get(n, UNREACHABLE) for n in self._index}

    def label_map(self) -> dict[str, str]:
        return {n.id: n.canonical_label for n in self.nodes}


def bfs_distances(adjacency: Mapping[str, Iterable[str]], source: str) -> dict[str, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_graph(
    triples: Sequence[Sequence[str]],
    answer_label: str,
    graph_id: str = "",
    aliases: Mapping[str, Sequence[str]] | None = None,
) -> ERGraph:
    """Build an ER graph; node identity is the normalized label."""
    if not triples:
        raise EmptyGraph("no triples")
    labels: dict[str, str] = {}
    edges: list[tuple[str, str, str]] = []
    seen_edges = set()
    for triple in triples:
        if len(triple) != 3:
            raise GraphError(f"malformed triple {triple!r}")
        s, r, o = (str(x) for x in triple)
        sid, oid = normalize_text(s), normalize_text(o)
        if not sid or not oid:
            raise GraphError(f"empty entity in triple {triple!r}")
        labels.setdefault(sid, s.strip())
        labels.setdefault(oid, o.strip())
        if sid == oid:
            continue
        edge = (sid, r.strip(), oid)
        if edge not in seen_edges:
            seen_edges.add(edge)
            edges.append(edge)
    answer_id = normalize_text(answer_label)
    if answer_id not in labels:
        raise AnswerNodeMissing(f"answer {answer_label!r} is not a triple endpoint")

    alias_map: dict[str, list[str]] = {nid: [] for nid in labels}
    for label, alist in (aliases or {}).items():
        nid = normalize_text(label)
        if nid not in alias_map:
            raise UnknownNode(f"aliases given for unknown entity {label!r}")
        known = {normalize_text(a) for a in alias_map[nid]} | {nid}
        for a in alist:
            if normalize_text(a) not in known:
                known.add(normalize_text(a))
                alias_map[nid].append(a)

    nodes = tuple(EntityNode(nid, lab, tuple(alias_map[nid])) for nid, lab in labels.items())
    return ERGraph(nodes, tuple(edges), answer_id, graph_id)


def shortest_distance(graph: ERGraph, node: str) -> float:
    if node not in graph:
        raise UnknownNode(node)
    return graph.distances[node]


def contribution_from_distance(distance: float, k: float) -> float:
    if k < 1:
        raise InvalidDecay(f"decay factor must be >= 1, got {k}")
    if distance == UNREACHABLE:
        return 0.0
    return float(k) ** -int(distance)


def contribution_score(graph: ERGraph, node: str, k: float = 2.0) -> float:
    if k < 1:
        raise InvalidDecay(f"decay factor must be >= 1, got {k}")
    return contribution_from_distance(shortest_distance(graph, node), k)


# -- file format -------------------------------------------------------------

def graph_from_dict(obj: Mapping) -> ERGraph:
    return build_graph(
        obj["triples"],
        obj["answer"],
        graph_id=str(obj.get("graph_id", "")),
        aliases=obj.get("aliases") or {},
    )


def graph_to_dict(graph: ERGraph) -> dict:
    labels = graph.label_map()
    return {
        "graph_id": graph.graph_id,
        "answer": labels[graph.answer_node],
        "triples": [[labels[s], r, labels[o]] for s, r, o in graph.edges],
        "aliases": {n.canonical_label: list(n.aliases) for n in graph.nodes if n.aliases},
    }


# -- structural validation ------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    connectivity_ok: bool
    distant_unreachability_ok: bool
    intermediate_unskippability_ok: bool
    failing_nodes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.connectivity_ok and self.distant_unreachability_ok and self.intermediate_unskippability_ok


def adjacency_oracle(graph: ERGraph) -> Callable[[str], frozenset[str]]:
    return graph.adjacency.__getitem__


def validate_task_graph(
    graph: ERGraph,
    question_entities: Iterable[str],
    retrieval_oracle: Callable[[str], Iterable[str]],
) -> ValidationReport:
    """Run the three shortcut checks on a task graph.

    ``retrieval_oracle(node)`` returns the node ids a search for ``node``
    surfaces. Ids outside the graph are ignored.
    """
    for q in question_entities:
        if q not in graph:
            raise UnknownNode(q)
    retrieved = {n: set(retrieval_oracle(n)) & set(graph.node_ids) for n in graph.node_ids}
    failing: set[str] = set()

    connectivity_ok = True
    for s, _, o in graph.edges:
        if o not in retrieved[s] or s not in retrieved[o]:
            connectivity_ok = False
            failing.update((s, o))

    dist = graph.distances
    answer = graph.answer_node
    distant_ok = True
    for n in graph.node_ids:
        if dist[n] != UNREACHABLE and dist[n] >= 2 and answer in retrieved[n]:
            distant_ok = False
            failing.add(n)

    # w is a skipped descendant of u when it lies on a shortest u->answer
    # path at two or more hops from u.
    skip_ok = True
    for u in graph.node_ids:
        if dist[u] == UNREACHABLE:
            continue
        from_u = bfs_distances(graph.adjacency, u)
        for w in retrieved[u]:
            if w == u or w not in from_u:
                continue
            if from_u[w] >= 2 and from_u[w] + dist[w] == dist[u]:
                skip_ok = False
                failing.add(u)

    return ValidationReport(connectivity_ok, distant_ok, skip_ok, tuple(sorted(failing)))


# -- corruption --------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    mode: str
    rate: float
    seed: int = 0
    rounding: str = "floor"

    def __post_init__(self) -> None:
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"rounding must be one of {ROUNDING_MODES}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must lie in [0, 1], got {self.rate}")


def _noise_count(spec: NoiseSpec, n: int, rng: np.random.Generator) -> int:
    """rate * n, floored or stochastically rounded (unbiased on small graphs)."""
    # tolerate float products such as 0.29 * 100 = 28.999999999999996
    x = spec.rate * n + 1e-9
    count = int(math.floor(x))
    frac = x - count
    if spec.rounding == "stochastic" and frac > 2e-9 and rng.random() < frac:
        count += 1
    return count


def corrupt_graph(graph: ERGraph, spec: NoiseSpec, label_pool: Sequence[str] | None = None) -> ERGraph:
    """Return a corrupted copy of ``graph``; deterministic in ``spec.seed``.

    Injected nodes take labels from ``label_pool`` (entities unknown to the
    graph) when given, else synthetic placeholder labels.
    """
    rng = np.random.default_rng(spec.seed)
    ids = sorted(graph.node_ids)
    others = [n for n in ids if n != graph.answer_node]

    if spec.mode == NODE_DELETION:
        count = min(_noise_count(spec, len(ids), rng), len(others))
        if count == 0:
            return graph
        drop = {others[i] for i in rng.choice(len(others), size=count, replace=False)}
        nodes = tuple(n for n in graph.nodes if n.id not in drop)
        edges = tuple(e for e in graph.edges if e[0] not in drop and e[2] not in drop)
        return ERGraph(nodes, edges, graph.answer_node, graph.graph_id)

    if spec.mode == NOISY_NODE_INJECTION:
        count = _noise_count(spec, len(ids), rng)
        if count == 0:
            return graph
        taken = set(ids)
        for n in graph.nodes:
            taken.update(normalize_text(a) for a in n.aliases)
        pool = [lab for lab in (label_pool or ()) if normalize_text(lab) not in taken]
        if len(pool) >= count:
            labels = [pool[i] for i in rng.choice(len(pool), size=count, replace=False)]
        else:
            labels, i = [], 0
            while len(labels) < count:
                cand = f"noise entity {i}"
                if cand not in taken:
                    labels.append(cand)
                i += 1
        new_nodes, new_edges = [], []
        for label in labels:
            anchor = ids[int(rng.integers(len(ids)))]
            node = EntityNode(normalize_text(label), label)
            new_nodes.append(node)
            new_edges.append((anchor, "noise", node.id))
        return ERGraph(graph.nodes + tuple(new_nodes), graph.edges + tuple(new_edges), graph.answer_node, graph.graph_id)

    # answer perturbation: one Bernoulli draw per graph
    if not others or not rng.random() < spec.rate:
        return graph
    new_answer = others[int(rng.integers(len(others)))]
    return ERGraph(graph.nodes, graph.edges, new_answer, graph.graph_id)
