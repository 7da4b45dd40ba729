"""Random instance generators and brute-force oracles shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from gdcr.advantage import TrajectoryAdvantage
from gdcr.entities import build_lexicon, link_entities
from gdcr.policy import N_FEATURES, PolicyParams, importance_ratio, make_record, surrogate_objective
from gdcr.graph import build_graph
from gdcr.trajectory import ActionRecord, Step, Trajectory

# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS: list[str] = []


def random_graph(rng: np.random.Generator, max_nodes: int = 8):
    n = int(rng.integers(2, max_nodes + 1))
    labels = [f"ent{i} {chr(97 + i)}name" for i in range(n)]
    triples = []
    for i in range(1, n):
        # mostly a tree, sometimes a detached node, sometimes a chord
        if rng.random() < 0.85:
            triples.append((labels[int(rng.integers(i))], "r", labels[i]))
    for _ in range(int(rng.integers(0, 3))):
        a, b = rng.choice(n, size=2, replace=False)
        triples.append((labels[a], "chord", labels[b]))
    if not triples:
        triples.append((labels[0], "r", labels[1]))
    used = sorted({x for t in triples for x in (t[0], t[2])})
    answer = used[int(rng.integers(len(used)))]
    return build_graph(triples, answer)


def random_trajectory(rng: np.random.Generator, graph, max_steps: int = 5) -> Trajectory:
    labels = [n.canonical_label for n in graph.nodes]
    filler = ["nothing here", "some text", "results follow", "unrelated words"]

    def text():
        parts = [filler[int(rng.integers(len(filler)))]]
        for _ in range(int(rng.integers(0, 4))):
            parts.append(labels[int(rng.integers(len(labels)))])
            parts.append(filler[int(rng.integers(len(filler)))])
        return " ; ".join(parts)

    steps = [
        Step(text(), ActionRecord("search", {"query": "q"}), text())
        for _ in range(int(rng.integers(1, max_steps + 1)))
    ]
    return Trajectory("question", tuple(steps), "answer", f"t{int(rng.integers(1 << 30))}")


def naive_rewards(traj: Trajectory, graph, k: float) -> list[float]:
    """Recompute r_g from scratch at each step, rebuilding every cumulative set."""
    lex = build_lexicon(graph)
    dist = graph.distances

    def c(v):
        return 0.0 if dist[v] == math.inf else k ** -dist[v]

    def state(t):
        """(T_t, O_t) computed by replaying steps 1..t."""
        cited, seen = set(), set()
        for s in traj.steps[:t]:
            cited |= link_entities(s.thought, lex).node_ids & seen
            seen |= link_entities(s.observation, lex).node_ids
        return cited, seen

    out = []
    for t in range(1, len(traj.steps) + 1):
        t_prev, o_prev = state(t - 1)
        t_now, o_now = state(t)
        r = sum(c(v) for v in sorted(t_now - t_prev)) + sum(c(v) for v in sorted(o_now - o_prev))
        out.append(r)
    return out


def reference_response(req: dict) -> dict:
    """Expected service payload assembled straight from the library functions."""
    from gdcr.advantage import combine, group_outcome_advantages, outcome_reward, step_advantages
    from gdcr.graph import graph_from_dict
    from gdcr.io import encode_distance
    from gdcr.reward import score_trajectory
    from gdcr.trajectory import parse_tagged_transcript, trajectory_from_dict

    graph = graph_from_dict(req["graph"])
    raw = req["trajectory"]
    traj = parse_tagged_transcript(raw) if isinstance(raw, str) else trajectory_from_dict(raw)
    k = float(req.get("k", 2.0))
    lam = float(req.get("lambda", 0.5))
    eps = float(req.get("eps", 1e-6))
    series = score_trajectory(traj, graph, build_lexicon(graph), k)
    node = graph.node(graph.answer_node)
    outcome = outcome_reward(traj, node.canonical_label, node.aliases)
    sa = step_advantages(series.r_g, eps)
    dist = graph.distances

    def contrib(v):
        return 0.0 if dist[v] == math.inf else k ** -dist[v]

    steps = [
        {
            "index": i,
            "delta_cited": {v: contrib(v) for v in sorted(s.delta_cited)},
            "delta_retrieved": {v: contrib(v) for v in sorted(s.delta_retrieved)},
            "r_cite": s.r_cite,
            "r_ret": s.r_ret,
            "r_g": s.r_g,
            "d_t": encode_distance(s.d_t),
            "step_advantage": a,
        }
        for i, (s, a) in enumerate(zip(series.steps, sa))
    ]
    out = {"id": req.get("id"), "trajectory_id": traj.trajectory_id, "k": k, "lambda": lam}
    out["outcome"] = {"correctness": outcome.correctness, "format_valid": outcome.format_valid, "scalar": outcome.scalar}
    if "group" in req:
        rewards = [float(x) for x in req["group"]]
        idx = req.get("group_index")
        if idx is None:
            rewards.append(outcome.scalar)
            idx = len(rewards) - 1
        a_o = group_outcome_advantages(rewards, eps)[idx]
        out["outcome_advantage"] = a_o
        for row, c in zip(steps, combine(a_o, sa, lam)):
            row["combined"] = c
    out["steps"] = steps
    out["errors"] = []
    return out


def random_request(rng: np.random.Generator, i: int) -> dict:
    from gdcr.graph import graph_to_dict
    from gdcr.trajectory import trajectory_to_dict

    g = random_graph(rng)
    traj = random_trajectory(rng, g)
    if rng.random() < 0.5:
        labels = [n.canonical_label for n in g.nodes]
        traj = Trajectory(traj.query, traj.steps, labels[int(rng.integers(len(labels)))], traj.trajectory_id)
    req = {"id": i, "graph": graph_to_dict(g), "trajectory": trajectory_to_dict(traj),
           "k": float(rng.choice([1.0, 2.0, 3.0])), "lambda": float(rng.choice([0.0, 0.5, 1.0]))}
    if rng.random() < 0.6:
        req["group"] = [float(x) for x in rng.integers(0, 2, size=int(rng.integers(1, 8)))]
    return req


# -- policy instances ---------------------------------------------------------

def random_params(rng, scale=1.0):
    return PolicyParams(rng.normal(0, scale, N_FEATURES), float(rng.uniform(0.5, 2.0)), rng.normal(0, scale, N_FEATURES))


def random_instance(rng, clip, G=3, max_decisions=4, max_candidates=5, margin=1e-3):
    """Old params generate the records; new params are a perturbation. Resample near clip kinks."""
    while True:
        old = random_params(rng)
        vec = old.to_vector() + rng.normal(0, 0.3, 2 * N_FEATURES + 1)
        if vec[-1] <= 0.2:
            continue
        new = PolicyParams.from_vector(vec)
        decisions, advs = [], []
        for i in range(G):
            n = int(rng.integers(1, max_decisions + 1))
            recs = []
            for j in range(n):
                c = int(rng.integers(1, max_candidates + 1))
                kind = "cite" if rng.random() < 0.3 else "query"
                feats = rng.normal(0, 1, (c, N_FEATURES))
                recs.append(make_record(old, j, [f"e{x}" for x in range(c)], feats, int(rng.integers(c)), kind))
            a = rng.normal(0, 1, n)
            decisions.append(recs)
            advs.append(TrajectoryAdvantage(f"t{i}", 0.0, tuple([0.0] * n), tuple(float(x) for x in a)))
        rhos = [importance_ratio(new, r) for recs in decisions for r in recs]
        lo, hi = 1 - clip.eps_low, 1 + clip.eps_high
        if all(abs(r - lo) > margin and abs(r - hi) > margin for r in rhos):
            return decisions, advs, new


def finite_difference(decisions, advs, params, clip, h=1e-5):
    vec = params.to_vector()
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[i] += h
        down[i] -= h
        fu = surrogate_objective(decisions, advs, PolicyParams.from_vector(up), clip)
        fd = surrogate_objective(decisions, advs, PolicyParams.from_vector(down), clip)
        grad[i] = (fu - fd) / (2 * h)
    return grad


def rel_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))
