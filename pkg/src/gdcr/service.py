"""Stateless scoring service for external trainers.

Requests and responses are single JSON objects. Pipe mode reads one request
per line on stdin and writes one response per line on stdout in request
order; HTTP mode accepts ``POST /score``. See ``docs/service.md`` for the
schema.
"""

from __future__ import annotations

import json
import logging
import queue
import sys
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping, TextIO

from gdcr.advantage import DEFAULT_EPS, DEFAULT_LAMBDA, combine, group_outcome_advantages, outcome_reward, step_advantages
from gdcr.entities import build_lexicon
from gdcr.graph import GraphError, contribution_from_distance, graph_from_dict
from gdcr.io import dumps, encode_distance
from gdcr.reward import score_trajectory
from gdcr.trajectory import TrajectoryFormatError, parse_tagged_transcript, trajectory_from_dict

log = logging.getLogger(__name__)


class RequestError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def error_response(request_id: Any, code: str, message: str) -> dict:
    return {"id": request_id, "steps": [], "errors": [{"code": code, "message": message}]}


def _number(req: Mapping, key: str, default: float) -> float:
    value = req.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RequestError("InvalidRequest", f"{key} must be a number")
    return float(value)


def _parse(req: Mapping):
    if "graph" not in req or "trajectory" not in req:
        raise RequestError("InvalidRequest", "request needs 'graph' and 'trajectory'")
    try:
        graph = graph_from_dict(req["graph"])
    except (GraphError, KeyError, TypeError, AttributeError) as exc:
        raise RequestError("InvalidGraph", f"{type(exc).__name__}: {exc}") from exc
    raw = req["trajectory"]
    try:
        if isinstance(raw, str):
            traj = parse_tagged_transcript(raw)
        else:
            traj = trajectory_from_dict(raw)
    except TrajectoryFormatError as exc:
        raise RequestError("TrajectoryFormatError", str(exc)) from exc
    k = _number(req, "k", 2.0)
    lam = _number(req, "lambda", DEFAULT_LAMBDA)
    eps = _number(req, "eps", DEFAULT_EPS)
    if k < 1:
        raise RequestError("InvalidDecay", f"k must be >= 1, got {k}")
    if lam < 0:
        raise RequestError("InvalidRequest", "lambda must be non-negative")
    group = req.get("group")
    if group is not None:
        if not isinstance(group, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in group):
            raise RequestError("InvalidRequest", "group must be a list of numbers")
    index = req.get("group_index")
    if index is not None and (group is None or not isinstance(index, int) or not 0 <= index < len(group)):
        raise RequestError("InvalidRequest", "group_index must index into group")
    return graph, traj, k, lam, eps, group, index


def score_request(req: Any) -> dict:
    """Score one request object. Never raises on bad input; errors go in the response."""
    request_id = req.get("id") if isinstance(req, Mapping) else None
    if not isinstance(req, Mapping):
        return error_response(request_id, "InvalidRequest", "request must be a JSON object")
    try:
        graph, traj, k, lam, eps, group, index = _parse(req)
    except RequestError as exc:
        return error_response(request_id, exc.code, str(exc))

    series = score_trajectory(traj, graph, build_lexicon(graph), k)
    node = graph.node(graph.answer_node)
    outcome = outcome_reward(traj, node.canonical_label, node.aliases)
    step_adv = step_advantages(series.r_g, eps)

    resp: dict[str, Any] = {"id": request_id, "trajectory_id": traj.trajectory_id, "k": k, "lambda": lam}
    steps = []
    for i, (s, a) in enumerate(zip(series.steps, step_adv)):
        steps.append({
            "index": i,
            "delta_cited": {v: contribution_from_distance(series.node_distances[v], k) for v in sorted(s.delta_cited)},
            "delta_retrieved": {v: contribution_from_distance(series.node_distances[v], k) for v in sorted(s.delta_retrieved)},
            "r_cite": s.r_cite,
            "r_ret": s.r_ret,
            "r_g": s.r_g,
            "d_t": encode_distance(s.d_t),
            "step_advantage": a,
        })
    resp["outcome"] = {"correctness": outcome.correctness, "format_valid": outcome.format_valid, "scalar": outcome.scalar}
    if group is not None:
        rewards = [float(x) for x in group]
        if index is None:
            # the group lists peers only; this trajectory joins at the end
            rewards.append(outcome.scalar)
            index = len(rewards) - 1
        if len(rewards) < 2:
            return error_response(request_id, "GroupTooSmall", "a group needs at least two outcome rewards")
        a_o = group_outcome_advantages(rewards, eps)[index]
        resp["outcome_advantage"] = a_o
        for row, c in zip(steps, combine(a_o, step_adv, lam)):
            row["combined"] = c
    resp["steps"] = steps
    resp["errors"] = []
    return resp


def handle_line(line: str) -> str:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return dumps(error_response(None, "MalformedJSON", str(exc)))
    try:
        return dumps(score_request(req))
    except Exception as exc:  # keep the process alive whatever the payload
        log.exception("unexpected failure")
        rid = req.get("id") if isinstance(req, dict) else None
        return dumps(error_response(rid, "InternalError", f"{type(exc).__name__}: {exc}"))


def serve_pipe(instream: TextIO = sys.stdin, outstream: TextIO = sys.stdout, workers: int = 4, backlog: int = 256) -> int:
    """Score requests concurrently; write responses strictly in arrival order."""
    pending: queue.Queue[Future | None] = queue.Queue(maxsize=backlog)

    def writer() -> None:
        while True:
            fut = pending.get()
            if fut is None:
                return
            outstream.write(fut.result() + "\n")
            outstream.flush()

    out_thread = threading.Thread(target=writer, daemon=True)
    out_thread.start()
    count = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for line in instream:
            if not line.strip():
                continue
            pending.put(pool.submit(handle_line, line))
            count += 1
        pending.put(None)
        out_thread.join()
    return count


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self) -> None:  # noqa: N802
        if self.path.rstrip("/") != "/score":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = handle_line(self.rfile.read(length).decode("utf-8")).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt: str, *args: Any) -> None:
        log.info("%s " + fmt, self.address_string(), *args)


def make_http_server(port: int, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), _Handler)
