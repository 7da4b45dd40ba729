"""Search-agent trajectories: data types, the JSONL schema, and the tagged transcript parser."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ActionRecord:
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Step:
    thought: str
    action: ActionRecord
    observation: str = ""


@dataclass(frozen=True)
class Trajectory:
    query: str
    steps: tuple[Step, ...]
    final_answer: str | None = None
    trajectory_id: str = ""
    graph_id: str = ""

    @property
    def format_valid(self) -> bool:
        return self.final_answer is not None and self.final_answer.strip() != ""


def trajectory_to_dict(traj: Trajectory) -> dict:
    out = {
        "trajectory_id": traj.trajectory_id,
        "query": traj.query,
        "steps": [
            {
                "thought": s.thought,
                "action": {"name": s.action.name, "arguments": dict(s.action.arguments)},
                "observation": s.observation,
            }
            for s in traj.steps
        ],
        "final_answer": traj.final_answer,
    }
    if traj.graph_id:
        out["graph_id"] = traj.graph_id
    return out


def trajectory_from_dict(obj: Mapping) -> Trajectory:
    if not isinstance(obj, Mapping):
        raise TrajectoryFormatError("trajectory must be a JSON object")
    try:
        raw_steps = obj["steps"]
        steps = []
        for s in raw_steps:
            act = s.get("action") or {}
            if isinstance(act, str):
                act = {"name": act}
            steps.append(
                Step(
                    thought=str(s.get("thought", "")),
                    action=ActionRecord(str(act.get("name", "")), dict(act.get("arguments") or {})),
                    observation=str(s.get("observation") or ""),
                )
            )
    except (KeyError, TypeError, AttributeError) as exc:
        raise TrajectoryFormatError(f"malformed trajectory: {exc}") from exc
    final = obj.get("final_answer")
    return Trajectory(
        query=str(obj.get("query", "")),
        steps=tuple(steps),
        final_answer=None if final is None else str(final),
        trajectory_id=str(obj.get("trajectory_id", "")),
        graph_id=str(obj.get("graph_id", "")),
    )


# -- tagged transcript format ----------------------------------------------------

_TURN_RE = re.compile(r"<\|im_start\|>\s*(user|assistant|system)\s*(.*?)\s*(?:<\|im_end\|>|(?=<\|im_start\|>)|\Z)", re.S)
_BLOCK_RE = {
    tag: re.compile(rf"<{tag}>(.*?)</{tag}>", re.S)
    for tag in ("think", "tool_call", "tool_response", "answer")
}


def _block(tag: str, text: str) -> str | None:
    m = _BLOCK_RE[tag].search(text)
    return None if m is None else m.group(1).strip()


def _parse_tool_call(raw: str) -> ActionRecord:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError:
        return ActionRecord("unparsed", {"raw": raw})
    if not isinstance(obj, dict):
        return ActionRecord("unparsed", {"raw": raw})
    return ActionRecord(str(obj.get("name", "")), dict(obj.get("arguments") or {}))


def parse_tagged_transcript(text: str, trajectory_id: str = "", graph_id: str = "") -> Trajectory:
    """Parse a chat transcript using <think>/<tool_call>/<tool_response>/<answer> blocks.

    The first user turn is the query. Each assistant turn opens a step; the
    following user turn's <tool_response> becomes its observation. An
    assistant turn carrying <answer> closes the trajectory. A missing or
    empty answer block leaves ``final_answer`` as None.
    """
    turns = [(m.group(1), m.group(2)) for m in _TURN_RE.finditer(text)]
    if not turns:
        raise TrajectoryFormatError("no chat turns found")
    query = ""
    steps: list[Step] = []
    final_answer = None
    pending: dict | None = None
    for role, body in turns:
        if role == "system":
            continue
        if role == "user":
            resp = _block("tool_response", body)
            if resp is None:
                if not steps and pending is None and not query:
                    query = body.strip()
                continue
            if pending is None:
                raise TrajectoryFormatError("tool response without a preceding tool call")
            steps.append(Step(pending["thought"], pending["action"], resp))
            pending = None
            continue
        if pending is not None:
            steps.append(Step(pending["thought"], pending["action"], ""))
            pending = None
        if final_answer is not None:
            raise TrajectoryFormatError("assistant turn after the final answer")
        thought = _block("think", body) or ""
        answer = _block("answer", body)
        call = _block("tool_call", body)
        if answer is not None:
            steps.append(Step(thought, ActionRecord("answer", {"text": answer}), ""))
            final_answer = answer if answer else None
            if final_answer is None:
                break
        elif call is not None:
            pending = {"thought": thought, "action": _parse_tool_call(call)}
        else:
            steps.append(Step(thought, ActionRecord("none"), ""))
    if pending is not None:
        steps.append(Step(pending["thought"], pending["action"], ""))
    if not steps:
        raise TrajectoryFormatError("transcript has no assistant steps")
    return Trajectory(query, tuple(steps), final_answer, trajectory_id, graph_id)


def render_tagged_transcript(traj: Trajectory) -> str:
    """Inverse of :func:`parse_tagged_transcript` for well-formed trajectories."""
    parts = [f"<|im_start|>user\n{traj.query}\n<|im_end|>"]
    for step in traj.steps:
        if step.action.name == "answer":
            answer = traj.final_answer or ""
            parts.append(
                f"<|im_start|>assistant\n<think>\n{step.thought}\n</think>\n<answer>\n{answer}\n</answer><|im_end|>"
            )
            continue
        call = json.dumps({"name": step.action.name, "arguments": dict(step.action.arguments)}, ensure_ascii=False)
        parts.append(
            f"<|im_start|>assistant\n<think>\n{step.thought}\n</think>\n<tool_call>\n{call}\n</tool_call><|im_end|>"
        )
        parts.append(f"<|im_start|>user\n<tool_response>\n{step.observation}\n</tool_response><|im_end|>")
    return "\n".join(parts)
