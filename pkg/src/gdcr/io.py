"""JSON serialization helpers and run-directory persistence."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from gdcr.advantage import OutcomeReward
from gdcr.graph import UNREACHABLE
from gdcr.reward import StepReward, StepRewardSeries

FLOAT_DIGITS = 10
UNREACHABLE_TOKEN = "unreachable"

RUN_FILES = (
    "config.json", "world.json", "tasks.jsonl", "trajectories.jsonl", "scores.jsonl",
    "advantages.jsonl", "metrics.jsonl", "params.json", "report.json",
)


class RunExists(FileExistsError):
    pass


def round_floats(obj: Any) -> Any:
    """Recursively round floats to 10 significant digits for stable golden files."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return x
        return float(f"{x:.{FLOAT_DIGITS}g}")
    if isinstance(obj, np.ndarray):
        return [round_floats(x) for x in obj.tolist()]
    if isinstance(obj, Mapping):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(round_floats(x) for x in obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(round_floats(obj), ensure_ascii=False, allow_nan=False)


def config_hash(config: Mapping) -> str:
    canon = json.dumps(round_floats(config), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def read_jsonl(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield (line number, raw text) for non-blank lines."""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                yield n, line


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")


def encode_distance(d: float | None) -> int | str | None:
    if d is None:
        return None
    if d == UNREACHABLE:
        return UNREACHABLE_TOKEN
    return int(d)


def decode_distance(d: int | str | None) -> float | None:
    if d is None:
        return None
    if d == UNREACHABLE_TOKEN:
        return UNREACHABLE
    return int(d)


def series_to_dict(series: StepRewardSeries, outcome: OutcomeReward | None = None, graph_id: str = "") -> dict:
    out = {
        "trajectory_id": series.trajectory_id,
        "graph_id": graph_id,
        "k": series.k,
        "steps": [
            {
                "delta_cited": sorted(s.delta_cited),
                "delta_retrieved": sorted(s.delta_retrieved),
                "r_cite": s.r_cite,
                "r_ret": s.r_ret,
                "r_g": s.r_g,
                "d_t": encode_distance(s.d_t),
                "is_final": s.is_final,
            }
            for s in series.steps
        ],
        "node_distances": {v: encode_distance(d) for v, d in sorted(series.node_distances.items())},
    }
    if outcome is not None:
        out["outcome"] = {"correctness": outcome.correctness, "format_valid": outcome.format_valid, "scalar": outcome.scalar}
    return out


def series_from_dict(obj: Mapping) -> tuple[StepRewardSeries, OutcomeReward | None]:
    cited: frozenset[str] = frozenset()
    retrieved: frozenset[str] = frozenset()
    steps = []
    for s in obj["steps"]:
        dc, do = frozenset(s["delta_cited"]), frozenset(s["delta_retrieved"])
        cited, retrieved = cited | dc, retrieved | do
        steps.append(
            StepReward(cited, retrieved, dc, do, float(s["r_cite"]), float(s["r_ret"]), float(s["r_g"]),
                       decode_distance(s.get("d_t")), bool(s.get("is_final", False)))
        )
    dist = {v: decode_distance(d) for v, d in obj.get("node_distances", {}).items()}
    series = StepRewardSeries(tuple(steps), float(obj.get("k", 2.0)), dist, str(obj.get("trajectory_id", "")))
    out = obj.get("outcome")
    outcome = OutcomeReward(int(out["correctness"]), int(out["format_valid"])) if out else None
    return series, outcome


class RunDirectory:
    """Artifacts of one run. config.json is written first; every artifact carries the config hash."""

    def __init__(self, path: str | Path, config: Mapping, force: bool = False):
        self.path = Path(path)
        self.config = dict(config)
        self.config_hash = config_hash(self.config)
        if self.path.exists() and any(self.path.iterdir()) and not force:
            raise RunExists(f"{self.path} is not empty; pass --force to overwrite")
        self.path.mkdir(parents=True, exist_ok=True)
        for name in RUN_FILES:
            (self.path / name).unlink(missing_ok=True)
        self.write_json("config.json", self.config)

    def write_json(self, name: str, obj: Mapping) -> Path:
        target = self.path / name
        body = {"config_hash": self.config_hash, **obj}
        target.write_text(json.dumps(round_floats(body), ensure_ascii=False, indent=2, allow_nan=False) + "\n", encoding="utf-8")
        return target

    def write_jsonl(self, name: str, rows: Iterable[Mapping]) -> Path:
        target = self.path / name
        write_jsonl(target, ({"config_hash": self.config_hash, **r} for r in rows))
        return target
