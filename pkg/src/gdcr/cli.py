"""Command-line entry points: synth, score, train, analyze, serve."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from gdcr.advantage import OutcomeReward, advantage_record, outcome_reward
from gdcr.analysis import (
    DegenerateVariance,
    cited_fraction_by_distance,
    distance_table,
    gdcr_correctness_correlation,
    progress_curve,
)
from gdcr.entities import build_lexicon
from gdcr.graph import NOISE_MODES, ROUNDING_MODES, GraphError, InvalidDecay, graph_from_dict
from gdcr.io import RunDirectory, RunExists, dumps, encode_distance, read_jsonl, series_from_dict, series_to_dict, write_jsonl
from gdcr.reward import score_trajectory
from gdcr.sim import InvalidSize, SynthesisExhausted, generate_world, synthesize_suite
from gdcr.train import ConfigError, SimEnv, TrainConfig, train
from gdcr.trajectory import TrajectoryFormatError, parse_tagged_transcript, trajectory_from_dict, trajectory_to_dict

log = logging.getLogger("gdcr")


def _bounded(kind, lo, name):
    def parse(text: str):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a {kind.__name__}") from None
        if value < lo:
            raise argparse.ArgumentTypeError(f"{name} must be >= {lo}, got {value}")
        return value

    return parse


# -- synth ---------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    config = {
        "command": "synth", "nodes": args.nodes, "degree": args.degree, "rewire_prob": args.rewire_prob,
        "tasks": args.tasks, "walk_length": args.walk_length, "side_branches": args.side_branches, "seed": args.seed,
    }
    try:
        world = generate_world(args.nodes, args.degree, args.seed, args.rewire_prob)
        tasks, rejected = synthesize_suite(world, args.tasks, args.walk_length, args.seed + 1, args.side_branches)
    except InvalidSize as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SynthesisExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run = RunDirectory(args.out, config, force=args.force)
    run.write_json("world.json", world.to_dict())
    run.write_jsonl("tasks.jsonl", (t.to_dict() for t in tasks))
    print(f"{len(tasks)} valid / 0 rejected-final ({rejected} candidates rejected during retries)")
    return 0


# -- score ---------------------------------------------------------------------

def _load_graphs(path: Path) -> dict:
    """Graph objects from a JSON file (object or list) or JSONL; task records contribute their graph."""
    text = path.read_text(encoding="utf-8").strip()
    if not text:
        return {}
    try:
        loaded = json.loads(text)
        objs = loaded if isinstance(loaded, list) else [loaded]
    except json.JSONDecodeError:
        objs = [json.loads(raw) for _, raw in read_jsonl(path)]
    graphs = {}
    for obj in objs:
        g = graph_from_dict(obj["graph"] if "graph" in obj else obj)
        graphs[g.graph_id] = g
    return graphs


def _read_trajectory(raw: str, fmt: str):
    obj = json.loads(raw)
    if fmt == "tagged":
        if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
            raise TrajectoryFormatError("tagged records need a 'text' field")
        return parse_tagged_transcript(obj["text"], str(obj.get("trajectory_id", "")), str(obj.get("graph_id", "")))
    return trajectory_from_dict(obj)


def cmd_score(args: argparse.Namespace) -> int:
    try:
        graphs = _load_graphs(Path(args.graphs))
    except (OSError, ValueError, KeyError, GraphError) as exc:
        print(f"error: cannot load graphs: {exc}", file=sys.stderr)
        return 1
    lexicons = {gid: build_lexicon(g) for gid, g in graphs.items()}
    rows, failures = [], 0
    for lineno, raw in read_jsonl(args.trajectories):
        try:
            traj = _read_trajectory(raw, args.format)
        except (json.JSONDecodeError, TrajectoryFormatError) as exc:
            rows.append({"line": lineno, "error": {"code": "TrajectoryFormatError", "message": str(exc)}})
            failures += 1
            continue
        gid = traj.graph_id
        if gid not in graphs and not gid and len(graphs) == 1:
            gid = next(iter(graphs))
        if gid not in graphs:
            rows.append({"line": lineno, "trajectory_id": traj.trajectory_id,
                         "error": {"code": "GraphNotFound", "message": f"no graph with id {traj.graph_id!r}"}})
            failures += 1
            continue
        g = graphs[gid]
        series = score_trajectory(traj, g, lexicons[gid], args.k)
        node = g.node(g.answer_node)
        rows.append(series_to_dict(series, outcome_reward(traj, node.canonical_label, node.aliases), gid))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(args.out, rows)
    log.info("scored %d trajectories, %d errors", len(rows) - failures, failures)
    return 1 if failures else 0


# -- train ---------------------------------------------------------------------

def _load_config(args: argparse.Namespace) -> TrainConfig:
    obj = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.mode:
        obj["mode"] = args.mode
    if args.iterations is not None:
        obj["iterations"] = args.iterations
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.noise_mode:
        obj["noise"] = {"mode": args.noise_mode, "rate": args.noise_rate, "seed": args.noise_seed, "rounding": args.noise_rounding}
    return TrainConfig.from_dict(obj)


def _table_rows(table) -> list[dict]:
    return [
        {"step": r.step, "correct": r.correct, "incorrect": r.incorrect, "diff": r.diff,
         "n_correct": r.n_correct, "n_incorrect": r.n_incorrect}
        for r in table.rows
    ]


def cmd_train(args: argparse.Namespace) -> int:
    try:
        config = _load_config(args)
        run = RunDirectory(args.out, config.to_dict(), force=args.force)
        env = SimEnv.build(config.env, config.noise)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, RunExists):
            raise
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1
    run.write_json("world.json", env.world.to_dict())
    run.write_jsonl("tasks.jsonl", (t.to_dict() for t in env.tasks))

    metrics = []

    def on_iteration(row: dict) -> None:
        metrics.append(row)
        log.info("iteration %d success %.3f mean r_g %.4f", row["iteration"], row["success_rate"], row["mean_r_g"])

    art = train(env, config, on_iteration=on_iteration)
    run.write_jsonl("metrics.jsonl", metrics)
    run.write_json("params.json", {"initial": art.initial_params.to_dict(), "final": art.params.to_dict()})
    run.write_jsonl("trajectories.jsonl", (
        {**trajectory_to_dict(r.trajectory), "graph_id": env.tasks[r.task_index].task_id} for r in art.eval_rollouts
    ))
    run.write_jsonl("scores.jsonl", (
        series_to_dict(r.series, r.outcome, env.tasks[r.task_index].task_id) for r in art.eval_rollouts
    ))
    run.write_jsonl("advantages.jsonl", (
        advantage_record(r.series, a) for group, advs in art.last_batch for r, a in zip(group, advs)
    ))
    scored = [(r.series, r.outcome) for r in art.eval_rollouts]
    final = art.final_success_rate if scored else None
    report = {"final_success_rate": final, "rejected_candidates": env.rejected}
    if scored:
        report["distance_table"] = _table_rows(distance_table(scored, config.env.max_steps))
        try:
            report["correlation"] = vars(gdcr_correctness_correlation(scored))
        except DegenerateVariance as exc:
            report["correlation"] = {"error": "DegenerateVariance", "message": str(exc)}
    run.write_json("report.json", report)
    if scored:
        print(f"final success rate {final:.4f} ({config.mode}, seed {config.seed})")
    return 0


# -- analyze -------------------------------------------------------------------

def _load_scores(path: str) -> list[tuple]:
    p = Path(path)
    if p.is_dir():
        p = p / "scores.jsonl"
    out = []
    for _, raw in read_jsonl(p):
        obj = json.loads(raw)
        if "error" in obj:
            continue
        series, outcome = series_from_dict(obj)
        out.append((series, outcome or OutcomeReward(0, 0)))
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if x is None else (f"{x:.10g}" if isinstance(x, float) else x) for x in row])


def _analysis(scored, max_step: int, bins: int) -> dict:
    table = distance_table(scored, max_step)
    try:
        corr = vars(gdcr_correctness_correlation(scored))
    except DegenerateVariance as exc:
        corr = {"r": None, "n": len(scored), "note": f"DegenerateVariance: {exc}"}
    success = sum(o.scalar for _, o in scored) / len(scored)
    return {
        "n_trajectories": len(scored),
        "success_rate": success,
        "table": table,
        "correlation": corr,
        "progress": progress_curve(scored, bins),
        "cited_fraction": cited_fraction_by_distance(scored),
    }


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        scored = _load_scores(args.scores)
        baseline = _load_scores(args.baseline) if args.baseline else None
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not scored or baseline == []:
        print("error: no scored trajectories", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = _analysis(scored, args.max_step, args.bins)
    table = res["table"]
    _write_csv(out / "distance_table.csv",
               ["step", "correct", "incorrect", "diff", "n_correct", "n_incorrect", "unreachable_correct", "unreachable_incorrect"],
               [(r.step, r.correct, r.incorrect, r.diff, r.n_correct, r.n_incorrect, r.unreachable_correct, r.unreachable_incorrect)
                for r in table.rows])
    (out / "correlation.json").write_text(dumps(res["correlation"]) + "\n", encoding="utf-8")
    _write_csv(out / "progress_curve.csv", ["bin_lo", "bin_hi", "mean_d", "count"], res["progress"])
    _write_csv(out / "cited_fraction.csv", ["distance", "cited_fraction", "retrieved"],
               [(encode_distance(d), f, n) for d, f, n in res["cited_fraction"]])

    report = {
        "n_trajectories": res["n_trajectories"],
        "success_rate": res["success_rate"],
        "distance_table": _table_rows(table),
        "correlation": res["correlation"],
    }
    if baseline is not None:
        base = _analysis(baseline, args.max_step, args.bins)
        report["baseline"] = {
            "n_trajectories": base["n_trajectories"],
            "success_rate": base["success_rate"],
            "distance_table": _table_rows(base["table"]),
            "correlation": base["correlation"],
        }
        report["success_rate_diff"] = res["success_rate"] - base["success_rate"]
        paired = []
        for a, b in zip(table.rows, base["table"].rows):
            paired.append({
                "step": a.step, "diff": a.diff, "baseline_diff": b.diff,
                "diff_of_diffs": a.diff - b.diff if a.diff is not None and b.diff is not None else None,
            })
        report["paired"] = paired
    (out / "report.json").write_text(json.dumps(json.loads(dumps(report)), indent=2) + "\n", encoding="utf-8")
    return 0


# -- serve ---------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    from gdcr.service import make_http_server, serve_pipe

    if args.http is None:
        serve_pipe(sys.stdin, sys.stdout, workers=args.workers)
        return 0
    server = make_http_server(args.http, args.host)
    log.info("listening on %s:%d", args.host, args.http)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdcr", description="Graph-distance step rewards for search agents.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a world graph and a validated task suite")
    s.add_argument("--nodes", type=_bounded(int, 10, "--nodes"), default=200, help="world size")
    s.add_argument("--degree", type=_bounded(float, 2.0, "--degree"), default=4.0, help="mean node degree")
    s.add_argument("--rewire-prob", type=float, default=0.1, help="small-world rewiring probability")
    s.add_argument("--tasks", type=_bounded(int, 1, "--tasks"), default=100, help="number of tasks to synthesize")
    s.add_argument("--walk-length", type=_bounded(int, 2, "--walk-length"), default=3, help="hops from the question entity to the answer")
    s.add_argument("--side-branches", type=_bounded(int, 0, "--side-branches"), default=1, help="distractor branches per task graph")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", help="score trajectories against their ER graphs")
    s.add_argument("--graphs", required=True, help="ER graph JSON, JSON list, JSONL, or a tasks.jsonl")
    s.add_argument("--trajectories", required=True, help="trajectory JSONL")
    s.add_argument("--k", type=_bounded(float, 1.0, "--k"), default=2.0, help="distance decay base")
    s.add_argument("--format", choices=("json", "tagged"), default="json", help="trajectory records or tagged transcripts")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("train", help="train the simulated policy with SAPO or GRPO")
    s.add_argument("--config", help="JSON training config; flags override it")
    s.add_argument("--mode", choices=("sapo", "grpo"))
    s.add_argument("--iterations", type=_bounded(int, 0, "--iterations"))
    s.add_argument("--seed", type=int)
    s.add_argument("--noise-mode", choices=NOISE_MODES, help="corrupt the reward graphs")
    s.add_argument("--noise-rate", type=float, default=0.1, help="corruption rate in [0, 1]")
    s.add_argument("--noise-seed", type=int, default=0)
    s.add_argument("--noise-rounding", choices=ROUNDING_MODES, default="floor", help="how rate * node count becomes a node count")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("analyze", help="distance tables, correlation and progress curves")
    s.add_argument("--scores", required=True, help="scores JSONL or a run directory")
    s.add_argument("--baseline", help="second scores file for paired comparison")
    s.add_argument("--max-step", type=_bounded(int, 1, "--max-step"), default=20)
    s.add_argument("--bins", type=_bounded(int, 1, "--bins"), default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("serve", help="scoring service (stdin/stdout by default)")
    s.add_argument("--http", type=_bounded(int, 0, "--http"), metavar="PORT", help="serve POST /score on this port instead of stdin")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--workers", type=_bounded(int, 1, "--workers"), default=4, help="scoring threads")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RunExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvalidDecay as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
