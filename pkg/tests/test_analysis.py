from __future__ import annotations

import math

import numpy as np
import pytest

from gdcr.advantage import OutcomeReward, outcome_reward
from gdcr.analysis import (
    DegenerateVariance,
    cited_fraction_by_distance,
    distance_table,
    gdcr_correctness_correlation,
    pearson,
    progress_curve,
)
from gdcr.entities import build_lexicon
from gdcr.policy import PolicyParams
from gdcr.reward import StepReward, StepRewardSeries, score_trajectory
from gdcr.sim import generate_world, oracle_chooser, rollout, synthesize_suite

WIN, LOSS = OutcomeReward(1, 1), OutcomeReward(0, 1)


def series_from(d, r_g=None, final=False):
    r_g = r_g or [0.0] * len(d)
    steps = [StepReward(frozenset(), frozenset(), frozenset(), frozenset(), 0.0, r, r, x) for x, r in zip(d, r_g)]
    if final:
        steps.append(StepReward(frozenset(), frozenset(), frozenset(), frozenset(), 0.0, 0.0, 0.0, 0, True))
    return StepRewardSeries(tuple(steps), 2.0, {})


def naive_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def test_single_trajectory_table():
    t = distance_table([(series_from([3, 1, 2], final=True), WIN)], max_step=3)
    assert [r.correct for r in t.rows] == [3, 1, 1]
    assert all(r.incorrect is None and r.diff is None for r in t.rows)
    assert [r.n_correct for r in t.rows] == [1, 1, 1]


def test_table_diff_and_unreachable():
    scored = [
        (series_from([2, 1]), WIN),
        (series_from([None, 0]), WIN),
        (series_from([3, 3]), LOSS),
        (series_from([3, 2]), LOSS),
    ]
    t = distance_table(scored, max_step=3)
    r1, r2, r3 = t.rows
    assert (r1.correct, r1.incorrect, r1.diff) == (2, 3, -1)
    assert r1.unreachable_correct == 1 and r1.n_correct == 1
    assert r2.correct == 0.5 and r2.incorrect == 2.5 and r2.diff == -2.0
    assert r3.n_correct == 0 and r3.diff is None
    assert t.populated() == [r1, r2]
    assert distance_table(scored, 3) == t


def test_pearson_matches_two_pass():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 50))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert pearson(x, y) == pytest.approx(naive_pearson(list(x), list(y)), abs=1e-10)


def test_correlation_examples():
    scored = [(series_from([None], [m]), o) for m, o in zip([1, 1, 0, 0], [WIN, WIN, LOSS, LOSS])]
    res = gdcr_correctness_correlation(scored)
    assert res.r == pytest.approx(1.0) and res.n == 4
    with pytest.raises(DegenerateVariance):
        gdcr_correctness_correlation([(series_from([None], [m]), WIN) for m in (0.1, 0.2, 0.3)])
    with pytest.raises(DegenerateVariance):
        pearson([1.0], [2.0])


def _with_sets(retrieved, cited, dist):
    last = StepReward(frozenset(cited), frozenset(retrieved), frozenset(), frozenset(), 0.0, 0.0, 0.0, None)
    return StepRewardSeries((last,), 2.0, dist)


def test_cited_fraction():
    dist = {"a": 0, "b": 1, "c": 1, "d": math.inf}
    full = cited_fraction_by_distance([(_with_sets("abcd", "abcd", dist), WIN)])
    assert [f for _, f, _ in full] == [1.0, 1.0, 1.0]
    none = cited_fraction_by_distance([(_with_sets("abcd", "", dist), WIN)])
    assert [f for _, f, _ in none] == [0.0, 0.0, 0.0]
    half = cited_fraction_by_distance([(_with_sets("abc", "b", dist), WIN)])
    assert half == [(0, 0.0, 1), (1, 0.5, 2)]


def test_progress_curve_degenerate_bins():
    curve = progress_curve([(series_from([2]), WIN), (series_from([1]), LOSS)], bins=10)
    populated = [row for row in curve if row[3]]
    assert len(populated) == 1 and populated[0][2] == 1.5
    with pytest.raises(ValueError):
        progress_curve([], bins=0)


def test_oracle_progress_curve_non_increasing():
    world = generate_world(200, 4, 0)
    tasks, _ = synthesize_suite(world, 60, 3, 1)
    scored = []
    for t in tasks:
        traj, _ = rollout(PolicyParams.zeros(), t, world, 20, seed=0, chooser=oracle_chooser(world, t))
        scored.append((score_trajectory(traj, t.task_graph, build_lexicon(t.task_graph)), outcome_reward(traj, t.gold_answer)))
    means = [m for _, _, m, n in progress_curve(scored, bins=4) if n]
    assert all(a >= b for a, b in zip(means, means[1:]))
