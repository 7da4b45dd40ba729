from __future__ import annotations

import math

import numpy as np
import pytest

from gdcr.advantage import TrajectoryAdvantage
from gdcr.policy import (
    N_FEATURES,
    ClipConfig,
    EmptyCandidateSet,
    MissingAdvantage,
    PolicyParams,
    decision_logprob,
    importance_ratio,
    log_softmax,
    make_record,
    objective_gradient,
    surrogate_objective,
)
from helpers import finite_difference, random_instance, random_params, rel_error


def test_logprob_examples():
    p = PolicyParams.zeros()
    feats = np.ones((1, N_FEATURES))
    assert decision_logprob(p, make_record(p, 0, ["a"], feats, 0)) == 0.0
    rec = make_record(p, 0, list("abcd"), np.random.default_rng(0).normal(size=(4, N_FEATURES)), 2)
    assert decision_logprob(p, rec) == pytest.approx(math.log(0.25))
    q = PolicyParams(np.arange(N_FEATURES, dtype=float), 1.0)
    q2 = PolicyParams(2 * np.arange(N_FEATURES, dtype=float), 2.0)
    assert decision_logprob(q, rec) == pytest.approx(decision_logprob(q2, rec), abs=1e-15)
    with pytest.raises(EmptyCandidateSet):
        make_record(p, 0, [], np.zeros((0, N_FEATURES)), 0)


def test_record_invariant():
    rng = np.random.default_rng(1)
    p = random_params(rng)
    feats = rng.normal(size=(4, N_FEATURES))
    rec = make_record(p, 0, list("abcd"), feats, 3)
    assert rec.logprob_old == log_softmax(rec.logits_old)[3]
    with pytest.raises(ValueError):
        make_record(p, 0, list("ab"), feats[:2], 2)
    with pytest.raises(ValueError):
        make_record(p, 0, list("ab"), feats, 0)


def test_importance_ratio():
    rng = np.random.default_rng(2)
    p = random_params(rng)
    feats = rng.normal(size=(3, N_FEATURES))
    rec = make_record(p, 0, list("abc"), feats, 1)
    assert importance_ratio(p, rec) == pytest.approx(1.0, abs=1e-15)
    shifted = rec.__class__(rec.step_index, rec.candidate_set, rec.chosen_index, rec.features, rec.logits_old,
                            rec.logprob_old - math.log(2.0), rec.kind)
    assert importance_ratio(p, shifted) == pytest.approx(2.0)
    assert importance_ratio(random_params(rng, 5.0), rec) > 0


def _single(rho, a, clip):
    p = PolicyParams.zeros()
    feats = np.zeros((2, N_FEATURES))
    rec = make_record(p, 0, ["x", "y"], feats, 0)
    rec = rec.__class__(0, rec.candidate_set, 0, feats, rec.logits_old, math.log(0.5) - math.log(rho))
    adv = TrajectoryAdvantage("t", 0.0, (0.0,), (a,))
    return surrogate_objective([[rec]], [adv], p, clip)


def test_clip_arithmetic():
    clip = ClipConfig(0.2, 0.28)
    assert _single(2.0, 1.0, clip) == pytest.approx(1.28)
    assert _single(0.5, -1.0, clip) == pytest.approx(-0.8)
    assert _single(1.1, 1.0, clip) == pytest.approx(1.1)


def test_ratio_one_objective_is_mean_advantage():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    decisions, advs = [], []
    for i in range(4):
        n = int(rng.integers(1, 5))
        decisions.append([make_record(p, j, ["a", "b", "c"], rng.normal(size=(3, N_FEATURES)), 0) for j in range(n)])
        a = tuple(float(x) for x in rng.normal(size=n))
        advs.append(TrajectoryAdvantage(f"t{i}", 0.0, (0.0,) * n, a))
    expected = np.mean([np.mean(a.combined) for a in advs])
    assert surrogate_objective(decisions, advs, p) == pytest.approx(expected, abs=1e-12)

    # first update from fresh samples is the weighted vanilla policy gradient
    from gdcr.policy import _logprob_and_grad

    pg = sum(
        (1 / (len(decisions) * len(recs))) * a * _logprob_and_grad(p, r)[1]
        for recs, adv in zip(decisions, advs)
        for r, a in zip(recs, adv.combined)
    )
    assert np.allclose(objective_gradient(decisions, advs, p), pg, atol=1e-12)


def test_zero_advantage_zero_gradient():
    rng = np.random.default_rng(4)
    clip = ClipConfig()
    decisions, advs, params = random_instance(rng, clip)
    zero = [TrajectoryAdvantage(a.trajectory_id, 0.0, a.step_advantage, (0.0,) * len(a.combined)) for a in advs]
    assert not objective_gradient(decisions, zero, params, clip).any()
    assert surrogate_objective(decisions, zero, params, clip) == 0.0


def test_missing_advantage():
    rng = np.random.default_rng(5)
    decisions, advs, params = random_instance(rng, ClipConfig())
    short = [TrajectoryAdvantage(a.trajectory_id, 0.0, (), ()) for a in advs]
    with pytest.raises(MissingAdvantage):
        surrogate_objective(decisions, short, params)
    with pytest.raises(MissingAdvantage):
        surrogate_objective(decisions, advs[:-1], params)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    clip = ClipConfig()
    worst = 0.0
    for _ in range(100):
        decisions, advs, params = random_instance(rng, clip)
        worst = max(worst, rel_error(objective_gradient(decisions, advs, params, clip), finite_difference(decisions, advs, params, clip)))
    assert worst < 1e-5


def test_objective_bound_and_clip_monotonicity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        clip = ClipConfig()
        decisions, advs, params = random_instance(rng, clip)
        pos = [TrajectoryAdvantage(a.trajectory_id, 0.0, a.step_advantage, tuple(abs(x) for x in a.combined)) for a in advs]
        # the clip caps the gain from positive advantages; negative ones stay unbounded below
        j = surrogate_objective(decisions, advs, params, clip)
        amax = max(x for a in pos for x in a.combined)
        assert j <= amax * (1 + clip.eps_high) + 1e-12
        assert 0 <= surrogate_objective(decisions, pos, params, clip) <= amax * (1 + clip.eps_high) + 1e-12
        lo = surrogate_objective(decisions, pos, params, ClipConfig(0.2, 0.28))
        hi = surrogate_objective(decisions, pos, params, ClipConfig(0.2, 0.5))
        assert hi >= lo - 1e-15


def test_params_roundtrip():
    rng = np.random.default_rng(8)
    p = random_params(rng)
    q = PolicyParams.from_dict(p.to_dict())
    assert np.array_equal(p.to_vector(), q.to_vector())
    assert np.array_equal(PolicyParams.from_vector(p.to_vector()).to_vector(), p.to_vector())
    with pytest.raises(ValueError):
        PolicyParams(np.zeros(N_FEATURES), 0.0)
    with pytest.raises(ValueError):
        ClipConfig(0.3, 0.2)
