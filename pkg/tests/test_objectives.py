import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from groundkit.core import AUGMENTED, Perspective, point_in_box
from groundkit.grpo import scenes as sc
from groundkit.grpo.gradcheck import grad_check, max_rel_error, numeric_grad, random_case
from groundkit.grpo.objectives import (
    LOG_RATIO_CLAMP,
    ClampCounter,
    GroupTooSmall,
    GrpoBatch,
    Rollout,
    RolloutGroup,
    SftBatch,
    cell_box,
    cell_center,
    grpo_loss,
    grpo_objective,
    normalize_advantages,
    normalize_advantages_batch,
    policy_grad,
    reward,
    sample_batch,
    sample_rollouts,
    sft_loss,
    sft_objective,
)
from groundkit.grpo.policy import CONTEXT_DIM, ToyPolicy, softmax

rewards_st = st.lists(st.sampled_from([0.0, 1.0]), min_size=2, max_size=16)


# --------------------------------------------------------------- advantages


def test_advantage_examples():
    np.testing.assert_allclose(normalize_advantages([1, 1, 1, 1, 0, 0, 0, 0]), [1, 1, 1, 1, -1, -1, -1, -1], atol=1e-12)
    # mean 1/4, population std sqrt(3)/4
    s = math.sqrt(3) / 4
    oracle = [(1 - 0.25) / s, -0.25 / s, -0.25 / s, -0.25 / s]
    np.testing.assert_allclose(normalize_advantages([1, 0, 0, 0]), oracle, atol=1e-12)
    np.testing.assert_allclose(oracle, [1.7320508, -0.5773503, -0.5773503, -0.5773503], atol=1e-7)
    assert normalize_advantages([1, 1, 1, 1]).tolist() == [0, 0, 0, 0]
    with pytest.raises(GroupTooSmall):
        normalize_advantages([1])


@given(rewards_st)
def test_advantage_moments(r):
    a = normalize_advantages(r)
    if len(set(r)) == 1:
        assert np.all(a == 0)
    else:
        assert abs(a.sum()) <= 1e-12
        assert abs(np.sqrt(np.mean(a**2)) - 1) <= 1e-9


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=16), st.floats(0.1, 100), st.floats(-50, 50))
def test_advantage_shift_scale_invariance(r, a, b):
    r = np.array(r)
    assume(np.std(r) > 1e-3)
    np.testing.assert_allclose(normalize_advantages(a * r + b), normalize_advantages(r), atol=1e-6)


@given(st.lists(rewards_st.filter(lambda r: len(r) == 6), min_size=1, max_size=8))
def test_batch_normalization_matches_rowwise(rows):
    batch = normalize_advantages_batch(np.array(rows))
    np.testing.assert_allclose(batch, [normalize_advantages(r) for r in rows], atol=1e-12)


# -------------------------------------------------------------------- loss


def group(ratios, adv):
    rs = [Rollout(0, 0, -1.0, -1.0 + math.log(q), 0) for q in ratios]
    return RolloutGroup(rs, np.array(adv, dtype=float))


def test_grpo_loss_fixtures():
    assert abs(grpo_loss(group([1.3, 0.2, 4.0], [0, 0, 0]))) <= 1e-12
    adv = normalize_advantages([1, 0, 0, 1, 1])
    assert abs(grpo_loss(group([1] * 5, adv))) <= 1e-12
    assert abs(grpo_loss(group([2.0, 1.0], [1, -1])) - (-0.5)) <= 1e-12


def test_grpo_loss_clamp_is_counted():
    g = RolloutGroup([Rollout(0, 0, -40.0, -1.0, 1), Rollout(0, 0, -1.0, -1.0, 0)], np.array([1.0, -1.0]))
    c = ClampCounter()
    loss = grpo_loss(g, counter=c)
    assert c.count == 1 and loss == pytest.approx(-(math.exp(LOG_RATIO_CLAMP) - 1) / 2)


def test_grpo_clip_optional():
    g = group([2.0, 1.0], [1, -1])
    assert grpo_loss(g, clip=0.2) == pytest.approx(-(1.2 - 1) / 2)


def test_sft_loss_uniform():
    pol = ToyPolicy.zeros(16)
    ctx, feats = np.ones(CONTEXT_DIM), np.ones((4, 16))
    assert sft_loss(pol, ctx, feats, 2, 5) == pytest.approx(math.log(4) + math.log(16), abs=1e-12)
    assert round(math.log(4) + math.log(16), 4) == 4.1589


def test_sft_loss_peaked_policy_approaches_zero():
    pol = ToyPolicy.zeros(4)
    pol.theta_persp[-1, 1] = 60.0
    pol.theta_cell[1, 0, 3] = 60.0
    ctx = np.zeros(CONTEXT_DIM)
    ctx[-1] = 1
    feats = np.zeros((4, 4))
    feats[1, 0] = 1
    assert sft_loss(pol, ctx, feats, 1, 3) < 1e-12


def _nll_oracle(logits, idx):
    m = max(logits)
    return -(logits[idx] - m - math.log(sum(math.exp(v - m) for v in logits)))


def test_sft_loss_matches_literal_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pol = ToyPolicy.random(6, rng, scale=1.5)
        ctx = rng.normal(size=CONTEXT_DIM)
        feats = rng.random((4, 6))
        k, c = int(rng.integers(4)), int(rng.integers(6))
        zp = [sum(ctx[d] * pol.theta_persp[d, j] for d in range(CONTEXT_DIM)) for j in range(4)]
        zc = [sum(feats[k, f] * pol.theta_cell[k, f, j] for f in range(6)) for j in range(6)]
        assert abs(sft_loss(pol, ctx, feats, k, c) - (_nll_oracle(zp, k) + _nll_oracle(zc, c))) <= 1e-12


# --------------------------------------------------------------- gradients


def test_sft_gradient_at_uniform_logits():
    pol = ToyPolicy.zeros(16)
    ctx = np.arange(1, CONTEXT_DIM + 1, dtype=float)
    feats = np.random.default_rng(0).random((4, 16))
    batch = SftBatch(ctx[None], feats[None], np.array([2]), np.array([7]))
    g_p, g_c = policy_grad(pol, batch, "sft")
    np.testing.assert_allclose(g_p, np.outer(ctx, np.full(4, 0.25) - np.eye(4)[2]), atol=1e-14)
    expect = np.zeros_like(pol.theta_cell)
    expect[2] = np.outer(feats[2], np.full(16, 1 / 16) - np.eye(16)[7])
    np.testing.assert_allclose(g_c, expect, atol=1e-14)


def test_random_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(5):
        pol, sft, grpo = random_case(rng)
        for batch, kind, f in ((sft, "sft", lambda p: sft_objective(p, sft)),
                               (grpo, "grpo", lambda p: grpo_objective(p, grpo))):
            assert max_rel_error(policy_grad(pol, batch, kind), numeric_grad(f, pol, 1e-5)) < 1e-5


def test_grad_check_report():
    rep = grad_check(trials=10, seed=4)
    assert rep.trials == 10 and rep.worst < 1e-5


def test_zero_advantage_gives_zero_gradient():
    rng = np.random.default_rng(2)
    pol, _, grpo = random_case(rng)
    grpo.advantages = np.zeros_like(grpo.advantages)
    g_p, g_c = policy_grad(pol, grpo, "grpo")
    assert not g_p.any() and not g_c.any()


def test_degenerate_groups_leave_parameters_unchanged():
    pol = ToyPolicy.random(4, np.random.default_rng(0), 0.5)
    ctx = np.ones((3, CONTEXT_DIM))
    feats = np.ones((3, 4, 4))
    batch = sample_batch(pol, ctx, feats, np.array([99, 99, 99]), 5, np.random.default_rng(1))
    assert not batch.advantages.any()
    g_p, g_c = policy_grad(pol, batch, "grpo")
    assert not g_p.any() and not g_c.any()


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_one_step_improvement(seed):
    rng = np.random.default_rng(seed)
    C = 5
    pol = ToyPolicy.random(C, rng, scale=1.0)
    ctx = rng.normal(size=(1, CONTEXT_DIM))
    feats = rng.random((1, 4, C))
    persp = rng.choice(4, size=2, replace=False)[None]
    cell = rng.integers(C, size=(1, 2))
    lp = pol.logprob(ctx, feats, persp, cell)
    batch = GrpoBatch(ctx, feats, persp, cell, lp, np.array([[1.0, -1.0]]))
    g_p, g_c = policy_grad(pol, batch, "grpo")
    lr = 1e-4
    new = ToyPolicy(pol.theta_persp - lr * g_p, pol.theta_cell - lr * g_c)
    after = new.logprob(ctx, feats, persp, cell)[0]
    assert after[0] > lp[0, 0] and after[1] < lp[0, 1]


# ------------------------------------------------------------------ reward


def test_reward_matches_point_in_box():
    w, h = 4, 3
    for c in range(w * h):
        for t in range(w * h):
            via_box = point_in_box(cell_center(c, w), cell_box(t, w))
            assert reward(c, t) == int(via_box) == reward(cell_center(c, w), cell_box(t, w))


# ---------------------------------------------------------------- rollouts


def scene(seed=0):
    return sc.generate_scene(sc.SceneConfig(ambiguity_profile="mixed:0.3"), np.random.default_rng(seed))


def test_sample_rollouts_deterministic():
    pol = ToyPolicy.random(16, np.random.default_rng(0), 0.5)
    s = scene()
    a = sample_rollouts(pol, s, Perspective.GOAL, 8, np.random.default_rng(5))
    b = sample_rollouts(pol, s, Perspective.GOAL, 8, np.random.default_rng(5))
    assert a.rollouts == b.rollouts and np.array_equal(a.advantages, b.advantages)
    assert all(r.logprob_old <= 0 and r.reward in (0, 1) for r in a.rollouts)


def test_collapsed_policy_gives_identical_rollouts():
    pol = ToyPolicy.zeros(16)
    pol.theta_persp[-1, 0] = 200.0
    pol.theta_cell[0] = 0.0
    pol.theta_cell[0, :, 3] = 200.0
    g = sample_rollouts(pol, scene(1), Perspective.APPEARANCE, 8, np.random.default_rng(0))
    assert len({(r.perspective_choice, r.cell_choice) for r in g.rollouts}) == 1
    assert g.degenerate and not g.advantages.any()


def test_perspective_frequencies_match_softmax():
    pol = ToyPolicy.random(16, np.random.default_rng(2), 1.0)
    s = scene(2)
    from groundkit.grpo.policy import scene_context

    ctx = scene_context(s, Perspective.FUNCTION)
    n = 10_000
    g = sample_rollouts(pol, s, Perspective.FUNCTION, n, np.random.default_rng(9))
    counts = np.bincount([r.perspective_choice for r in g.rollouts], minlength=4)
    p = softmax(ctx @ pol.theta_persp)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)
