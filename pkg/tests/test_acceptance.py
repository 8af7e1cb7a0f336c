"""The eleven acceptance criteria, each at its stated tolerance and time budget.

Each test records one PASS/FAIL line, printed in the terminal summary::

    pytest tests/test_acceptance.py
"""

import json
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from groundkit.agent.actions import Scroll, parse_planner_turn
from groundkit.agent.device import MockDevice
from groundkit.agent.loop import FixedExecutor, RegionExecutor, execute, replay_transcript, run_episode
from groundkit.cli import main
from groundkit.core import BBox, Perspective, Point
from groundkit.evaluator import CorrectnessMatrix, Prediction, accuracy, grouped_report, oracle_combined, parse_response
from groundkit.grpo.gradcheck import grad_check
from groundkit.grpo.objectives import Rollout, RolloutGroup, grpo_loss, normalize_advantages
from groundkit.grpo.train import TOY, train_toy
from groundkit.llm import MockEndpoint, ScriptedEndpoint
from groundkit.pipeline import emitted_samples, run_pipeline
from helpers import (
    ACTION_ROWS,
    WORKED_ASSISTANT,
    dir_digests,
    pipeline_fixture,
    selective_verifier,
    write_pipeline_inputs,
    write_png,
)
from test_agent import SCENARIO, SCRIPT
from test_evaluator import MALFORMED

SEEDS = (0, 7, 42)


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, detail


def test_c01_advantage_normalization():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_mean = worst_std = 0.0
    degenerate = nondeg = 0
    ok = True
    for _ in range(10_000):
        G = int(rng.integers(2, 17))
        r = (rng.random(G) < rng.random()).astype(float)
        a = normalize_advantages(r)
        if np.all(r == r[0]):
            degenerate += 1
            ok &= bool(np.all(a == 0))
        else:
            nondeg += 1
            worst_mean = max(worst_mean, abs(a.mean()))
            worst_std = max(worst_std, abs(a.std() - 1))
    dt = time.perf_counter() - t0
    ok &= worst_mean <= 1e-12 and worst_std <= 1e-9 and dt < 5
    verdict(1, ok, f"{nondeg} groups |mean|<={worst_mean:.1e} |std-1|<={worst_std:.1e}, "
                   f"{degenerate} degenerate all-zero, {dt:.2f}s")


def test_c02_gradient_check():
    t0 = time.perf_counter()
    rep = grad_check(trials=100, seed=0, h=1e-5)
    dt = time.perf_counter() - t0
    verdict(2, rep.worst < 1e-5 and dt < 60,
            f"max rel error sft {rep.max_rel_error_sft:.2e}, grpo {rep.max_rel_error_grpo:.2e} over 100 trials, {dt:.1f}s")


def _group(ratios, adv):
    return RolloutGroup([Rollout(0, 0, -1.0, -1.0 + float(np.log(q)), 0) for q in ratios], np.array(adv, float))


def test_c03_grpo_loss_fixtures():
    zero = grpo_loss(_group([1.7, 0.4, 2.2], [0, 0, 0]))
    unit = grpo_loss(_group([1, 1, 1, 1], normalize_advantages([1, 0, 1, 1])))
    hand = grpo_loss(_group([2.0, 1.0], [1, -1]))
    ok = abs(zero) <= 1e-12 and abs(unit) <= 1e-12 and abs(hand + 0.5) <= 1e-12
    verdict(3, ok, f"zero-adv {zero:.1e}, unit-ratio {unit:.1e}, hand case {hand:.12f}")


def test_c04_oracle_dominance_and_fixture():
    rng = random.Random(0)
    cols = tuple(Perspective)
    dominated = True
    for _ in range(10_000):
        n, k = rng.randint(1, 12), rng.randint(1, 5)
        p = rng.random()
        cells = tuple(tuple(rng.random() < p for _ in range(k)) for _ in range(n))
        r = oracle_combined(CorrectnessMatrix(tuple(map(str, range(n))), cols[:k], cells))
        dominated &= r.combined >= max(r.per_perspective.values())
    # 20 rows; rows 9..19 fail everywhere
    true_rows = {
        Perspective.ORIGINAL: {0, 1, 2, 3, 4, 5},
        Perspective.APPEARANCE: {0, 1, 2, 6, 7},
        Perspective.FUNCTION: {0, 1, 3, 4, 6, 7, 8},
        Perspective.SPATIAL: {1, 2, 3, 4, 5, 8},
        Perspective.GOAL: {0, 2, 6, 7, 8, 5},
    }
    order = tuple(true_rows)
    m = CorrectnessMatrix(tuple(f"r{i}" for i in range(20)), order,
                          tuple(tuple(i in true_rows[c] for c in order) for i in range(20)))
    r = oracle_combined(m)
    per_ok = all(0.25 <= v <= 0.35 for v in r.per_perspective.values())
    hand = (Fraction(9, 20) - Fraction(6, 20)) / Fraction(6, 20)
    ok = dominated and per_ok and r.combined == 0.45 and abs(r.relative_gain - float(hand)) <= 1e-9
    verdict(4, ok, f"dominance over 10000 matrices: {dominated}; fixture combined {r.combined:.2f}, "
                   f"gain {r.relative_gain:.12f} vs hand {float(hand)}")


def _pred(i, point):
    return Prediction(f"s{i}", Perspective.ORIGINAL, "", point, fail_reason=None if point else "missing_tool_call")


def test_c05_metric_fixtures():
    gts = {f"s{i}": BBox(0, 0, 10, 10) for i in range(10)}
    a = accuracy([_pred(i, Point(5, 5) if i < 7 else Point(50, 5)) for i in range(10)], gts)
    b = accuracy([_pred(i, gts[f"s{i}"].center()) for i in range(10)], gts)
    c = accuracy([_pred(i, None) for i in range(3)] + [_pred(i, Point(1, 1) if i < 8 else Point(20, 20))
                                                       for i in range(3, 10)], gts)
    rng = random.Random(1)
    identity = True
    for _ in range(1000):
        n = rng.randint(1, 50)
        g = {f"s{i}": BBox(0, 0, 10, 10) for i in range(n)}
        preds = [_pred(i, rng.choice([Point(1, 1), Point(11, 1), None])) for i in range(n)]
        tags = {f"s{i}": {f"part:{rng.randrange(rng.randint(1, 7))}"} for i in range(n)}
        rep = grouped_report(preds, g, tags, ["part"])
        weighted = sum(Fraction(s.total, n) * s.exact for s in rep.groups.values())
        identity &= weighted == Fraction(rep.correct, n) == Fraction(sum(
            1 for p in preds if p.parsed_point == Point(1, 1)), n)
    ok = (a, b, c) == (0.70, 1.0, 0.50) and identity
    verdict(5, ok, f"accuracy {a}, {b}, {c}; weighted-mean identity on 1000 partitions: {identity}")


def test_c06_parser_goldens():
    r = parse_response(WORKED_ASSISTANT)
    golden = r.point == Point(588, 67) and "red 'C' icon" in (r.reasoning or "")
    wrong = [raw for raw, reason in MALFORMED if parse_response(raw).fail_reason != reason]
    trips = 0
    for row in ACTION_ROWS:
        a = parse_planner_turn(f"Thought: t\nAction: {row}").action
        trips += a.to_json() == json.loads(row) and parse_planner_turn(f"Action: {a.dumps()}").action == a
    ok = golden and not wrong and len(MALFORMED) == 20 and trips == 10
    verdict(6, ok, f"worked example -> {r.point}; {20 - len(wrong)}/20 malformed reasons; {trips}/10 action rows")


def test_c07_pipeline_conservation(tmp_path):
    png = write_png(tmp_path / "shot.png")
    samples, dets = pipeline_fixture(str(png), n=1000, flawed=233)
    t0 = time.perf_counter()
    rep = run_pipeline(samples, dets, MockEndpoint(selective_verifier()))
    dt = time.perf_counter() - t0
    kept = emitted_samples(rep)
    all_pass = all(
        s.extra["verification"][p.value]["is_unique"] and s.extra["verification"][p.value]["bbox_ok"]
        for s in kept for p in s.instructions
    )
    ok = rep.dropped_refine == 233 and rep.conserved() and all_pass and rep.emitted == 767 and dt < 30
    verdict(7, ok, f"dropped_refine={rep.dropped_refine}, emitted={rep.emitted}, "
                   f"verify rejections={rep.verify_rejections}, conserved={rep.conserved()}, {dt:.1f}s")


@pytest.fixture(scope="module")
def regime_runs():
    t0 = time.perf_counter()
    runs = {seed: {reg: train_toy(TOY.with_overrides(seed=seed), reg)
                   for reg in ("sft_diverse+rl", "sft_coords_only+rl", "sft_diverse", "none")}
            for seed in SEEDS}
    return runs, time.perf_counter() - t0


def test_c08_policy_collapse(regime_runs):
    runs, dt = regime_runs
    ok, parts = dt < 600, []
    for seed, r in runs.items():
        d, c = r["sft_diverse+rl"].final_eval(), r["sft_coords_only+rl"].final_eval()
        zv = r["sft_coords_only+rl"].tail_zero_variance(0.2)
        ok &= d["eval_accuracy"] > c["eval_accuracy"] and d["rollout_entropy"] > c["rollout_entropy"] and zv >= 0.5
        parts.append(f"seed {seed}: acc {d['eval_accuracy']:.3f}>{c['eval_accuracy']:.3f} "
                     f"ent {d['rollout_entropy']:.3f}>{c['rollout_entropy']:.3f} zero-var {zv:.2f}")
    verdict(8, ok, "; ".join(parts) + f"; {dt:.0f}s")


def test_c09_stage_ablation(regime_runs):
    runs, _ = regime_runs
    ok, parts = True, []
    for seed, r in runs.items():
        full = r["sft_diverse+rl"].final_eval()["eval_accuracy"]
        sft = r["sft_diverse"].final_eval()["eval_accuracy"]
        none = r["none"].final_eval()["eval_accuracy"]
        ok &= full >= sft >= none
        parts.append(f"seed {seed}: {full:.3f} >= {sft:.3f} >= {none:.3f}")
    verdict(9, ok, "; ".join(parts))


def test_c10_agent_episode():
    t0 = time.perf_counter()
    d = MockDevice.from_file(SCENARIO)
    res = run_episode("Turn on Wi-Fi", ScriptedEndpoint(SCRIPT), RegionExecutor(), d, sleep=lambda s: None)
    replayed = replay_transcript(res.transcript, MockDevice.from_file(SCENARIO))
    same = replayed.state_snapshot() == d.state_snapshot()
    probe = MockDevice.from_file(SCENARIO)
    execute(Scroll("down"), probe, FixedExecutor([]))
    dt = time.perf_counter() - t0
    ok = res.status == "complete" and res.steps == 3 and same and probe.calls == [["swipe", "up"]] and dt < 5
    verdict(10, ok, f"status {res.status} in {res.steps} steps, replay identical: {same}, "
                    f"scroll down -> {probe.calls}, {dt:.2f}s")


def test_c11_determinism(tmp_path):
    s, d = write_pipeline_inputs(tmp_path, n=60, flawed=14)
    commands = {
        "toy-train": ["toy-train", "--preset", "toy", "--seed", "7"],
        "gen-scenes": ["gen-scenes", "--n", "200", "--seed", "7"],
        "pipeline": ["pipeline", "--samples", str(s), "--detections", str(d), "--seed", "7"],
    }
    same = {}
    for name, argv in commands.items():
        digests = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            assert main([*argv, "--out", str(out)]) == 0
            digests.append(dir_digests(out))
        same[name] = digests[0] == digests[1] and len(digests[0]) > 0
    verdict(11, all(same.values()), ", ".join(f"{k} identical: {v}" for k, v in same.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
