"""``groundkit`` command line.

Exit codes: 0 success, 1 operational error, 2 usage error. Diagnostics go
to stderr; data goes to files under ``--out`` (and summaries to stdout).
Every subcommand writes a ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from groundkit import __version__
from groundkit.config import AppConfig, ConfigError, load_config
from groundkit.grpo.scenes import ConfigError as SceneConfigError
from groundkit.jsonl import JsonlWriter, read_jsonl, write_json, write_jsonl
from groundkit.llm import EndpointError, MalformedReply
from groundkit.manifest import RunManifest

log = logging.getLogger("groundkit")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


# ----------------------------------------------------------- subcommands


def cmd_pipeline(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.pipeline import (
        PipelineConfig,
        build_rl_corpus,
        build_sft_corpus,
        emitted_samples,
        load_detections,
        load_samples,
        run_pipeline,
    )

    man.add_inputs([args.samples, args.detections])
    samples = load_samples(args.samples)
    detections = load_detections(args.detections) if args.detections else {}
    pcfg = PipelineConfig(
        iou_threshold=cfg.iou_refine if args.iou is None else args.iou,
        annotation_type=cfg.annotation_type,
        image_root=args.image_root or cfg.paths.get("image_root"),
        max_in_flight=args.max_in_flight,
    )
    out = _out(args)
    report = run_pipeline(samples, detections, cfg.endpoint(args.endpoint_profile), pcfg, out)
    kept = emitted_samples(report)
    sft, skipped = build_sft_corpus(kept, _seed(args))
    write_jsonl(out / "sft.jsonl", (e.to_json() for e in sft))
    write_jsonl(out / "rl.jsonl", (e.to_json() for e in build_rl_corpus(kept)))
    summary = report.to_json()
    summary["sft_examples"], summary["sft_skipped"] = len(sft), skipped
    print(json.dumps(summary, sort_keys=True, indent=2))
    return EXIT_OK


def _gts_and_tags(samples_path: str):
    from groundkit.pipeline import load_samples

    samples = load_samples(samples_path)
    return {s.id: s.gt_bbox for s in samples}, {s.id: s.tags for s in samples}, samples


def cmd_evaluate(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.evaluator import Prediction, grouped_report

    man.add_inputs([args.predictions, args.samples])
    preds = [Prediction.from_json(r) for r in read_jsonl(args.predictions)]
    gts, tags, _ = _gts_and_tags(args.samples)
    keys = [k for k in (args.group_by or "").split(",") if k]
    report = grouped_report(preds, gts, tags, keys)
    out = _out(args)
    write_json(out / "report.json", report.to_json())
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    table = report.render_table()
    (out / "table.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_ground(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.core import Instruction, Perspective
    from groundkit.evaluator import CorrectnessMatrix, ground, is_correct
    from groundkit.llm import make_endpoint, map_bounded

    man.add_inputs([args.samples])
    _, _, samples = _gts_and_tags(args.samples)
    wanted = None if args.perspectives == "all" else {Perspective.parse(p) for p in args.perspectives.split(",")}
    endpoint = make_endpoint(cfg.endpoint(args.endpoint_profile))
    jobs = [(s, Instruction(text, p)) for s in samples for p, text in s.instructions.items()
            if wanted is None or p in wanted]
    image_root = args.image_root or cfg.paths.get("image_root")
    preds = map_bounded(lambda job: ground(job[0], job[1], args.template, endpoint, image_root=image_root),
                        jobs, args.max_in_flight)
    out = _out(args)
    write_jsonl(out / "predictions.jsonl", (p.to_json() for p in preds))
    gts = {s.id: s.gt_bbox for s in samples}
    try:
        m = CorrectnessMatrix.from_predictions(preds, gts)
        write_jsonl(out / "matrix.jsonl", (
            {"sample_id": r, "correct": {c.value: v for c, v in zip(m.cols, row)}} for r, row in zip(m.rows, m.cells)
        ))
    except ValueError as e:
        log.warning("no correctness matrix: %s", e)
    n_ok = sum(is_correct(p, gts[p.sample_id]) for p in preds)
    print(f"{n_ok}/{len(preds)} correct")
    return EXIT_OK


def cmd_oracle(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.evaluator import CorrectnessMatrix, oracle_combined

    man.add_inputs([args.matrix])
    res = oracle_combined(CorrectnessMatrix.from_records(read_jsonl(args.matrix)))
    for p, acc in res.per_perspective.items():
        print(f"{p.value:12s} {acc:.4f}")
    print(f"{'combined':12s} {res.combined:.4f}")
    print(f"relative gain over {res.baseline.value}: {res.relative_gain:.4f}")
    write_json(_out(args) / "oracle.json", res.to_json())
    return EXIT_OK


def cmd_classify(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.evaluator import classify_reasoning

    man.add_inputs([args.responses])
    items = [(str(r["id"]), r["text"]) for r in read_jsonl(args.responses)]
    results, hist = classify_reasoning(items, cfg.endpoint(args.endpoint_profile), max_in_flight=args.max_in_flight)
    out = _out(args)
    write_jsonl(out / "tags.jsonl", (r.to_json() for r in results))
    write_json(out / "histogram.json", hist)
    print(json.dumps(hist, sort_keys=True))
    return EXIT_OK


def _parse_overrides(pairs: Sequence[str]) -> dict[str, Any]:
    import yaml

    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def cmd_toy_train(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.grpo.policy import ToyPolicy
    from groundkit.grpo.train import train_toy

    changes = _parse_overrides(args.set)
    if args.seed is not None:
        changes["seed"] = args.seed
    tcfg = cfg.preset(args.preset).with_overrides(**changes)
    init = None
    if args.init:
        man.add_inputs([args.init])
        init = ToyPolicy.load(args.init)
    man.config["train"] = tcfg.to_json()
    man.seed = tcfg.seed
    out = _out(args)
    with JsonlWriter(out / "metrics.jsonl") as w:
        result = train_toy(tcfg, args.regime, init=init, emit=w.write)
    result.policy.save(out / "policy.json", {"regime": args.regime, "preset": args.preset, "seed": tcfg.seed})
    summary = {"regime": args.regime, **result.final_eval()}
    if result.rl_records():
        summary["tail_zero_variance_fraction"] = result.tail_zero_variance()
    write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_grad_check(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.grpo.gradcheck import grad_check

    rep = grad_check(args.trials, _seed(args), args.h)
    write_json(_out(args) / "gradcheck.json", {**rep.to_json(), "tolerance": args.tol})
    ok = rep.worst < args.tol
    print(f"max relative error: sft {rep.max_rel_error_sft:.3e}, grpo {rep.max_rel_error_grpo:.3e} "
          f"({'PASS' if ok else 'FAIL'} at {args.tol:g})")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_agent_run(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.agent.device import MockDevice
    from groundkit.agent.loop import GroundingExecutor, RegionExecutor, run_episode
    from groundkit.llm import ScriptedEndpoint, make_endpoint

    if not args.device.startswith("mock:"):
        raise UsageError("only mock devices are supported: --device mock:scenario.json")
    scenario = args.device[len("mock:"):]
    man.add_inputs([scenario, args.script])
    device = MockDevice.from_file(scenario)
    if args.script:
        planner = ScriptedEndpoint([r["reply"] if isinstance(r, dict) else r for r in read_jsonl(args.script)])
    else:
        planner = make_endpoint(cfg.endpoint(args.planner or args.endpoint_profile))
    executor = RegionExecutor() if args.executor == "mock" else GroundingExecutor(cfg.endpoint(args.executor))
    max_steps = args.max_steps or cfg.agent.max_steps
    out = _out(args)
    res = run_episode(args.goal, planner, executor, device, max_steps=max_steps,
                      wait_seconds=cfg.agent.wait_seconds, transcript_path=out / "transcript.jsonl",
                      strict=args.strict)
    summary = {**res.to_json(), "success": device.success(), "final_state": device.state_snapshot()}
    write_json(out / "result.json", summary)
    print(json.dumps(res.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_gen_scenes(args, cfg: AppConfig, man: RunManifest) -> int:
    from groundkit.grpo.scenes import SceneConfig, dumps_scenes, gen_scenes

    try:
        w, h = (int(x) for x in args.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects WxH, got {args.grid!r}") from None
    scfg = SceneConfig(n_scenes=args.n, grid_w=w, grid_h=h, ambiguity_profile=args.profile)
    seed = _seed(args)
    man.seed = seed
    out = _out(args)
    scenes = gen_scenes(scfg, seed)
    (out / "scenes.jsonl").write_text(dumps_scenes(scenes), encoding="utf-8")
    print(f"wrote {len(scenes)} scenes")
    return EXIT_OK


COMMANDS: dict[str, Callable[..., int]] = {
    "pipeline": cmd_pipeline,
    "evaluate": cmd_evaluate,
    "ground": cmd_ground,
    "oracle": cmd_oracle,
    "classify": cmd_classify,
    "toy-train": cmd_toy_train,
    "grad-check": cmd_grad_check,
    "agent-run": cmd_agent_run,
    "gen-scenes": cmd_gen_scenes,
}


# ---------------------------------------------------------------- parser


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="random seed")
    p.add_argument("--out", default=d("out"), help="output directory (default: out)")
    p.add_argument("--config", action="append", default=d([]), help="YAML config file (repeatable)")
    p.add_argument("--endpoint-profile", default=d(None), help="named endpoint profile from the config")
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"groundkit {__version__}")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name: str, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        _globals(sp, suppress=True)
        return sp

    p = add("pipeline", "refine, augment and verify grounding samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--detections")
    p.add_argument("--iou", type=float)
    p.add_argument("--image-root")
    p.add_argument("--max-in-flight", type=int, default=4)

    p = add("evaluate", "point-in-box accuracy report for predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--group-by", help="comma-separated tag dimensions, e.g. platform,type")

    p = add("ground", "query a grounding endpoint for every instruction")
    p.add_argument("--samples", required=True)
    p.add_argument("--perspectives", default="original", help="comma-separated, or 'all'")
    p.add_argument("--template", choices=["sft", "rl"], default="rl")
    p.add_argument("--image-root")
    p.add_argument("--max-in-flight", type=int, default=4)

    p = add("oracle", "per-perspective and combined accuracy from a correctness matrix")
    p.add_argument("--matrix", required=True)

    p = add("classify", "tag grounding reasonings with the taxonomy")
    p.add_argument("--responses", required=True, help='JSONL of {"id", "text"}')
    p.add_argument("--max-in-flight", type=int, default=4)

    p = add("toy-train", "train the toy policy under a regime")
    p.add_argument("--regime", default="sft_diverse+rl")
    p.add_argument("--preset", default="toy")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training option")
    p.add_argument("--init", help="initial policy checkpoint")

    p = add("grad-check", "finite-difference check of the analytic gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)

    p = add("agent-run", "run one planner/executor episode")
    p.add_argument("--goal", required=True)
    p.add_argument("--planner", help="endpoint profile for the planner")
    p.add_argument("--script", help="JSONL of scripted planner replies (instead of --planner)")
    p.add_argument("--executor", default="mock", help="endpoint profile for grounding, or 'mock'")
    p.add_argument("--device", required=True, help="mock:scenario.json")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--strict", action="store_true", help="reject extra fields in planner actions")

    p = add("gen-scenes", "write synthetic toy scenes")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--grid", default="4x4")
    p.add_argument("--profile", default="mixed:0.3")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        flags = {}
        if getattr(args, "iou", None) is not None:
            flags["iou_refine"] = args.iou
        cfg = load_config(args.config, flags=flags)
        if args.endpoint_profile is not None:
            cfg.endpoint(args.endpoint_profile)
        man = RunManifest(args.command, argv, cfg.to_json(), args.seed)
        code = COMMANDS[args.command](args, cfg, man)
    except (UsageError, ConfigError, SceneConfigError) as e:
        print(f"groundkit {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, EndpointError, MalformedReply, ValueError, KeyError) as e:
        print(f"groundkit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    man.finish(args.out, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
