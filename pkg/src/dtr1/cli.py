"""Command-line front end.

Subcommands wrap the library modules one to one: parse, validate-plan,
score, mask, metrics, gen-fixtures, simulate-train, serve. Exit codes:
0 success, 1 validation failure, 2 usage error. `--format records` emits
canonical JSON lines for machine consumption.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .execution import ExecOutcome, MockJudge
from .grammar import RolloutParseError, parse_rollout, validate_order
from .grpo import TrainConfig, simulate_training, training_mask
from .harness import Difficulty, generate_tasks, materialize_task, run_eval
from .plan import ModelRegistry, default_registry, validate_plan_text
from .records import canonical_json, write_jsonl
from .reward import GroundTruth, RewardConfig, ScoreDeps
from .service import ServiceSettings, build_score_response, create_app


def _print_records(rows) -> None:
    for row in rows:
        print(canonical_json(row))


def _load_registry(path: Optional[str]) -> ModelRegistry:
    return ModelRegistry.load(path) if path else default_registry()


def _cmd_parse(args) -> int:
    text = Path(args.rollout).read_text(encoding="utf-8")
    try:
        seq = parse_rollout(text, strict=args.strict)
    except RolloutParseError as err:
        if args.format == "records":
            _print_records(
                [{"ok": False, "kind": err.kind.value, "position": err.position, "detail": err.detail}]
            )
        else:
            print(f"parse error: {err}")
        return 1
    row = {
        "ok": True,
        "kinds": [seg.kind.value for seg in seq.segments],
        "m": seq.iteration_count,
        "terminal": seq.terminal.value,
        "valid_order": validate_order(seq).ok,
    }
    if args.format == "records":
        _print_records([row])
    else:
        print(f"segments: {' '.join(row['kinds'])}")
        print(f"iterations: {row['m']}  terminal: {row['terminal']}  valid: {row['valid_order']}")
    return 0


def _cmd_validate_plan(args) -> int:
    text = Path(args.plan).read_text(encoding="utf-8")
    verdict = validate_plan_text(text, _load_registry(args.registry))
    if args.format == "records":
        _print_records([verdict.to_dict()])
    else:
        print(
            f"valid_format={verdict.valid_format} acyclic={verdict.acyclic} "
            f"valid_dependencies={verdict.valid_dependencies}"
        )
        for violation in verdict.violations:
            print(f"violation: {violation}")
        for note in verdict.notes:
            print(f"note: {note}")
    return 0 if verdict.all_valid else 1


def _cmd_score(args) -> int:
    rollout_text = Path(args.rollout).read_text(encoding="utf-8")
    gt_path = Path(args.gt)
    try:
        gt = GroundTruth.from_manifest(gt_path)
    except (OSError, ValueError, KeyError) as err:
        print(f"cannot load ground truth: {err}", file=sys.stderr)
        return 1
    replay = None
    if args.replay:
        raw = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        replay = [ExecOutcome.from_wire(item) for item in raw]
    cfg = RewardConfig(alpha=args.alpha, beta=args.beta)
    base_dir = Path(args.base_dir) if args.base_dir else (
        gt_path if gt_path.is_dir() else gt_path.parent
    )
    deps = ScoreDeps(
        registry=_load_registry(args.registry),
        judge=MockJudge(),
        exec_replay=replay,
        base_dir=base_dir,
    )
    body = build_score_response(rollout_text, gt, cfg, deps)
    if args.format == "records":
        _print_records([body])
    else:
        bd = body["breakdown"]
        for key in ("r_token", "r_dag", "r_exec", "r_task", "r_result"):
            print(f"{key} = {bd[key]}")
        print(f"total = {bd['total']}")
        for line in body["diagnostics"]:
            print(f"note: {line}")
    return 0


def _cmd_mask(args) -> int:
    text = Path(args.rollout).read_text(encoding="utf-8")
    try:
        mask = training_mask(parse_rollout(text))
    except RolloutParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return 1
    if args.format == "records":
        _print_records([mask.to_dict()])
    else:
        for start, end, trainable in mask.spans:
            print(f"{start:6d} {end:6d} {'train' if trainable else 'mask'}")
    return 0


def _cmd_metrics(args) -> int:
    try:
        report = run_eval(args.dataset)
    except ValueError as err:
        print(str(err), file=sys.stderr)
        return 2
    row = report.to_dict()
    if args.out:
        write_jsonl(args.out, [row])
    if args.format == "records":
        _print_records([row])
    else:
        print(f"samples: {report.sample_count}")
        for key, metric in sorted(report.reports.items()):
            print(f"{key}: gIoU={metric.giou:.4f} cIoU={metric.ciou:.4f}", end="")
            if metric.j_mean is not None:
                print(f" J={metric.j_mean:.4f} F={metric.f_mean:.4f}", end="")
            print()
        if report.reward_mean is not None:
            print(f"reward mean: {report.reward_mean:.4f}  format rate: {report.format_rate:.3f}")
        for line in report.missing:
            print(f"missing: {line}")
    return 1 if report.missing else 0


def _cmd_gen_fixtures(args) -> int:
    mix = None
    if args.difficulty:
        levels = [Difficulty(d.strip()) for d in args.difficulty.split(",") if d.strip()]
        mix = {level: 1.0 for level in levels}
    tasks = generate_tasks(seed=args.seed, count=args.count, mix=mix)
    out_root = Path(args.out)
    rows = []
    for task in tasks:
        paths = materialize_task(task, out_root / task.task_id)
        rows.append({"task_id": task.task_id, **paths})
    write_jsonl(out_root / "index.jsonl", rows)
    if args.format == "records":
        _print_records(rows)
    else:
        print(f"wrote {len(rows)} tasks under {out_root}")
    return 0


def _cmd_simulate_train(args) -> int:
    disabled = frozenset(
        part.strip() for part in (args.disable_rewards or "").split(",") if part.strip()
    )
    cfg = TrainConfig(
        iterations=args.iterations,
        group_size=args.group_size,
        lr=args.lr,
        seed=args.seed,
        alpha=args.alpha,
        beta=args.beta,
        disabled_components=disabled,
    )
    result = simulate_training(cfg)
    rows = [point.to_dict() for point in result.curve]
    if args.out:
        write_jsonl(args.out, rows)
    window = min(20, len(rows))
    first = sum(r["mean_reward"] for r in rows[:window]) / window
    last = sum(r["mean_reward"] for r in rows[-window:]) / window
    final_format = sum(r["format_rate"] for r in rows[-window:]) / window
    summary = {
        "iterations": len(rows),
        "first_window_mean": first,
        "last_window_mean": last,
        "final_format_rate": final_format,
    }
    if args.format == "records":
        _print_records([summary])
    else:
        print(
            f"mean reward {first:.3f} -> {last:.3f} over {len(rows)} iterations; "
            f"final format rate {final_format:.3f}"
        )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    settings = (
        ServiceSettings.from_file(args.config) if args.config else ServiceSettings()
    )
    if args.registry:
        settings = type(settings)(**{**settings.__dict__, "registry_path": args.registry})
    if args.host:
        settings = type(settings)(**{**settings.__dict__, "host": args.host})
    if args.port:
        settings = type(settings)(**{**settings.__dict__, "port": args.port})
    app = create_app(settings)
    uvicorn.run(app, host=settings.host, port=settings.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtr1", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", choices=("text", "records"), default="text")

    p = sub.add_parser("parse", help="parse and validate a rollout file")
    p.add_argument("--rollout", required=True)
    p.add_argument("--strict", action="store_true")
    add_format(p)
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("validate-plan", help="validate a construction plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--registry")
    add_format(p)
    p.set_defaults(func=_cmd_validate_plan)

    p = sub.add_parser("score", help="score a rollout against ground truth")
    p.add_argument("--rollout", required=True)
    p.add_argument("--gt", required=True, help="ground-truth manifest file or directory")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--registry")
    p.add_argument("--replay", help="execution replay file (wire outcomes)")
    p.add_argument("--base-dir")
    add_format(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("mask", help="training mask for a rollout")
    p.add_argument("--rollout", required=True)
    add_format(p)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("metrics", help="aggregate metrics over a dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    add_format(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("gen-fixtures", help="generate synthetic task fixtures")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--difficulty", help="comma-separated levels, e.g. L1,L2")
    add_format(p)
    p.set_defaults(func=_cmd_gen_fixtures)

    p = sub.add_parser("simulate-train", help="run the toy training loop")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--disable-rewards", help="comma-separated components, e.g. token,dag")
    p.add_argument("--out", help="curve records file (JSON lines)")
    add_format(p)
    p.set_defaults(func=_cmd_simulate_train)

    p = sub.add_parser("serve", help="run the scoring service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--registry")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(str(err), file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
