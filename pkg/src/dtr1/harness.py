"""Synthetic tasks, oracle rollouts, fixture materialization, evaluation.

Tasks are generated so their ground truth is analytically derivable from
the generated twin (nearest = argmin mean depth, largest = argmax pixel
count, and so on). The oracle writer emits a grammar-perfect rollout with
a valid plan and the correct answer for any task, which pins the reward
ceiling used by the trainer and the acceptance tests.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .execution import ExecOutcome, ExecRequest, TwinQueryExecutor
from .masks import BinaryMask, DepthMap, depth_stats, mask_encode, save_mask
from .metrics import BoundingBox, MetricReport, aggregate, mask_iou
from .records import canonical_json, read_jsonl, write_sidecar
from .reward import GroundTruth, RewardConfig, ScoreDeps, TaskType, score
from .grammar import TagKind, parse_rollout
from .grpo import VALID_PLAN_TEXT
from .plan import default_registry
from .twin import DigitalTwin, FrameRecord, InstanceRecord, dt_to_text, save_twin


class Difficulty(Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    L4 = "L4"


_DIFFICULTY_SHAPE = {
    Difficulty.L1: {"instances": 2, "frames": 1, "exec_steps": 1},
    Difficulty.L2: {"instances": 3, "frames": 1, "exec_steps": 1},
    Difficulty.L3: {"instances": 4, "frames": 2, "exec_steps": 2},
    Difficulty.L4: {"instances": 6, "frames": 2, "exec_steps": 2},
}

_LABELS = ("mug", "book", "plant", "lamp", "ball", "box", "cup", "shoe")
_DEPTH_LEVELS = (2.0, 3.5, 5.0, 6.5, 8.0, 9.5)
_BACKGROUND_DEPTH = 12.0
_CANVAS = 24

_QUERY_RULES = ("nearest", "farthest", "largest", "leftmost")


@dataclass(frozen=True)
class SyntheticTask:
    task_id: str
    query: str
    twin: DigitalTwin
    ground_truth: GroundTruth
    difficulty: Difficulty
    target_instance_id: int
    program: str
    programs: tuple[str, ...]
    plan_text: str = VALID_PLAN_TEXT


@dataclass(frozen=True)
class OracleRollout:
    text: str
    exec_outcomes: tuple[ExecOutcome, ...]


def _place_rects(rng: random.Random, count: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping rectangles (x0, y0, x1, y1) on the canvas."""
    rects: list[tuple[int, int, int, int]] = []
    attempts = 0
    while len(rects) < count:
        attempts += 1
        if attempts > 500:
            raise RuntimeError("could not place instances without overlap")
        w = rng.randint(3, 6)
        h = rng.randint(3, 6)
        x0 = rng.randint(0, _CANVAS - w)
        y0 = rng.randint(0, _CANVAS - h)
        candidate = (x0, y0, x0 + w, y0 + h)
        if all(
            candidate[2] + 1 <= r[0] or r[2] + 1 <= candidate[0]
            or candidate[3] + 1 <= r[1] or r[3] + 1 <= candidate[1]
            for r in rects
        ):
            rects.append(candidate)
    return rects


def _rect_mask(rect: tuple[int, int, int, int]) -> BinaryMask:
    grid = np.zeros((_CANVAS, _CANVAS), dtype=np.uint8)
    x0, y0, x1, y1 = rect
    grid[y0:y1, x0:x1] = 1
    return mask_encode(grid)


def _pick_target(rule: str, instances: Sequence[dict]) -> int:
    if rule == "nearest":
        return min(instances, key=lambda i: i["depth"])["instance_id"]
    if rule == "farthest":
        return max(instances, key=lambda i: i["depth"])["instance_id"]
    if rule == "largest":
        return max(instances, key=lambda i: i["mask"].pixel_count)["instance_id"]
    return min(instances, key=lambda i: i["rect"][0])["instance_id"]


def _build_twin(rng: random.Random, difficulty: Difficulty) -> tuple[DigitalTwin, list[dict]]:
    shape = _DIFFICULTY_SHAPE[difficulty]
    n = shape["instances"]
    frames_count = shape["frames"]
    rects = _place_rects(rng, n)
    labels = rng.sample(_LABELS, n)
    depths = rng.sample(_DEPTH_LEVELS, n)
    depth_grid = np.full((_CANVAS, _CANVAS), _BACKGROUND_DEPTH, dtype=np.float64)
    raw_instances = []
    for idx, (rect, label, depth_value) in enumerate(zip(rects, labels, depths), start=1):
        x0, y0, x1, y1 = rect
        depth_grid[y0:y1, x0:x1] = depth_value
        raw_instances.append(
            {
                "instance_id": idx,
                "label": label,
                "rect": rect,
                "depth": depth_value,
                "mask": _rect_mask(rect),
            }
        )
    depth_map = DepthMap(_CANVAS, _CANVAS, depth_grid)

    def instance_record(raw: dict) -> InstanceRecord:
        stats = depth_stats(raw["mask"], depth_map)
        return InstanceRecord(
            instance_id=raw["instance_id"],
            label=raw["label"],
            description=f"a {raw['label']} at relative depth {raw['depth']}",
            bbox=BoundingBox.from_list([float(v) for v in raw["rect"]]),
            mask=raw["mask"],
            depth=stats,
        )

    listing = ", ".join(f"a {raw['label']}" for raw in raw_instances)
    frames = tuple(
        FrameRecord(
            t=t,
            scene_description=f"frame {t} shows {listing}",
            spatial_description=f"{n} rectangular objects on a flat background",
            instances=tuple(instance_record(raw) for raw in raw_instances),
        )
        for t in range(frames_count)
    )
    twin = DigitalTwin(
        global_description=f"a static scene containing {listing}",
        frame_count=frames_count,
        frames=frames,
        source_refs=tuple(f"frames/frame_{t}.png" for t in range(frames_count)),
    )
    return twin, raw_instances


def generate_tasks(
    seed: int,
    count: int,
    mix: Optional[Mapping[Difficulty, float]] = None,
    task_types: Optional[Sequence[TaskType]] = None,
) -> list[SyntheticTask]:
    """Deterministic synthetic task list for a seed."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = random.Random(seed)
    mix = mix or {Difficulty.L1: 0.4, Difficulty.L2: 0.3, Difficulty.L3: 0.2, Difficulty.L4: 0.1}
    difficulties = list(mix.keys())
    weights = [mix[d] for d in difficulties]
    types = tuple(task_types) if task_types else (
        TaskType.SEGMENTATION,
        TaskType.GROUNDING,
        TaskType.VQA,
        TaskType.SUMMARIZATION,
    )
    tasks = []
    for index in range(count):
        difficulty = rng.choices(difficulties, weights=weights, k=1)[0]
        task_type = types[index % len(types)]
        twin, raw_instances = _build_twin(rng, difficulty)
        rule = rng.choice(_QUERY_RULES)
        target = _pick_target(rule, raw_instances)
        frames_count = twin.frame_count
        shape = _DIFFICULTY_SHAPE[difficulty]

        others = [r["instance_id"] for r in raw_instances if r["instance_id"] != target]
        program = f"mean_depth({target}, 0) < mean_depth({others[0]}, 0)"
        programs = [program]
        if shape["exec_steps"] > 1:
            programs.append("instance_count(0)")

        if task_type is TaskType.SEGMENTATION:
            query = f"segment the {rule} object"
            gt = GroundTruth(
                task_type=task_type,
                masks={
                    t: twin.frames[t].instance(target).mask for t in range(frames_count)
                },
            )
        elif task_type is TaskType.GROUNDING:
            query = f"put a box around the {rule} object"
            gt = GroundTruth(
                task_type=task_type,
                box=twin.frames[0].instance(target).bbox,
                frames=tuple(range(frames_count)),
            )
        elif task_type is TaskType.VQA:
            query = "how many objects are visible in the first frame"
            gt = GroundTruth(task_type=task_type, reference=str(len(raw_instances)))
            programs = [f"instance_count(0)"]
            program = programs[0]
        else:
            query = "summarize the visible scene"
            gt = GroundTruth(task_type=task_type, reference=twin.global_description)

        tasks.append(
            SyntheticTask(
                task_id=f"task-{seed}-{index:04d}",
                query=query,
                twin=twin,
                ground_truth=gt,
                difficulty=difficulty,
                target_instance_id=target,
                program=program,
                programs=tuple(programs),
            )
        )
    return tasks


_TASK_LABEL = {
    TaskType.SEGMENTATION: "reasoning segmentation",
    TaskType.GROUNDING: "reasoning grounding",
    TaskType.SUMMARIZATION: "reasoning summarization",
    TaskType.VQA: "reasoning visual question answering",
}


def _oracle_answer(task: SyntheticTask, mask_paths: Optional[Mapping[int, str]] = None) -> str:
    gt = task.ground_truth
    twin = task.twin
    target = task.target_instance_id
    if gt.task_type is TaskType.SEGMENTATION:
        inst0 = twin.frames[0].instance(target)
        if mask_paths is not None:
            payload = {"mask_paths": {str(t): mask_paths[t] for t in sorted(mask_paths)}}
        else:
            payload = {
                "masks": {
                    str(t): twin.frames[t].instance(target).mask.to_dict()
                    for t in sorted(gt.masks.keys())
                }
            }
        return canonical_json({"instances": [{"name": inst0.label, **payload}]})
    if gt.task_type is TaskType.GROUNDING:
        inst0 = twin.frames[0].instance(target)
        boxes = {
            str(t): twin.frames[t].instance(target).bbox.to_list() for t in gt.frames
        }
        return canonical_json({"instances": [{"name": inst0.label, "boxes": boxes}]})
    return gt.reference or ""


def oracle_rollout(
    task: SyntheticTask,
    mask_paths: Optional[Mapping[int, str]] = None,
    twin_text: Optional[str] = None,
) -> OracleRollout:
    """Grammar-perfect rollout with a valid plan and the correct answer."""
    executor = TwinQueryExecutor(task.twin)
    lines = [
        f"<think>The query is: {task.query}. Select models for masks, depth and semantics.</think>",
        f"<dt_plan>{task.plan_text}</dt_plan>",
        f"<dt_rep>{twin_text if twin_text is not None else dt_to_text(task.twin)}</dt_rep>",
    ]
    outcomes = []
    for step, program in enumerate(task.programs):
        outcome = executor.run(ExecRequest(code=program))
        outcomes.append(outcome)
        result = f"OK: {outcome.output}" if outcome.success else f"ERR: {outcome.error_line}"
        lines.append(f"<think>Reasoning step {step + 1}: inspect the twin statistics.</think>")
        lines.append(f"<execute>{program}</execute>")
        lines.append(f"<results>{result}</results>")
    lines.append(f"<task>{_TASK_LABEL[task.ground_truth.task_type]}</task>")
    lines.append(f"<answer>{_oracle_answer(task, mask_paths)}</answer>")
    return OracleRollout(text="\n".join(lines), exec_outcomes=tuple(outcomes))


def materialize_task(task: SyntheticTask, out_dir: str | Path) -> dict:
    """Write a task to disk: path-referenced twin, ground truth manifest,
    oracle rollout with sidecar descriptor, and an execution replay file."""
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)

    path_frames = []
    answer_paths: dict[int, str] = {}
    for frame in task.twin.frames:
        records = []
        for inst in frame.instances:
            rel = f"masks/inst{inst.instance_id}_f{frame.t}.rle"
            save_mask(inst.mask, out / rel)
            if inst.instance_id == task.target_instance_id:
                answer_paths[frame.t] = rel
            records.append(
                InstanceRecord(
                    instance_id=inst.instance_id,
                    label=inst.label,
                    description=inst.description,
                    bbox=inst.bbox,
                    mask_path=rel,
                    depth=inst.depth,
                )
            )
        path_frames.append(
            FrameRecord(
                t=frame.t,
                scene_description=frame.scene_description,
                spatial_description=frame.spatial_description,
                instances=tuple(records),
            )
        )
    path_twin = DigitalTwin(
        global_description=task.twin.global_description,
        frame_count=task.twin.frame_count,
        frames=tuple(path_frames),
        source_refs=task.twin.source_refs,
    )
    save_twin(path_twin, out / "twin.json")

    gt = task.ground_truth
    manifest: dict = {"schema": "dtr1-gt/1", "task_type": gt.task_type.value}
    if gt.task_type is TaskType.SEGMENTATION:
        gt_paths = {}
        for t, mask in sorted(gt.masks.items()):
            rel = f"gt/f{t}.rle"
            save_mask(mask, out / rel)
            gt_paths[str(t)] = rel
        manifest["masks"] = gt_paths
    elif gt.task_type is TaskType.GROUNDING:
        manifest["box"] = gt.box.to_list()
        manifest["frames"] = list(gt.frames)
    else:
        manifest["reference"] = gt.reference
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")

    rollout = oracle_rollout(
        task,
        mask_paths=answer_paths if gt.task_type is TaskType.SEGMENTATION else None,
    )
    (out / "rollout.txt").write_text(rollout.text, encoding="utf-8")
    seq = parse_rollout(rollout.text)
    write_sidecar(
        out / "rollout.meta",
        {
            "kinds": ",".join(seg.kind.value for seg in seq.segments),
            "m": seq.iteration_count,
            "terminal": seq.terminal.value,
            "task_type": gt.task_type.value,
            "difficulty": task.difficulty.value,
        },
    )
    (out / "replay.json").write_text(
        canonical_json([o.to_wire() for o in rollout.exec_outcomes]) + "\n",
        encoding="utf-8",
    )
    return {
        "dir": str(out),
        "twin": str(out / "twin.json"),
        "manifest": str(out / "manifest.json"),
        "rollout": str(out / "rollout.txt"),
        "replay": str(out / "replay.json"),
    }


# ---------------------------------------------------------------------------
# Dataset evaluation.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    sample_count: int
    reports: Mapping[str, MetricReport]  # keyed by task type and type/difficulty
    reward_mean: Optional[float]
    format_rate: Optional[float]
    missing: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
            "reward_mean": self.reward_mean,
            "format_rate": self.format_rate,
            "missing": list(self.missing),
        }


def _load_pairs(sample_dir: Path, manifest: dict, missing: list[str]):
    from .masks import load_mask

    task_type = manifest.get("task_type")
    pairs = []
    if task_type == "segmentation":
        pred = manifest.get("pred_masks", {})
        gt = manifest.get("gt_masks", {})
        for key in sorted(gt):
            pred_path = pred.get(key)
            if pred_path is None:
                missing.append(f"{sample_dir.name}: no prediction for frame {key}")
                return None
            try:
                pairs.append(
                    (load_mask(sample_dir / pred_path), load_mask(sample_dir / gt[key]))
                )
            except (OSError, ValueError) as err:
                missing.append(f"{sample_dir.name}: {err}")
                return None
    elif task_type == "grounding":
        pred = manifest.get("pred_boxes", {})
        gt = manifest.get("gt_boxes", {})
        for key in sorted(gt):
            if key not in pred:
                missing.append(f"{sample_dir.name}: no prediction for frame {key}")
                return None
            pairs.append(
                (BoundingBox.from_list(pred[key]), BoundingBox.from_list(gt[key]))
            )
    else:
        missing.append(f"{sample_dir.name}: unsupported task type {task_type!r}")
        return None
    return pairs


def run_eval(dataset_dir: str | Path) -> EvalReport:
    """Aggregate metrics (and rewards, when rollouts are present) over a
    dataset directory of per-sample manifests."""
    root = Path(dataset_dir)
    sample_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not sample_dirs:
        raise ValueError(f"no sample directories under {root}")
    missing: list[str] = []
    grouped: dict[str, list] = {}
    reward_totals: list[float] = []
    format_flags: list[bool] = []
    registry = default_registry()
    from .execution import MockJudge

    judge = MockJudge()
    count = 0
    for sample_dir in sample_dirs:
        manifest_path = sample_dir / "manifest.json"
        if not manifest_path.exists():
            missing.append(f"{sample_dir.name}: manifest.json missing")
            continue
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        count += 1
        pairs = _load_pairs(sample_dir, manifest, missing)
        if pairs:
            task_type = manifest["task_type"]
            grouped.setdefault(task_type, []).extend(pairs)
            difficulty = manifest.get("difficulty")
            if difficulty:
                grouped.setdefault(f"{task_type}/{difficulty}", []).extend(pairs)
        rollout_rel = manifest.get("rollout")
        gt_rel = manifest.get("gt_manifest")
        if rollout_rel and gt_rel:
            try:
                rollout_text = (sample_dir / rollout_rel).read_text(encoding="utf-8")
                gt = GroundTruth.from_manifest(sample_dir / gt_rel)
            except (OSError, ValueError) as err:
                missing.append(f"{sample_dir.name}: {err}")
                continue
            deps = ScoreDeps(registry=registry, judge=judge, base_dir=sample_dir)
            bd = score(rollout_text, gt, RewardConfig(), deps)
            reward_totals.append(bd.total)
            format_flags.append(bd.r_token > 0)
    reports = {key: aggregate(pairs) for key, pairs in grouped.items() if pairs}
    return EvalReport(
        sample_count=count,
        reports=reports,
        reward_mean=(sum(reward_totals) / len(reward_totals)) if reward_totals else None,
        format_rate=(
            sum(1 for f in format_flags if f) / len(format_flags) if format_flags else None
        ),
        missing=tuple(missing),
    )
