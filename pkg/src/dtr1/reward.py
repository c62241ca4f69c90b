"""Rule-based reward for structured rollouts.

Total reward:

    total = alpha * (r_token + r_dag) + beta * (r_exec + r_task + r_result)

with the component values:

    r_token   +1 if the rollout text passes strict grammar validation, else -1
    r_dag     +0.5 if the plan is well-formed, acyclic, and uses only known
              models with valid dependency kinds, else -0.5
    r_exec    0 if all code blocks executed successfully (vacuously 0 with
              none), else -0.5; a per-failing-block sum mode exists as a
              variant
    r_task    +0.25 if the declared task label matches the ground-truth task
              category, else 0
    r_result  +1 for a correct final answer, else -1; geometric tasks decide
              by IoU strictly greater than the threshold, text tasks by the
              judge

Components other than r_token are computed from best-effort (lenient)
extraction so malformed rollouts still receive dag/exec/task/result signal.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .execution import ExecOutcome, ExecRequest, JudgeClient, JudgeRequest, execute
from .grammar import (
    RolloutParseError,
    RolloutSequence,
    TagKind,
    first_tag_content,
    parse_rollout,
    scan_tag_pairs,
)
from .masks import BinaryMask, load_mask
from .metrics import BoundingBox, bbox_iou, mask_iou
from .plan import DagVerdict, ModelRegistry, validate_plan_text

logger = logging.getLogger(__name__)

REWARD_SCHEMA = "dtr1-reward/1"


class TaskType(Enum):
    SEGMENTATION = "segmentation"
    GROUNDING = "grounding"
    SUMMARIZATION = "summarization"
    VQA = "vqa"


_TASK_SYNONYMS = {
    "segmentation": TaskType.SEGMENTATION,
    "grounding": TaskType.GROUNDING,
    "summarization": TaskType.SUMMARIZATION,
    "visual question answering": TaskType.VQA,
    "vqa": TaskType.VQA,
}


def normalize_task_label(label: str) -> Optional[TaskType]:
    """Map a declared task label onto a task category, or None."""
    cleaned = " ".join(
        tok for tok in label.strip().lower().split() if tok != "reasoning"
    )
    mapped = _TASK_SYNONYMS.get(cleaned)
    if mapped is not None and cleaned != mapped.value:
        logger.debug("task label %r normalized to %s", label, mapped.value)
    return mapped


class ExecPenaltyMode(Enum):
    ANY_FAILURE = "any_failure"
    PER_BLOCK_SUM = "per_block_sum"


class SegFrameRule(Enum):
    """How per-frame segmentation IoUs combine before the threshold test:
    mean over annotated frames (default) or every frame individually."""

    MEAN = "mean"
    PER_FRAME = "per_frame"


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 1.0
    beta: float = 1.0
    iou_threshold: float = 0.5
    exec_penalty_mode: ExecPenaltyMode = ExecPenaltyMode.ANY_FAILURE
    seg_frame_rule: SegFrameRule = SegFrameRule.MEAN

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("weights must be finite")
        if not (0 < self.iou_threshold < 1):
            raise ValueError("iou_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    task_type: TaskType
    masks: Optional[Mapping[int, BinaryMask]] = None
    box: Optional[BoundingBox] = None
    frames: Optional[tuple[int, ...]] = None
    reference: Optional[str] = None

    def __post_init__(self):
        if self.task_type is TaskType.SEGMENTATION:
            if not self.masks:
                raise ValueError("segmentation ground truth needs per-frame masks")
        elif self.task_type is TaskType.GROUNDING:
            if self.box is None or not self.frames:
                raise ValueError("grounding ground truth needs a box and a frame interval")
        else:
            if self.reference is None:
                raise ValueError(f"{self.task_type.value} ground truth needs a reference text")

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Optional[str | Path] = None) -> "GroundTruth":
        task_type = TaskType(data["task_type"])
        masks = None
        if "masks" in data and data["masks"] is not None:
            masks = {}
            for key, value in data["masks"].items():
                if isinstance(value, str):
                    path = Path(value)
                    if base_dir is not None and not path.is_absolute():
                        path = Path(base_dir) / path
                    masks[int(key)] = load_mask(path)
                else:
                    masks[int(key)] = BinaryMask.from_dict(value)
        box = BoundingBox.from_list(data["box"]) if data.get("box") is not None else None
        frames = tuple(int(t) for t in data["frames"]) if data.get("frames") else None
        return cls(
            task_type=task_type,
            masks=masks,
            box=box,
            frames=frames,
            reference=data.get("reference"),
        )

    @classmethod
    def from_manifest(cls, path: str | Path) -> "GroundTruth":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class RewardBreakdown:
    r_token: float
    r_dag: float
    r_exec: float
    r_task: float
    r_result: float
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def r_format(self) -> float:
        return self.r_token + self.r_dag

    @property
    def r_accuracy(self) -> float:
        return self.r_exec + self.r_task + self.r_result

    @property
    def total(self) -> float:
        return self.alpha * self.r_format + self.beta * self.r_accuracy

    def to_record(self) -> dict:
        return {
            "schema": REWARD_SCHEMA,
            "r_token": self.r_token,
            "r_dag": self.r_dag,
            "r_exec": self.r_exec,
            "r_task": self.r_task,
            "r_result": self.r_result,
            "r_format": self.r_format,
            "r_accuracy": self.r_accuracy,
            "alpha": self.alpha,
            "beta": self.beta,
            "total": self.total,
        }

    @classmethod
    def from_record(cls, data: Mapping) -> "RewardBreakdown":
        if data.get("schema") != REWARD_SCHEMA:
            raise ValueError(f"expected schema {REWARD_SCHEMA!r}")
        breakdown = cls(
            r_token=float(data["r_token"]),
            r_dag=float(data["r_dag"]),
            r_exec=float(data["r_exec"]),
            r_task=float(data["r_task"]),
            r_result=float(data["r_result"]),
            alpha=float(data.get("alpha", 1.0)),
            beta=float(data.get("beta", 1.0)),
        )
        for key in ("r_format", "r_accuracy", "total"):
            if key in data and data[key] != getattr(breakdown, key):
                raise ValueError(f"{key} does not match its component sum")
        return breakdown


@dataclass
class ScoreDeps:
    """Dependency injection for scoring: registry, execution source, judge.

    Execution outcomes come from exactly one source, in priority order:
    an explicit replay list, a live executor, or the results-sentinel
    convention over the rollout's own <results> contents (content starting
    with "ERR:" marks a failure; executes lacking a paired results segment
    count as failures).
    """

    registry: ModelRegistry
    judge: Optional[JudgeClient] = None
    exec_replay: Optional[Sequence[ExecOutcome]] = None
    executor: Optional[object] = None
    base_dir: Optional[str | Path] = None
    exec_timeout: float = 5.0


def score_token_format(rollout: RolloutSequence | str) -> float:
    text = rollout if isinstance(rollout, str) else rollout.source_text
    try:
        parse_rollout(text, strict=True)
    except RolloutParseError:
        return -1.0
    return 1.0


def score_dag(verdict: DagVerdict) -> float:
    return 0.5 if verdict.all_valid else -0.5


def score_exec(
    outcomes: Sequence[ExecOutcome],
    mode: ExecPenaltyMode = ExecPenaltyMode.ANY_FAILURE,
) -> float:
    failures = sum(1 for outcome in outcomes if not outcome.success)
    if mode is ExecPenaltyMode.PER_BLOCK_SUM:
        return -0.5 * failures
    return -0.5 if failures else 0.0


def score_task(rollout: RolloutSequence | str, gt: GroundTruth) -> float:
    text = rollout if isinstance(rollout, str) else rollout.source_text
    label = first_tag_content(text, TagKind.TASK)
    if label is None:
        return 0.0
    return 0.25 if normalize_task_label(label) is gt.task_type else 0.0


def _answer_instances(answer_text: str) -> list[dict]:
    data = json.loads(answer_text)
    if not isinstance(data, dict) or not isinstance(data.get("instances"), list):
        raise ValueError("answer payload must be an object with an 'instances' list")
    if not data["instances"]:
        raise ValueError("answer payload names no instances")
    return data["instances"]


def _answer_masks_by_frame(
    instances: list[dict], frames: Sequence[int], base_dir: Optional[str | Path]
) -> dict[int, Optional[BinaryMask]]:
    """Union of the predicted instances' masks, per annotated frame."""
    import numpy as np

    from .masks import mask_encode

    by_frame: dict[int, Optional[BinaryMask]] = {}
    for t in frames:
        grids = []
        for inst in instances:
            inline = (inst.get("masks") or {}).get(str(t))
            path = (inst.get("mask_paths") or {}).get(str(t))
            if inline is not None:
                grids.append(BinaryMask.from_dict(inline).decode())
            elif path is not None:
                full = Path(path)
                if base_dir is not None and not full.is_absolute():
                    full = Path(base_dir) / full
                grids.append(load_mask(full).decode())
        if not grids:
            by_frame[t] = None
            continue
        union = grids[0]
        for grid in grids[1:]:
            if grid.shape != union.shape:
                raise ValueError("predicted masks disagree on dimensions")
            union = union | grid
        by_frame[t] = mask_encode(np.asarray(union))
    return by_frame


def score_result(
    rollout: RolloutSequence | str,
    gt: GroundTruth,
    judge: Optional[JudgeClient],
    cfg: RewardConfig,
    base_dir: Optional[str | Path] = None,
    diagnostics: Optional[list[str]] = None,
) -> float:
    """Correctness of the final answer: +1 or -1.

    Judge transport errors propagate to the caller; every other failure
    mode (missing answer, malformed payload, unreadable mask file) scores
    -1 with a diagnostic.
    """
    text = rollout if isinstance(rollout, str) else rollout.source_text
    answer = first_tag_content(text, TagKind.ANSWER)
    notes = diagnostics if diagnostics is not None else []
    if answer is None:
        notes.append("no answer segment found")
        return -1.0
    if gt.task_type in (TaskType.SUMMARIZATION, TaskType.VQA):
        if judge is None:
            raise ValueError(f"{gt.task_type.value} scoring requires a judge client")
        verdict = judge.judge(
            JudgeRequest(candidate=answer.strip(), reference=gt.reference or "")
        )
        notes.append(f"judge: {verdict.rationale}" if verdict.rationale else "judge verdict")
        return 1.0 if verdict.correct else -1.0
    try:
        instances = _answer_instances(answer)
        if gt.task_type is TaskType.SEGMENTATION:
            frames = sorted(gt.masks.keys())
            predicted = _answer_masks_by_frame(instances, frames, base_dir)
            ious = []
            for t in frames:
                pred = predicted[t]
                ious.append(0.0 if pred is None else mask_iou(pred, gt.masks[t]))
            if cfg.seg_frame_rule is SegFrameRule.PER_FRAME:
                correct = all(iou > cfg.iou_threshold for iou in ious)
                notes.append(
                    f"per-frame mask IoUs {['%.4f' % v for v in ious]} vs threshold"
                )
                return 1.0 if correct else -1.0
            mean_iou = sum(ious) / len(ious)
            notes.append(f"mean mask IoU {mean_iou:.4f} over {len(ious)} frame(s)")
            return 1.0 if mean_iou > cfg.iou_threshold else -1.0
        # grounding: first predicted instance's box per annotated frame
        boxes = instances[0].get("boxes") or {}
        ious = []
        for t in gt.frames:
            raw = boxes.get(str(t))
            if raw is None:
                ious.append(0.0)
                continue
            ious.append(bbox_iou(BoundingBox.from_list(raw), gt.box))
        mean_iou = sum(ious) / len(ious)
        notes.append(f"mean box IoU {mean_iou:.4f} over {len(ious)} frame(s)")
        return 1.0 if mean_iou > cfg.iou_threshold else -1.0
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        notes.append(f"answer not scoreable: {err}")
        return -1.0


def _sentinel_outcomes(execute_count: int, results_contents: Sequence[str]) -> list[ExecOutcome]:
    outcomes = []
    for i in range(execute_count):
        if i >= len(results_contents):
            outcomes.append(
                ExecOutcome(success=False, output="", error_line="no results segment")
            )
        elif results_contents[i].lstrip().startswith("ERR:"):
            message = results_contents[i].lstrip()[4:].strip() or "execution failed"
            outcomes.append(
                ExecOutcome(
                    success=False,
                    output="",
                    error_line=message.splitlines()[0].replace("/", " ").replace("\\", " "),
                )
            )
        else:
            outcomes.append(
                ExecOutcome(success=True, output=results_contents[i], error_line=None)
            )
    return outcomes


def _exec_outcomes(text: str, deps: ScoreDeps) -> list[ExecOutcome]:
    code_blocks = scan_tag_pairs(text, TagKind.EXECUTE)
    if not code_blocks:
        return []
    if deps.exec_replay is not None:
        if len(deps.exec_replay) != len(code_blocks):
            raise ValueError(
                f"exec replay has {len(deps.exec_replay)} outcomes "
                f"for {len(code_blocks)} execute blocks"
            )
        return list(deps.exec_replay)
    if deps.executor is not None:
        return [
            execute(ExecRequest(code=code, timeout=deps.exec_timeout), deps.executor)
            for code in code_blocks
        ]
    return _sentinel_outcomes(len(code_blocks), scan_tag_pairs(text, TagKind.RESULTS))


def score(
    rollout_text: str,
    gt: GroundTruth,
    cfg: RewardConfig,
    deps: ScoreDeps,
    diagnostics: Optional[list[str]] = None,
) -> RewardBreakdown:
    """Compose the five component scores for one rollout."""
    r_token = score_token_format(rollout_text)
    plan_text = first_tag_content(rollout_text, TagKind.DT_PLAN)
    verdict = validate_plan_text(plan_text, deps.registry)
    if diagnostics is not None and verdict.violations:
        diagnostics.extend(f"plan: {v}" for v in verdict.violations)
    r_dag = score_dag(verdict)
    r_exec = score_exec(_exec_outcomes(rollout_text, deps), cfg.exec_penalty_mode)
    r_task = score_task(rollout_text, gt)
    r_result = score_result(
        rollout_text, gt, deps.judge, cfg, base_dir=deps.base_dir, diagnostics=diagnostics
    )
    return RewardBreakdown(
        r_token=r_token,
        r_dag=r_dag,
        r_exec=r_exec,
        r_task=r_task,
        r_result=r_result,
        alpha=cfg.alpha,
        beta=cfg.beta,
    )
