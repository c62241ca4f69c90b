"""Group-relative advantages, loss masks, and a desk-scale policy trainer.

Advantages normalize a group's rewards to zero mean and unit population
std (plus a stabilizer); zero-variance groups short-circuit to all-zero
advantages. Training masks mark the environment-inserted spans (twin and
execution results, marker strings included) as non-trainable.

The toy trainer drives a categorical policy over four independent action
slots (rollout formatting, plan choice, task label, answered instance)
through the full sample -> score -> advantage -> update loop, verifying
the reward plumbing end to end without any neural machinery.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .execution import ExecOutcome, ExecRequest, TwinQueryExecutor
from .grammar import Origin, RolloutSequence, TagKind
from .plan import default_registry
from .records import canonical_json
from .reward import GroundTruth, RewardBreakdown, RewardConfig, ScoreDeps, TaskType, score
from .twin import dt_to_text


@dataclass(frozen=True)
class AdvantageVector:
    values: tuple[float, ...]
    eps: float


def group_advantages(rewards: Sequence[float], eps: float = 1e-8) -> AdvantageVector:
    """Normalize rewards within a sampled group.

    a_i = (r_i - mean) / (population std + eps); all zeros when the group
    has no variance, regardless of eps.
    """
    if len(rewards) < 2:
        raise ValueError("a group needs at least two rollouts")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if any(not math.isfinite(r) for r in rewards):
        raise ValueError("rewards must be finite")
    n = len(rewards)
    mean = sum(rewards) / n
    variance = sum((r - mean) ** 2 for r in rewards) / n
    std = math.sqrt(variance)
    if std == 0.0:
        return AdvantageVector(values=tuple(0.0 for _ in rewards), eps=eps)
    return AdvantageVector(
        values=tuple((r - mean) / (std + eps) for r in rewards), eps=eps
    )


@dataclass(frozen=True)
class TrainingMask:
    spans: tuple[tuple[int, int, bool], ...]  # (start, end, trainable), a partition

    def non_trainable_chars(self) -> int:
        return sum(end - start for start, end, trainable in self.spans if not trainable)

    def to_dict(self) -> dict:
        return {
            "spans": [
                {"start": s, "end": e, "trainable": tr} for s, e, tr in self.spans
            ]
        }


def training_mask(seq: RolloutSequence) -> TrainingMask:
    """Partition the rollout text; system-inserted segments (with their
    markers) are non-trainable, everything else is trainable."""
    blocked = sorted(
        seg.span_with_markers()
        for seg in seq.segments
        if seg.origin is Origin.SYSTEM_INSERTED
    )
    spans: list[tuple[int, int, bool]] = []
    cursor = 0
    for start, end in blocked:
        if start > cursor:
            spans.append((cursor, start, True))
        spans.append((start, end, False))
        cursor = end
    total = len(seq.source_text)
    if cursor < total:
        spans.append((cursor, total, True))
    return TrainingMask(spans=tuple(spans))


@dataclass(frozen=True)
class RolloutGroup:
    prompt_id: str
    rollouts: tuple[str, ...]
    rewards: tuple[float, ...]
    actions: Optional[tuple[Mapping[str, str], ...]] = None  # toy-sampler extra

    def __post_init__(self):
        if len(self.rollouts) < 2:
            raise ValueError("a group needs at least two rollouts")
        if len(self.rewards) != len(self.rollouts):
            raise ValueError("rewards and rollouts must align")
        if any(not math.isfinite(r) for r in self.rewards):
            raise ValueError("rewards must be finite")
        if self.actions is not None and len(self.actions) != len(self.rollouts):
            raise ValueError("actions and rollouts must align")


# ---------------------------------------------------------------------------
# Toy categorical policy.
# ---------------------------------------------------------------------------

FORMAT_ACTIONS = ("well_formed", "stray_prose", "swap_task_answer", "unclosed_think")
PLAN_ACTIONS = ("valid", "cyclic", "unknown_model")
TASK_ACTIONS = (
    "reasoning segmentation",
    "reasoning grounding",
    "reasoning summarization",
    "reasoning visual question answering",
)

VALID_PLAN_TEXT = canonical_json(
    {
        "SAM2": [],
        "DepthAnything2": [],
        "DepthStats": ["SAM2", "DepthAnything2"],
        "SemanticAnalysis": ["SAM2"],
    }
)
_PLAN_TEXTS = {
    "valid": VALID_PLAN_TEXT,
    "cyclic": canonical_json(
        {"DepthStats": ["SemanticAnalysis"], "SemanticAnalysis": ["DepthStats"]}
    ),
    "unknown_model": canonical_json({"SAM3": []}),
}


def _softmax(logits: Sequence[float]) -> list[float]:
    top = max(logits)
    exps = [math.exp(l - top) for l in logits]
    total = sum(exps)
    return [e / total for e in exps]


@dataclass(frozen=True)
class ToyPolicy:
    actions: tuple[tuple[str, tuple[str, ...]], ...]  # (slot, action names)
    logits: tuple[tuple[float, ...], ...]

    @classmethod
    def initial(cls, answer_ids: Sequence[int]) -> "ToyPolicy":
        slots = (
            ("format", FORMAT_ACTIONS),
            ("plan", PLAN_ACTIONS),
            ("task", TASK_ACTIONS),
            ("answer", tuple(str(i) for i in answer_ids)),
        )
        return cls(
            actions=slots,
            logits=tuple(tuple(0.0 for _ in acts) for _, acts in slots),
        )

    def slot_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.actions)

    def slot_actions(self, slot: str) -> tuple[str, ...]:
        for name, acts in self.actions:
            if name == slot:
                return acts
        raise KeyError(slot)

    def slot_logits(self, slot: str) -> tuple[float, ...]:
        for (name, _), logit in zip(self.actions, self.logits):
            if name == slot:
                return logit
        raise KeyError(slot)

    def probs(self, slot: str) -> dict[str, float]:
        acts = self.slot_actions(slot)
        return dict(zip(acts, _softmax(self.slot_logits(slot))))

    def sample(self, slot: str, rng: random.Random) -> str:
        acts = self.slot_actions(slot)
        weights = _softmax(self.slot_logits(slot))
        return rng.choices(acts, weights=weights, k=1)[0]

    def greedy(self, slot: str) -> str:
        acts = self.slot_actions(slot)
        logits = self.slot_logits(slot)
        return max(zip(acts, logits), key=lambda pair: pair[1])[0]


@dataclass(frozen=True)
class ToyRollout:
    text: str
    actions: dict[str, str]
    exec_outcomes: tuple[ExecOutcome, ...]


def _answer_payload(task, instance_id: int) -> str:
    twin = task.twin
    inst0 = twin.frames[0].instance(instance_id)
    if task.ground_truth.task_type is TaskType.GROUNDING:
        boxes = {
            str(t): twin.frames[t].instance(instance_id).bbox.to_list()
            for t in task.ground_truth.frames
        }
        return canonical_json({"instances": [{"name": inst0.label, "boxes": boxes}]})
    masks = {
        str(t): twin.frames[t].instance(instance_id).mask.to_dict()
        for t in sorted(task.ground_truth.masks.keys())
    }
    return canonical_json({"instances": [{"name": inst0.label, "masks": masks}]})


def toy_sample(policy: ToyPolicy, task, rng_seed: int) -> ToyRollout:
    """Sample slot actions and realize them as a concrete rollout text."""
    rng = random.Random(rng_seed)
    chosen = {slot: policy.sample(slot, rng) for slot in policy.slot_names()}

    think0 = f"The query is: {task.query}. Plan the twin construction."
    think1 = "Use the depth statistics to identify the target instance."
    executor = TwinQueryExecutor(task.twin)
    outcome = executor.run(ExecRequest(code=task.program))
    result_text = (
        f"OK: {outcome.output}" if outcome.success else f"ERR: {outcome.error_line}"
    )
    answer = _answer_payload(task, int(chosen["answer"]))

    think1_block = f"<think>{think1}</think>"
    if chosen["format"] == "unclosed_think":
        think1_block = f"<think>{think1}"
    task_block = f"<task>{chosen['task']}</task>"
    answer_block = f"<answer>{answer}</answer>"
    tail = (
        [answer_block, task_block]
        if chosen["format"] == "swap_task_answer"
        else [task_block, answer_block]
    )
    lines = [
        f"<think>{think0}</think>",
        f"<dt_plan>{_PLAN_TEXTS[chosen['plan']]}</dt_plan>",
        f"<dt_rep>{dt_to_text(task.twin)}</dt_rep>",
    ]
    if chosen["format"] == "stray_prose":
        lines.append("Let me reconsider the constructed twin before continuing.")
    lines.extend([think1_block, f"<execute>{task.program}</execute>",
                  f"<results>{result_text}</results>"])
    lines.extend(tail)
    return ToyRollout(text="\n".join(lines), actions=chosen, exec_outcomes=(outcome,))


def toy_update(
    policy: ToyPolicy,
    group: RolloutGroup,
    advantages: AdvantageVector,
    lr: float,
) -> ToyPolicy:
    """One batched softmax policy-gradient step; returns a new policy."""
    if group.actions is None:
        raise ValueError("group carries no slot actions to update from")
    if len(advantages.values) != len(group.rollouts):
        raise ValueError("advantages and rollouts must align")
    grads = [
        [0.0 for _ in acts] for _, acts in policy.actions
    ]
    probs = [_softmax(logits) for logits in policy.logits]
    for actions, adv in zip(group.actions, advantages.values):
        if adv == 0.0:
            continue
        for s, (slot, acts) in enumerate(policy.actions):
            taken = acts.index(actions[slot])
            for j in range(len(acts)):
                indicator = 1.0 if j == taken else 0.0
                grads[s][j] += adv * (indicator - probs[s][j])
    new_logits = tuple(
        tuple(logit + lr * grad for logit, grad in zip(slot_logits, slot_grads))
        for slot_logits, slot_grads in zip(policy.logits, grads)
    )
    return replace(policy, logits=new_logits)


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    mean_reward: float
    std_reward: float
    format_rate: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mean_reward": self.mean_reward,
            "std_reward": self.std_reward,
            "format_rate": self.format_rate,
        }


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    group_size: int = 8
    lr: float = 0.05
    seed: int = 7
    eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 1.0
    disabled_components: frozenset[str] = frozenset()
    task: Optional[object] = None

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group size must be at least 2")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        unknown = self.disabled_components - {"token", "dag", "exec", "task", "result"}
        if unknown:
            raise ValueError(f"unknown reward components: {sorted(unknown)}")


@dataclass(frozen=True)
class TrainResult:
    curve: tuple[CurvePoint, ...]
    policy: ToyPolicy
    task: object


def _masked_total(bd: RewardBreakdown, disabled: frozenset[str]) -> float:
    token = 0.0 if "token" in disabled else bd.r_token
    dag = 0.0 if "dag" in disabled else bd.r_dag
    exc = 0.0 if "exec" in disabled else bd.r_exec
    task = 0.0 if "task" in disabled else bd.r_task
    result = 0.0 if "result" in disabled else bd.r_result
    return bd.alpha * (token + dag) + bd.beta * (exc + task + result)


def simulate_training(cfg: TrainConfig) -> TrainResult:
    """Run the sample -> score -> advantage -> update loop on one task.

    Deterministic for a fixed config. Emits one curve record per iteration:
    mean/std of the (possibly component-masked) reward and the fraction of
    sampled rollouts passing strict format validation.
    """
    task = cfg.task
    if task is None:
        from .harness import Difficulty, generate_tasks

        task = generate_tasks(
            seed=cfg.seed, count=1, mix={Difficulty.L1: 1.0}, task_types=(TaskType.SEGMENTATION,)
        )[0]
    registry = default_registry()
    reward_cfg = RewardConfig(alpha=cfg.alpha, beta=cfg.beta)
    answer_ids = [inst.instance_id for inst in task.twin.frames[0].instances]
    policy = ToyPolicy.initial(answer_ids)
    master = random.Random(cfg.seed)
    curve: list[CurvePoint] = []

    for iteration in range(cfg.iterations):
        samples = [
            toy_sample(policy, task, master.getrandbits(32))
            for _ in range(cfg.group_size)
        ]
        totals = []
        format_ok = 0
        for sample in samples:
            deps = ScoreDeps(registry=registry, exec_replay=sample.exec_outcomes)
            bd = score(sample.text, task.ground_truth, reward_cfg, deps)
            totals.append(_masked_total(bd, cfg.disabled_components))
            if bd.r_token > 0:
                format_ok += 1
        group = RolloutGroup(
            prompt_id=task.task_id,
            rollouts=tuple(s.text for s in samples),
            rewards=tuple(totals),
            actions=tuple(s.actions for s in samples),
        )
        advantages = group_advantages(group.rewards, eps=cfg.eps)
        policy = toy_update(policy, group, advantages, cfg.lr)
        n = len(totals)
        mean = sum(totals) / n
        std = math.sqrt(sum((t - mean) ** 2 for t in totals) / n)
        curve.append(
            CurvePoint(
                iteration=iteration,
                mean_reward=mean,
                std_reward=std,
                format_rate=format_ok / n,
            )
        )
    return TrainResult(curve=tuple(curve), policy=policy, task=task)
