"""Verification, reward scoring, and training support for structured
digital-twin rollouts: rollout grammar, plan-DAG validation, twin
representation, geometric metrics, rule-based rewards, group-relative
advantages, a scoring service, and a desk-scale trainer."""

__version__ = "0.1.0"

from .grammar import (  # noqa: E402
    FormatVerdict,
    Origin,
    ParseErrorKind,
    RolloutParseError,
    RolloutSequence,
    Segment,
    TagKind,
    Terminal,
    extract_contents,
    insert_system_segment,
    parse_rollout,
    render,
    validate_order,
)
from .masks import BinaryMask, DepthMap, DepthStats, depth_stats, mask_decode, mask_encode
from .metrics import BoundingBox, MetricReport, aggregate, bbox_iou, boundary_f, mask_iou
from .plan import (
    DagVerdict,
    ModelEntry,
    ModelRegistry,
    NodeKind,
    PlanGraph,
    default_registry,
    parse_plan,
    topological_order,
    validate_plan,
    validate_plan_text,
)
from .reward import (
    ExecPenaltyMode,
    GroundTruth,
    RewardBreakdown,
    RewardConfig,
    ScoreDeps,
    SegFrameRule,
    TaskType,
    score,
    score_dag,
    score_exec,
    score_result,
    score_task,
    score_token_format,
)
from .grpo import (
    AdvantageVector,
    RolloutGroup,
    ToyPolicy,
    TrainConfig,
    TrainingMask,
    group_advantages,
    simulate_training,
    toy_sample,
    toy_update,
    training_mask,
)
from .twin import (
    DigitalTwin,
    FrameRecord,
    InstanceRecord,
    assemble_digital_twin,
    dt_from_text,
    dt_to_text,
)
from .execution import (
    ExecOutcome,
    ExecRequest,
    JudgeRequest,
    JudgeVerdict,
    MockJudge,
    TwinQueryExecutor,
    execute,
    truncate_error,
)
