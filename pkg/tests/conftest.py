import sys
from pathlib import Path

import pytest


def _bootstrap_src() -> None:
    src = Path(__file__).resolve().parents[1] / "src"
    if str(src) not in sys.path:
        sys.path.insert(0, str(src))


try:
    import dtr1  # noqa: F401
except ImportError:
    _bootstrap_src()


GOLDEN_ROLLOUT = """<think>Find the object closest to the camera; masks and depth are needed.</think>
<dt_plan>{"SAM2": [], "DepthAnything2": [], "DepthStats": ["SAM2", "DepthAnything2"], "SemanticAnalysis": ["SAM2"]}</dt_plan>
<dt_rep>{"frames": 1, "instances": 2}</dt_rep>
<think>Compare the two instance depths.</think>
<execute>mean_depth(1, 0) < mean_depth(2, 0)</execute>
<results>OK: true</results>
<task>reasoning segmentation</task>
<answer>{"instances": [{"name": "mug", "mask_paths": {"0": "masks/inst1_f0.rle"}}]}</answer>"""


@pytest.fixture
def golden_text() -> str:
    return GOLDEN_ROLLOUT


@pytest.fixture
def registry():
    from dtr1.plan import default_registry

    return default_registry()


# ---------------------------------------------------------------------------
# Reward corpus: one fixture per combination of component values.
# ---------------------------------------------------------------------------


class RewardCase:
    def __init__(self, name, rollout_text, gt, gt_dict, replay, expected):
        self.name = name
        self.rollout_text = rollout_text
        self.gt = gt
        self.gt_dict = gt_dict
        self.replay = replay
        self.expected = expected  # component name -> value

    def expected_total(self, alpha=1.0, beta=1.0) -> float:
        e = self.expected
        return alpha * (e["r_token"] + e["r_dag"]) + beta * (
            e["r_exec"] + e["r_task"] + e["r_result"]
        )


def build_reward_corpus():
    """All 32 combinations of the five component values, one case each."""
    import itertools

    from dtr1.execution import ExecOutcome
    from dtr1.grpo import VALID_PLAN_TEXT
    from dtr1.harness import Difficulty, generate_tasks
    from dtr1.records import canonical_json
    from dtr1.reward import TaskType
    from dtr1.twin import dt_to_text

    task = generate_tasks(
        seed=101, count=1, mix={Difficulty.L1: 1.0}, task_types=(TaskType.SEGMENTATION,)
    )[0]
    twin = task.twin
    target = task.target_instance_id
    wrong = next(
        i.instance_id for i in twin.frames[0].instances if i.instance_id != target
    )
    cyclic_plan = '{"DepthStats": ["SemanticAnalysis"], "SemanticAnalysis": ["DepthStats"]}'
    gt_dict = {
        "task_type": "segmentation",
        "masks": {"0": twin.frames[0].instance(target).mask.to_dict()},
    }

    def answer_for(instance_id):
        inst = twin.frames[0].instance(instance_id)
        return canonical_json(
            {"instances": [{"name": inst.label, "masks": {"0": inst.mask.to_dict()}}]}
        )

    cases = []
    for token_ok, dag_ok, exec_ok, task_ok, result_ok in itertools.product(
        (True, False), repeat=5
    ):
        lines = [
            "<think>Decide which models the query needs.</think>",
            f"<dt_plan>{VALID_PLAN_TEXT if dag_ok else cyclic_plan}</dt_plan>",
            f"<dt_rep>{dt_to_text(twin)}</dt_rep>",
        ]
        if not token_ok:
            lines.append("stray material between segments")
        lines.extend(
            [
                "<think>Compare depth statistics.</think>",
                f"<execute>{task.program}</execute>",
                "<results>OK: true</results>",
                f"<task>{'reasoning segmentation' if task_ok else 'reasoning grounding'}</task>",
                f"<answer>{answer_for(target if result_ok else wrong)}</answer>",
            ]
        )
        replay = (
            [ExecOutcome(success=True, output="true")]
            if exec_ok
            else [ExecOutcome(success=False, output="", error_line="NameError: boom")]
        )
        expected = {
            "r_token": 1.0 if token_ok else -1.0,
            "r_dag": 0.5 if dag_ok else -0.5,
            "r_exec": 0.0 if exec_ok else -0.5,
            "r_task": 0.25 if task_ok else 0.0,
            "r_result": 1.0 if result_ok else -1.0,
        }
        name = "".join(
            flag and "1" or "0"
            for flag in (token_ok, dag_ok, exec_ok, task_ok, result_ok)
        )
        from dtr1.reward import GroundTruth

        cases.append(
            RewardCase(
                name=f"combo-{name}",
                rollout_text="\n".join(lines),
                gt=GroundTruth.from_dict(gt_dict),
                gt_dict=gt_dict,
                replay=replay,
                expected=expected,
            )
        )
    return cases


@pytest.fixture(scope="session")
def reward_corpus():
    return build_reward_corpus()
