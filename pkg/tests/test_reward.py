"""Reward arithmetic: component values, composition, thresholds, weights."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtr1.execution import ExecOutcome, JudgeRequest, JudgeTransportError, MockJudge
from dtr1.grammar import parse_rollout
from dtr1.masks import mask_encode
from dtr1.plan import validate_plan_text
from dtr1.records import canonical_json
from dtr1.reward import (
    ExecPenaltyMode,
    GroundTruth,
    RewardBreakdown,
    RewardConfig,
    ScoreDeps,
    TaskType,
    normalize_task_label,
    score,
    score_dag,
    score_exec,
    score_result,
    score_task,
    score_token_format,
)


class TestTokenFormat:
    def test_golden_is_plus_one(self, golden_text):
        assert score_token_format(golden_text) == 1.0

    def test_missing_close_is_minus_one(self, golden_text):
        assert score_token_format(golden_text.replace("</answer>", "")) == -1.0

    def test_all_malformed_corpus_cases_score_minus_one(self, reward_corpus):
        for case in reward_corpus:
            expected = case.expected["r_token"]
            assert score_token_format(case.rollout_text) == expected, case.name

    def test_out_of_order_tags(self, golden_text):
        swapped = golden_text.replace(
            "<task>reasoning segmentation</task>\n", ""
        ).replace("</answer>", "</answer>\n<task>reasoning segmentation</task>")
        assert score_token_format(swapped) == -1.0


class TestDag:
    def test_example_plan(self, registry):
        plan = '{"SAM2": [], "DepthAnything2": [], "DepthStats": ["SAM2", "DepthAnything2"], "SemanticAnalysis": ["SAM2"]}'
        assert score_dag(validate_plan_text(plan, registry)) == 0.5

    def test_cyclic_plan(self, registry):
        assert score_dag(validate_plan_text('{"A": ["B"], "B": ["A"]}', registry)) == -0.5

    def test_unknown_model(self, registry):
        assert score_dag(validate_plan_text('{"SAM3": []}', registry)) == -0.5

    def test_absent_plan(self, registry):
        assert score_dag(validate_plan_text(None, registry)) == -0.5


class TestExec:
    def test_no_blocks_vacuous_zero(self):
        assert score_exec([]) == 0.0

    def test_all_success(self):
        outcomes = [ExecOutcome(True, "1"), ExecOutcome(True, "2")]
        assert score_exec(outcomes) == 0.0

    def test_one_failure_any_mode(self):
        outcomes = [
            ExecOutcome(True, "1"),
            ExecOutcome(False, "", "TypeError: x"),
            ExecOutcome(True, "3"),
        ]
        assert score_exec(outcomes) == -0.5
        assert score_exec(outcomes, ExecPenaltyMode.PER_BLOCK_SUM) == -0.5

    def test_modes_differ_with_two_failures(self):
        outcomes = [
            ExecOutcome(False, "", "TypeError: x"),
            ExecOutcome(False, "", "KeyError: 'y'"),
        ]
        assert score_exec(outcomes) == -0.5
        assert score_exec(outcomes, ExecPenaltyMode.PER_BLOCK_SUM) == -1.0

    def test_enumerated_success_patterns(self):
        import itertools

        for pattern in itertools.product((True, False), repeat=3):
            outcomes = [
                ExecOutcome(ok, "v") if ok else ExecOutcome(False, "", "E: x")
                for ok in pattern
            ]
            failures = pattern.count(False)
            assert score_exec(outcomes) == (0.0 if failures == 0 else -0.5)
            assert score_exec(outcomes, ExecPenaltyMode.PER_BLOCK_SUM) == -0.5 * failures


class TestTaskLabel:
    def test_reasoning_prefix_stripped(self):
        assert normalize_task_label("reasoning segmentation") is TaskType.SEGMENTATION
        assert normalize_task_label("  Segmentation ") is TaskType.SEGMENTATION

    def test_synonyms(self):
        assert normalize_task_label("VQA") is TaskType.VQA
        assert normalize_task_label("visual question answering") is TaskType.VQA
        assert normalize_task_label("reasoning visual question answering") is TaskType.VQA

    def test_unknown_label(self):
        assert normalize_task_label("detection") is None

    def test_match_earns_quarter(self, golden_text):
        gt = GroundTruth(task_type=TaskType.VQA, reference="2")
        text = golden_text.replace("reasoning segmentation", "reasoning visual question answering")
        assert score_task(text, gt) == 0.25

    def test_mismatch_earns_zero(self):
        gt = GroundTruth(
            task_type=TaskType.SEGMENTATION,
            masks={0: mask_encode(np.ones((2, 2), dtype=np.uint8))},
        )
        assert score_task("<task>grounding</task>", gt) == 0.0

    def test_missing_segment_earns_zero(self):
        gt = GroundTruth(task_type=TaskType.VQA, reference="2")
        assert score_task("<think>no task here</think>", gt) == 0.0


def _seg_gt(mask_grid):
    return GroundTruth(
        task_type=TaskType.SEGMENTATION, masks={0: mask_encode(mask_grid)}
    )


def _answer_text(mask_grid):
    payload = {
        "instances": [{"name": "x", "masks": {"0": mask_encode(mask_grid).to_dict()}}]
    }
    return f"<answer>{canonical_json(payload)}</answer>"


class TestResult:
    def test_identical_mask_is_correct(self):
        grid = np.zeros((4, 4), dtype=np.uint8)
        grid[1:3, 1:3] = 1
        gt = _seg_gt(grid)
        value = score_result(_answer_text(grid), gt, None, RewardConfig())
        assert value == 1.0

    def test_iou_exactly_half_is_incorrect(self):
        gt_grid = np.zeros((2, 2), dtype=np.uint8)
        gt_grid[0, :] = 1  # two pixels
        pred_grid = np.ones((2, 2), dtype=np.uint8)  # intersection 2, union 4
        value = score_result(_answer_text(pred_grid), _seg_gt(gt_grid), None, RewardConfig())
        assert value == -1.0

    def test_raising_threshold_never_flips_to_correct(self):
        gt_grid = np.zeros((4, 4), dtype=np.uint8)
        gt_grid[0:2, 0:2] = 1
        pred_grid = np.zeros((4, 4), dtype=np.uint8)
        pred_grid[0:2, 0:3] = 1
        answer = _answer_text(pred_grid)
        previous = 1.0
        for threshold in (0.1, 0.3, 0.5, 0.66, 0.67, 0.9):
            value = score_result(
                answer, _seg_gt(gt_grid), None, RewardConfig(iou_threshold=threshold)
            )
            assert value <= previous
            previous = value

    def test_vqa_judge_decides(self):
        gt = GroundTruth(task_type=TaskType.VQA, reference="three objects")
        judge = MockJudge()
        assert score_result("<answer>three objects</answer>", gt, judge, RewardConfig()) == 1.0
        assert score_result("<answer>nine</answer>", gt, judge, RewardConfig()) == -1.0

    def test_text_answer_to_segmentation_gt_is_wrong_by_format(self):
        grid = np.zeros((2, 2), dtype=np.uint8)
        grid[0, 0] = 1
        diagnostics = []
        value = score_result(
            "<answer>the nearest object</answer>", _seg_gt(grid), None, RewardConfig(),
            diagnostics=diagnostics,
        )
        assert value == -1.0
        assert any("not scoreable" in d for d in diagnostics)

    def test_missing_answer(self):
        grid = np.eye(2, dtype=np.uint8)
        assert score_result("<think>no answer</think>", _seg_gt(grid), None, RewardConfig()) == -1.0

    def test_unreadable_mask_path(self, tmp_path):
        grid = np.eye(2, dtype=np.uint8)
        answer = '<answer>{"instances": [{"name": "x", "mask_paths": {"0": "missing.rle"}}]}</answer>'
        diagnostics = []
        value = score_result(
            answer, _seg_gt(grid), None, RewardConfig(), base_dir=tmp_path,
            diagnostics=diagnostics,
        )
        assert value == -1.0
        assert diagnostics

    def test_per_frame_rule_is_stricter_than_mean(self):
        from dtr1.reward import SegFrameRule

        good = np.zeros((4, 4), dtype=np.uint8)
        good[0:2, 0:2] = 1
        poor = np.zeros((4, 4), dtype=np.uint8)
        poor[0:2, 0:2] = 1
        poor[2:4, 0:4] = 1  # IoU vs `good`: 4/12 = 1/3
        gt = GroundTruth(
            task_type=TaskType.SEGMENTATION,
            masks={0: mask_encode(good), 1: mask_encode(good)},
        )
        payload = {
            "instances": [
                {
                    "name": "x",
                    "masks": {
                        "0": mask_encode(good).to_dict(),  # frame 0 IoU 1.0
                        "1": mask_encode(poor).to_dict(),  # frame 1 IoU 1/3
                    },
                }
            ]
        }
        answer = f"<answer>{canonical_json(payload)}</answer>"
        mean_cfg = RewardConfig()  # mean IoU (1 + 1/3)/2 = 2/3 > 0.5
        assert score_result(answer, gt, None, mean_cfg) == 1.0
        strict_cfg = RewardConfig(seg_frame_rule=SegFrameRule.PER_FRAME)
        assert score_result(answer, gt, None, strict_cfg) == -1.0

    def test_grounding_box_iou(self):
        gt = GroundTruth(
            task_type=TaskType.GROUNDING,
            box=__import__("dtr1.metrics", fromlist=["BoundingBox"]).BoundingBox(0, 0, 10, 10),
            frames=(0,),
        )
        good = '<answer>{"instances": [{"name": "x", "boxes": {"0": [0, 0, 10, 10]}}]}</answer>'
        poor = '<answer>{"instances": [{"name": "x", "boxes": {"0": [5, 5, 15, 15]}}]}</answer>'
        assert score_result(good, gt, None, RewardConfig()) == 1.0
        assert score_result(poor, gt, None, RewardConfig()) == -1.0

    def test_judge_transport_error_propagates(self):
        class Exploding:
            def judge(self, req: JudgeRequest):
                raise JudgeTransportError("connection refused")

        gt = GroundTruth(task_type=TaskType.VQA, reference="yes")
        with pytest.raises(JudgeTransportError):
            score_result("<answer>yes</answer>", gt, Exploding(), RewardConfig())


class TestComposition:
    def test_every_combination_matches_hand_derived_totals(self, reward_corpus, registry):
        assert len(reward_corpus) == 32
        seen_totals = set()
        for case in reward_corpus:
            deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
            bd = score(case.rollout_text, case.gt, RewardConfig(), deps)
            for component, expected in case.expected.items():
                assert getattr(bd, component) == expected, (case.name, component)
            assert bd.total == case.expected_total()
            assert bd.r_format == bd.r_token + bd.r_dag
            assert bd.r_accuracy == bd.r_exec + bd.r_task + bd.r_result
            seen_totals.add(bd.total)
        assert max(seen_totals) == 2.75
        assert min(seen_totals) == -3.0

    def test_extreme_values_attained_only_at_the_extreme_combos(self, reward_corpus, registry):
        for case in reward_corpus:
            deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
            bd = score(case.rollout_text, case.gt, RewardConfig(), deps)
            if bd.total == 2.75:
                assert case.name == "combo-11111"
            if bd.total == -3.0:
                assert case.name == "combo-00000"

    def test_task_label_delta_is_exactly_quarter(self, reward_corpus, registry):
        by_name = {case.name: case for case in reward_corpus}
        good, bad = by_name["combo-11111"], by_name["combo-11101"]
        deps_g = ScoreDeps(registry=registry, exec_replay=good.replay)
        deps_b = ScoreDeps(registry=registry, exec_replay=bad.replay)
        total_good = score(good.rollout_text, good.gt, RewardConfig(), deps_g).total
        total_bad = score(bad.rollout_text, bad.gt, RewardConfig(), deps_b).total
        assert total_good == 2.75
        assert total_bad == 2.50
        assert total_good - total_bad == 0.25

    @settings(max_examples=40, deadline=None)
    @given(
        alpha=st.floats(-4, 4, allow_nan=False, width=32),
        beta=st.floats(-4, 4, allow_nan=False, width=32),
    )
    def test_weight_linearity(self, alpha, beta):
        bd = RewardBreakdown(
            r_token=1.0, r_dag=-0.5, r_exec=-0.5, r_task=0.25, r_result=-1.0,
            alpha=alpha, beta=beta,
        )
        assert bd.total == alpha * bd.r_format + beta * bd.r_accuracy

    def test_argmax_invariance_under_weight_scaling(self, reward_corpus, registry):
        cases = reward_corpus[:8]
        totals_base = []
        totals_scaled = []
        for case in cases:
            deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
            totals_base.append(score(case.rollout_text, case.gt, RewardConfig(), deps).total)
            scaled_cfg = RewardConfig(alpha=3.0, beta=3.0)
            totals_scaled.append(score(case.rollout_text, case.gt, scaled_cfg, deps).total)
        order = sorted(range(len(cases)), key=lambda i: totals_base[i])
        order_scaled = sorted(range(len(cases)), key=lambda i: totals_scaled[i])
        assert order == order_scaled

    def test_determinism(self, reward_corpus, registry):
        case = reward_corpus[5]
        deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
        a = score(case.rollout_text, case.gt, RewardConfig(), deps)
        b = score(case.rollout_text, case.gt, RewardConfig(), deps)
        assert a == b

    def test_replay_length_mismatch_rejected(self, reward_corpus, registry):
        case = reward_corpus[0]
        deps = ScoreDeps(
            registry=registry, exec_replay=case.replay + [ExecOutcome(True, "extra")]
        )
        with pytest.raises(ValueError, match="replay"):
            score(case.rollout_text, case.gt, RewardConfig(), deps)

    def test_sentinel_mode_reads_results_contents(self, registry):
        grid = np.zeros((2, 2), dtype=np.uint8)
        grid[0, 0] = 1
        gt = _seg_gt(grid)
        text = (
            "<think>a</think>\n<dt_plan>{}</dt_plan>\n<dt_rep>{}</dt_rep>\n"
            "<think>b</think>\n<execute>1 / 0</execute>\n"
            "<results>ERR: ZeroDivisionError: division by zero</results>\n"
            "<task>reasoning segmentation</task>\n" + _answer_text(grid)
        )
        deps = ScoreDeps(registry=registry)
        bd = score(text, gt, RewardConfig(), deps)
        assert bd.r_exec == -0.5
        ok_text = text.replace(
            "<execute>1 / 0</execute>\n<results>ERR: ZeroDivisionError: division by zero</results>",
            "<execute>1 + 1</execute>\n<results>OK: 2</results>",
        )
        assert score(ok_text, gt, RewardConfig(), deps).r_exec == 0.0

    def test_breakdown_record_round_trip(self, reward_corpus, registry):
        case = reward_corpus[3]
        deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
        bd = score(case.rollout_text, case.gt, RewardConfig(), deps)
        record = bd.to_record()
        assert record["schema"] == "dtr1-reward/1"
        assert RewardBreakdown.from_record(record) == bd
        record["total"] = 99.0
        with pytest.raises(ValueError):
            RewardBreakdown.from_record(record)

    def test_component_ranges(self, reward_corpus, registry):
        for case in reward_corpus:
            deps = ScoreDeps(registry=registry, judge=MockJudge(), exec_replay=case.replay)
            bd = score(case.rollout_text, case.gt, RewardConfig(), deps)
            assert bd.r_token in (-1.0, 1.0)
            assert bd.r_dag in (-0.5, 0.5)
            assert bd.r_exec in (-0.5, 0.0)
            assert bd.r_task in (0.0, 0.25)
            assert bd.r_result in (-1.0, 1.0)
            assert -3.0 <= bd.total <= 2.75
