"""Twin schema, canonical serialization, and bundle assembly."""

import json

import numpy as np
import pytest

from dtr1.masks import BinaryMask, DepthMap, depth_stats, mask_encode, save_mask
from dtr1.metrics import BoundingBox
from dtr1.plan import parse_plan
from dtr1.twin import (
    AssemblyError,
    DigitalTwin,
    FrameRecord,
    InstanceRecord,
    TwinSchemaError,
    assemble_digital_twin,
    dt_from_text,
    dt_to_text,
    load_bundle,
)

PLAN = parse_plan(
    '{"SAM2": [], "DepthAnything2": [], '
    '"DepthStats": ["SAM2", "DepthAnything2"], "SemanticAnalysis": ["SAM2"]}'
)


def rect_mask(size, x0, y0, x1, y1) -> BinaryMask:
    grid = np.zeros((size, size), dtype=np.uint8)
    grid[y0:y1, x0:x1] = 1
    return mask_encode(grid)


def make_instance(instance_id, label, mask, depth=None, description=""):
    from dtr1.masks import mask_bbox

    return InstanceRecord(
        instance_id=instance_id,
        label=label,
        description=description,
        bbox=BoundingBox.from_list([float(v) for v in mask_bbox(mask)]),
        mask=mask,
        depth=depth,
    )


@pytest.fixture
def small_twin() -> DigitalTwin:
    m1 = rect_mask(8, 1, 1, 3, 3)
    m2 = rect_mask(8, 5, 5, 7, 7)
    depth = DepthMap(8, 8, np.where(m1.decode() == 1, 2.0, np.where(m2.decode() == 1, 5.0, 9.0)))
    frame = FrameRecord(
        t=0,
        scene_description="two blocks",
        spatial_description="diagonal arrangement",
        instances=(
            make_instance(1, "mug", m1, depth_stats(m1, depth)),
            make_instance(2, "book", m2, depth_stats(m2, depth)),
        ),
    )
    return DigitalTwin(
        global_description="a scene with a mug and a book",
        frame_count=1,
        frames=(frame,),
        source_refs=("frames/frame_0.png",),
    )


class TestSerialization:
    def test_round_trip(self, small_twin):
        text = dt_to_text(small_twin)
        assert dt_from_text(text) == small_twin

    def test_round_trip_is_byte_identical(self, small_twin):
        text = dt_to_text(small_twin)
        assert dt_to_text(dt_from_text(text)) == text

    def test_canonical_independent_of_build_order(self, small_twin):
        data = json.loads(dt_to_text(small_twin))
        # rebuild the dict with reversed key insertion order everywhere
        def reorder(obj):
            if isinstance(obj, dict):
                return {k: reorder(obj[k]) for k in reversed(list(obj))}
            if isinstance(obj, list):
                return [reorder(v) for v in obj]
            return obj

        from dtr1.records import canonical_json

        assert canonical_json(reorder(data)) == dt_to_text(small_twin)

    def test_frames_length_mismatch_reported_at_frames(self, small_twin):
        data = json.loads(dt_to_text(small_twin))
        data["frame_count"] = 2
        with pytest.raises(TwinSchemaError) as exc:
            dt_from_text(json.dumps(data))
        assert exc.value.path == "frames"

    def test_schema_field_required(self, small_twin):
        data = json.loads(dt_to_text(small_twin))
        data["schema"] = "something/9"
        with pytest.raises(TwinSchemaError) as exc:
            dt_from_text(json.dumps(data))
        assert exc.value.path == "schema"

    def test_field_paths_in_nested_errors(self, small_twin):
        data = json.loads(dt_to_text(small_twin))
        data["frames"][0]["instances"][1]["bbox"] = [5, 5, 5, 7]
        with pytest.raises(TwinSchemaError) as exc:
            dt_from_text(json.dumps(data))
        assert exc.value.path == "frames[0].instances[1].bbox"

    def test_bbox_must_match_inline_mask(self, small_twin):
        data = json.loads(dt_to_text(small_twin))
        data["frames"][0]["instances"][0]["bbox"] = [0.0, 0.0, 8.0, 8.0]
        with pytest.raises(TwinSchemaError):
            dt_from_text(json.dumps(data))

    def test_duplicate_instance_ids_rejected(self, small_twin):
        inst = small_twin.frames[0].instances[0]
        with pytest.raises(ValueError, match="duplicate"):
            FrameRecord(0, "", "", instances=(inst, inst))

    def test_exactly_one_mask_source(self, small_twin):
        inst = small_twin.frames[0].instances[0]
        with pytest.raises(ValueError, match="exactly one"):
            InstanceRecord(
                instance_id=9,
                label="x",
                description="",
                bbox=inst.bbox,
                mask=inst.mask,
                mask_path="masks/a.rle",
            )

    def test_frame_count_positive(self):
        with pytest.raises(ValueError):
            DigitalTwin(global_description="", frame_count=0, frames=())


def build_bundle(with_depth=True, inline=True, tmp_path=None):
    m1 = rect_mask(8, 1, 1, 3, 3)
    m2 = rect_mask(8, 5, 5, 7, 7)
    if inline:
        inst = lambda i, m: {"instance_id": i, "label": f"obj{i}", "mask": m.to_dict()}
    else:
        paths = {}
        for i, m in ((1, m1), (2, m2)):
            rel = f"inst{i}.rle"
            save_mask(m, tmp_path / rel)
            paths[i] = rel
        inst = lambda i, m: {"instance_id": i, "label": f"obj{i}", "mask_path": paths[i]}
    depth_values = np.full((8, 8), 4.0)
    bundle = {
        "SAM2": {"role": "segmentation", "frames": [[inst(1, m1), inst(2, m2)]]},
        "DepthAnything2": {
            "role": "depth",
            "frames": [DepthMap(8, 8, depth_values).to_dict()],
        },
        "DepthStats": {"role": "depth_stats"},
        "SemanticAnalysis": {
            "role": "semantic",
            "global_description": "two objects on a table",
            "frames": [{"scene_description": "scene", "spatial_description": "layout"}],
            "instance_descriptions": {"0:1": "a small object", "0:2": "a large object"},
        },
    }
    if not with_depth:
        del bundle["DepthAnything2"]
        del bundle["DepthStats"]
    return bundle


class TestAssembly:
    def test_four_node_plan_uniform_depth(self):
        twin = assemble_digital_twin(PLAN, build_bundle())
        assert twin.frame_count == 1
        assert len(twin.frames[0].instances) == 2
        for inst in twin.frames[0].instances:
            assert inst.depth is not None
            assert inst.depth.mean == 4.0
            assert inst.depth.std == 0.0
            assert inst.depth.pixel_count == 4
        assert twin.global_description == "two objects on a table"
        assert twin.frames[0].instances[0].description == "a small object"

    def test_field_by_field_against_direct_construction(self):
        twin = assemble_digital_twin(PLAN, build_bundle())
        m1 = rect_mask(8, 1, 1, 3, 3)
        depth = DepthMap(8, 8, np.full((8, 8), 4.0))
        expected = make_instance(
            1, "obj1", m1, depth_stats(m1, depth), description="a small object"
        )
        assert twin.frames[0].instances[0] == expected

    def test_segmentation_only_plan(self):
        plan = parse_plan('{"SAM2": []}')
        bundle = {"SAM2": build_bundle()["SAM2"]}
        twin = assemble_digital_twin(plan, bundle)
        assert all(inst.depth is None for inst in twin.frames[0].instances)

    def test_missing_node_output_names_the_node(self):
        bundle = build_bundle()
        del bundle["DepthStats"]
        with pytest.raises(AssemblyError, match="DepthStats"):
            assemble_digital_twin(PLAN, bundle)

    def test_depth_dependency_output_required(self):
        bundle = build_bundle()
        bundle["DepthAnything2"] = {"role": "semantic"}
        with pytest.raises(AssemblyError, match="depth"):
            assemble_digital_twin(PLAN, bundle)

    def test_path_referenced_masks(self, tmp_path):
        bundle = build_bundle(inline=False, tmp_path=tmp_path)
        twin = assemble_digital_twin(PLAN, bundle, base_dir=tmp_path)
        inst = twin.frames[0].instances[0]
        assert inst.mask_path == "inst1.rle"
        assert inst.mask is None
        assert inst.depth.mean == 4.0
        assert inst.bbox == BoundingBox(1.0, 1.0, 3.0, 3.0)

    def test_bundle_dir_round_trip(self, tmp_path):
        from dtr1.records import canonical_json

        bundle = build_bundle()
        for node, payload in bundle.items():
            (tmp_path / f"{node}.json").write_text(canonical_json(payload), encoding="utf-8")
        loaded = load_bundle(tmp_path)
        assert set(loaded) == set(bundle)
        twin_a = assemble_digital_twin(PLAN, bundle)
        twin_b = assemble_digital_twin(PLAN, loaded)
        assert dt_to_text(twin_a) == dt_to_text(twin_b)
