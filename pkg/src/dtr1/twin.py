"""Three-level structured scene representation and its canonical text form.

A twin has video-level metadata (global description, frame count, source
frame references), per-frame scene/spatial descriptions, and per-instance
attributes (mask by file path or inline, bounding box, depth statistics,
semantic description, optional feature reference). The canonical JSON form
is schema-versioned and byte-stable for equal values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .masks import BinaryMask, DepthMap, DepthStats, depth_stats, load_mask, mask_bbox
from .metrics import BoundingBox
from .plan import PlanGraph, topological_order
from .records import canonical_json

TWIN_SCHEMA = "dtr1-twin/1"


class TwinSchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f'at "{path}": {message}')
        self.path = path


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceRecord:
    instance_id: int
    label: str
    description: str
    bbox: BoundingBox
    mask_path: Optional[str] = None
    mask: Optional[BinaryMask] = None
    depth: Optional[DepthStats] = None
    feature_path: Optional[str] = None

    def __post_init__(self):
        if (self.mask_path is None) == (self.mask is None):
            raise ValueError("exactly one of mask_path or inline mask must be set")
        if self.mask is not None:
            tight = mask_bbox(self.mask)
            if tuple(self.bbox.to_list()) != tuple(float(v) for v in tight):
                raise ValueError(
                    f"bbox {self.bbox.to_list()} does not match the mask's tight box {list(tight)}"
                )

    def load_mask(self, base_dir: Optional[str | Path] = None) -> BinaryMask:
        if self.mask is not None:
            return self.mask
        path = Path(self.mask_path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_mask(path)

    def to_dict(self) -> dict:
        out: dict = {
            "instance_id": self.instance_id,
            "label": self.label,
            "description": self.description,
            "bbox": self.bbox.to_list(),
        }
        if self.mask_path is not None:
            out["mask_path"] = self.mask_path
        if self.mask is not None:
            out["mask"] = self.mask.to_dict()
        if self.depth is not None:
            out["depth"] = self.depth.to_dict()
        if self.feature_path is not None:
            out["feature_path"] = self.feature_path
        return out


@dataclass(frozen=True)
class FrameRecord:
    t: int
    scene_description: str
    spatial_description: str
    instances: tuple[InstanceRecord, ...]

    def __post_init__(self):
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate instance ids in frame {self.t}")

    def instance(self, instance_id: int) -> InstanceRecord:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(f"no instance {instance_id} in frame {self.t}")

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "scene_description": self.scene_description,
            "spatial_description": self.spatial_description,
            "instances": [inst.to_dict() for inst in self.instances],
        }


@dataclass(frozen=True)
class DigitalTwin:
    global_description: str
    frame_count: int
    frames: tuple[FrameRecord, ...]
    source_refs: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("a twin needs at least one frame")
        if len(self.frames) != self.frame_count:
            raise ValueError(
                f"frames length {len(self.frames)} != frame_count {self.frame_count}"
            )
        for i, frame in enumerate(self.frames):
            if frame.t != i:
                raise ValueError(f"frame index {frame.t} at position {i}; expected {i}")

    def frame(self, t: int) -> FrameRecord:
        if not (0 <= t < self.frame_count):
            raise KeyError(f"no frame {t}")
        return self.frames[t]

    def to_dict(self) -> dict:
        return {
            "schema": TWIN_SCHEMA,
            "global_description": self.global_description,
            "frame_count": self.frame_count,
            "source_refs": list(self.source_refs),
            "frames": [f.to_dict() for f in self.frames],
        }


def dt_to_text(dt: DigitalTwin) -> str:
    """Canonical serialized form; equal twins produce identical bytes."""
    return canonical_json(dt.to_dict())


def _need(data: Mapping, key: str, path: str):
    if key not in data:
        raise TwinSchemaError(path, f"missing field {key!r}")
    return data[key]


def dt_from_text(text: str) -> DigitalTwin:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise TwinSchemaError("$", f"not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise TwinSchemaError("$", "twin must be a JSON object")
    if data.get("schema") != TWIN_SCHEMA:
        raise TwinSchemaError("schema", f"expected {TWIN_SCHEMA!r}")
    frame_count = _need(data, "frame_count", "frame_count")
    raw_frames = _need(data, "frames", "frames")
    if not isinstance(raw_frames, list):
        raise TwinSchemaError("frames", "must be a list")
    if not isinstance(frame_count, int) or isinstance(frame_count, bool):
        raise TwinSchemaError("frame_count", "must be an integer")
    if len(raw_frames) != frame_count:
        raise TwinSchemaError(
            "frames", f"length {len(raw_frames)} != frame_count {frame_count}"
        )
    frames = []
    for i, raw_frame in enumerate(raw_frames):
        fpath = f"frames[{i}]"
        if not isinstance(raw_frame, dict):
            raise TwinSchemaError(fpath, "must be an object")
        instances = []
        for j, raw_inst in enumerate(_need(raw_frame, "instances", f"{fpath}.instances")):
            ipath = f"{fpath}.instances[{j}]"
            if not isinstance(raw_inst, dict):
                raise TwinSchemaError(ipath, "must be an object")
            try:
                bbox = BoundingBox.from_list(_need(raw_inst, "bbox", f"{ipath}.bbox"))
            except ValueError as err:
                raise TwinSchemaError(f"{ipath}.bbox", str(err)) from err
            mask = raw_inst.get("mask")
            try:
                instances.append(
                    InstanceRecord(
                        instance_id=int(_need(raw_inst, "instance_id", f"{ipath}.instance_id")),
                        label=str(raw_inst.get("label", "")),
                        description=str(raw_inst.get("description", "")),
                        bbox=bbox,
                        mask_path=raw_inst.get("mask_path"),
                        mask=BinaryMask.from_dict(mask) if mask is not None else None,
                        depth=(
                            DepthStats.from_dict(raw_inst["depth"])
                            if raw_inst.get("depth") is not None
                            else None
                        ),
                        feature_path=raw_inst.get("feature_path"),
                    )
                )
            except ValueError as err:
                raise TwinSchemaError(ipath, str(err)) from err
        try:
            frames.append(
                FrameRecord(
                    t=int(_need(raw_frame, "t", f"{fpath}.t")),
                    scene_description=str(raw_frame.get("scene_description", "")),
                    spatial_description=str(raw_frame.get("spatial_description", "")),
                    instances=tuple(instances),
                )
            )
        except ValueError as err:
            raise TwinSchemaError(fpath, str(err)) from err
    try:
        return DigitalTwin(
            global_description=str(data.get("global_description", "")),
            frame_count=frame_count,
            frames=tuple(frames),
            source_refs=tuple(str(r) for r in data.get("source_refs", [])),
        )
    except ValueError as err:
        raise TwinSchemaError("frames", str(err)) from err


def load_twin(path: str | Path) -> DigitalTwin:
    return dt_from_text(Path(path).read_text(encoding="utf-8"))


def save_twin(dt: DigitalTwin, path: str | Path) -> None:
    Path(path).write_text(dt_to_text(dt) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Assembly from per-node output bundles.
#
# A bundle maps plan node names to role-tagged outputs:
#   segmentation: {"role": "segmentation",
#                  "frames": [[{"instance_id", "label", "mask" | "mask_path"}]]}
#   depth:        {"role": "depth", "frames": [DepthMap dict, ...]}
#   depth_stats:  {"role": "depth_stats"}            (computed from prerequisites)
#   semantic:     {"role": "semantic", "global_description", "frames":
#                  [{"scene_description", "spatial_description"}],
#                  "instance_descriptions": {"t:instance_id": text}}
#   features:     {"role": "features", "paths": {"t:instance_id": path}}
#   detection:    {"role": "detection", ...}         (accepted, not consumed)
# On disk a bundle is a directory with one `<node>.json` file per node.
# ---------------------------------------------------------------------------


def load_bundle(bundle_dir: str | Path) -> dict[str, dict]:
    bundle = {}
    for entry in sorted(Path(bundle_dir).glob("*.json")):
        bundle[entry.stem] = json.loads(entry.read_text(encoding="utf-8"))
    return bundle


def _instance_key(t: int, instance_id: int) -> str:
    return f"{t}:{instance_id}"


def assemble_digital_twin(
    plan: PlanGraph,
    outputs: Mapping[str, Mapping],
    source_refs: Sequence[str] = (),
    base_dir: Optional[str | Path] = None,
) -> DigitalTwin:
    """Assemble a twin from per-node outputs of an executed plan.

    Every plan vertex must have an output entry; depth statistics are
    computed here (mask pixels under the frame's depth map) when the plan
    includes a depth_stats node, which requires segmentation and depth
    outputs among that node's prerequisites.
    """
    order = topological_order(plan)
    for node in order:
        if node not in outputs:
            raise AssemblyError(f"missing output for plan node {node!r}")

    def nodes_with_role(names, role):
        return [n for n in names if outputs[n].get("role") == role]

    seg_nodes = nodes_with_role(order, "segmentation")
    if not seg_nodes:
        raise AssemblyError("plan produced no segmentation output to build instances from")
    seg = outputs[seg_nodes[0]]
    seg_frames = seg.get("frames")
    if not isinstance(seg_frames, list) or not seg_frames:
        raise AssemblyError(f"segmentation output of {seg_nodes[0]!r} has no frames")
    frame_count = len(seg_frames)

    depth_nodes = nodes_with_role(order, "depth")
    depth_maps: Optional[list[DepthMap]] = None
    if depth_nodes:
        raw = outputs[depth_nodes[0]].get("frames", [])
        if len(raw) != frame_count:
            raise AssemblyError(
                f"depth output of {depth_nodes[0]!r} covers {len(raw)} frames, expected {frame_count}"
            )
        depth_maps = [DepthMap.from_dict(d) for d in raw]

    stats_nodes = nodes_with_role(order, "depth_stats")
    if stats_nodes:
        prereqs = plan.prerequisites(stats_nodes[0])
        if not nodes_with_role(prereqs, "segmentation"):
            raise AssemblyError(
                f"depth-stats node {stats_nodes[0]!r} has no segmentation prerequisite output"
            )
        if not nodes_with_role(prereqs, "depth"):
            raise AssemblyError(
                f"depth-stats node {stats_nodes[0]!r} has no depth prerequisite output"
            )

    semantic_nodes = nodes_with_role(order, "semantic")
    semantic = outputs[semantic_nodes[0]] if semantic_nodes else {}
    instance_descriptions = semantic.get("instance_descriptions", {})
    semantic_frames = semantic.get("frames", [])

    feature_nodes = nodes_with_role(order, "features")
    feature_paths = outputs[feature_nodes[0]].get("paths", {}) if feature_nodes else {}

    frames = []
    for t in range(frame_count):
        instances = []
        for raw_inst in seg_frames[t]:
            instance_id = int(raw_inst["instance_id"])
            mask_path = raw_inst.get("mask_path")
            inline = raw_inst.get("mask")
            if (mask_path is None) == (inline is None):
                raise AssemblyError(
                    f"instance {instance_id} in frame {t} needs exactly one of mask/mask_path"
                )
            mask_obj = BinaryMask.from_dict(inline) if inline is not None else None
            pixel_mask = (
                mask_obj
                if mask_obj is not None
                else load_mask(
                    Path(base_dir) / mask_path if base_dir is not None else mask_path
                )
            )
            stats = None
            if stats_nodes:
                if depth_maps is None:
                    raise AssemblyError(
                        f"depth output missing for depth-stats node {stats_nodes[0]!r}"
                    )
                stats = depth_stats(pixel_mask, depth_maps[t])
            instances.append(
                InstanceRecord(
                    instance_id=instance_id,
                    label=str(raw_inst.get("label", "")),
                    description=str(
                        instance_descriptions.get(_instance_key(t, instance_id), "")
                    ),
                    bbox=BoundingBox.from_list([float(v) for v in mask_bbox(pixel_mask)]),
                    mask_path=mask_path,
                    mask=mask_obj,
                    depth=stats,
                    feature_path=feature_paths.get(_instance_key(t, instance_id)),
                )
            )
        frame_sem = semantic_frames[t] if t < len(semantic_frames) else {}
        frames.append(
            FrameRecord(
                t=t,
                scene_description=str(frame_sem.get("scene_description", "")),
                spatial_description=str(frame_sem.get("spatial_description", "")),
                instances=tuple(instances),
            )
        )
    return DigitalTwin(
        global_description=str(semantic.get("global_description", "")),
        frame_count=frame_count,
        frames=tuple(frames),
        source_refs=tuple(source_refs),
    )
