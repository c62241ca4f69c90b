"""Construction-plan graphs: parsing, validation, and execution order.

A plan is a JSON object map ``{"Node": ["Prereq", ...], ...}``: keys are the
selected vision-model nodes, values list their prerequisites. Edges run from
prerequisite to dependent. Validation checks three independent indicators:
well-formed plan text, acyclicity, and dependency validity against a model
registry (known names plus kind rules: foundation nodes take raw input and
have no prerequisites, derived operators need at least one).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .records import canonical_json


class PlanFormatError(Exception):
    pass


class CycleError(Exception):
    def __init__(self, cycle: list[str]):
        super().__init__("cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class NodeKind(Enum):
    FOUNDATION = "foundation"
    DERIVED_OPERATOR = "derived_operator"


@dataclass(frozen=True)
class ModelEntry:
    name: str
    kind: NodeKind
    capability: str
    input_spec: str
    output_spec: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "capability": self.capability,
            "input_spec": self.input_spec,
            "output_spec": self.output_spec,
        }


@dataclass(frozen=True)
class ModelRegistry:
    entries: tuple[ModelEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("registry names must be unique")
        if any(not n for n in names):
            raise ValueError("registry names must be non-empty")

    def names(self) -> frozenset[str]:
        return frozenset(e.name for e in self.entries)

    def kind_of(self, name: str) -> Optional[NodeKind]:
        for e in self.entries:
            if e.name == name:
                return e.kind
        return None

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelRegistry":
        entries = []
        for raw in data["entries"]:
            entries.append(
                ModelEntry(
                    name=raw["name"],
                    kind=NodeKind(raw["kind"]),
                    capability=raw.get("capability", ""),
                    input_spec=raw.get("input_spec", ""),
                    output_spec=raw.get("output_spec", ""),
                )
            )
        return cls(entries=tuple(entries))

    @classmethod
    def load(cls, path: str | Path) -> "ModelRegistry":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def canonical_text(self) -> str:
        return canonical_json(self.to_dict())


def default_registry() -> ModelRegistry:
    raw = resources.files("dtr1.data").joinpath("registry.json").read_text(encoding="utf-8")
    return ModelRegistry.from_dict(json.loads(raw))


@dataclass(frozen=True)
class PlanGraph:
    vertices: frozenset[str]
    edges: frozenset[tuple[str, str]]  # (prerequisite, dependent)
    declared: frozenset[str]  # vertices that appeared as map keys

    def prerequisites(self, node: str) -> frozenset[str]:
        return frozenset(u for (u, v) in self.edges if v == node)


@dataclass(frozen=True)
class DagVerdict:
    valid_format: bool
    acyclic: bool
    valid_dependencies: bool
    violations: tuple[str, ...]
    notes: tuple[str, ...] = field(default=())

    @property
    def all_valid(self) -> bool:
        return self.valid_format and self.acyclic and self.valid_dependencies

    def to_dict(self) -> dict:
        return {
            "valid_format": self.valid_format,
            "acyclic": self.acyclic,
            "valid_dependencies": self.valid_dependencies,
            "violations": list(self.violations),
            "notes": list(self.notes),
        }


def _reject_duplicate_keys(pairs):
    seen = set()
    out = {}
    for key, value in pairs:
        if key in seen:
            raise PlanFormatError(f"duplicate node {key!r}")
        seen.add(key)
        out[key] = value
    return out


def parse_plan(text: str) -> PlanGraph:
    """Parse dependency-specification text into a graph.

    Self-dependencies are retained as edges so validation can flag them;
    they are not silently dropped.
    """
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except PlanFormatError:
        raise
    except (json.JSONDecodeError, ValueError) as err:
        raise PlanFormatError(f"plan is not a JSON object map: {err}") from err
    if not isinstance(data, dict):
        raise PlanFormatError("plan must be a JSON object map")
    vertices = set()
    edges = set()
    for node, prereqs in data.items():
        if not isinstance(node, str) or not node:
            raise PlanFormatError("node names must be non-empty strings")
        if not isinstance(prereqs, list) or any(not isinstance(p, str) for p in prereqs):
            raise PlanFormatError(f"prerequisites of {node!r} must be a list of names")
        vertices.add(node)
        for p in prereqs:
            if not p:
                raise PlanFormatError(f"empty prerequisite name under {node!r}")
            vertices.add(p)
            edges.add((p, node))
    return PlanGraph(
        vertices=frozenset(vertices),
        edges=frozenset(edges),
        declared=frozenset(data.keys()),
    )


def _find_cycle(g: PlanGraph) -> Optional[list[str]]:
    adjacency: dict[str, list[str]] = {v: [] for v in g.vertices}
    for u, v in sorted(g.edges):
        adjacency[u].append(v)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in g.vertices}
    stack: list[str] = []

    def dfs(node: str) -> Optional[list[str]]:
        color[node] = GRAY
        stack.append(node)
        for nxt in adjacency[node]:
            if color[nxt] == GRAY:
                return stack[stack.index(nxt) :] + [nxt]
            if color[nxt] == WHITE:
                found = dfs(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for v in sorted(g.vertices):
        if color[v] == WHITE:
            found = dfs(v)
            if found:
                return found
    return None


def topological_order(g: PlanGraph) -> list[str]:
    """Execution order: prerequisites first, ties broken lexicographically."""
    indegree = {v: 0 for v in g.vertices}
    adjacency: dict[str, list[str]] = {v: [] for v in g.vertices}
    for u, v in g.edges:
        indegree[v] += 1
        adjacency[u].append(v)
    ready = [v for v in g.vertices if indegree[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for nxt in adjacency[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(g.vertices):
        cycle = _find_cycle(g)
        raise CycleError(cycle if cycle else sorted(v for v in g.vertices if indegree[v] > 0))
    return order


def validate_plan(g: PlanGraph, registry: ModelRegistry) -> DagVerdict:
    """Check acyclicity and dependency validity of a parsed plan."""
    violations: list[str] = []
    notes: list[str] = []

    acyclic = True
    cycle = _find_cycle(g)
    if cycle is not None:
        acyclic = False
        violations.append("circular dependency: " + " -> ".join(cycle))

    known = registry.names()
    dep_violations: list[str] = []
    if not g.vertices:
        dep_violations.append("no nodes selected")
    for node in sorted(g.vertices):
        if node not in known:
            dep_violations.append(f"unknown model {node!r}")
    for node in sorted(g.vertices):
        kind = registry.kind_of(node)
        if kind is None:
            continue
        n_prereq = len(g.prerequisites(node))
        if kind is NodeKind.FOUNDATION and n_prereq > 0:
            dep_violations.append(
                f"foundation model {node!r} takes raw visual input and cannot have prerequisites"
            )
        if kind is NodeKind.DERIVED_OPERATOR and n_prereq == 0:
            dep_violations.append(f"derived operator {node!r} requires at least one prerequisite")
    for node in sorted(g.vertices - g.declared):
        notes.append(f"{node!r} appears only as a prerequisite; treated as having none itself")

    violations.extend(dep_violations)
    return DagVerdict(
        valid_format=True,
        acyclic=acyclic,
        valid_dependencies=not dep_violations,
        violations=tuple(violations),
        notes=tuple(notes),
    )


def validate_plan_text(text: Optional[str], registry: ModelRegistry) -> DagVerdict:
    """Parse-then-validate; malformed or absent text fails the format flag."""
    if text is None:
        return DagVerdict(False, False, False, ("no plan present",))
    try:
        graph = parse_plan(text)
    except PlanFormatError as err:
        return DagVerdict(False, False, False, (str(err),))
    verdict = validate_plan(graph, registry)
    return verdict
