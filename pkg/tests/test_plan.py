"""Plan parsing, DAG validation, topological order, permutation oracle."""

import itertools
import random

import pytest

from dtr1.plan import (
    CycleError,
    ModelEntry,
    ModelRegistry,
    NodeKind,
    PlanFormatError,
    PlanGraph,
    default_registry,
    parse_plan,
    topological_order,
    validate_plan,
    validate_plan_text,
)

EXAMPLE_PLAN = (
    '{"SAM2": [], "DepthAnything2": [], '
    '"DepthStats": ["SAM2", "DepthAnything2"], "SemanticAnalysis": ["SAM2"]}'
)


# ---------------------------------------------------------------------------
# Oracles.
# ---------------------------------------------------------------------------


def perm_acyclic_oracle(vertices, edges) -> bool:
    """Is there any permutation placing every prerequisite before its
    dependent? Lazy enumeration with prefix pruning; cross-checked against
    the full scan for small graphs and reachability for all."""
    vertices = list(vertices)
    prereqs = {v: set() for v in vertices}
    for u, v in edges:
        if u == v:
            return False
        prereqs[v].add(u)

    def extend(placed, remaining):
        if not remaining:
            return True
        for node in list(remaining):
            if prereqs[node] <= placed:
                if extend(placed | {node}, remaining - {node}):
                    return True
        return False

    return extend(frozenset(), frozenset(vertices))


def full_perm_oracle(vertices, edges) -> bool:
    vertices = list(vertices)
    for perm in itertools.permutations(vertices):
        index = {v: i for i, v in enumerate(perm)}
        if all(index[u] < index[v] for u, v in edges):
            return True
    return False


def reachability_cyclic(vertices, edges) -> bool:
    reach = {v: set() for v in vertices}
    for u, v in edges:
        reach[u].add(v)
    for k in vertices:
        for i in vertices:
            if k in reach[i]:
                reach[i] |= reach[k]
    return any(v in reach[v] for v in vertices)


def random_graph(rng: random.Random, max_nodes: int = 12):
    n = rng.randint(2, max_nodes)
    vertices = [f"N{i}" for i in range(n)]
    edges = set()
    for u in vertices:
        for v in vertices:
            if u != v and rng.random() < 0.22:
                edges.add((u, v))
    if rng.random() < 0.15:
        v = rng.choice(vertices)
        edges.add((v, v))
    return PlanGraph(
        vertices=frozenset(vertices), edges=frozenset(edges), declared=frozenset(vertices)
    )


# ---------------------------------------------------------------------------
# Parsing.
# ---------------------------------------------------------------------------


class TestParsePlan:
    def test_example_plan(self):
        g = parse_plan(EXAMPLE_PLAN)
        assert len(g.vertices) == 4
        assert g.edges == {
            ("SAM2", "DepthStats"),
            ("DepthAnything2", "DepthStats"),
            ("SAM2", "SemanticAnalysis"),
        }

    def test_empty_plan_is_format_valid(self, registry):
        g = parse_plan("{}")
        assert g.vertices == frozenset()
        verdict = validate_plan(g, registry)
        assert verdict.valid_format and verdict.acyclic
        assert not verdict.valid_dependencies
        assert any("no nodes selected" in v for v in verdict.violations)

    def test_self_loop_fails_acyclicity_downstream(self, registry):
        g = parse_plan('{"SAM2": ["SAM2"]}')
        assert ("SAM2", "SAM2") in g.edges
        assert not validate_plan(g, registry).acyclic

    def test_duplicate_keys_rejected(self):
        with pytest.raises(PlanFormatError, match="duplicate"):
            parse_plan('{"SAM2": [], "SAM2": []}')

    @pytest.mark.parametrize(
        "bad",
        ["not json", "[1, 2]", '{"A": "B"}', '{"A": [1]}', '{"A": [""]}', '{"": []}'],
    )
    def test_malformed_variants(self, bad):
        with pytest.raises(PlanFormatError):
            parse_plan(bad)

    def test_prereq_only_vertices_are_accepted(self):
        g = parse_plan('{"DepthStats": ["SAM2"]}')
        assert g.vertices == {"DepthStats", "SAM2"}
        assert g.declared == {"DepthStats"}


class TestValidatePlan:
    def test_example_plan_all_true(self, registry):
        verdict = validate_plan(parse_plan(EXAMPLE_PLAN), registry)
        assert verdict.valid_format and verdict.acyclic and verdict.valid_dependencies
        assert verdict.violations == ()
        assert verdict.all_valid

    def test_two_cycle(self, registry):
        verdict = validate_plan(parse_plan('{"A": ["B"], "B": ["A"]}'), registry)
        assert not verdict.acyclic

    def test_unknown_model_named_in_violation(self, registry):
        verdict = validate_plan(parse_plan('{"SAM3": []}'), registry)
        assert not verdict.valid_dependencies
        assert any("SAM3" in v for v in verdict.violations)
        # independent oracle: membership scan of registry names
        assert "SAM3" not in registry.names()

    def test_foundation_with_prereqs_is_invalid(self, registry):
        verdict = validate_plan(parse_plan('{"SAM2": ["DepthAnything2"], "DepthAnything2": []}'), registry)
        assert not verdict.valid_dependencies

    def test_derived_without_prereqs_is_invalid(self, registry):
        verdict = validate_plan(parse_plan('{"DepthStats": []}'), registry)
        assert not verdict.valid_dependencies

    def test_prereq_only_vertex_noted_not_fatal(self, registry):
        verdict = validate_plan(parse_plan('{"DepthStats": ["SAM2", "DepthAnything2"]}'), registry)
        assert verdict.valid_dependencies
        assert verdict.violations == ()
        assert any("SAM2" in n for n in verdict.notes)

    def test_flags_true_iff_violations_empty(self, registry):
        rng = random.Random(5)
        for _ in range(40):
            g = random_graph(rng, max_nodes=6)
            verdict = validate_plan(g, registry)
            assert (
                verdict.valid_format and verdict.acyclic and verdict.valid_dependencies
            ) == (verdict.violations == ())

    def test_malformed_text_fails_format(self, registry):
        verdict = validate_plan_text("not a plan", registry)
        assert verdict.to_dict()["valid_format"] is False
        assert not verdict.all_valid

    def test_determinism(self, registry):
        a = validate_plan(parse_plan(EXAMPLE_PLAN), registry)
        b = validate_plan(parse_plan(EXAMPLE_PLAN), registry)
        assert a == b


class TestTopologicalOrder:
    def test_example_order_matches_bruteforce_lexicographic(self):
        g = parse_plan(EXAMPLE_PLAN)
        # brute force: all edge-respecting permutations, lexicographically smallest
        valid = [
            perm
            for perm in itertools.permutations(sorted(g.vertices))
            if all(perm.index(u) < perm.index(v) for u, v in g.edges)
        ]
        assert topological_order(g) == list(min(valid))
        assert topological_order(g) == [
            "DepthAnything2",
            "SAM2",
            "DepthStats",
            "SemanticAnalysis",
        ]

    def test_single_node(self):
        g = parse_plan('{"SAM2": []}')
        assert topological_order(g) == ["SAM2"]

    def test_two_cycle_raises_with_cycle_nodes(self):
        g = parse_plan('{"A": ["B"], "B": ["A"]}')
        with pytest.raises(CycleError) as exc:
            topological_order(g)
        assert set(exc.value.cycle) >= {"A", "B"}

    def test_edges_respected_on_random_dags(self):
        rng = random.Random(11)
        checked = 0
        while checked < 30:
            g = random_graph(rng)
            try:
                order = topological_order(g)
            except CycleError:
                continue
            checked += 1
            index = {v: i for i, v in enumerate(order)}
            assert all(index[u] < index[v] for u, v in g.edges)

    def test_insertion_order_does_not_matter(self):
        forward = parse_plan('{"A2": [], "B2": ["A2"], "C2": ["A2"]}')
        backward = parse_plan('{"C2": ["A2"], "B2": ["A2"], "A2": []}')
        # unknown-model names are fine here; ordering is what is under test
        assert topological_order(forward) == topological_order(backward)

    def test_succeeds_iff_acyclic_on_random_graphs(self, registry):
        rng = random.Random(23)
        for _ in range(60):
            g = random_graph(rng)
            oracle = perm_acyclic_oracle(g.vertices, g.edges)
            try:
                topological_order(g)
                engine = True
            except CycleError:
                engine = False
            assert engine == oracle
            assert engine == (not reachability_cyclic(g.vertices, g.edges))

    def test_pruned_oracle_matches_full_enumeration_on_small_graphs(self):
        rng = random.Random(31)
        for _ in range(60):
            g = random_graph(rng, max_nodes=6)
            assert perm_acyclic_oracle(g.vertices, g.edges) == full_perm_oracle(
                g.vertices, g.edges
            )


class TestRegistry:
    def test_default_registry_has_eight_entries(self, registry):
        assert len(registry.entries) == 8
        foundations = {e.name for e in registry.entries if e.kind is NodeKind.FOUNDATION}
        assert foundations == {"SAM2", "DepthAnything2", "Qwen2.5-VL", "DINO-2", "OWLv2", "OpenCV"}
        derived = {e.name for e in registry.entries if e.kind is NodeKind.DERIVED_OPERATOR}
        assert derived == {"DepthStats", "SemanticAnalysis"}

    def test_registry_loads_from_file(self, tmp_path, registry):
        path = tmp_path / "registry.json"
        path.write_text(registry.canonical_text(), encoding="utf-8")
        assert ModelRegistry.load(path) == registry

    def test_duplicate_names_rejected(self):
        entry = ModelEntry("X", NodeKind.FOUNDATION, "", "", "")
        with pytest.raises(ValueError):
            ModelRegistry(entries=(entry, entry))

    def test_new_entries_extend_validation(self, registry):
        extended = ModelRegistry(
            entries=registry.entries
            + (ModelEntry("SAM3", NodeKind.FOUNDATION, "segmentation", "", ""),)
        )
        assert validate_plan(parse_plan('{"SAM3": []}'), extended).valid_dependencies
