"""Clinical concept catalog and the semantic validation layer.

The catalog is a compact seed vocabulary: each concept carries a category
(mirroring FHIR-style resource roles), an optional unit dimension, parent
links forming a DAG, and the roles it may play in a model. Role rules decide
which (task kind, outcome category, predictor category) combinations are
clinically admissible; lookups not covered by an explicit rule are denied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .diagnostics import Diagnostic, MilaError, Stage, ValidationReport, error
from .model_core import ElementRole, ModelDocument, TaskKind
from .units import UnitDimension, UnitRegistry, default_registry


class ConceptCategory(str, Enum):
    CONDITION = "condition"
    OBSERVATION = "observation"
    LAB_TEST = "lab_test"
    TREATMENT = "treatment"
    ADVERSE_EVENT = "adverse_event"
    PATIENT_ATTRIBUTE = "patient_attribute"
    OUTCOME_MEASURE = "outcome_measure"


@dataclass(frozen=True)
class Concept:
    uri: str
    label: str
    category: ConceptCategory
    unit_dimension: UnitDimension | None
    parents: tuple[str, ...]
    allowed_roles: frozenset[ElementRole]
    # Ordered category labels for categorical concepts; the declaration order
    # here fixes the one-hot layout downstream.
    value_set: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RoleRule:
    task_kind: TaskKind
    outcome_category: ConceptCategory
    predictor_category: ConceptCategory
    allowed: bool


@dataclass(frozen=True)
class OntologyCatalog:
    version: str
    concepts: dict[str, Concept]
    role_rules: tuple[RoleRule, ...]

    def rule_allows(
        self,
        task_kind: TaskKind,
        outcome_category: ConceptCategory,
        predictor_category: ConceptCategory,
    ) -> bool:
        """Total lookup: triples without an explicit rule are denied."""
        for rule in self.role_rules:
            if (
                rule.task_kind is task_kind
                and rule.outcome_category is outcome_category
                and rule.predictor_category is predictor_category
            ):
                return rule.allowed
        return False


def _find_cycle(concepts: dict[str, Concept]) -> list[str] | None:
    """Iterative three-color DFS over parent edges; returns one cycle if any."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {uri: WHITE for uri in concepts}
    for start in sorted(concepts):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        trail = [start]
        color[start] = GRAY
        while stack:
            uri, edge = stack[-1]
            parents = [p for p in concepts[uri].parents if p in concepts]
            if edge < len(parents):
                stack[-1] = (uri, edge + 1)
                nxt = parents[edge]
                if color[nxt] == GRAY:
                    return trail[trail.index(nxt):] + [nxt]
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, 0))
                    trail.append(nxt)
            else:
                color[uri] = BLACK
                stack.pop()
                trail.pop()
    return None


def load_catalog(text: str) -> tuple[OntologyCatalog | None, list[Diagnostic]]:
    """Parse and check a catalog document; total, returns diagnostics."""
    diags: list[Diagnostic] = []

    def err(code: str, msg: str, path: str) -> None:
        diags.append(error(code, msg, path, Stage.SEMANTICS))

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        err("ONT_SYNTAX", f"not valid JSON: {exc}", "")
        return None, diags
    if not isinstance(raw, dict) or not isinstance(raw.get("concepts"), list):
        err("ONT_SYNTAX", "catalog must be an object with a 'concepts' list", "")
        return None, diags

    concepts: dict[str, Concept] = {}
    for i, entry in enumerate(raw["concepts"]):
        path = f"/concepts/{i}"
        if not isinstance(entry, dict):
            err("ONT_SYNTAX", "concept must be an object", path)
            continue
        uri = entry.get("uri")
        label = entry.get("label")
        if not isinstance(uri, str) or not uri or not isinstance(label, str):
            err("ONT_SYNTAX", "concept needs string 'uri' and 'label'", path)
            continue
        if uri in concepts:
            err("ONT_DUP_URI", f"concept {uri!r} declared more than once", f"{path}/uri")
            continue
        try:
            category = ConceptCategory(entry.get("category"))
        except ValueError:
            err("ONT_SYNTAX", f"unknown category {entry.get('category')!r}", f"{path}/category")
            continue
        dimension: UnitDimension | None = None
        if entry.get("unit_dimension") is not None:
            try:
                dimension = UnitDimension(entry["unit_dimension"])
            except ValueError:
                err("ONT_SYNTAX", f"unknown unit dimension {entry['unit_dimension']!r}", f"{path}/unit_dimension")
                continue
        parents_raw = entry.get("parents", [])
        roles_raw = entry.get("allowed_roles", [])
        if not isinstance(parents_raw, list) or not all(isinstance(p, str) for p in parents_raw):
            err("ONT_SYNTAX", "'parents' must be a list of URIs", f"{path}/parents")
            continue
        try:
            roles = frozenset(ElementRole(r) for r in roles_raw)
        except (ValueError, TypeError):
            err("ONT_SYNTAX", "'allowed_roles' must list element roles", f"{path}/allowed_roles")
            continue
        value_set: tuple[str, ...] | None = None
        if entry.get("value_set") is not None:
            vs = entry["value_set"]
            if not isinstance(vs, list) or not all(isinstance(v, str) for v in vs) or len(set(vs)) != len(vs):
                err("ONT_SYNTAX", "'value_set' must be a list of distinct labels", f"{path}/value_set")
                continue
            value_set = tuple(vs)
        concepts[uri] = Concept(
            uri=uri,
            label=label,
            category=category,
            unit_dimension=dimension,
            parents=tuple(parents_raw),
            allowed_roles=roles,
            value_set=value_set,
        )

    for i, entry in enumerate(raw["concepts"]):
        if not isinstance(entry, dict):
            continue
        uri = entry.get("uri")
        if uri not in concepts:
            continue
        for parent in concepts[uri].parents:
            if parent not in concepts:
                err(
                    "ONT_DANGLING_PARENT",
                    f"parent {parent!r} of {uri!r} is not in the catalog",
                    f"/concepts/{i}/parents",
                )

    cycle = _find_cycle(concepts)
    if cycle is not None:
        err("ONT_CYCLE", "parent graph contains a cycle: " + " -> ".join(cycle), "/concepts")

    rules: list[RoleRule] = []
    seen_triples: set[tuple[TaskKind, ConceptCategory, ConceptCategory]] = set()
    rules_raw = raw.get("role_rules", [])
    if not isinstance(rules_raw, list):
        err("ONT_SYNTAX", "'role_rules' must be a list", "/role_rules")
        rules_raw = []
    for i, entry in enumerate(rules_raw):
        path = f"/role_rules/{i}"
        if not isinstance(entry, dict):
            err("ONT_SYNTAX", "rule must be an object", path)
            continue
        try:
            rule = RoleRule(
                task_kind=TaskKind(entry.get("task_kind")),
                outcome_category=ConceptCategory(entry.get("outcome_category")),
                predictor_category=ConceptCategory(entry.get("predictor_category")),
                allowed=entry["allowed"],
            )
        except (ValueError, KeyError):
            err("ONT_SYNTAX", "rule needs task_kind, outcome_category, predictor_category, allowed", path)
            continue
        if not isinstance(rule.allowed, bool):
            err("ONT_SYNTAX", "'allowed' must be a boolean", f"{path}/allowed")
            continue
        triple = (rule.task_kind, rule.outcome_category, rule.predictor_category)
        if triple in seen_triples:
            err("ONT_SYNTAX", "rule triple declared more than once", path)
            continue
        seen_triples.add(triple)
        rules.append(rule)

    if any(d.severity.value == "error" for d in diags):
        return None, diags
    version = raw.get("version")
    catalog = OntologyCatalog(
        version=version if isinstance(version, str) else "0",
        concepts=concepts,
        role_rules=tuple(rules),
    )
    return catalog, diags


def default_catalog() -> OntologyCatalog:
    text = resources.files("mila").joinpath("data/workspace/ontology.json").read_text("utf-8")
    catalog, diags = load_catalog(text)
    if catalog is None:  # pragma: no cover - bundled data is validated by tests
        raise MilaError("ONT_SYNTAX", f"bundled catalog is invalid: {diags}")
    return catalog


def resolve_concept(catalog: OntologyCatalog, uri: str) -> Concept | None:
    """Exact-match lookup; unknown URIs yield None, never a failure."""
    return catalog.concepts.get(uri)


def validate_semantics(
    doc: ModelDocument,
    catalog: OntologyCatalog,
    registry: UnitRegistry | None = None,
) -> ValidationReport:
    """Concept existence, role compatibility, and unit-dimension agreement.

    The verdict is a pure function of the inputs; every diagnostic carries
    the element path of the offending data element.
    """
    registry = registry or default_registry()
    out: list[Diagnostic] = []

    for elem in doc.data_elements:
        concept = resolve_concept(catalog, elem.concept_uri)
        if concept is None:
            out.append(
                error(
                    "SEM_UNKNOWN_CONCEPT",
                    f"concept {elem.concept_uri!r} is not in the catalog",
                    elem.path,
                    Stage.SEMANTICS,
                )
            )
            continue
        if elem.role not in concept.allowed_roles:
            out.append(
                error(
                    "SEM_ROLE_FORBIDDEN",
                    f"concept {concept.label!r} may not be used as {elem.role.value}",
                    elem.path,
                    Stage.SEMANTICS,
                )
            )
        if elem.expected_unit is not None:
            declared_dim = registry.dimension_of(elem.expected_unit)
            if declared_dim is None:
                out.append(
                    error(
                        "SEM_UNIT_DIMENSION",
                        f"unit {elem.expected_unit!r} has no registered dimension",
                        elem.path,
                        Stage.SEMANTICS,
                    )
                )
            elif concept.unit_dimension is None or concept.unit_dimension is not declared_dim:
                have = concept.unit_dimension.value if concept.unit_dimension else "none"
                out.append(
                    error(
                        "SEM_UNIT_DIMENSION",
                        f"unit {elem.expected_unit!r} is {declared_dim.value} but "
                        f"concept {concept.label!r} expects {have}",
                        elem.path,
                        Stage.SEMANTICS,
                    )
                )

    outcome_concept = resolve_concept(catalog, doc.outcome.concept_uri)
    if outcome_concept is not None:
        for elem in doc.predictors:
            concept = resolve_concept(catalog, elem.concept_uri)
            if concept is None:
                continue
            if not catalog.rule_allows(doc.task.kind, outcome_concept.category, concept.category):
                out.append(
                    error(
                        "SEM_RULE_DENY",
                        f"{concept.category.value} predictors are not admissible for "
                        f"{outcome_concept.category.value} outcomes under task "
                        f"{doc.task.kind.value}",
                        elem.path,
                        Stage.SEMANTICS,
                    )
                )

    return ValidationReport(tuple(out))
