"""Plan construction: compiles a validated model document plus catalogs into
the platform-specific contract consumed by codegen and the trainer.

A Plan bundles per-site retrieval (dialect query plus harmonization actions),
one shared preprocessing plan, the training configuration, and the federation
plan. The transformation is pure: equal inputs give hash-identical plans.

Scaling follows ``scaled = (value - offset) / factor`` with constants declared
in the model document, so every site applies byte-identical preprocessing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .canonical import digest_json
from .diagnostics import Diagnostic, MilaError, Stage, ValidationReport, error
from .model_core import (
    Aggregator,
    DataElementRef,
    ElementDatatype,
    ElementRole,
    FederationMode,
    ModelDocument,
    canonical_hash,
)
from .ontology import OntologyCatalog, resolve_concept
from .units import UnitRegistry
from .vdl import (
    Dialect,
    HarmonizationAction,
    OutputColumn,
    QueryText,
    SiteCatalog,
    check_availability,
    generate_query,
)

PRIVACY_RULES = ("parameter_vectors_only", "scalar_metrics_only")


@dataclass(frozen=True)
class TrainingConfig:
    algorithm_tag: str
    learning_rate: float
    local_epochs: int
    l2: float

    def to_json_dict(self) -> dict:
        return {
            "algorithm_tag": self.algorithm_tag,
            "learning_rate": self.learning_rate,
            "local_epochs": self.local_epochs,
            "l2": self.l2,
        }


@dataclass(frozen=True)
class PreprocessStep:
    """One of impute(element, constant), encode(element, categories),
    scale(element, offset, factor)."""

    op: str
    element: str
    constant: float | str | bool | None = None
    categories: tuple[str, ...] | None = None
    offset: float | None = None
    factor: float | None = None

    def to_json_dict(self) -> dict:
        out: dict = {"op": self.op, "element": self.element}
        if self.op == "impute":
            out["constant"] = self.constant
        elif self.op == "encode":
            out["categories"] = list(self.categories or ())
        elif self.op == "scale":
            out["offset"] = self.offset
            out["factor"] = self.factor
        return out


@dataclass(frozen=True)
class FeatureSlot:
    feature_name: str
    element: str
    index: int

    def to_json_dict(self) -> dict:
        return {"feature_name": self.feature_name, "element": self.element, "index": self.index}


@dataclass(frozen=True)
class PreprocessPlan:
    steps: tuple[PreprocessStep, ...]
    feature_layout: tuple[FeatureSlot, ...]
    label_element: str
    label_classes: tuple[str, ...]
    # Boolean gate columns: rows are dropped unless every one is true. They
    # never contribute features.
    cohort_filters: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "steps": [s.to_json_dict() for s in self.steps],
            "feature_layout": [f.to_json_dict() for f in self.feature_layout],
            "label_element": self.label_element,
            "label_classes": list(self.label_classes),
            "cohort_filters": list(self.cohort_filters),
        }


@dataclass(frozen=True)
class RetrievalPlan:
    site_id: str
    query: QueryText
    harmonization_actions: tuple[HarmonizationAction, ...]
    expected_columns: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "dialect": self.query.dialect.value,
            "query_text": self.query.text,
            "output_columns": [c.to_json_dict() for c in self.query.output_columns],
            "harmonization_actions": [a.to_json_dict() for a in self.harmonization_actions],
            "expected_columns": list(self.expected_columns),
        }


@dataclass(frozen=True)
class FederationPlan:
    mode: FederationMode
    sites: tuple[str, ...]
    rounds: int
    aggregator: Aggregator
    weighting: str
    min_local_instances: int
    privacy_rules: tuple[str, ...]
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "sites": list(self.sites),
            "rounds": self.rounds,
            "aggregator": self.aggregator.value,
            "weighting": self.weighting,
            "min_local_instances": self.min_local_instances,
            "privacy_rules": list(self.privacy_rules),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Plan:
    plan_id: str
    model_id: str
    model_hash: str
    retrieval: dict[str, RetrievalPlan]
    preprocess: PreprocessPlan
    training: TrainingConfig
    federation: FederationPlan
    ontology_refs: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "model_id": self.model_id,
            "model_hash": self.model_hash,
            "retrieval": {sid: rp.to_json_dict() for sid, rp in self.retrieval.items()},
            "preprocess": self.preprocess.to_json_dict(),
            "training": self.training.to_json_dict(),
            "federation": self.federation.to_json_dict(),
            "ontology_refs": list(self.ontology_refs),
        }

    def plan_hash(self) -> str:
        return digest_json(self.to_json_dict())

    def site_view(self, site_id: str) -> dict:
        """What one site receives: its retrieval plan plus the shared parts."""
        return {
            "site_id": site_id,
            "retrieval": self.retrieval[site_id].to_json_dict(),
            "preprocess": self.preprocess.to_json_dict(),
            "training": self.training.to_json_dict(),
        }


# ---------------------------------------------------------------------------
# Feature layout
# ---------------------------------------------------------------------------


def _categories_for(doc: ModelDocument, catalog: OntologyCatalog, elem: DataElementRef) -> tuple[str, ...]:
    concept = resolve_concept(catalog, elem.concept_uri)
    if concept is None or concept.value_set is None:
        raise MilaError(
            "SEM_NO_VALUE_SET",
            f"concept {elem.concept_uri!r} declares no value set for "
            f"categorical element {elem.local_name!r}",
        )
    return concept.value_set


def feature_layout(doc: ModelDocument, catalog: OntologyCatalog) -> tuple[FeatureSlot, ...]:
    """Predictors only, declaration order; categorical elements expand into
    one-hot blocks following the catalog's value-set order."""
    slots: list[FeatureSlot] = []
    index = 0
    for elem in doc.predictors:
        if elem.expected_datatype is ElementDatatype.CATEGORICAL:
            for category in _categories_for(doc, catalog, elem):
                slots.append(
                    FeatureSlot(
                        feature_name=f"{elem.local_name}={category}",
                        element=elem.local_name,
                        index=index,
                    )
                )
                index += 1
        else:
            slots.append(
                FeatureSlot(feature_name=elem.local_name, element=elem.local_name, index=index)
            )
            index += 1
    return tuple(slots)


def _label_classes(doc: ModelDocument, catalog: OntologyCatalog) -> tuple[str, ...]:
    outcome = doc.outcome
    if outcome.expected_datatype is ElementDatatype.BOOLEAN:
        return ("false", "true")
    return _categories_for(doc, catalog, outcome)


def _preprocess_plan(doc: ModelDocument, catalog: OntologyCatalog) -> PreprocessPlan:
    steps: list[PreprocessStep] = []
    for elem in doc.predictors:
        declared = doc.training.preprocessing.get(elem.local_name)
        if elem.expected_datatype is ElementDatatype.NUMERIC:
            constant = 0.0
            if declared is not None and isinstance(declared.impute_value, (int, float)):
                constant = float(declared.impute_value)
            offset = declared.scale_offset if declared and declared.scale_offset is not None else 0.0
            factor = declared.scale_factor if declared and declared.scale_factor is not None else 1.0
            steps.append(PreprocessStep(op="impute", element=elem.local_name, constant=constant))
            steps.append(
                PreprocessStep(op="scale", element=elem.local_name, offset=float(offset), factor=float(factor))
            )
        elif elem.expected_datatype is ElementDatatype.BOOLEAN:
            steps.append(PreprocessStep(op="impute", element=elem.local_name, constant=False))
        else:
            categories = _categories_for(doc, catalog, elem)
            constant = categories[0]
            if declared is not None and isinstance(declared.impute_value, str):
                constant = declared.impute_value
            steps.append(PreprocessStep(op="impute", element=elem.local_name, constant=constant))
            steps.append(PreprocessStep(op="encode", element=elem.local_name, categories=categories))
    return PreprocessPlan(
        steps=tuple(steps),
        feature_layout=feature_layout(doc, catalog),
        label_element=doc.outcome.local_name,
        label_classes=_label_classes(doc, catalog),
        cohort_filters=tuple(e.local_name for e in doc.cohort_filters),
    )


# ---------------------------------------------------------------------------
# Federation checks and the transformation itself
# ---------------------------------------------------------------------------


def validate_federation(doc: ModelDocument, sites: dict[str, SiteCatalog]) -> ValidationReport:
    """Site resolution and usable-site count for the declared mode."""
    out: list[Diagnostic] = []
    usable = 0
    for sid in doc.federation.site_ids:
        if sid in sites:
            usable += 1
        else:
            out.append(
                error(
                    "FED_UNKNOWN_SITE",
                    f"directive names site {sid!r} but no such catalog is loaded",
                    "/federation/site_ids",
                    Stage.FEDERATION,
                )
            )
    mode = doc.federation.mode
    if mode is FederationMode.LOCAL:
        if usable < 1:
            out.append(
                error(
                    "FED_TOO_FEW_SITES",
                    "mode=local needs its one declared site to be usable",
                    "/federation/site_ids",
                    Stage.FEDERATION,
                )
            )
    elif usable < 2:
        out.append(
            error(
                "FED_TOO_FEW_SITES",
                f"mode={mode.value} needs at least two usable sites, found {usable}",
                "/federation/site_ids",
                Stage.FEDERATION,
            )
        )
    return ValidationReport(tuple(out))


def transform(
    doc: ModelDocument,
    catalog: OntologyCatalog,
    sites: dict[str, SiteCatalog],
    registry: UnitRegistry,
    k_min: int | None = None,
) -> tuple[Plan | None, list[Diagnostic]]:
    """PIM -> PSM: availability and federation checks, then Plan assembly.

    ``k_min`` defaults to the document's own min_local_instances. Returns
    (None, diagnostics) when any check fails; pure and idempotent otherwise.
    """
    effective_k_min = k_min if k_min is not None else doc.federation.min_local_instances
    participating = [sites[sid] for sid in doc.federation.site_ids if sid in sites]
    availability = check_availability(doc, participating, registry, effective_k_min)
    federation_report = validate_federation(doc, sites)
    diags = list(availability.combined().diagnostics) + list(federation_report.diagnostics)
    if any(d.severity.value == "error" for d in diags):
        return None, diags

    model_hash = canonical_hash(doc)
    expected_columns = tuple(e.local_name for e in doc.data_elements)
    retrieval = {
        site.site_id: RetrievalPlan(
            site_id=site.site_id,
            query=generate_query(doc, site),
            harmonization_actions=availability.actions_for(site.site_id),
            expected_columns=expected_columns,
        )
        for site in participating
    }
    mode = doc.federation.mode
    rounds = doc.federation.rounds if mode is FederationMode.FEDERATED else 1
    federation = FederationPlan(
        mode=mode,
        sites=tuple(sorted(doc.federation.site_ids)),
        rounds=rounds,
        aggregator=doc.federation.aggregator,
        weighting="by_sample_count",
        min_local_instances=effective_k_min,
        privacy_rules=PRIVACY_RULES,
        seed=doc.federation.seed,
    )
    plan = Plan(
        plan_id=f"plan-{model_hash[:16]}",
        model_id=doc.id,
        model_hash=model_hash,
        retrieval=retrieval,
        preprocess=_preprocess_plan(doc, catalog),
        training=TrainingConfig(
            algorithm_tag=doc.training.algorithm_tag.value,
            learning_rate=doc.training.learning_rate,
            local_epochs=doc.training.local_epochs,
            l2=doc.training.l2,
        ),
        federation=federation,
        ontology_refs=doc.concept_uris(),
    )
    return plan, diags


# ---------------------------------------------------------------------------
# Plan deserialization (plan files are the cross-stage contract)
# ---------------------------------------------------------------------------


def plan_from_json_dict(raw: dict) -> Plan:
    retrieval: dict[str, RetrievalPlan] = {}
    for sid, rp in raw["retrieval"].items():
        query = QueryText(
            dialect=Dialect(rp["dialect"]),
            text=rp["query_text"],
            output_columns=tuple(
                OutputColumn(local_name=c["local_name"], concept_uri=c["concept_uri"], unit=c["unit"])
                for c in rp["output_columns"]
            ),
        )
        actions = tuple(
            HarmonizationAction(
                site_id=a["site_id"],
                local_name=a["local_name"],
                element_path=a["element_path"],
                from_unit=a["from_unit"],
                to_unit=a["to_unit"],
                factor=a["factor"],
                offset=a["offset"],
            )
            for a in rp["harmonization_actions"]
        )
        retrieval[sid] = RetrievalPlan(
            site_id=rp["site_id"],
            query=query,
            harmonization_actions=actions,
            expected_columns=tuple(rp["expected_columns"]),
        )
    pp = raw["preprocess"]
    preprocess = PreprocessPlan(
        steps=tuple(
            PreprocessStep(
                op=s["op"],
                element=s["element"],
                constant=s.get("constant"),
                categories=tuple(s["categories"]) if "categories" in s else None,
                offset=s.get("offset"),
                factor=s.get("factor"),
            )
            for s in pp["steps"]
        ),
        feature_layout=tuple(
            FeatureSlot(feature_name=f["feature_name"], element=f["element"], index=f["index"])
            for f in pp["feature_layout"]
        ),
        label_element=pp["label_element"],
        label_classes=tuple(pp["label_classes"]),
        cohort_filters=tuple(pp.get("cohort_filters", ())),
    )
    fed = raw["federation"]
    federation = FederationPlan(
        mode=FederationMode(fed["mode"]),
        sites=tuple(fed["sites"]),
        rounds=fed["rounds"],
        aggregator=Aggregator(fed["aggregator"]),
        weighting=fed["weighting"],
        min_local_instances=fed["min_local_instances"],
        privacy_rules=tuple(fed["privacy_rules"]),
        seed=fed["seed"],
    )
    training = TrainingConfig(
        algorithm_tag=raw["training"]["algorithm_tag"],
        learning_rate=raw["training"]["learning_rate"],
        local_epochs=raw["training"]["local_epochs"],
        l2=raw["training"]["l2"],
    )
    return Plan(
        plan_id=raw["plan_id"],
        model_id=raw["model_id"],
        model_hash=raw["model_hash"],
        retrieval=retrieval,
        preprocess=preprocess,
        training=training,
        federation=federation,
        ontology_refs=tuple(raw["ontology_refs"]),
    )
