"""Model-to-plan transformation: feature layout, preprocessing, federation."""

import json

import pytest

from mila.canonical import canonical_json
from mila.diagnostics import MilaError
from mila.model_core import canonical_hash, parse_model
from mila.planner import feature_layout, plan_from_json_dict, transform, validate_federation

CONCEPTS = "http://clinical.example.org/concepts"


def _doc_from(raw: dict):
    doc, diags = parse_model(json.dumps(raw))
    assert doc is not None, [d.message for d in diags]
    return doc


def test_feature_layout_widths_and_order(workspace, docs):
    # hand-counted: numeric slots are 1 wide, categoricals expand to their
    # value-set size in catalog order
    expected = {
        "model_a": ["age", "systolic_bp", "blood_glucose"],
        "model_b": [
            "therapy_type=chemotherapy",
            "therapy_type=immunotherapy",
            "therapy_type=targeted",
            "therapy_type=combination",
            "ae_grade",
            "days_since_treatment",
        ],
        "model_c": [
            "therapy_type=chemotherapy",
            "therapy_type=immunotherapy",
            "therapy_type=targeted",
            "therapy_type=combination",
            "crp_level",
            "lymphocyte_count",
        ],
        "model_d": [
            "age",
            "therapy_type=chemotherapy",
            "therapy_type=immunotherapy",
            "therapy_type=targeted",
            "therapy_type=combination",
            "qol_score",
            "lymphocyte_count",
        ],
    }
    for model_id, names in expected.items():
        slots = feature_layout(docs[model_id], workspace.catalog)
        assert [s.feature_name for s in slots] == names
        assert [s.index for s in slots] == list(range(len(names)))


def test_categorical_without_value_set_is_rejected(workspace):
    raw = {
        "id": "no_value_set",
        "name": "No_value_set",
        "version": "0.1.0",
        "task": {"kind": "treatment_ae_detection", "description": "probe"},
        "data_elements": [
            {
                "local_name": "outcome_flag",
                "concept_uri": f"{CONCEPTS}/irae_detected",
                "role": "outcome",
                "expected_datatype": "boolean",
            },
            {
                # ae_grade declares no value set in the catalog
                "local_name": "ae_grade",
                "concept_uri": f"{CONCEPTS}/ae_grade",
                "role": "predictor",
                "expected_datatype": "categorical",
            },
        ],
        "federation": {
            "mode": "federated",
            "site_ids": ["clinic_east", "clinic_south"],
            "rounds": 1,
            "min_local_instances": 2,
            "aggregator": "fedavg",
            "seed": 5,
        },
        "training": {
            "algorithm_tag": "logistic_regression",
            "executable": True,
            "learning_rate": 0.1,
            "local_epochs": 1,
            "l2": 0.0,
            "preprocessing": {},
        },
        "metadata": {"owner": "tests"},
    }
    doc = _doc_from(raw)
    with pytest.raises(MilaError) as exc:
        feature_layout(doc, workspace.catalog)
    assert exc.value.code == "SEM_NO_VALUE_SET"


def test_plan_identity_fields(workspace, docs, plans):
    for model_id, plan in plans.items():
        doc = docs[model_id]
        assert plan.model_id == model_id
        assert plan.model_hash == canonical_hash(doc)
        assert plan.plan_id == f"plan-{plan.model_hash[:16]}"
        assert plan.federation.seed == doc.federation.seed
        assert plan.federation.min_local_instances == doc.federation.min_local_instances
        assert plan.federation.rounds == doc.federation.rounds
        assert plan.ontology_refs == doc.concept_uris()
        assert set(plan.retrieval) == set(doc.federation.site_ids)


def test_preprocess_steps_follow_declared_constants(plans):
    plan = plans["model_b"]
    by_element = {}
    for step in plan.preprocess.steps:
        by_element.setdefault(step.element, []).append(step)
    grade_ops = [(s.op, s.offset, s.factor, s.constant) for s in by_element["ae_grade"]]
    assert grade_ops == [("impute", None, None, 0.0), ("scale", 2.0, 1.0, None)]
    therapy_ops = [(s.op, s.constant, s.categories) for s in by_element["therapy_type"]]
    assert therapy_ops == [
        ("impute", "chemotherapy", None),
        ("encode", None, ("chemotherapy", "immunotherapy", "targeted", "combination")),
    ]
    assert plan.preprocess.label_element == "ae_treatment_related"
    assert plan.preprocess.label_classes == ("false", "true")
    assert plan.preprocess.cohort_filters == ("on_immunotherapy",)


def test_categorical_label_classes_follow_catalog(plans):
    assert plans["model_a"].preprocess.label_classes == ("regimen_a", "regimen_b", "regimen_c")
    assert plans["model_d"].preprocess.label_classes == (
        "none",
        "gastrointestinal",
        "dermatological",
        "endocrine",
    )


def test_plan_round_trip_through_json(plans):
    for plan in plans.values():
        raw = json.loads(canonical_json(plan.to_json_dict()))
        again = plan_from_json_dict(raw)
        assert again.to_json_dict() == plan.to_json_dict()
        assert again.plan_hash() == plan.plan_hash()


def test_plan_hash_is_content_addressed(plans):
    hashes = {plan.plan_hash() for plan in plans.values()}
    assert len(hashes) == len(plans)
    for plan in plans.values():
        assert plan.plan_hash() == plan_from_json_dict(plan.to_json_dict()).plan_hash()


def test_site_view_carries_only_that_site(plans):
    plan = plans["model_a"]
    view = plan.site_view("clinic_south")
    assert view["site_id"] == "clinic_south"
    assert view["retrieval"]["site_id"] == "clinic_south"
    blob = json.dumps(view)
    for other in ("clinic_east", "clinic_north", "clinic_west"):
        assert other not in blob
    # shared parts ride along unchanged
    assert view["preprocess"] == plan.preprocess.to_json_dict()
    assert view["training"] == plan.training.to_json_dict()


def test_k_min_override_is_recorded(workspace, docs):
    plan, diags = transform(
        docs["model_a"], workspace.catalog, workspace.sites, workspace.registry, k_min=11
    )
    assert plan is not None, [d.message for d in diags]
    assert plan.federation.min_local_instances == 11

    plan, diags = transform(
        docs["model_a"], workspace.catalog, workspace.sites, workspace.registry, k_min=13
    )
    assert plan is None
    assert any(d.code == "AVAIL_COUNT" for d in diags)


def test_unknown_site_fails_federation(workspace, docs):
    raw = docs["model_a"].to_json_dict()
    raw["federation"]["site_ids"] = ["clinic_east", "clinic_atlantis"]
    doc = _doc_from(raw)
    report = validate_federation(doc, workspace.sites)
    assert set(report.codes()) == {"FED_UNKNOWN_SITE", "FED_TOO_FEW_SITES"}

    raw["federation"]["site_ids"] = ["clinic_east", "clinic_north", "clinic_atlantis"]
    doc = _doc_from(raw)
    report = validate_federation(doc, workspace.sites)
    # two usable sites remain, so only the resolution failure is reported
    assert report.codes() == ("FED_UNKNOWN_SITE",)


def test_transform_is_deterministic(workspace, docs):
    for doc in docs.values():
        a, _ = transform(doc, workspace.catalog, workspace.sites, workspace.registry)
        b, _ = transform(doc, workspace.catalog, workspace.sites, workspace.registry)
        assert a.to_json_dict() == b.to_json_dict()
        assert canonical_json(a.to_json_dict()) == canonical_json(b.to_json_dict())
