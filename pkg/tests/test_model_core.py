"""Structural validation against the bundled requirement table.

The sweep tests read the requirement table straight from the package data
and derive the expected findings from it, so the checker is never its own
oracle.
"""

import copy
import json
from importlib import resources

from mila.canonical import canonical_json
from mila.model_core import (
    canonical_hash,
    parse_model,
    serialize_model,
    validate_structure_raw,
)


def base_doc() -> dict:
    return {
        "id": "demo_model",
        "name": "Demo_model",
        "version": "1.0.0",
        "task": {"kind": "generic_prediction", "description": "exercise the checker"},
        "data_elements": [
            {
                "local_name": "outcome_flag",
                "concept_uri": "http://clinical.example.org/concepts/hypertension",
                "role": "outcome",
                "expected_datatype": "boolean",
            },
            {
                "local_name": "age",
                "concept_uri": "http://clinical.example.org/concepts/age",
                "role": "predictor",
                "expected_datatype": "numeric",
                "expected_unit": "years",
            },
            {
                "local_name": "sex",
                "concept_uri": "http://clinical.example.org/concepts/sex",
                "role": "predictor",
                "expected_datatype": "categorical",
            },
        ],
        "federation": {
            "mode": "federated",
            "site_ids": ["site_a", "site_b"],
            "rounds": 2,
            "min_local_instances": 5,
            "aggregator": "fedavg",
            "seed": 7,
        },
        "training": {
            "algorithm_tag": "logistic_regression",
            "executable": True,
            "learning_rate": 0.1,
            "local_epochs": 1,
            "l2": 0.0,
            "preprocessing": {"age": {"scale_offset": 50.0, "scale_factor": 10.0}},
        },
        "metadata": {"owner": "tests"},
    }


def requirement_table() -> dict:
    text = resources.files("mila").joinpath("data/metamodel.json").read_text("utf-8")
    return json.loads(text)


# One representative instance of each kind inside base_doc, addressed by
# JSON-pointer prefix. data_element index 2 avoids colliding with the
# outcome/predictor cardinality rules when a field is knocked out.
KIND_SITES = {
    "document": "",
    "task": "/task",
    "data_element": "/data_elements/2",
    "federation": "/federation",
    "training": "/training",
}


def _container_at(doc: dict, pointer: str):
    node = doc
    for token in [t for t in pointer.split("/") if t]:
        node = node[int(token)] if token.isdigit() else node[token]
    return node


def test_base_document_is_clean():
    report = validate_structure_raw(base_doc())
    assert report.passed
    assert report.codes() == ()


def test_every_required_field_knockout_is_reported():
    table = requirement_table()
    checked = 0
    for kind_spec in table["element_kinds"]:
        pointer = KIND_SITES.get(kind_spec["kind"])
        if pointer is None:
            continue
        for field, fspec in kind_spec["fields"].items():
            if not fspec.get("required"):
                continue
            doc = base_doc()
            del _container_at(doc, pointer)[field]
            report = validate_structure_raw(doc)
            expected_path = f"{pointer}/{field}"
            hits = [
                d
                for d in report.diagnostics
                if d.code == "MM_MISSING_FIELD" and d.element_path == expected_path
            ]
            assert len(hits) == 1, (kind_spec["kind"], field, report.codes())
            assert not report.passed
            checked += 1
    assert checked >= 25


def test_every_enum_field_rejects_a_stray_value():
    table = requirement_table()
    checked = 0
    for kind_spec in table["element_kinds"]:
        pointer = KIND_SITES.get(kind_spec["kind"])
        if pointer is None:
            continue
        for field, fspec in kind_spec["fields"].items():
            if fspec.get("datatype") != "enum":
                continue
            doc = base_doc()
            _container_at(doc, pointer)[field] = "definitely_not_a_member"
            report = validate_structure_raw(doc)
            expected_path = f"{pointer}/{field}"
            assert any(
                d.code == "MM_BAD_ENUM" and d.element_path == expected_path
                for d in report.diagnostics
            ), (kind_spec["kind"], field, report.codes())
            checked += 1
    assert checked >= 6


def test_unknown_field_severity_depends_on_depth():
    doc = base_doc()
    doc["notes"] = "free text"
    report = validate_structure_raw(doc)
    assert report.passed  # top-level stray keys only warn
    assert any(
        d.code == "MM_UNKNOWN_FIELD" and d.severity.value == "warning" for d in report.diagnostics
    )

    doc = base_doc()
    doc["federation"]["notes"] = "free text"
    report = validate_structure_raw(doc)
    assert not report.passed
    assert any(
        d.code == "MM_UNKNOWN_FIELD"
        and d.severity.value == "error"
        and d.element_path == "/federation/notes"
        for d in report.diagnostics
    )


def test_duplicate_local_name():
    doc = base_doc()
    doc["data_elements"][2]["local_name"] = "age"
    report = validate_structure_raw(doc)
    assert any(
        d.code == "MM_DUP_NAME" and d.element_path == "/data_elements/2/local_name"
        for d in report.diagnostics
    )


def test_outcome_cardinality_is_exactly_one():
    doc = base_doc()
    doc["data_elements"][1]["role"] = "outcome"
    report = validate_structure_raw(doc)
    assert "MM_CARDINALITY" in report.codes()

    doc = base_doc()
    doc["data_elements"][0]["role"] = "predictor"
    doc["data_elements"][0]["concept_uri"] = "http://clinical.example.org/concepts/diabetes"
    report = validate_structure_raw(doc)
    assert "MM_CARDINALITY" in report.codes()


def test_min_two_data_elements():
    doc = base_doc()
    doc["data_elements"] = doc["data_elements"][:1]
    report = validate_structure_raw(doc)
    assert any(
        d.code == "MM_CARDINALITY" and d.element_path == "/data_elements"
        for d in report.diagnostics
    )


def test_shape_rules():
    # numeric outcomes are not trainable targets here
    doc = base_doc()
    doc["data_elements"][0]["expected_datatype"] = "numeric"
    assert "MM_SHAPE" in validate_structure_raw(doc).codes()

    # cohort filters must be boolean
    doc = base_doc()
    doc["data_elements"][2]["role"] = "cohort_filter"
    assert "MM_SHAPE" in validate_structure_raw(doc).codes()

    # executable models cannot learn from datetime predictors
    doc = base_doc()
    doc["data_elements"][2]["expected_datatype"] = "datetime"
    assert "MM_SHAPE" in validate_structure_raw(doc).codes()

    # a predictor may not reuse the outcome's concept
    doc = base_doc()
    doc["data_elements"][1]["concept_uri"] = doc["data_elements"][0]["concept_uri"]
    del doc["data_elements"][1]["expected_unit"]
    assert "MM_SHAPE" in validate_structure_raw(doc).codes()


def test_bad_value_rules():
    doc = base_doc()
    doc["training"]["learning_rate"] = 0
    assert "MM_BAD_VALUE" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["data_elements"][2]["expected_unit"] = "years"  # categorical element
    assert "MM_BAD_VALUE" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["training"]["executable"] = False  # contradicts logistic_regression
    assert "MM_BAD_VALUE" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["id"] = "Not-A-Slug"
    assert "MM_BAD_VALUE" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["version"] = "one.two"
    assert "MM_BAD_VALUE" in validate_structure_raw(doc).codes()


def test_federation_mode_site_count_agreement():
    doc = base_doc()
    doc["federation"]["mode"] = "local"
    assert "MM_CARDINALITY" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["federation"]["site_ids"] = ["only_one"]
    assert "MM_CARDINALITY" in validate_structure_raw(doc).codes()

    doc = base_doc()
    doc["federation"]["site_ids"] = ["site_a", "site_a"]
    assert "MM_DUP_NAME" in validate_structure_raw(doc).codes()


def test_preprocessing_keys_must_match_elements():
    doc = base_doc()
    doc["training"]["preprocessing"]["ghost"] = {"impute_value": 1.0}
    report = validate_structure_raw(doc)
    assert any(
        d.code == "MM_UNKNOWN_FIELD" and d.element_path == "/training/preprocessing/ghost"
        for d in report.diagnostics
    )


def test_parse_model_totality():
    doc, diags = parse_model("this is not json")
    assert doc is None
    assert [d.code for d in diags] == ["MM_SYNTAX"]

    doc, diags = parse_model("[1,2,3]")
    assert doc is None
    assert any(d.code == "MM_SYNTAX" for d in diags)


def test_parse_serialize_round_trip():
    text = json.dumps(base_doc())
    doc, diags = parse_model(text)
    assert doc is not None and not diags
    again, diags2 = parse_model(serialize_model(doc))
    assert again is not None and not diags2
    assert serialize_model(again) == serialize_model(doc)
    assert again == doc


def test_canonical_hash_ignores_key_order():
    raw = base_doc()
    shuffled = json.loads(canonical_json(raw))  # sorted-key variant of the same doc
    doc_a, _ = parse_model(json.dumps(raw))
    doc_b, _ = parse_model(json.dumps(shuffled))
    assert canonical_hash(doc_a) == canonical_hash(doc_b)

    tweaked = copy.deepcopy(raw)
    tweaked["training"]["learning_rate"] = 0.2
    doc_c, _ = parse_model(json.dumps(tweaked))
    assert canonical_hash(doc_c) != canonical_hash(doc_a)


def test_element_paths_assigned_in_declaration_order():
    doc, _ = parse_model(json.dumps(base_doc()))
    assert [e.path for e in doc.data_elements] == [
        "/data_elements/0",
        "/data_elements/1",
        "/data_elements/2",
    ]
    assert doc.outcome.local_name == "outcome_flag"
    assert [p.local_name for p in doc.predictors] == ["age", "sex"]
