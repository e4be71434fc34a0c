#!/usr/bin/env python3
"""Regenerate the bundled demo workspace (ontology, registry, sites, models).

The four site catalogs describe the same two patient cohorts twice: the
p-cohort lives at clinic_east (SQL) and clinic_south (SPARQL), the q-cohort
at clinic_north (SQL) and clinic_west (SPARQL). Both members of a mirror
pair are emitted from one record list, so dialect-equivalence holds by
construction. Unit heterogeneity is deliberate and exact in binary floating
point: glucose is stored in mmol/L at the graph sites (mg/dL values are
multiples of 9, so mmol/L values are halves), and CRP in mg/dL at
clinic_north (mg/L values are multiples of 5, so mg/dL values are halves).

Outputs are committed; rerunning must be byte-identical.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

CONCEPT_BASE = "http://clinical.example.org/concepts"


def concept(slug: str) -> str:
    return f"{CONCEPT_BASE}/{slug}"


# ---------------------------------------------------------------------------
# Ontology
# ---------------------------------------------------------------------------

SEX_VALUES = ["female", "male", "other"]
SMOKING_VALUES = ["never", "former", "current"]
REGIMEN_VALUES = ["regimen_a", "regimen_b", "regimen_c"]
THERAPY_VALUES = ["chemotherapy", "immunotherapy", "targeted", "combination"]
AE_FAMILY_VALUES = ["none", "gastrointestinal", "dermatological", "endocrine"]
RESPONSE_VALUES = ["complete", "partial", "none"]


def _concept(
    slug: str,
    label: str,
    category: str,
    roles: list[str],
    dimension: str | None = None,
    parents: list[str] | None = None,
    value_set: list[str] | None = None,
) -> dict:
    entry: dict = {
        "uri": concept(slug),
        "label": label,
        "category": category,
        "unit_dimension": dimension,
        "parents": [concept(p) for p in (parents or [])],
        "allowed_roles": roles,
    }
    if value_set is not None:
        entry["value_set"] = value_set
    return entry


CONCEPTS = [
    # patient attributes
    _concept("age", "Age at enrollment", "patient_attribute", ["predictor"], "time"),
    _concept("sex", "Administrative sex", "patient_attribute", ["predictor"], value_set=SEX_VALUES),
    _concept("patient_name", "Patient name", "patient_attribute", []),
    _concept("bmi", "Body mass index", "patient_attribute", ["predictor"], "dimensionless"),
    _concept(
        "smoking_status",
        "Smoking status",
        "patient_attribute",
        ["predictor", "cohort_filter"],
        value_set=SMOKING_VALUES,
    ),
    # observations
    _concept("systolic_bp", "Systolic blood pressure", "observation", ["predictor"], "pressure"),
    _concept("heart_rate", "Resting heart rate", "observation", ["predictor"], "count"),
    # lab tests
    _concept("blood_glucose", "Blood glucose", "lab_test", ["predictor"], "mass_concentration"),
    _concept("crp", "C-reactive protein", "lab_test", ["predictor"], "mass_concentration"),
    _concept("lymphocyte_count", "Lymphocyte count", "lab_test", ["predictor"], "count"),
    _concept(
        "tumor_marker_panel",
        "Tumor marker panel",
        "lab_test",
        ["predictor"],
        "molar_concentration",
    ),
    _concept("hemoglobin", "Hemoglobin", "lab_test", ["predictor"], "mass_concentration"),
    _concept("creatinine", "Serum creatinine", "lab_test", ["predictor"], "molar_concentration"),
    # conditions
    _concept("clinical_finding", "Clinical finding", "condition", []),
    _concept(
        "hypertension",
        "Hypertension",
        "condition",
        ["outcome", "predictor", "cohort_filter"],
        parents=["clinical_finding"],
    ),
    _concept(
        "diabetes",
        "Diabetes mellitus",
        "condition",
        ["outcome", "predictor", "cohort_filter"],
        parents=["clinical_finding"],
    ),
    _concept(
        "cancer_diagnosis",
        "Confirmed cancer diagnosis",
        "condition",
        ["predictor", "cohort_filter"],
        parents=["clinical_finding"],
    ),
    _concept(
        "gastrointestinal_disorder",
        "Gastrointestinal disorder",
        "condition",
        ["predictor"],
        parents=["clinical_finding"],
    ),
    # treatments
    _concept(
        "recommended_regimen",
        "Recommended treatment regimen",
        "treatment",
        ["outcome"],
        value_set=REGIMEN_VALUES,
    ),
    _concept(
        "therapy_type",
        "Therapy type",
        "treatment",
        ["predictor", "cohort_filter"],
        value_set=THERAPY_VALUES,
    ),
    _concept(
        "on_immunotherapy",
        "Currently on immunotherapy",
        "treatment",
        ["predictor", "cohort_filter"],
    ),
    _concept("days_since_treatment", "Days since treatment start", "treatment", ["predictor"], "time"),
    # adverse events
    _concept(
        "immune_related_ae",
        "Immune-related adverse event",
        "adverse_event",
        ["predictor", "outcome"],
        parents=["clinical_finding"],
    ),
    _concept(
        "colitis",
        "Colitis",
        "adverse_event",
        ["outcome", "predictor"],
        parents=["gastrointestinal_disorder", "immune_related_ae"],
    ),
    _concept("ae_grade", "Adverse event grade (CTCAE)", "adverse_event", ["predictor"]),
    _concept("ae_treatment_related", "Adverse event treatment-related", "adverse_event", ["outcome"]),
    _concept(
        "irae_detected",
        "Immune-related adverse event detected",
        "adverse_event",
        ["outcome"],
        parents=["immune_related_ae"],
    ),
    _concept(
        "future_ae_family",
        "Family of next adverse event",
        "adverse_event",
        ["outcome"],
        parents=["immune_related_ae"],
        value_set=AE_FAMILY_VALUES,
    ),
    # outcome measures
    _concept("qol_score", "Quality-of-life score", "outcome_measure", ["predictor", "outcome"], "dimensionless"),
    _concept(
        "treatment_response",
        "Treatment response",
        "outcome_measure",
        ["outcome", "predictor"],
        value_set=RESPONSE_VALUES,
    ),
    _concept("survival_months", "Overall survival", "outcome_measure", ["outcome"], "time"),
]


def _rule(task_kind: str, outcome: str, predictor: str, allowed: bool = True) -> dict:
    return {
        "task_kind": task_kind,
        "outcome_category": outcome,
        "predictor_category": predictor,
        "allowed": allowed,
    }


ROLE_RULES = [
    _rule("treatment_recommendation", "treatment", "patient_attribute"),
    _rule("treatment_recommendation", "treatment", "observation"),
    _rule("treatment_recommendation", "treatment", "lab_test"),
    _rule("treatment_recommendation", "treatment", "condition"),
    _rule("ae_causality", "adverse_event", "treatment"),
    _rule("ae_causality", "adverse_event", "adverse_event"),
    _rule("ae_causality", "adverse_event", "patient_attribute"),
    _rule("treatment_ae_detection", "adverse_event", "treatment"),
    _rule("treatment_ae_detection", "adverse_event", "lab_test"),
    _rule("treatment_ae_detection", "adverse_event", "observation"),
    _rule("future_ae_family", "adverse_event", "patient_attribute"),
    _rule("future_ae_family", "adverse_event", "treatment"),
    _rule("future_ae_family", "adverse_event", "outcome_measure"),
    _rule("future_ae_family", "adverse_event", "lab_test"),
    _rule("generic_prediction", "condition", "observation"),
    _rule("generic_prediction", "condition", "patient_attribute"),
    _rule("generic_prediction", "condition", "condition"),
    # Lab panels carry no causal claim about chronic conditions; an explicit
    # deny keeps the misuse distinguishable from a merely-unlisted pair.
    _rule("generic_prediction", "condition", "lab_test", allowed=False),
    _rule("generic_prediction", "outcome_measure", "treatment"),
    _rule("generic_prediction", "outcome_measure", "lab_test"),
    _rule("generic_prediction", "outcome_measure", "patient_attribute"),
    _rule("generic_prediction", "outcome_measure", "observation"),
]

ONTOLOGY = {"version": "2.3.0", "concepts": CONCEPTS, "role_rules": ROLE_RULES}


# ---------------------------------------------------------------------------
# Unit registry
# ---------------------------------------------------------------------------

REGISTRY = {
    "dimensions": {
        "mg/dL": "mass_concentration",
        "mmol/L": "mass_concentration",
        "mg/L": "mass_concentration",
        "g/L": "mass_concentration",
        "nmol/L": "molar_concentration",
        "pmol/L": "molar_concentration",
        "mmHg": "pressure",
        "10^9/L": "count",
        "beats/min": "count",
        "score": "dimensionless",
        "years": "time",
        "days": "time",
        "hours": "time",
    },
    "conversions": [
        {"from": "mmol/L", "to": "mg/dL", "factor": 18.0, "offset": 0.0},
        {"from": "mg/L", "to": "mg/dL", "factor": 0.1, "offset": 0.0},
        {"from": "mg/dL", "to": "g/L", "factor": 0.01, "offset": 0.0},
        {"from": "pmol/L", "to": "nmol/L", "factor": 0.001, "offset": 0.0},
        {"from": "years", "to": "days", "factor": 365.0, "offset": 0.0},
        {"from": "days", "to": "hours", "factor": 24.0, "offset": 0.0},
    ],
}


# ---------------------------------------------------------------------------
# Patient cohorts (single source for each mirror pair)
# ---------------------------------------------------------------------------

P_FIELDS = (
    "pid name age sex sbp glucose crp lymph tumor htn dm "
    "regimen ttype immuno days response grade related irae family qol"
).split()

# glucose in mg/dL (multiples of 9), crp in mg/L (multiples of 5),
# lymph in 10^9/L (halves), tumor in nmol/L.
P_ROWS = [
    ("p001", "Ada Ngu", 62, "female", 128, 99, 10, 2.0, 12.0, False, False,
     "regimen_a", "chemotherapy", False, 120, "complete", 1, False, False, "none", 78),
    ("p002", "Ben Ortiz", 55, "male", 142, 108, 20, 1.5, 18.0, True, False,
     "regimen_b", "immunotherapy", True, 25, "partial", 2, True, False, "none", 63),
    ("p003", "Cleo Park", 71, "female", 155, 135, 35, 1.0, 25.5, True, True,
     "regimen_c", "combination", True, 18, "none", 3, True, True, "dermatological", 44),
    ("p004", "Dev Patel", 48, "male", 118, 90, 5, 2.5, 8.0, False, False,
     "regimen_a", "targeted", False, 200, "complete", 1, False, False, "none", 85),
    ("p005", "Eve Moro", 66, "female", 136, 126, 30, 1.5, 22.0, True, False,
     "regimen_c", "immunotherapy", True, 40, "partial", 2, False, True, "dermatological", 58),
    ("p006", "Flo Berg", 59, "male", 147, 117, 15, 3.0, 14.5, True, False,
     "regimen_b", "chemotherapy", False, 90, "partial", 3, True, False, "endocrine", 66),
    ("p007", "Gus Zhang", 74, "female", 160, 144, 45, 0.5, 30.0, True, True,
     "regimen_c", "combination", True, 12, "none", 4, True, True, "gastrointestinal", 35),
    ("p008", "Hui Chen", 52, "male", 124, 108, 10, 2.0, 11.0, False, False,
     "regimen_a", "immunotherapy", True, 60, "complete", 1, False, False, "none", 72),
    ("p009", "Ira Vales", 45, "other", 132, 90, 25, 2.5, 9.5, False, False,
     "regimen_a", "targeted", False, 150, "partial", 2, False, False, "none", 55),
    ("p010", "Joy Adeyemi", 68, "female", 151, 126, 40, 1.0, 27.0, True, True,
     "regimen_c", "immunotherapy", True, 22, "none", 3, True, True, "gastrointestinal", 41),
    ("p011", "Kai Moen", 58, "male", 139, 117, 15, 2.0, 16.0, False, True,
     "regimen_a", "combination", True, 75, "partial", 2, False, False, "none", 61),
    ("p012", "Lia Souza", 63, "female", 145, 135, 50, 1.5, 24.0, True, False,
     "regimen_c", "immunotherapy", True, 30, "none", 3, True, True, "gastrointestinal", 47),
]

Q_FIELDS = (
    "pid name age sex sbp glucose crp lymph "
    "regimen ttype immuno days response grade related irae family qol"
).split()

Q_ROWS = [
    ("q001", "Mia Torres", 50, "female", 122, 90, 5, 2.5,
     "regimen_a", "targeted", False, 180, "complete", 1, False, False, "none", 80),
    ("q002", "Noa Lindh", 61, "male", 149, 117, 20, 1.5,
     "regimen_b", "immunotherapy", True, 28, "partial", 2, True, False, "none", 64),
    ("q003", "Omar Haddad", 69, "female", 158, 144, 40, 1.0,
     "regimen_c", "combination", True, 15, "none", 4, True, True, "gastrointestinal", 38),
    ("q004", "Pia Novak", 46, "male", 116, 99, 10, 3.0,
     "regimen_a", "chemotherapy", False, 210, "complete", 1, False, False, "none", 88),
    ("q005", "Quim Costa", 64, "female", 138, 126, 30, 1.5,
     "regimen_c", "immunotherapy", True, 55, "partial", 2, False, True, "dermatological", 59),
    ("q006", "Rui Tanaka", 57, "male", 144, 108, 15, 2.0,
     "regimen_b", "chemotherapy", False, 95, "partial", 3, True, False, "endocrine", 62),
    ("q007", "Sam Okafor", 72, "female", 162, 153, 55, 0.5,
     "regimen_c", "combination", True, 10, "none", 4, True, True, "gastrointestinal", 33),
    ("q008", "Tam Nguyen", 49, "male", 126, 99, 10, 2.5,
     "regimen_a", "immunotherapy", True, 65, "complete", 1, False, False, "none", 74),
    ("q009", "Uma Patel", 44, "other", 130, 90, 25, 2.0,
     "regimen_a", "targeted", False, 140, "partial", 2, False, False, "none", 56),
    ("q010", "Val Iversen", 67, "female", 153, 135, 45, 1.0,
     "regimen_c", "immunotherapy", True, 20, "none", 3, True, True, "gastrointestinal", 42),
    ("q011", "Wim de Boer", 56, "male", 137, 108, 15, 2.0,
     "regimen_a", "combination", True, 80, "partial", 2, False, False, "none", 60),
    ("q012", "Xia Wong", 62, "female", 143, 126, 50, 1.5,
     "regimen_c", "immunotherapy", True, 30, "none", 3, True, True, "gastrointestinal", 46),
]

P_COHORT = [dict(zip(P_FIELDS, row)) for row in P_ROWS]
Q_COHORT = [dict(zip(Q_FIELDS, row)) for row in Q_ROWS]


def mmol(glucose_mgdl: int) -> float:
    # Exact because the mg/dL values are multiples of 9: result is k/2.
    return glucose_mgdl / 18


def crp_mgdl(crp_mgl: int) -> float:
    # Exact because the mg/L values are multiples of 5: result is k/2.
    return crp_mgl / 10


# ---------------------------------------------------------------------------
# Site catalogs
# ---------------------------------------------------------------------------


def relational(table: str, column: str, key: str, datatype: str, unit: str | None = None,
               identifying: bool = False) -> dict:
    out: dict = {
        "table": table,
        "column": column,
        "patient_key_column": key,
        "datatype": datatype,
    }
    if unit is not None:
        out["unit"] = unit
    if identifying:
        out["identifying"] = True
    return out


def graph(class_uri: str, predicate: str, datatype: str, unit: str | None = None,
          identifying: bool = False) -> dict:
    out: dict = {
        "subject_class_uri": class_uri,
        "predicate_uri": predicate,
        "datatype": datatype,
    }
    if unit is not None:
        out["unit"] = unit
    if identifying:
        out["identifying"] = True
    return out


def clinic_east() -> dict:
    key = "patient_id"
    mappings = {
        concept("age"): relational("demographics", "age_years", key, "numeric", "years"),
        concept("sex"): relational("demographics", "sex", key, "categorical"),
        concept("patient_name"): relational("demographics", "patient_name", key, "categorical", identifying=True),
        concept("systolic_bp"): relational("vitals", "systolic_bp", key, "numeric", "mmHg"),
        concept("blood_glucose"): relational("labs", "glucose_mgdl", key, "numeric", "mg/dL"),
        concept("crp"): relational("labs", "crp_mgl", key, "numeric", "mg/L"),
        concept("lymphocyte_count"): relational("labs", "lymph_10e9l", key, "numeric", "10^9/L"),
        concept("tumor_marker_panel"): relational("labs", "tumor_marker", key, "numeric", "nmol/L"),
        concept("hypertension"): relational("conditions", "hypertensive", key, "boolean"),
        concept("diabetes"): relational("conditions", "diabetic", key, "boolean"),
        concept("recommended_regimen"): relational("treatments", "regimen", key, "categorical"),
        concept("therapy_type"): relational("treatments", "therapy_type", key, "categorical"),
        concept("on_immunotherapy"): relational("treatments", "on_immunotherapy", key, "boolean"),
        concept("days_since_treatment"): relational("treatments", "days_since_tx", key, "numeric", "days"),
        concept("treatment_response"): relational("treatments", "response", key, "categorical"),
        concept("ae_grade"): relational("adverse_events", "ae_grade", key, "numeric"),
        concept("ae_treatment_related"): relational("adverse_events", "treatment_related", key, "boolean"),
        concept("irae_detected"): relational("adverse_events", "irae_flag", key, "boolean"),
        concept("future_ae_family"): relational("adverse_events", "ae_family", key, "categorical"),
        concept("qol_score"): relational("scores", "qol", key, "numeric", "score"),
    }
    tables = {
        "demographics": {
            "columns": ["patient_id", "patient_name", "age_years", "sex"],
            "rows": [[p["pid"], p["name"], p["age"], p["sex"]] for p in P_COHORT],
        },
        "vitals": {
            "columns": ["patient_id", "systolic_bp"],
            "rows": [[p["pid"], p["sbp"]] for p in P_COHORT],
        },
        "labs": {
            "columns": ["patient_id", "glucose_mgdl", "crp_mgl", "lymph_10e9l", "tumor_marker"],
            "rows": [[p["pid"], p["glucose"], p["crp"], p["lymph"], p["tumor"]] for p in P_COHORT],
        },
        "conditions": {
            "columns": ["patient_id", "hypertensive", "diabetic"],
            "rows": [[p["pid"], p["htn"], p["dm"]] for p in P_COHORT],
        },
        "treatments": {
            "columns": ["patient_id", "regimen", "therapy_type", "on_immunotherapy", "days_since_tx", "response"],
            "rows": [
                [p["pid"], p["regimen"], p["ttype"], p["immuno"], p["days"], p["response"]]
                for p in P_COHORT
            ],
        },
        "adverse_events": {
            "columns": ["patient_id", "ae_grade", "treatment_related", "irae_flag", "ae_family"],
            "rows": [
                [p["pid"], p["grade"], p["related"], p["irae"], p["family"]] for p in P_COHORT
            ],
        },
        "scores": {
            "columns": ["patient_id", "qol"],
            "rows": [[p["pid"], p["qol"]] for p in P_COHORT],
        },
    }
    return {
        "site_id": "clinic_east",
        "dialect": "sql",
        "patient_key": key,
        "mappings": mappings,
        "record_count": {uri: len(P_COHORT) for uri in mappings},
        "fixture": {"tables": tables},
    }


def clinic_north() -> dict:
    key = "pid"
    mappings = {
        concept("age"): relational("patients", "age", key, "numeric", "years"),
        concept("sex"): relational("patients", "gender", key, "categorical"),
        concept("patient_name"): relational("patients", "full_name", key, "categorical", identifying=True),
        concept("systolic_bp"): relational("observations", "sbp", key, "numeric", "mmHg"),
        concept("qol_score"): relational("observations", "qol", key, "numeric", "score"),
        concept("blood_glucose"): relational("lab_panel", "glu_mg_dl", key, "numeric", "mg/dL"),
        concept("crp"): relational("lab_panel", "crp_mg_dl", key, "numeric", "mg/dL"),
        concept("lymphocyte_count"): relational("lab_panel", "lymphs", key, "numeric", "10^9/L"),
        concept("recommended_regimen"): relational("therapy", "plan_code", key, "categorical"),
        concept("therapy_type"): relational("therapy", "ttype", key, "categorical"),
        concept("on_immunotherapy"): relational("therapy", "immuno", key, "boolean"),
        concept("days_since_treatment"): relational("therapy", "days_since", key, "numeric", "days"),
        concept("treatment_response"): relational("therapy", "resp", key, "categorical"),
        concept("ae_grade"): relational("events", "grade", key, "numeric"),
        concept("ae_treatment_related"): relational("events", "rel_flag", key, "boolean"),
        concept("irae_detected"): relational("events", "irae", key, "boolean"),
        concept("future_ae_family"): relational("events", "family", key, "categorical"),
    }
    tables = {
        "patients": {
            "columns": ["pid", "full_name", "age", "gender"],
            "rows": [[q["pid"], q["name"], q["age"], q["sex"]] for q in Q_COHORT],
        },
        "observations": {
            "columns": ["pid", "sbp", "qol"],
            "rows": [[q["pid"], q["sbp"], q["qol"]] for q in Q_COHORT],
        },
        "lab_panel": {
            "columns": ["pid", "glu_mg_dl", "crp_mg_dl", "lymphs"],
            "rows": [
                [q["pid"], q["glucose"], crp_mgdl(q["crp"]), q["lymph"]] for q in Q_COHORT
            ],
        },
        "therapy": {
            "columns": ["pid", "plan_code", "ttype", "immuno", "days_since", "resp"],
            "rows": [
                [q["pid"], q["regimen"], q["ttype"], q["immuno"], q["days"], q["response"]]
                for q in Q_COHORT
            ],
        },
        "events": {
            "columns": ["pid", "grade", "rel_flag", "irae", "family"],
            "rows": [
                [q["pid"], q["grade"], q["related"], q["irae"], q["family"]] for q in Q_COHORT
            ],
        },
    }
    return {
        "site_id": "clinic_north",
        "dialect": "sql",
        "patient_key": key,
        "mappings": mappings,
        "record_count": {uri: len(Q_COHORT) for uri in mappings},
        "fixture": {"tables": tables},
    }


def clinic_south() -> dict:
    base = "http://clinic-south.example.org"
    cls = {name: f"{base}/records/{name}" for name in (
        "Demographics", "Vitals", "LabPanel", "ConditionRecord",
        "TherapyCourse", "AdverseEventRecord", "QolAssessment",
    )}
    prop = lambda name: f"{base}/props/{name}"
    key = prop("patient_id")
    mappings = {
        concept("age"): graph(cls["Demographics"], prop("age_years"), "numeric", "years"),
        concept("sex"): graph(cls["Demographics"], prop("sex"), "categorical"),
        concept("patient_name"): graph(cls["Demographics"], prop("patient_name"), "categorical", identifying=True),
        concept("systolic_bp"): graph(cls["Vitals"], prop("systolic_bp"), "numeric", "mmHg"),
        concept("blood_glucose"): graph(cls["LabPanel"], prop("glucose_mmol"), "numeric", "mmol/L"),
        concept("crp"): graph(cls["LabPanel"], prop("crp_mgl"), "numeric", "mg/L"),
        concept("lymphocyte_count"): graph(cls["LabPanel"], prop("lymphocytes"), "numeric", "10^9/L"),
        concept("tumor_marker_panel"): graph(cls["LabPanel"], prop("tumor_marker"), "numeric", "nmol/L"),
        concept("hypertension"): graph(cls["ConditionRecord"], prop("hypertensive"), "boolean"),
        concept("diabetes"): graph(cls["ConditionRecord"], prop("diabetic"), "boolean"),
        concept("recommended_regimen"): graph(cls["TherapyCourse"], prop("regimen"), "categorical"),
        concept("therapy_type"): graph(cls["TherapyCourse"], prop("therapy_type"), "categorical"),
        concept("on_immunotherapy"): graph(cls["TherapyCourse"], prop("on_immunotherapy"), "boolean"),
        concept("days_since_treatment"): graph(cls["TherapyCourse"], prop("days_since_tx"), "numeric", "days"),
        concept("treatment_response"): graph(cls["TherapyCourse"], prop("response"), "categorical"),
        concept("ae_grade"): graph(cls["AdverseEventRecord"], prop("ae_grade"), "numeric"),
        concept("ae_treatment_related"): graph(cls["AdverseEventRecord"], prop("treatment_related"), "boolean"),
        concept("irae_detected"): graph(cls["AdverseEventRecord"], prop("irae_flag"), "boolean"),
        concept("future_ae_family"): graph(cls["AdverseEventRecord"], prop("ae_family"), "categorical"),
        concept("qol_score"): graph(cls["QolAssessment"], prop("qol"), "numeric", "score"),
    }
    triples: list[list] = []
    for p in P_COHORT:
        nodes = {
            "Demographics": (
                f"{base}/patient/{p['pid']}/demographics",
                [
                    (prop("patient_name"), p["name"], "categorical"),
                    (prop("age_years"), p["age"], "numeric"),
                    (prop("sex"), p["sex"], "categorical"),
                ],
            ),
            "Vitals": (
                f"{base}/patient/{p['pid']}/vitals",
                [(prop("systolic_bp"), p["sbp"], "numeric")],
            ),
            "LabPanel": (
                f"{base}/patient/{p['pid']}/labs",
                [
                    (prop("glucose_mmol"), mmol(p["glucose"]), "numeric"),
                    (prop("crp_mgl"), p["crp"], "numeric"),
                    (prop("lymphocytes"), p["lymph"], "numeric"),
                    (prop("tumor_marker"), p["tumor"], "numeric"),
                ],
            ),
            "ConditionRecord": (
                f"{base}/patient/{p['pid']}/conditions",
                [
                    (prop("hypertensive"), p["htn"], "boolean"),
                    (prop("diabetic"), p["dm"], "boolean"),
                ],
            ),
            "TherapyCourse": (
                f"{base}/patient/{p['pid']}/therapy",
                [
                    (prop("regimen"), p["regimen"], "categorical"),
                    (prop("therapy_type"), p["ttype"], "categorical"),
                    (prop("on_immunotherapy"), p["immuno"], "boolean"),
                    (prop("days_since_tx"), p["days"], "numeric"),
                    (prop("response"), p["response"], "categorical"),
                ],
            ),
            "AdverseEventRecord": (
                f"{base}/patient/{p['pid']}/events",
                [
                    (prop("ae_grade"), p["grade"], "numeric"),
                    (prop("treatment_related"), p["related"], "boolean"),
                    (prop("irae_flag"), p["irae"], "boolean"),
                    (prop("ae_family"), p["family"], "categorical"),
                ],
            ),
            "QolAssessment": (
                f"{base}/patient/{p['pid']}/qol",
                [(prop("qol"), p["qol"], "numeric")],
            ),
        }
        for class_name, (subject, values) in nodes.items():
            triples.append([subject, "a", cls[class_name], "uri"])
            triples.append([subject, key, p["pid"], "key"])
            for predicate, value, tag in values:
                triples.append([subject, predicate, value, tag])
    return {
        "site_id": "clinic_south",
        "dialect": "sparql",
        "patient_key": key,
        "mappings": mappings,
        "record_count": {uri: len(P_COHORT) for uri in mappings},
        "fixture": {"triples": triples},
    }


def clinic_west() -> dict:
    base = "http://clinic-west.example.org"
    cls = {name: f"{base}/records/{name}" for name in (
        "Patient", "Observation", "Laboratory", "Therapy", "Event",
    )}
    prop = lambda name: f"{base}/props/{name}"
    key = prop("pid")
    mappings = {
        concept("age"): graph(cls["Patient"], prop("age"), "numeric", "years"),
        concept("sex"): graph(cls["Patient"], prop("gender"), "categorical"),
        concept("patient_name"): graph(cls["Patient"], prop("full_name"), "categorical", identifying=True),
        concept("systolic_bp"): graph(cls["Observation"], prop("sbp"), "numeric", "mmHg"),
        concept("qol_score"): graph(cls["Observation"], prop("qol"), "numeric", "score"),
        concept("blood_glucose"): graph(cls["Laboratory"], prop("glucose_mmol"), "numeric", "mmol/L"),
        concept("crp"): graph(cls["Laboratory"], prop("crp_mgl"), "numeric", "mg/L"),
        concept("lymphocyte_count"): graph(cls["Laboratory"], prop("lymphs"), "numeric", "10^9/L"),
        concept("recommended_regimen"): graph(cls["Therapy"], prop("plan_code"), "categorical"),
        concept("therapy_type"): graph(cls["Therapy"], prop("ttype"), "categorical"),
        concept("on_immunotherapy"): graph(cls["Therapy"], prop("immuno"), "boolean"),
        concept("days_since_treatment"): graph(cls["Therapy"], prop("days_since"), "numeric", "days"),
        concept("treatment_response"): graph(cls["Therapy"], prop("resp"), "categorical"),
        concept("ae_grade"): graph(cls["Event"], prop("grade"), "numeric"),
        concept("ae_treatment_related"): graph(cls["Event"], prop("rel_flag"), "boolean"),
        concept("irae_detected"): graph(cls["Event"], prop("irae"), "boolean"),
        concept("future_ae_family"): graph(cls["Event"], prop("family"), "categorical"),
    }
    triples: list[list] = []
    for q in Q_COHORT:
        nodes = {
            "Patient": (
                f"{base}/patient/{q['pid']}/profile",
                [
                    (prop("full_name"), q["name"], "categorical"),
                    (prop("age"), q["age"], "numeric"),
                    (prop("gender"), q["sex"], "categorical"),
                ],
            ),
            "Observation": (
                f"{base}/patient/{q['pid']}/observation",
                [
                    (prop("sbp"), q["sbp"], "numeric"),
                    (prop("qol"), q["qol"], "numeric"),
                ],
            ),
            "Laboratory": (
                f"{base}/patient/{q['pid']}/laboratory",
                [
                    (prop("glucose_mmol"), mmol(q["glucose"]), "numeric"),
                    (prop("crp_mgl"), q["crp"], "numeric"),
                    (prop("lymphs"), q["lymph"], "numeric"),
                ],
            ),
            "Therapy": (
                f"{base}/patient/{q['pid']}/therapy",
                [
                    (prop("plan_code"), q["regimen"], "categorical"),
                    (prop("ttype"), q["ttype"], "categorical"),
                    (prop("immuno"), q["immuno"], "boolean"),
                    (prop("days_since"), q["days"], "numeric"),
                    (prop("resp"), q["response"], "categorical"),
                ],
            ),
            "Event": (
                f"{base}/patient/{q['pid']}/event",
                [
                    (prop("grade"), q["grade"], "numeric"),
                    (prop("rel_flag"), q["related"], "boolean"),
                    (prop("irae"), q["irae"], "boolean"),
                    (prop("family"), q["family"], "categorical"),
                ],
            ),
        }
        for class_name, (subject, values) in nodes.items():
            triples.append([subject, "a", cls[class_name], "uri"])
            triples.append([subject, key, q["pid"], "key"])
            for predicate, value, tag in values:
                triples.append([subject, predicate, value, tag])
    return {
        "site_id": "clinic_west",
        "dialect": "sparql",
        "patient_key": key,
        "mappings": mappings,
        "record_count": {uri: len(Q_COHORT) for uri in mappings},
        "fixture": {"triples": triples},
    }


# ---------------------------------------------------------------------------
# Model documents
# ---------------------------------------------------------------------------

ALL_SITES = ["clinic_east", "clinic_north", "clinic_south", "clinic_west"]


def element(local_name: str, slug: str, role: str, datatype: str, unit: str | None = None) -> dict:
    out: dict = {
        "local_name": local_name,
        "concept_uri": concept(slug),
        "role": role,
        "expected_datatype": datatype,
    }
    if unit is not None:
        out["expected_unit"] = unit
    return out


MODEL_A = {
    "id": "model_a",
    "name": "Treatment_prediction",
    "version": "1.2.0",
    "task": {
        "kind": "treatment_recommendation",
        "description": "Recommend one of three regimens from baseline vitals and labs.",
    },
    "data_elements": [
        element("recommended_regimen", "recommended_regimen", "outcome", "categorical"),
        element("age", "age", "predictor", "numeric", "years"),
        element("systolic_bp", "systolic_bp", "predictor", "numeric", "mmHg"),
        element("blood_glucose", "blood_glucose", "predictor", "numeric", "mg/dL"),
    ],
    "federation": {
        "mode": "federated",
        "site_ids": ALL_SITES,
        "rounds": 3,
        "min_local_instances": 10,
        "aggregator": "fedavg",
        "seed": 1301,
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "learning_rate": 0.5,
        "local_epochs": 2,
        "l2": 0.01,
        "preprocessing": {
            "age": {"scale_offset": 58.0, "scale_factor": 12.0},
            "systolic_bp": {"scale_offset": 139.0, "scale_factor": 16.0},
            "blood_glucose": {"impute_value": 117.0, "scale_offset": 117.0, "scale_factor": 21.0},
        },
    },
    "metadata": {"owner": "cardiometabolic modeling group", "status": "demo"},
}

MODEL_B = {
    "id": "model_b",
    "name": "Adverse_Event_causation",
    "version": "1.1.0",
    "task": {
        "kind": "ae_causality",
        "description": "Estimate whether a recorded adverse event is treatment-related.",
    },
    "data_elements": [
        element("ae_treatment_related", "ae_treatment_related", "outcome", "boolean"),
        element("therapy_type", "therapy_type", "predictor", "categorical"),
        element("ae_grade", "ae_grade", "predictor", "numeric"),
        element("days_since_treatment", "days_since_treatment", "predictor", "numeric", "days"),
        element("on_immunotherapy", "on_immunotherapy", "cohort_filter", "boolean"),
    ],
    "federation": {
        "mode": "federated",
        "site_ids": ALL_SITES,
        "rounds": 3,
        "min_local_instances": 6,
        "aggregator": "fedavg",
        "seed": 1417,
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "learning_rate": 0.5,
        "local_epochs": 2,
        "l2": 0.01,
        "preprocessing": {
            "ae_grade": {"scale_offset": 2.0, "scale_factor": 1.0},
            "days_since_treatment": {"scale_offset": 60.0, "scale_factor": 55.0},
        },
    },
    "metadata": {"owner": "pharmacovigilance group", "status": "demo"},
}

MODEL_C = {
    "id": "model_c",
    "name": "Treatment_cause_AE",
    "version": "1.0.1",
    "task": {
        "kind": "treatment_ae_detection",
        "description": "Detect immune-related adverse events from therapy and inflammation markers.",
    },
    "data_elements": [
        element("irae_detected", "irae_detected", "outcome", "boolean"),
        element("therapy_type", "therapy_type", "predictor", "categorical"),
        element("crp_level", "crp", "predictor", "numeric", "mg/L"),
        element("lymphocyte_count", "lymphocyte_count", "predictor", "numeric", "10^9/L"),
    ],
    "federation": {
        "mode": "federated",
        "site_ids": ALL_SITES,
        "rounds": 3,
        "min_local_instances": 10,
        "aggregator": "fedavg",
        "seed": 1523,
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "learning_rate": 0.5,
        "local_epochs": 2,
        "l2": 0.01,
        "preprocessing": {
            "crp_level": {"scale_offset": 25.0, "scale_factor": 15.0},
            "lymphocyte_count": {"scale_offset": 1.75, "scale_factor": 0.75},
        },
    },
    "metadata": {"owner": "pharmacovigilance group", "status": "demo"},
}

MODEL_D = {
    "id": "model_d",
    "name": "AE_prediction",
    "version": "1.0.0",
    "task": {
        "kind": "future_ae_family",
        "description": "Predict the family of the next adverse event over the coming cycle.",
    },
    "data_elements": [
        element("future_ae_family", "future_ae_family", "outcome", "categorical"),
        element("age", "age", "predictor", "numeric", "years"),
        element("therapy_type", "therapy_type", "predictor", "categorical"),
        element("qol_score", "qol_score", "predictor", "numeric", "score"),
        element("lymphocyte_count", "lymphocyte_count", "predictor", "numeric", "10^9/L"),
    ],
    "federation": {
        "mode": "federated",
        "site_ids": ALL_SITES,
        "rounds": 3,
        "min_local_instances": 10,
        "aggregator": "fedavg",
        "seed": 1619,
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "learning_rate": 0.5,
        "local_epochs": 2,
        "l2": 0.01,
        "preprocessing": {
            "age": {"scale_offset": 58.0, "scale_factor": 12.0},
            "qol_score": {"scale_offset": 60.0, "scale_factor": 18.0},
            "lymphocyte_count": {"scale_offset": 1.75, "scale_factor": 0.75},
        },
    },
    "metadata": {"owner": "oncology outcomes group", "status": "demo"},
}

COUNTEREXAMPLE = {
    "id": "hypertension_from_tumor_marker",
    "name": "Hypertension_from_tumor_marker",
    "version": "0.1.0",
    "task": {
        "kind": "generic_prediction",
        "description": "Deliberately inadmissible: tumor marker levels offered as hypertension predictors.",
    },
    "data_elements": [
        element("hypertension", "hypertension", "outcome", "boolean"),
        element("tumor_marker_levels", "tumor_marker_panel", "predictor", "numeric", "nmol/L"),
        element("age", "age", "predictor", "numeric", "years"),
    ],
    "federation": {
        "mode": "federated",
        "site_ids": ["clinic_east", "clinic_south"],
        "rounds": 2,
        "min_local_instances": 6,
        "aggregator": "fedavg",
        "seed": 99,
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "learning_rate": 0.5,
        "local_epochs": 1,
        "l2": 0.01,
        "preprocessing": {},
    },
    "metadata": {"owner": "validation walkthrough", "status": "counterexample"},
}


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def write(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"wrote {path}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    default_root = Path(__file__).resolve().parent.parent / "src" / "mila" / "data" / "workspace"
    parser.add_argument("--root", type=Path, default=default_root)
    args = parser.parse_args()

    write(args.root / "ontology.json", ONTOLOGY)
    write(args.root / "registry.json", REGISTRY)
    for site in (clinic_east(), clinic_north(), clinic_south(), clinic_west()):
        write(args.root / "sites" / f"{site['site_id']}.json", site)
    for model in (MODEL_A, MODEL_B, MODEL_C, MODEL_D):
        write(args.root / "models" / f"{model['id']}.json", model)
    write(args.root / "counterexamples" / f"{COUNTEREXAMPLE['id']}.json", COUNTEREXAMPLE)


if __name__ == "__main__":
    main()
