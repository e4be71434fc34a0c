"""Model documents, the metamodel requirement table, and structural validation.

A model document is the platform-independent description of one analysis:
the task, the ontology-annotated data elements, the federation directive,
and the training specification. The concrete syntax is a UTF-8 JSON object
with top-level keys ``id, name, version, task, data_elements, federation,
training, metadata``.

The metamodel itself is data (``data/metamodel.json``): a table of element
kinds, required fields, field datatypes, cardinalities, and allowed enum
values. The structural validator interprets that table rather than
hard-coding checks, so tests can fuzz the requirement table directly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from urllib.parse import urlparse

from .canonical import canonical_json, digest_json
from .diagnostics import Diagnostic, Stage, ValidationReport, error, warning


class TaskKind(str, Enum):
    TREATMENT_RECOMMENDATION = "treatment_recommendation"
    AE_CAUSALITY = "ae_causality"
    TREATMENT_AE_DETECTION = "treatment_ae_detection"
    FUTURE_AE_FAMILY = "future_ae_family"
    GENERIC_PREDICTION = "generic_prediction"


class ElementRole(str, Enum):
    PREDICTOR = "predictor"
    OUTCOME = "outcome"
    COHORT_FILTER = "cohort_filter"


class ElementDatatype(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"
    DATETIME = "datetime"


class FederationMode(str, Enum):
    LOCAL = "local"
    MULTI_SITE = "multi_site"
    FEDERATED = "federated"


class Aggregator(str, Enum):
    FEDAVG = "fedavg"


class AlgorithmTag(str, Enum):
    LOGISTIC_REGRESSION = "logistic_regression"
    MLP = "mlp"
    SVM_RBF = "svm_rbf"
    XGBOOST = "xgboost"
    RANDOM_FOREST = "random_forest"
    DECISION_TREE = "decision_tree"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    description: str


@dataclass(frozen=True)
class DataElementRef:
    """One ontology-annotated data element of a model document."""

    local_name: str
    concept_uri: str
    role: ElementRole
    expected_datatype: ElementDatatype
    expected_unit: str | None = None
    path: str = field(default="", compare=False)

    def to_json_dict(self) -> dict:
        out: dict = {
            "local_name": self.local_name,
            "concept_uri": self.concept_uri,
            "role": self.role.value,
            "expected_datatype": self.expected_datatype.value,
        }
        if self.expected_unit is not None:
            out["expected_unit"] = self.expected_unit
        return out


@dataclass(frozen=True)
class FederationDirective:
    mode: FederationMode
    site_ids: tuple[str, ...]
    rounds: int
    min_local_instances: int
    aggregator: Aggregator
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "site_ids": list(self.site_ids),
            "rounds": self.rounds,
            "min_local_instances": self.min_local_instances,
            "aggregator": self.aggregator.value,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PreprocessConstant:
    """Declared preprocessing constants for one element (unset fields = None)."""

    impute_value: float | str | None = None
    scale_offset: float | None = None
    scale_factor: float | None = None

    def to_json_dict(self) -> dict:
        out: dict = {}
        if self.impute_value is not None:
            out["impute_value"] = self.impute_value
        if self.scale_offset is not None:
            out["scale_offset"] = self.scale_offset
        if self.scale_factor is not None:
            out["scale_factor"] = self.scale_factor
        return out


@dataclass(frozen=True)
class TrainingSpec:
    algorithm_tag: AlgorithmTag
    executable: bool
    learning_rate: float
    local_epochs: int
    l2: float
    preprocessing: dict[str, PreprocessConstant]

    def to_json_dict(self) -> dict:
        return {
            "algorithm_tag": self.algorithm_tag.value,
            "executable": self.executable,
            "learning_rate": self.learning_rate,
            "local_epochs": self.local_epochs,
            "l2": self.l2,
            "preprocessing": {
                name: pc.to_json_dict() for name, pc in self.preprocessing.items()
            },
        }


@dataclass(frozen=True)
class ModelDocument:
    """A fully bound platform-independent model."""

    id: str
    name: str
    version: str
    task: TaskSpec
    data_elements: tuple[DataElementRef, ...]
    federation: FederationDirective
    training: TrainingSpec
    metadata: dict[str, str]

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "version": self.version,
            "task": {"kind": self.task.kind.value, "description": self.task.description},
            "data_elements": [e.to_json_dict() for e in self.data_elements],
            "federation": self.federation.to_json_dict(),
            "training": self.training.to_json_dict(),
            "metadata": dict(self.metadata),
        }

    @property
    def outcome(self) -> DataElementRef:
        return next(e for e in self.data_elements if e.role is ElementRole.OUTCOME)

    @property
    def predictors(self) -> tuple[DataElementRef, ...]:
        return tuple(e for e in self.data_elements if e.role is ElementRole.PREDICTOR)

    @property
    def cohort_filters(self) -> tuple[DataElementRef, ...]:
        return tuple(
            e for e in self.data_elements if e.role is ElementRole.COHORT_FILTER
        )

    def concept_uris(self) -> tuple[str, ...]:
        """All referenced concept URIs, sorted and de-duplicated."""
        return tuple(sorted({e.concept_uri for e in self.data_elements}))


# ---------------------------------------------------------------------------
# Metamodel (the requirement table)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    name: str
    datatype: str
    required: bool
    values: tuple[str, ...] = ()
    object_kind: str | None = None
    item_kind: str | None = None
    min_items: int = 0


@dataclass(frozen=True)
class KindSpec:
    kind: str
    fields: tuple[FieldSpec, ...]
    cardinality: dict[str, int] = field(default_factory=dict)

    def field_names(self) -> frozenset[str]:
        return frozenset(f.name for f in self.fields)


@dataclass(frozen=True)
class Metamodel:
    version: str
    kinds: dict[str, KindSpec]

    def kind(self, name: str) -> KindSpec:
        return self.kinds[name]


_KNOWN_DATATYPES = {
    "string", "slug", "semver", "identifier", "uri", "enum", "boolean",
    "positive_int", "uint64", "positive_real", "nonnegative_real", "real",
    "nonzero_real", "scalar", "string_map", "string_list", "object", "list",
    "keyed_map",
}


def load_metamodel(text: str) -> Metamodel:
    """Load and self-check a requirement table."""
    raw = json.loads(text)
    kinds: dict[str, KindSpec] = {}
    for kind_raw in raw["element_kinds"]:
        fields = []
        for fname, fraw in kind_raw["fields"].items():
            datatype = fraw["datatype"]
            if datatype not in _KNOWN_DATATYPES:
                raise ValueError(f"metamodel kind {kind_raw['kind']!r}: field "
                                 f"{fname!r} has unknown datatype {datatype!r}")
            fields.append(
                FieldSpec(
                    name=fname,
                    datatype=datatype,
                    required=bool(fraw.get("required", False)),
                    values=tuple(fraw.get("values", ())),
                    object_kind=fraw.get("object_kind"),
                    item_kind=fraw.get("item_kind"),
                    min_items=int(fraw.get("min_items", 0)),
                )
            )
        spec = KindSpec(
            kind=kind_raw["kind"],
            fields=tuple(fields),
            cardinality=dict(kind_raw.get("cardinality", {})),
        )
        kinds[spec.kind] = spec
    mm = Metamodel(version=raw.get("version", "0"), kinds=kinds)
    for spec in mm.kinds.values():
        for fspec in spec.fields:
            if fspec.datatype == "enum" and not fspec.values:
                raise ValueError(
                    f"metamodel kind {spec.kind!r}: enum field {fspec.name!r} "
                    "declares no allowed values"
                )
            for ref in (fspec.object_kind, fspec.item_kind):
                if ref is not None and ref not in mm.kinds:
                    raise ValueError(
                        f"metamodel kind {spec.kind!r}: field {fspec.name!r} "
                        f"references undeclared kind {ref!r}"
                    )
    if "document" not in mm.kinds:
        raise ValueError("metamodel declares no 'document' kind")
    return mm


def default_metamodel() -> Metamodel:
    return load_metamodel(
        resources.files("mila").joinpath("data/metamodel.json").read_text("utf-8")
    )


# ---------------------------------------------------------------------------
# Structural validation (metamodel conformance)
# ---------------------------------------------------------------------------

_SLUG_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_SEMVER_RE = re.compile(r"^\d+\.\d+(\.\d+)?$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_uri(value: str) -> bool:
    parsed = urlparse(value)
    return bool(parsed.scheme) and bool(parsed.netloc or parsed.path)


def _check_scalar(fspec: FieldSpec, value: object, path: str, out: list[Diagnostic]) -> None:
    """Leaf-value conformance for one field of the requirement table."""
    dt = fspec.datatype

    def bad(msg: str, code: str = "MM_BAD_VALUE") -> None:
        out.append(error(code, msg, path, Stage.STRUCTURE))

    if dt == "string":
        if not isinstance(value, str):
            bad(f"expected a string, got {type(value).__name__}")
    elif dt == "slug":
        if not isinstance(value, str) or not _SLUG_RE.match(value):
            bad("expected a lowercase slug ([a-z][a-z0-9_]*)")
    elif dt == "semver":
        if not isinstance(value, str) or not _SEMVER_RE.match(value):
            bad("expected a semver-like version string")
    elif dt == "identifier":
        if not isinstance(value, str) or not _IDENT_RE.match(value):
            bad("expected an identifier")
    elif dt == "uri":
        if not isinstance(value, str) or not _is_uri(value):
            bad("expected a URI")
    elif dt == "enum":
        if not isinstance(value, str) or value not in fspec.values:
            bad(
                f"value {value!r} is not one of {sorted(fspec.values)}",
                code="MM_BAD_ENUM",
            )
    elif dt == "boolean":
        if not isinstance(value, bool):
            bad("expected a boolean")
    elif dt == "positive_int":
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            bad("expected an integer >= 1")
    elif dt == "uint64":
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < 2**64:
            bad("expected an unsigned 64-bit integer")
    elif dt == "positive_real":
        if not _is_number(value) or not math.isfinite(value) or value <= 0:
            bad("expected a finite number > 0")
    elif dt == "nonnegative_real":
        if not _is_number(value) or not math.isfinite(value) or value < 0:
            bad("expected a finite number >= 0")
    elif dt == "real":
        if not _is_number(value) or not math.isfinite(value):
            bad("expected a finite number")
    elif dt == "nonzero_real":
        if not _is_number(value) or not math.isfinite(value) or value == 0:
            bad("expected a finite nonzero number")
    elif dt == "scalar":
        if not (_is_number(value) or isinstance(value, str)):
            bad("expected a number or a string")
    elif dt == "string_map":
        if not isinstance(value, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in value.items()
        ):
            bad("expected a string-to-string map")
    elif dt == "string_list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            bad("expected a list of strings")
    else:  # pragma: no cover - load_metamodel rejects unknown datatypes
        raise AssertionError(dt)


def _check_object(
    mm: Metamodel,
    kind: str,
    raw: object,
    path: str,
    out: list[Diagnostic],
    top_level: bool,
) -> None:
    spec = mm.kind(kind)
    if not isinstance(raw, dict):
        out.append(error("MM_BAD_VALUE", f"expected an object for {kind}", path, Stage.STRUCTURE))
        return

    known = spec.field_names()
    for key in raw:
        if key not in known:
            msg = f"unknown field {key!r} in {kind}"
            if top_level:
                out.append(warning("MM_UNKNOWN_FIELD", msg, f"{path}/{key}", Stage.STRUCTURE))
            else:
                out.append(error("MM_UNKNOWN_FIELD", msg, f"{path}/{key}", Stage.STRUCTURE))

    for fspec in spec.fields:
        fpath = f"{path}/{fspec.name}"
        if fspec.name not in raw:
            if fspec.required:
                out.append(
                    error(
                        "MM_MISSING_FIELD",
                        f"required field {fspec.name!r} missing from {kind}",
                        fpath,
                        Stage.STRUCTURE,
                    )
                )
            continue
        value = raw[fspec.name]
        if fspec.datatype == "object":
            _check_object(mm, fspec.object_kind or "", value, fpath, out, top_level=False)
        elif fspec.datatype == "list":
            if not isinstance(value, list):
                out.append(error("MM_BAD_VALUE", "expected a list", fpath, Stage.STRUCTURE))
                continue
            if len(value) < fspec.min_items:
                out.append(
                    error(
                        "MM_CARDINALITY",
                        f"{fspec.name} needs at least {fspec.min_items} entries",
                        fpath,
                        Stage.STRUCTURE,
                    )
                )
            for i, item in enumerate(value):
                _check_object(mm, fspec.item_kind or "", item, f"{fpath}/{i}", out, top_level=False)
        elif fspec.datatype == "keyed_map":
            if not isinstance(value, dict):
                out.append(error("MM_BAD_VALUE", "expected a map", fpath, Stage.STRUCTURE))
                continue
            for key, item in value.items():
                _check_object(mm, fspec.item_kind or "", item, f"{fpath}/{key}", out, top_level=False)
        else:
            _check_scalar(fspec, value, fpath, out)


def _check_cross_rules(raw: dict, mm: Metamodel, out: list[Diagnostic]) -> None:
    """Constraints spanning more than one field: cardinalities and shape rules."""
    spec = mm.kind("document")
    elements = raw.get("data_elements")
    roles: list[tuple[int, dict]] = []
    if isinstance(elements, list):
        roles = [(i, e) for i, e in enumerate(elements) if isinstance(e, dict)]

        seen: dict[str, int] = {}
        for i, elem in roles:
            name = elem.get("local_name")
            if isinstance(name, str):
                if name in seen:
                    out.append(
                        error(
                            "MM_DUP_NAME",
                            f"local_name {name!r} already declared at index {seen[name]}",
                            f"/data_elements/{i}/local_name",
                            Stage.STRUCTURE,
                        )
                    )
                else:
                    seen[name] = i

        outcome_count = sum(1 for _, e in roles if e.get("role") == "outcome")
        predictor_count = sum(1 for _, e in roles if e.get("role") == "predictor")
        want_outcomes = spec.cardinality.get("outcome_elements", 1)
        want_predictors = spec.cardinality.get("min_predictor_elements", 1)
        if outcome_count != want_outcomes:
            out.append(
                error(
                    "MM_CARDINALITY",
                    f"document declares {outcome_count} outcome elements, expected exactly {want_outcomes}",
                    "/data_elements",
                    Stage.STRUCTURE,
                )
            )
        if predictor_count < want_predictors:
            out.append(
                error(
                    "MM_CARDINALITY",
                    f"document declares {predictor_count} predictor elements, expected at least {want_predictors}",
                    "/data_elements",
                    Stage.STRUCTURE,
                )
            )

        outcome_uris = {e.get("concept_uri") for _, e in roles if e.get("role") == "outcome"}
        for i, elem in roles:
            if elem.get("role") == "predictor" and elem.get("concept_uri") in outcome_uris:
                out.append(
                    error(
                        "MM_SHAPE",
                        "predictor references the outcome's concept",
                        f"/data_elements/{i}/concept_uri",
                        Stage.STRUCTURE,
                    )
                )
            if elem.get("role") == "outcome" and elem.get("expected_datatype") in ("numeric", "datetime"):
                out.append(
                    error(
                        "MM_SHAPE",
                        "outcome elements must be categorical or boolean",
                        f"/data_elements/{i}/expected_datatype",
                        Stage.STRUCTURE,
                    )
                )
            if elem.get("role") == "cohort_filter" and elem.get("expected_datatype") != "boolean":
                out.append(
                    error(
                        "MM_SHAPE",
                        "cohort_filter elements must be boolean",
                        f"/data_elements/{i}/expected_datatype",
                        Stage.STRUCTURE,
                    )
                )
            if elem.get("expected_unit") is not None and elem.get("expected_datatype") != "numeric":
                out.append(
                    error(
                        "MM_BAD_VALUE",
                        "expected_unit is only meaningful for numeric elements",
                        f"/data_elements/{i}/expected_unit",
                        Stage.STRUCTURE,
                    )
                )

    federation = raw.get("federation")
    if isinstance(federation, dict):
        mode = federation.get("mode")
        site_ids = federation.get("site_ids")
        if isinstance(site_ids, list):
            if mode == "local" and len(site_ids) != 1:
                out.append(
                    error(
                        "MM_CARDINALITY",
                        "mode=local requires exactly one site",
                        "/federation/site_ids",
                        Stage.STRUCTURE,
                    )
                )
            if mode in ("multi_site", "federated") and len(site_ids) < 2:
                out.append(
                    error(
                        "MM_CARDINALITY",
                        f"mode={mode} requires at least two sites",
                        "/federation/site_ids",
                        Stage.STRUCTURE,
                    )
                )
            if len(set(site_ids)) != len(site_ids):
                out.append(
                    error(
                        "MM_DUP_NAME",
                        "site_ids contains duplicates",
                        "/federation/site_ids",
                        Stage.STRUCTURE,
                    )
                )

    training = raw.get("training")
    if isinstance(training, dict):
        tag = training.get("algorithm_tag")
        executable = training.get("executable")
        if isinstance(executable, bool) and isinstance(tag, str):
            if executable != (tag == "logistic_regression"):
                out.append(
                    error(
                        "MM_BAD_VALUE",
                        "executable must be true exactly for algorithm_tag=logistic_regression",
                        "/training/executable",
                        Stage.STRUCTURE,
                    )
                )
        if training.get("executable") is True and isinstance(elements, list):
            for i, elem in roles:
                if elem.get("role") == "predictor" and elem.get("expected_datatype") == "datetime":
                    out.append(
                        error(
                            "MM_SHAPE",
                            "executable models cannot train on datetime predictors",
                            f"/data_elements/{i}/expected_datatype",
                            Stage.STRUCTURE,
                        )
                    )
        preprocessing = training.get("preprocessing")
        if isinstance(preprocessing, dict) and isinstance(elements, list):
            declared = {e.get("local_name") for _, e in roles}
            for key in preprocessing:
                if key not in declared:
                    out.append(
                        error(
                            "MM_UNKNOWN_FIELD",
                            f"preprocessing entry {key!r} does not match any data element",
                            f"/training/preprocessing/{key}",
                            Stage.STRUCTURE,
                        )
                    )


def validate_structure_raw(raw: object, mm: Metamodel | None = None) -> ValidationReport:
    """Metamodel-conformance check over an unparsed JSON value."""
    mm = mm or default_metamodel()
    out: list[Diagnostic] = []
    if not isinstance(raw, dict):
        out.append(error("MM_SYNTAX", "document root must be a JSON object", "", Stage.STRUCTURE))
        return ValidationReport(tuple(out))
    _check_object(mm, "document", raw, "", out, top_level=True)
    _check_cross_rules(raw, mm, out)
    return ValidationReport(tuple(out))


def validate_structure(doc: ModelDocument, mm: Metamodel | None = None) -> ValidationReport:
    """Structural validation of a parsed document (pure; order-stable output)."""
    return validate_structure_raw(doc.to_json_dict(), mm)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _bind(raw: dict) -> ModelDocument:
    """Bind a structurally valid raw document into typed form."""
    elements = tuple(
        DataElementRef(
            local_name=e["local_name"],
            concept_uri=e["concept_uri"],
            role=ElementRole(e["role"]),
            expected_datatype=ElementDatatype(e["expected_datatype"]),
            expected_unit=e.get("expected_unit"),
            path=f"/data_elements/{i}",
        )
        for i, e in enumerate(raw["data_elements"])
    )
    fed = raw["federation"]
    training = raw["training"]
    preprocessing = {
        name: PreprocessConstant(
            impute_value=pc.get("impute_value"),
            scale_offset=pc.get("scale_offset"),
            scale_factor=pc.get("scale_factor"),
        )
        for name, pc in training["preprocessing"].items()
    }
    return ModelDocument(
        id=raw["id"],
        name=raw["name"],
        version=raw["version"],
        task=TaskSpec(kind=TaskKind(raw["task"]["kind"]), description=raw["task"]["description"]),
        data_elements=elements,
        federation=FederationDirective(
            mode=FederationMode(fed["mode"]),
            site_ids=tuple(fed["site_ids"]),
            rounds=fed["rounds"],
            min_local_instances=fed["min_local_instances"],
            aggregator=Aggregator(fed["aggregator"]),
            seed=fed["seed"],
        ),
        training=TrainingSpec(
            algorithm_tag=AlgorithmTag(training["algorithm_tag"]),
            executable=training["executable"],
            learning_rate=training["learning_rate"],
            local_epochs=training["local_epochs"],
            l2=training["l2"],
            preprocessing=preprocessing,
        ),
        metadata=dict(raw["metadata"]),
    )


def parse_model(
    text: str, mm: Metamodel | None = None
) -> tuple[ModelDocument | None, list[Diagnostic]]:
    """Parse a model document.

    Returns ``(document, diagnostics)``; the document is None when any
    error-severity diagnostic was found. Parsing is total: malformed input
    yields MM_SYNTAX rather than an exception.
    """
    try:
        raw = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return None, [error("MM_SYNTAX", f"not valid JSON: {exc}", "", Stage.STRUCTURE)]
    report = validate_structure_raw(raw, mm)
    if not report.passed:
        return None, list(report.diagnostics)
    return _bind(raw), list(report.diagnostics)


def serialize_model(doc: ModelDocument) -> str:
    """Canonical serialization; ``parse(serialize(doc))`` reproduces ``doc``."""
    return canonical_json(doc.to_json_dict())


def canonical_hash(doc: ModelDocument) -> str:
    """Digest of the canonical serialization; key order never matters."""
    return digest_json(doc.to_json_dict())
