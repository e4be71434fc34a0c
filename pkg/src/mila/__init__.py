"""Model-driven toolchain for federated clinical prediction pipelines.

Model documents are validated in layers (structure, semantics, availability,
federation), transformed into site-specific execution plans, rendered into
traceable artifacts, and exercised by a federated training simulator. Every
stage writes hash-linked records so predictions trace back to the document
that produced them.
"""

from .canonical import canonical_json, digest_json, pretty_json, sha256_hex
from .diagnostics import Diagnostic, MilaError, Severity, Stage, ValidationReport
from .model_core import (
    ModelDocument,
    canonical_hash,
    default_metamodel,
    parse_model,
    serialize_model,
    validate_structure,
)
from .ontology import OntologyCatalog, default_catalog, load_catalog, validate_semantics
from .planner import Plan, plan_from_json_dict, transform
from .trace_audit import AuditRow, AuditTable, Ledger, TraceRecord, audit
from .units import UnitRegistry, convert_units, default_registry, load_registry
from .vdl import SiteCatalog, check_availability, execute_fixture_query, generate_query

__version__ = "0.1.0"

__all__ = [
    "AuditRow",
    "AuditTable",
    "Diagnostic",
    "Ledger",
    "MilaError",
    "ModelDocument",
    "OntologyCatalog",
    "Plan",
    "Severity",
    "SiteCatalog",
    "Stage",
    "TraceRecord",
    "UnitRegistry",
    "ValidationReport",
    "audit",
    "canonical_hash",
    "canonical_json",
    "check_availability",
    "convert_units",
    "default_catalog",
    "default_metamodel",
    "default_registry",
    "digest_json",
    "execute_fixture_query",
    "generate_query",
    "load_catalog",
    "load_registry",
    "parse_model",
    "plan_from_json_dict",
    "pretty_json",
    "serialize_model",
    "sha256_hex",
    "transform",
    "validate_semantics",
    "validate_structure",
    "__version__",
]
