"""Virtual data lake: per-site schema catalogs, availability checks, query
generation, and a miniature fixture evaluator.

Sites describe how ontology concepts land in their physical schema, either as
relational (table, column) pairs or as RDF (class, predicate) pairs. Queries
are generated per dialect from a model document and can be executed against
in-memory fixture stores so the semantic-equivalence claim is testable: two
sites holding the same logical data return identical tables after patient-key
sorting and unit harmonization.

The patient key is used for joins and row ordering only; it never appears in
an output column, and neither does any mapping flagged as identifying.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .diagnostics import Diagnostic, MilaError, Stage, ValidationReport, error
from .model_core import ElementDatatype, ModelDocument
from .units import UnitRegistry, convert_units, default_registry

__all__ = [
    "Dialect", "RelationalMapping", "GraphMapping", "SqlTable", "SqlFixture",
    "Triple", "SparqlFixture", "SiteCatalog", "HarmonizationAction",
    "OutputColumn", "QueryText", "AvailabilityReport", "ResultTable",
    "load_site_catalog", "check_availability", "convert_units",
    "generate_query", "execute_fixture_query", "UnitRegistry",
    "default_registry",
]


class Dialect(str, Enum):
    SQL = "sql"
    SPARQL = "sparql"


@dataclass(frozen=True)
class RelationalMapping:
    table: str
    column: str
    patient_key_column: str
    datatype: ElementDatatype
    unit: str | None = None
    identifying: bool = False


@dataclass(frozen=True)
class GraphMapping:
    subject_class_uri: str
    predicate_uri: str
    datatype: ElementDatatype
    unit: str | None = None
    identifying: bool = False


FieldMapping = RelationalMapping | GraphMapping


@dataclass(frozen=True)
class SqlTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[object, ...], ...]

    def column_index(self, name: str) -> int:
        return self.columns.index(name)


@dataclass(frozen=True)
class SqlFixture:
    tables: dict[str, SqlTable]


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    obj: object
    datatype: str


@dataclass(frozen=True)
class SparqlFixture:
    triples: tuple[Triple, ...]


@dataclass(frozen=True)
class SiteCatalog:
    site_id: str
    dialect: Dialect
    # Column name holding the patient key (sql) or the predicate URI linking
    # record nodes to it (sparql).
    patient_key: str
    mappings: dict[str, FieldMapping]
    record_count: dict[str, int]
    fixture: SqlFixture | SparqlFixture | None = None


@dataclass(frozen=True)
class HarmonizationAction:
    site_id: str
    local_name: str
    element_path: str
    from_unit: str
    to_unit: str
    factor: float
    offset: float

    def to_json_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "local_name": self.local_name,
            "element_path": self.element_path,
            "from_unit": self.from_unit,
            "to_unit": self.to_unit,
            "factor": self.factor,
            "offset": self.offset,
        }


@dataclass(frozen=True)
class OutputColumn:
    local_name: str
    concept_uri: str
    unit: str | None

    def to_json_dict(self) -> dict:
        return {"local_name": self.local_name, "concept_uri": self.concept_uri, "unit": self.unit}


@dataclass(frozen=True)
class QueryText:
    dialect: Dialect
    text: str
    output_columns: tuple[OutputColumn, ...]


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[OutputColumn, ...]
    rows: tuple[tuple[object, ...], ...]


@dataclass(frozen=True)
class AvailabilityReport:
    site_reports: dict[str, ValidationReport]
    actions: tuple[HarmonizationAction, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.site_reports.values())

    def combined(self) -> ValidationReport:
        return ValidationReport.combine(*(self.site_reports[s] for s in sorted(self.site_reports)))

    def actions_for(self, site_id: str) -> tuple[HarmonizationAction, ...]:
        return tuple(a for a in self.actions if a.site_id == site_id)


# ---------------------------------------------------------------------------
# Site catalog loading
# ---------------------------------------------------------------------------

_RELATIONAL_KEYS = {"table", "column", "patient_key_column", "datatype", "unit", "identifying"}
_GRAPH_KEYS = {"subject_class_uri", "predicate_uri", "datatype", "unit", "identifying"}


def _parse_mapping(
    raw: dict, dialect: Dialect, path: str, registry: UnitRegistry, diags: list[Diagnostic]
) -> FieldMapping | None:
    def err(code: str, msg: str) -> None:
        diags.append(error(code, msg, path, Stage.AVAILABILITY))

    if "table" in raw:
        variant: Dialect = Dialect.SQL
        extra = set(raw) - _RELATIONAL_KEYS
    elif "subject_class_uri" in raw:
        variant = Dialect.SPARQL
        extra = set(raw) - _GRAPH_KEYS
    else:
        err("VDL_SYNTAX", "mapping is neither relational nor graph-shaped")
        return None
    if extra:
        err("VDL_SYNTAX", f"mapping has unknown keys {sorted(extra)}")
        return None
    if variant is not dialect:
        err(
            "VDL_DIALECT_MISMATCH",
            f"{variant.value} mapping declared inside a {dialect.value} site",
        )
        return None
    try:
        datatype = ElementDatatype(raw.get("datatype"))
    except ValueError:
        err("VDL_SYNTAX", f"unknown datatype {raw.get('datatype')!r}")
        return None
    unit = raw.get("unit")
    identifying = raw.get("identifying", False)
    if unit is not None and not isinstance(unit, str):
        err("VDL_SYNTAX", "unit must be a string")
        return None
    if not isinstance(identifying, bool):
        err("VDL_SYNTAX", "identifying must be a boolean")
        return None
    if unit is not None and datatype is not ElementDatatype.NUMERIC:
        err("VDL_SYNTAX", "only numeric mappings may declare a unit")
        return None
    if unit is not None and registry.dimension_of(unit) is None:
        err("VDL_UNKNOWN_UNIT", f"unit {unit!r} is not in the registry")
        return None

    if variant is Dialect.SQL:
        for key in ("table", "column", "patient_key_column"):
            if not isinstance(raw.get(key), str) or not raw[key]:
                err("VDL_SYNTAX", f"relational mapping needs a string {key!r}")
                return None
        return RelationalMapping(
            table=raw["table"],
            column=raw["column"],
            patient_key_column=raw["patient_key_column"],
            datatype=datatype,
            unit=unit,
            identifying=identifying,
        )
    for key in ("subject_class_uri", "predicate_uri"):
        if not isinstance(raw.get(key), str) or not raw[key]:
            err("VDL_SYNTAX", f"graph mapping needs a string {key!r}")
            return None
    return GraphMapping(
        subject_class_uri=raw["subject_class_uri"],
        predicate_uri=raw["predicate_uri"],
        datatype=datatype,
        unit=unit,
        identifying=identifying,
    )


def _parse_sql_fixture(raw: dict, diags: list[Diagnostic]) -> SqlFixture | None:
    tables_raw = raw.get("tables")
    if not isinstance(tables_raw, dict):
        diags.append(error("VDL_SYNTAX", "sql fixture needs a 'tables' map", "/fixture", Stage.AVAILABILITY))
        return None
    tables: dict[str, SqlTable] = {}
    for name, tbl in tables_raw.items():
        path = f"/fixture/tables/{name}"
        columns = tbl.get("columns") if isinstance(tbl, dict) else None
        rows = tbl.get("rows") if isinstance(tbl, dict) else None
        if (
            not isinstance(columns, list)
            or not all(isinstance(c, str) for c in columns)
            or not isinstance(rows, list)
        ):
            diags.append(error("VDL_SYNTAX", "table needs 'columns' and 'rows'", path, Stage.AVAILABILITY))
            return None
        for i, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != len(columns):
                diags.append(
                    error("VDL_SYNTAX", f"row {i} does not match the column list", path, Stage.AVAILABILITY)
                )
                return None
        tables[name] = SqlTable(
            columns=tuple(columns), rows=tuple(tuple(r) for r in rows)
        )
    return SqlFixture(tables=tables)


def _parse_sparql_fixture(raw: dict, diags: list[Diagnostic]) -> SparqlFixture | None:
    triples_raw = raw.get("triples")
    if not isinstance(triples_raw, list):
        diags.append(error("VDL_SYNTAX", "sparql fixture needs a 'triples' list", "/fixture", Stage.AVAILABILITY))
        return None
    triples: list[Triple] = []
    for i, t in enumerate(triples_raw):
        if (
            not isinstance(t, list)
            or len(t) != 4
            or not isinstance(t[0], str)
            or not isinstance(t[1], str)
            or not isinstance(t[3], str)
        ):
            diags.append(
                error(
                    "VDL_SYNTAX",
                    "triple must be [subject, predicate, object, datatype]",
                    f"/fixture/triples/{i}",
                    Stage.AVAILABILITY,
                )
            )
            return None
        triples.append(Triple(subject=t[0], predicate=t[1], obj=t[2], datatype=t[3]))
    return SparqlFixture(triples=tuple(triples))


def load_site_catalog(
    text: str, registry: UnitRegistry | None = None
) -> tuple[SiteCatalog | None, list[Diagnostic]]:
    """Parse a site catalog document; total, accumulates diagnostics."""
    registry = registry or default_registry()
    diags: list[Diagnostic] = []

    def err(code: str, msg: str, path: str) -> None:
        diags.append(error(code, msg, path, Stage.AVAILABILITY))

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        err("VDL_SYNTAX", f"not valid JSON: {exc}", "")
        return None, diags
    if not isinstance(raw, dict):
        err("VDL_SYNTAX", "site catalog root must be an object", "")
        return None, diags

    site_id = raw.get("site_id")
    patient_key = raw.get("patient_key")
    if not isinstance(site_id, str) or not site_id:
        err("VDL_SYNTAX", "site catalog needs a string 'site_id'", "/site_id")
        return None, diags
    try:
        dialect = Dialect(raw.get("dialect"))
    except ValueError:
        err("VDL_SYNTAX", f"unknown dialect {raw.get('dialect')!r}", "/dialect")
        return None, diags
    if not isinstance(patient_key, str) or not patient_key:
        err("VDL_SYNTAX", "site catalog needs a string 'patient_key'", "/patient_key")
        return None, diags

    mappings_raw = raw.get("mappings", {})
    if not isinstance(mappings_raw, dict):
        err("VDL_SYNTAX", "'mappings' must be a map of concept URIs", "/mappings")
        return None, diags
    mappings: dict[str, FieldMapping] = {}
    table_keys: dict[str, str] = {}
    for uri, mraw in mappings_raw.items():
        path = f"/mappings/{uri}"
        if not isinstance(mraw, dict):
            err("VDL_SYNTAX", "mapping must be an object", path)
            continue
        mapping = _parse_mapping(mraw, dialect, path, registry, diags)
        if mapping is None:
            continue
        if isinstance(mapping, RelationalMapping):
            prior = table_keys.setdefault(mapping.table, mapping.patient_key_column)
            if prior != mapping.patient_key_column:
                err(
                    "VDL_SYNTAX",
                    f"table {mapping.table!r} maps conflicting patient key columns "
                    f"{prior!r} and {mapping.patient_key_column!r}",
                    path,
                )
                continue
        mappings[uri] = mapping

    record_count: dict[str, int] = {}
    counts_raw = raw.get("record_count", {})
    if not isinstance(counts_raw, dict):
        err("VDL_SYNTAX", "'record_count' must be a map", "/record_count")
    else:
        for uri, n in counts_raw.items():
            if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                err("VDL_SYNTAX", "record count must be a nonnegative integer", f"/record_count/{uri}")
            else:
                record_count[uri] = n

    fixture: SqlFixture | SparqlFixture | None = None
    if raw.get("fixture") is not None:
        if not isinstance(raw["fixture"], dict):
            err("VDL_SYNTAX", "'fixture' must be an object", "/fixture")
        elif dialect is Dialect.SQL:
            fixture = _parse_sql_fixture(raw["fixture"], diags)
        else:
            fixture = _parse_sparql_fixture(raw["fixture"], diags)

    if any(d.severity.value == "error" for d in diags):
        return None, diags
    return (
        SiteCatalog(
            site_id=site_id,
            dialect=dialect,
            patient_key=patient_key,
            mappings=mappings,
            record_count=record_count,
            fixture=fixture,
        ),
        diags,
    )


# ---------------------------------------------------------------------------
# Availability and harmonization
# ---------------------------------------------------------------------------


def check_availability(
    doc: ModelDocument,
    sites: list[SiteCatalog],
    registry: UnitRegistry,
    k_min: int,
) -> AvailabilityReport:
    """Cross-check every (site, element) pair: mapping presence, datatype,
    record count, and unit compatibility.

    Unit differences that the registry can bridge become HarmonizationActions
    rather than errors. Identifying-flagged mappings are rejected outright so
    no plan can ever export them.
    """
    site_reports: dict[str, ValidationReport] = {}
    actions: list[HarmonizationAction] = []
    for site in sorted(sites, key=lambda s: s.site_id):
        out: list[Diagnostic] = []
        for elem in doc.data_elements:
            mapping = site.mappings.get(elem.concept_uri)
            if mapping is None:
                out.append(
                    error(
                        "AVAIL_MISSING",
                        f"site {site.site_id!r} has no mapping for {elem.concept_uri!r}",
                        elem.path,
                        Stage.AVAILABILITY,
                    )
                )
                continue
            if mapping.identifying:
                out.append(
                    error(
                        "AVAIL_IDENTIFYING",
                        f"site {site.site_id!r} maps {elem.local_name!r} to an "
                        "identifying field, which may not be exported",
                        elem.path,
                        Stage.AVAILABILITY,
                    )
                )
            if mapping.datatype is not elem.expected_datatype:
                out.append(
                    error(
                        "AVAIL_TYPE",
                        f"site {site.site_id!r} stores {elem.local_name!r} as "
                        f"{mapping.datatype.value}, model expects {elem.expected_datatype.value}",
                        elem.path,
                        Stage.AVAILABILITY,
                    )
                )
            count = site.record_count.get(elem.concept_uri, 0)
            if count < k_min:
                out.append(
                    error(
                        "AVAIL_COUNT",
                        f"site {site.site_id!r} holds {count} instances of "
                        f"{elem.local_name!r}, below the minimum {k_min}",
                        elem.path,
                        Stage.AVAILABILITY,
                    )
                )
            if elem.expected_unit is not None and mapping.unit != elem.expected_unit:
                pair = (
                    None
                    if mapping.unit is None
                    else registry.find_conversion(mapping.unit, elem.expected_unit)
                )
                if pair is None:
                    have = mapping.unit if mapping.unit is not None else "no unit"
                    out.append(
                        error(
                            "AVAIL_UNIT",
                            f"site {site.site_id!r} stores {elem.local_name!r} in "
                            f"{have}, not convertible to {elem.expected_unit!r}",
                            elem.path,
                            Stage.AVAILABILITY,
                        )
                    )
                else:
                    factor, offset = pair
                    actions.append(
                        HarmonizationAction(
                            site_id=site.site_id,
                            local_name=elem.local_name,
                            element_path=elem.path,
                            from_unit=mapping.unit,  # type: ignore[arg-type]
                            to_unit=elem.expected_unit,
                            factor=factor,
                            offset=offset,
                        )
                    )
        site_reports[site.site_id] = ValidationReport(tuple(out))
    return AvailabilityReport(site_reports=site_reports, actions=tuple(actions))


# ---------------------------------------------------------------------------
# Query generation
# ---------------------------------------------------------------------------


def _site_mapping(site: SiteCatalog, elem) -> FieldMapping:
    mapping = site.mappings.get(elem.concept_uri)
    if mapping is None:
        raise MilaError(
            "AVAIL_MISSING",
            f"site {site.site_id!r} has no mapping for {elem.concept_uri!r}",
        )
    if mapping.identifying:
        raise MilaError(
            "AVAIL_IDENTIFYING",
            f"refusing to export identifying field for {elem.local_name!r}",
        )
    return mapping


def generate_query(doc: ModelDocument, site: SiteCatalog) -> QueryText:
    """Emit the site-dialect retrieval query for a model document.

    Deterministic: columns follow the document's declaration order, joined
    tables follow their first reference (name as tie-break), and the text is
    byte-stable for equal inputs.
    """
    if not doc.data_elements:
        raise MilaError("VDL_EMPTY", "model declares no data elements")
    columns = tuple(
        OutputColumn(local_name=e.local_name, concept_uri=e.concept_uri, unit=e.expected_unit)
        for e in doc.data_elements
    )
    if site.dialect is Dialect.SQL:
        text = _generate_sql(doc, site)
    else:
        text = _generate_sparql(doc, site)
    return QueryText(dialect=site.dialect, text=text, output_columns=columns)


def _comment_block(prefix: str, doc: ModelDocument, site: SiteCatalog) -> list[str]:
    lines = [f"{prefix} model: {doc.id}", f"{prefix} site: {site.site_id}"]
    for elem in doc.data_elements:
        lines.append(f"{prefix} concept {elem.local_name}: {elem.concept_uri}")
    return lines


def _generate_sql(doc: ModelDocument, site: SiteCatalog) -> str:
    mappings: list[RelationalMapping] = []
    for elem in doc.data_elements:
        mapping = _site_mapping(site, elem)
        assert isinstance(mapping, RelationalMapping)
        mappings.append(mapping)

    # Join order: first reference wins, following the declaration order of
    # the elements that bring each table in.
    tables: list[str] = []
    for mapping in mappings:
        if mapping.table not in tables:
            tables.append(mapping.table)
    alias = {table: f"t{i}" for i, table in enumerate(tables)}
    key_of = {m.table: m.patient_key_column for m in mappings}

    lines = _comment_block("--", doc, site)
    lines.append("SELECT")
    for i, (elem, mapping) in enumerate(zip(doc.data_elements, mappings)):
        comma = "," if i < len(mappings) - 1 else ""
        lines.append(f"  {alias[mapping.table]}.{mapping.column} AS {elem.local_name}{comma}")
    root = tables[0]
    lines.append(f"FROM {root} AS t0")
    for table in tables[1:]:
        lines.append(
            f"INNER JOIN {table} AS {alias[table]} "
            f"ON t0.{key_of[root]} = {alias[table]}.{key_of[table]}"
        )
    lines.append(f"ORDER BY t0.{key_of[root]};")
    return "\n".join(lines) + "\n"


def _generate_sparql(doc: ModelDocument, site: SiteCatalog) -> str:
    mappings: list[GraphMapping] = []
    for elem in doc.data_elements:
        mapping = _site_mapping(site, elem)
        assert isinstance(mapping, GraphMapping)
        mappings.append(mapping)

    lines = _comment_block("#", doc, site)
    select_vars = " ".join(f"?{e.local_name}" for e in doc.data_elements)
    lines.append(f"SELECT {select_vars}")
    lines.append("WHERE {")
    for i, (elem, mapping) in enumerate(zip(doc.data_elements, mappings)):
        lines.append(f"  ?n{i} a <{mapping.subject_class_uri}> .")
        lines.append(f"  ?n{i} <{site.patient_key}> ?pid .")
        lines.append(f"  ?n{i} <{mapping.predicate_uri}> ?{elem.local_name} .")
    lines.append("}")
    lines.append("ORDER BY ?pid")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Fixture evaluation
# ---------------------------------------------------------------------------

_SQL_COLUMN_RE = re.compile(r"^  (t\d+)\.([A-Za-z_]\w*) AS ([A-Za-z_]\w*)(,?)$")
_SQL_FROM_RE = re.compile(r"^FROM ([A-Za-z_]\w*) AS t0$")
_SQL_JOIN_RE = re.compile(
    r"^INNER JOIN ([A-Za-z_]\w*) AS (t\d+) ON t0\.([A-Za-z_]\w*) = (t\d+)\.([A-Za-z_]\w*)$"
)
_SQL_ORDER_RE = re.compile(r"^ORDER BY t0\.([A-Za-z_]\w*);$")

_SPARQL_TYPE_RE = re.compile(r"^  \?(n\d+) a <([^<>\s]+)> \.$")
_SPARQL_KEY_RE = re.compile(r"^  \?(n\d+) <([^<>\s]+)> \?pid \.$")
_SPARQL_VALUE_RE = re.compile(r"^  \?(n\d+) <([^<>\s]+)> \?([A-Za-z_]\w*) \.$")


def _unsupported(msg: str) -> MilaError:
    return MilaError("VDL_UNSUPPORTED_QUERY", msg)


def _strip_comments(text: str, prefix: str) -> list[str]:
    lines = [ln for ln in text.splitlines() if ln]
    return [ln for ln in lines if not ln.startswith(prefix + " ")]


def _harmonizers(
    q: QueryText,
    units: list[str | None],
    registry: UnitRegistry,
) -> list[tuple[float, float] | None]:
    """Per-column affine pairs taking site values into the model's unit."""
    out: list[tuple[float, float] | None] = []
    for col, site_unit in zip(q.output_columns, units):
        if col.unit is None or site_unit is None or site_unit == col.unit:
            out.append(None)
            continue
        pair = registry.find_conversion(site_unit, col.unit)
        if pair is None:
            raise MilaError(
                "VDL_NO_CONVERSION",
                f"cannot harmonize {col.local_name!r} from {site_unit!r} to {col.unit!r}",
            )
        out.append(pair)
    return out


def _finish_rows(
    raw_rows: list[tuple[object, tuple[object, ...]]],
    datatypes: list[ElementDatatype],
    harmonizers: list[tuple[float, float] | None],
) -> tuple[tuple[object, ...], ...]:
    """Sort by patient key, drop it, coerce numerics, apply harmonization."""
    raw_rows.sort(key=lambda pair: pair[0])  # type: ignore[arg-type]
    rows = []
    for _pid, values in raw_rows:
        finished = []
        for value, datatype, pair in zip(values, datatypes, harmonizers):
            if value is None:
                finished.append(None)
            elif datatype is ElementDatatype.NUMERIC:
                number = float(value)
                if pair is not None:
                    number = number * pair[0] + pair[1]
                finished.append(number)
            else:
                finished.append(value)
        rows.append(tuple(finished))
    return tuple(rows)


def _execute_sql(q: QueryText, site: SiteCatalog, registry: UnitRegistry) -> ResultTable:
    assert isinstance(site.fixture, SqlFixture)
    lines = _strip_comments(q.text, "--")
    if not lines or lines[0] != "SELECT":
        raise _unsupported("expected a single SELECT")
    idx = 1
    columns: list[tuple[str, str, str]] = []
    while idx < len(lines):
        m = _SQL_COLUMN_RE.match(lines[idx])
        if not m:
            break
        columns.append((m.group(1), m.group(2), m.group(3)))
        idx += 1
        if m.group(4) == "":
            break
    if not columns:
        raise _unsupported("no output columns found")
    m = _SQL_FROM_RE.match(lines[idx]) if idx < len(lines) else None
    if not m:
        raise _unsupported("expected a FROM clause over an aliased table")
    tables = {"t0": m.group(1)}
    keys: dict[str, str] = {}
    idx += 1
    while idx < len(lines):
        m = _SQL_JOIN_RE.match(lines[idx])
        if not m:
            break
        table, alias, left_key, right_alias, right_key = m.groups()
        if right_alias != alias:
            raise _unsupported("join condition does not reference the joined table")
        tables[alias] = table
        keys["t0"] = left_key
        keys[alias] = right_key
        idx += 1
    m = _SQL_ORDER_RE.match(lines[idx]) if idx < len(lines) else None
    if not m or idx != len(lines) - 1:
        raise _unsupported("expected a final ORDER BY on the patient key")
    keys.setdefault("t0", m.group(1))
    if keys["t0"] != m.group(1):
        raise _unsupported("ORDER BY key differs from the join key")

    if [c[2] for c in columns] != [c.local_name for c in q.output_columns]:
        raise _unsupported("column aliases do not match the declared output columns")

    by_location: dict[tuple[str, str], RelationalMapping] = {}
    for mapping in site.mappings.values():
        if isinstance(mapping, RelationalMapping):
            by_location[(mapping.table, mapping.column)] = mapping
    site_units: list[str | None] = []
    datatypes: list[ElementDatatype] = []
    for alias, column, _name in columns:
        if alias not in tables:
            raise _unsupported(f"column references unknown alias {alias!r}")
        mapping = by_location.get((tables[alias], column))
        if mapping is None:
            raise _unsupported(f"column {tables[alias]}.{column} has no mapping")
        site_units.append(mapping.unit)
        datatypes.append(mapping.datatype)
    harmonizers = _harmonizers(q, site_units, registry)

    indexed: dict[str, dict[object, list[dict[str, object]]]] = {}
    for alias, table_name in tables.items():
        table = site.fixture.tables.get(table_name)
        if table is None:
            raise _unsupported(f"fixture has no table {table_name!r}")
        key_column = keys[alias]
        if key_column not in table.columns:
            raise _unsupported(f"table {table_name!r} has no column {key_column!r}")
        key_idx = table.column_index(key_column)
        rows_by_pid: dict[object, list[dict[str, object]]] = {}
        for row in table.rows:
            env = dict(zip(table.columns, row))
            rows_by_pid.setdefault(row[key_idx], []).append(env)
        indexed[alias] = rows_by_pid

    aliases = sorted(tables, key=lambda a: int(a[1:]))
    raw_rows: list[tuple[object, tuple[object, ...]]] = []
    for pid in indexed["t0"]:
        if any(pid not in indexed[a] for a in aliases[1:]):
            continue
        combos: list[dict[str, dict[str, object]]] = [{}]
        for alias in aliases:
            combos = [
                {**combo, alias: env}
                for combo in combos
                for env in indexed[alias][pid]
            ]
        for combo in combos:
            raw_rows.append(
                (pid, tuple(combo[alias][column] for alias, column, _n in columns))
            )
    return ResultTable(
        columns=q.output_columns, rows=_finish_rows(raw_rows, datatypes, harmonizers)
    )


def _execute_sparql(q: QueryText, site: SiteCatalog, registry: UnitRegistry) -> ResultTable:
    assert isinstance(site.fixture, SparqlFixture)
    lines = _strip_comments(q.text, "#")
    if len(lines) < 4 or not lines[0].startswith("SELECT "):
        raise _unsupported("expected a single SELECT over a basic graph pattern")
    select_vars = lines[0][len("SELECT "):].split(" ")
    if lines[1] != "WHERE {" or lines[-1] != "ORDER BY ?pid" or lines[-2] != "}":
        raise _unsupported("expected WHERE { ... } ORDER BY ?pid")
    body = lines[2:-2]
    if len(body) != 3 * len(select_vars):
        raise _unsupported("graph pattern does not cover every selected variable")

    patterns: list[tuple[str, str, str, str]] = []
    for i in range(0, len(body), 3):
        t = _SPARQL_TYPE_RE.match(body[i])
        k = _SPARQL_KEY_RE.match(body[i + 1])
        v = _SPARQL_VALUE_RE.match(body[i + 2])
        if not (t and k and v) or not (t.group(1) == k.group(1) == v.group(1)):
            raise _unsupported("unrecognized node pattern in graph body")
        patterns.append((t.group(2), k.group(2), v.group(2), v.group(3)))
    if [p[3] for p in patterns] != [v.lstrip("?") for v in select_vars]:
        raise _unsupported("pattern variables do not match the SELECT list")
    if [p[3] for p in patterns] != [c.local_name for c in q.output_columns]:
        raise _unsupported("selected variables do not match the declared output columns")

    by_predicate: dict[str, GraphMapping] = {}
    for mapping in site.mappings.values():
        if isinstance(mapping, GraphMapping):
            by_predicate[mapping.predicate_uri] = mapping
    site_units: list[str | None] = []
    datatypes: list[ElementDatatype] = []
    for _class_uri, _key_pred, value_pred, _var in patterns:
        mapping = by_predicate.get(value_pred)
        if mapping is None:
            raise _unsupported(f"predicate {value_pred!r} has no mapping")
        site_units.append(mapping.unit)
        datatypes.append(mapping.datatype)
    harmonizers = _harmonizers(q, site_units, registry)

    by_subject: dict[str, list[Triple]] = {}
    for triple in site.fixture.triples:
        by_subject.setdefault(triple.subject, []).append(triple)

    per_element: list[dict[object, list[object]]] = []
    for class_uri, key_pred, value_pred, _var in patterns:
        values_by_pid: dict[object, list[object]] = {}
        for subject, triples in by_subject.items():
            if not any(t.predicate == "a" and t.obj == class_uri for t in triples):
                continue
            pids = [t.obj for t in triples if t.predicate == key_pred]
            values = [t.obj for t in triples if t.predicate == value_pred]
            for pid in pids:
                for value in values:
                    values_by_pid.setdefault(pid, []).append(value)
        per_element.append(values_by_pid)

    shared = set(per_element[0])
    for values_by_pid in per_element[1:]:
        shared &= set(values_by_pid)
    raw_rows: list[tuple[object, tuple[object, ...]]] = []
    for pid in shared:
        combos: list[tuple[object, ...]] = [()]
        for values_by_pid in per_element:
            combos = [c + (v,) for c in combos for v in values_by_pid[pid]]
        for combo in combos:
            raw_rows.append((pid, combo))
    return ResultTable(
        columns=q.output_columns, rows=_finish_rows(raw_rows, datatypes, harmonizers)
    )


def execute_fixture_query(
    q: QueryText, site: SiteCatalog, registry: UnitRegistry | None = None
) -> ResultTable:
    """Evaluate a generated query against the site's in-memory fixture.

    Only the subset emitted by generate_query is supported; anything else is
    rejected with VDL_UNSUPPORTED_QUERY. Rows come back sorted by patient key
    with the key itself dropped and numeric columns harmonized into the
    model's expected units.
    """
    registry = registry or default_registry()
    if site.fixture is None:
        raise _unsupported(f"site {site.site_id!r} has no fixture store")
    if q.dialect is not site.dialect:
        raise _unsupported("query dialect does not match the site dialect")
    if q.dialect is Dialect.SQL:
        return _execute_sql(q, site, registry)
    return _execute_sparql(q, site, registry)
