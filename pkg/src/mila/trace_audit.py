"""Append-only provenance ledger plus the traceability auditor.

Every pipeline stage drops a record into a JSON-lines ledger; each record
carries the content hash of the object it describes, verified at append
time. The auditor then walks prediction -> round -> plan -> document chains
and reports, per model, whether training outputs trace to a plan, whether
the plan traces to the current document, and whether the ontology URI set
survived unchanged into every artifact and round. Integrity is hash-based;
there is no wall clock anywhere, only counters.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .canonical import canonical_json, digest_json, sha256_hex
from .codegen import ArtifactSet, parse_provenance_header
from .diagnostics import MilaError
from .fedsim import SessionLog
from .model_core import ModelDocument, canonical_hash


class RecordKind(str, Enum):
    VALIDATION = "validation"
    PLAN = "plan"
    ARTIFACT = "artifact"
    ROUND = "round"
    PREDICTION = "prediction"


@dataclass(frozen=True)
class TraceRecord:
    record_id: int
    logical_time: int
    kind: RecordKind
    model_id: str
    model_hash: str
    content_hash: str
    element_paths: tuple[str, ...] = ()
    ontology_uris: tuple[str, ...] = ()
    experiment_id: str | None = None
    site_id: str | None = None
    round: int | None = None

    def to_json_dict(self) -> dict:
        out = {
            "record_id": self.record_id,
            "logical_time": self.logical_time,
            "kind": self.kind.value,
            "model_id": self.model_id,
            "model_hash": self.model_hash,
            "content_hash": self.content_hash,
            "element_paths": list(self.element_paths),
            "ontology_uris": list(self.ontology_uris),
        }
        if self.experiment_id is not None:
            out["experiment_id"] = self.experiment_id
        if self.site_id is not None:
            out["site_id"] = self.site_id
        if self.round is not None:
            out["round"] = self.round
        return out


def record_from_json_dict(raw: dict) -> TraceRecord:
    return TraceRecord(
        record_id=raw["record_id"],
        logical_time=raw["logical_time"],
        kind=RecordKind(raw["kind"]),
        model_id=raw["model_id"],
        model_hash=raw["model_hash"],
        content_hash=raw["content_hash"],
        element_paths=tuple(raw.get("element_paths", ())),
        ontology_uris=tuple(raw.get("ontology_uris", ())),
        experiment_id=raw.get("experiment_id"),
        site_id=raw.get("site_id"),
        round=raw.get("round"),
    )


def new_record(
    kind: RecordKind,
    model_id: str,
    model_hash: str,
    referent: bytes,
    element_paths: tuple[str, ...] = (),
    ontology_uris: tuple[str, ...] = (),
    experiment_id: str | None = None,
    site_id: str | None = None,
    round: int | None = None,
) -> TraceRecord:
    """Build an unnumbered record whose content_hash digests the referent.

    record_id and logical_time are placeholders until the ledger assigns them.
    """
    return TraceRecord(
        record_id=0,
        logical_time=0,
        kind=kind,
        model_id=model_id,
        model_hash=model_hash,
        content_hash=sha256_hex(referent),
        element_paths=element_paths,
        ontology_uris=ontology_uris,
        experiment_id=experiment_id,
        site_id=site_id,
        round=round,
    )


class Ledger:
    """Append-only record store, optionally backed by a JSON-lines file.

    Prior lines are never rewritten; appends go straight to the end of the
    file. A reopened ledger continues its counters from the stored maximum.
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[TraceRecord] = []
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        text = self.path.read_text("utf-8")
        last_id = 0
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = record_from_json_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise MilaError(
                    "TA_HASH_MISMATCH", f"{self.path}:{lineno}: unreadable ledger line ({exc})"
                ) from exc
            if record.record_id <= last_id:
                raise MilaError(
                    "TA_HASH_MISMATCH",
                    f"{self.path}:{lineno}: record_id {record.record_id} is not increasing",
                )
            last_id = record.record_id
            self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TraceRecord, referent: bytes) -> TraceRecord:
        """Verify the record against its referent, number it, and persist it."""
        if sha256_hex(referent) != record.content_hash:
            raise MilaError(
                "TA_HASH_MISMATCH",
                f"content_hash does not match the referenced object for kind {record.kind.value}",
            )
        next_id = self.records[-1].record_id + 1 if self.records else 1
        next_time = self.records[-1].logical_time + 1 if self.records else 1
        stored = replace(record, record_id=next_id, logical_time=next_time)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(canonical_json(stored.to_json_dict()) + "\n")
        self.records.append(stored)
        return stored

    def by_kind(self, kind: RecordKind, model_id: str | None = None) -> list[TraceRecord]:
        return [
            r
            for r in self.records
            if r.kind == kind and (model_id is None or r.model_id == model_id)
        ]


def prediction_payload(log: SessionLog, site_id: str) -> dict:
    """The per-site payload a prediction record digests; shared between the
    simulate path (producing) and the auditor (recomputing)."""
    final = log.rounds[-1]
    return {
        "experiment_id": log.experiment_id,
        "metrics": dict(final.site_metrics[site_id]),
        "model_id": log.model_id,
        "round": final.round,
        "site_id": site_id,
        "weights_hash": final.global_weights_hash,
    }


# ---------------------------------------------------------------------------
# Audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    model_id: str
    task_label: str
    traced_to_plan: bool
    traced_to_document: bool
    ontology_preserved: bool

    @property
    def passed(self) -> bool:
        return self.traced_to_plan and self.traced_to_document and self.ontology_preserved


@dataclass(frozen=True)
class AuditTable:
    rows: tuple[AuditRow, ...]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {
                    "model_id": r.model_id,
                    "task_label": r.task_label,
                    "traced_to_plan": r.traced_to_plan,
                    "traced_to_document": r.traced_to_document,
                    "ontology_preserved": r.ontology_preserved,
                    "pass": r.passed,
                }
                for r in self.rows
            ],
            "pass": self.passed,
        }


_ONTOLOGY_LINE = "# mila:ontology="


def _rehash_with_uris(content: bytes, uris: tuple[str, ...]) -> str:
    """Hash the artifact as it would read with the given ontology header line.

    Lets the auditor tell a corrupted URI header apart from a corrupted body:
    if swapping in the document's URI line restores the recorded hash, only
    the ontology line changed.
    """
    text = content.decode("utf-8", errors="replace")
    lines = text.splitlines(keepends=True)
    for i, line in enumerate(lines):
        if line.startswith(_ONTOLOGY_LINE):
            lines[i] = _ONTOLOGY_LINE + ",".join(uris) + "\n"
            break
    return sha256_hex("".join(lines).encode("utf-8"))


def _round_record_ok(record: TraceRecord, log: SessionLog | None) -> bool:
    if log is None or record.experiment_id != log.experiment_id:
        return False
    matching = [r for r in log.rounds if r.round == record.round]
    if len(matching) != 1:
        return False
    return digest_json(matching[0].to_json_dict()) == record.content_hash


def _prediction_record_ok(record: TraceRecord, log: SessionLog | None) -> bool:
    if log is None or record.experiment_id != log.experiment_id or not log.rounds:
        return False
    if record.site_id not in log.rounds[-1].site_metrics:
        return False
    return digest_json(prediction_payload(log, record.site_id)) == record.content_hash


def audit(
    ledger: Ledger,
    models: list[ModelDocument],
    artifacts: ArtifactSet,
    logs: dict[str, SessionLog],
) -> AuditTable:
    """Re-derive the three per-model checks from ledger, disk state, and logs.

    Never raises for bad state; every defect lands in some row's booleans.
    """
    rows: list[AuditRow] = []
    for doc in sorted(models, key=lambda d: d.id):
        doc_hash = canonical_hash(doc)
        doc_uris = set(doc.concept_uris())
        plans = ledger.by_kind(RecordKind.PLAN, doc.id)
        plan_record = plans[-1] if plans else None
        # Only the records that follow the latest plan belong to the current
        # run; earlier generations would otherwise poison a rerun's audit.
        horizon = plan_record.record_id if plan_record is not None else 0
        round_records = [
            r for r in ledger.by_kind(RecordKind.ROUND, doc.id) if r.record_id > horizon
        ]
        prediction_records = [
            r for r in ledger.by_kind(RecordKind.PREDICTION, doc.id) if r.record_id > horizon
        ]
        log = logs.get(doc.id)

        traced_to_plan = plan_record is not None
        for record in round_records:
            traced_to_plan = traced_to_plan and (
                plan_record is not None
                and record.model_hash == plan_record.model_hash
                and _round_record_ok(record, log)
            )
        for record in prediction_records:
            traced_to_plan = traced_to_plan and (
                plan_record is not None
                and record.model_hash == plan_record.model_hash
                and _prediction_record_ok(record, log)
            )

        # Current artifacts for this model, per their own headers.
        current: list[tuple[str, bytes, dict]] = []
        header_broken = False
        for artifact in artifacts.artifacts:
            if artifact.trace.model_id != doc.id:
                continue
            try:
                header, _ = parse_provenance_header(artifact.content.decode("utf-8", "replace"))
            except MilaError:
                header_broken = True
                continue
            current.append((artifact.relative_path, artifact.content, header))

        artifact_records = [
            r for r in ledger.by_kind(RecordKind.ARTIFACT, doc.id) if r.record_id > horizon
        ]
        # Set semantics: regenerating identical bytes appends duplicate
        # records, which is benign; a missing or altered file still shows up.
        recorded_hashes = sorted({r.content_hash for r in artifact_records})
        exact = sorted({sha256_hex(content) for _, content, _ in current})
        normalized = sorted(
            {_rehash_with_uris(content, doc.concept_uris()) for _, content, _ in current}
        )
        artifacts_ok = not header_broken and (
            recorded_hashes == exact or recorded_hashes == normalized
        )
        headers_ok = all(h["model_hash"] == doc_hash for _, _, h in current)
        traced_to_document = (
            plan_record is not None
            and plan_record.model_hash == doc_hash
            and artifacts_ok
            and headers_ok
        )

        ontology_preserved = (
            plan_record is not None
            and set(plan_record.ontology_uris) == doc_uris
            and all(set(h["ontology"]) == doc_uris for _, _, h in current)
            and all(set(r.ontology_uris) == doc_uris for r in round_records)
            and not header_broken
        )

        rows.append(
            AuditRow(
                model_id=doc.id,
                task_label=doc.name,
                traced_to_plan=traced_to_plan,
                traced_to_document=traced_to_document,
                ontology_preserved=ontology_preserved,
            )
        )
    return AuditTable(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_CHECK = "✓"
_CROSS = "✗"
_COLUMNS = ("model_id", "task_label", "traced_to_plan", "traced_to_document", "ontology_preserved", "pass")


def _mark(value: bool) -> str:
    return _CHECK if value else _CROSS


def export_table(table: AuditTable, format: str = "text") -> str:
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(_COLUMNS)
        for row in table.rows:
            writer.writerow(
                [
                    row.model_id,
                    row.task_label,
                    str(row.traced_to_plan).lower(),
                    str(row.traced_to_document).lower(),
                    str(row.ontology_preserved).lower(),
                    str(row.passed).lower(),
                ]
            )
        return buffer.getvalue()
    if format != "text":
        raise ValueError(f"unknown table format: {format!r}")
    cells = [list(_COLUMNS)]
    for row in table.rows:
        cells.append(
            [
                row.model_id,
                row.task_label,
                _mark(row.traced_to_plan),
                _mark(row.traced_to_document),
                _mark(row.ontology_preserved),
                _mark(row.passed),
            ]
        )
    widths = [max(len(r[i]) for r in cells) for i in range(len(_COLUMNS))]
    lines = []
    for r in cells:
        lines.append("  ".join(value.ljust(width) for value, width in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str) -> AuditTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != _COLUMNS:
        raise ValueError("unexpected audit csv header")
    rows = []
    for raw in reader:
        if not raw:
            continue
        rows.append(
            AuditRow(
                model_id=raw[0],
                task_label=raw[1],
                traced_to_plan=raw[2] == "true",
                traced_to_document=raw[3] == "true",
                ontology_preserved=raw[4] == "true",
            )
        )
    return AuditTable(rows=tuple(rows))
