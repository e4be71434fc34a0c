"""Traceability ledger and audit.

The harness runs a real two-model pipeline into a temporary ledger, then
applies one deliberate fault at a time and asserts exactly which audit cell
flips. Fault surfaces: artifact bytes, header lines, ledger lines, session
logs, and the ledger file itself.
"""

import dataclasses
import json
from types import SimpleNamespace

import pytest

from mila.canonical import canonical_json, sha256_hex
from mila.codegen import Artifact, ArtifactSet, combine_artifact_sets, generate_artifacts, load_templates
from mila.diagnostics import MilaError
from mila.fedsim import fixture_site_datasets, run_session
from mila.trace_audit import (
    Ledger,
    RecordKind,
    audit,
    export_table,
    new_record,
    parse_table_csv,
    prediction_payload,
    record_from_json_dict,
)

MODEL_IDS = ("model_a", "model_b")


@pytest.fixture()
def state(tmp_path, workspace, docs, plans):
    """A complete recorded run: plan + artifacts + session per model."""
    templates = load_templates()
    ledger_path = tmp_path / "ledger.jsonl"
    ledger = Ledger(ledger_path)
    sets, logs = [], {}
    for mid in MODEL_IDS:
        doc, plan = docs[mid], plans[mid]
        aset = generate_artifacts(plan, doc, templates)
        plan_bytes = aset.get(f"plans/{mid}_plan.json").content
        ledger.append(
            new_record(
                RecordKind.PLAN,
                mid,
                plan.model_hash,
                plan_bytes,
                element_paths=tuple(e.path for e in doc.data_elements),
                ontology_uris=doc.concept_uris(),
            ),
            plan_bytes,
        )
        for rel in aset.paths():
            a = aset.get(rel)
            ledger.append(
                new_record(
                    RecordKind.ARTIFACT,
                    mid,
                    plan.model_hash,
                    a.content,
                    ontology_uris=a.trace.ontology_uris,
                ),
                a.content,
            )
        data = fixture_site_datasets(plan, workspace.sites, workspace.registry)
        log = run_session(plan, data)
        logs[mid] = log
        for r in log.rounds:
            referent = canonical_json(r.to_json_dict()).encode("utf-8")
            ledger.append(
                new_record(
                    RecordKind.ROUND,
                    mid,
                    plan.model_hash,
                    referent,
                    ontology_uris=r.ontology_uris,
                    experiment_id=log.experiment_id,
                    round=r.round,
                ),
                referent,
            )
        for sid in sorted(plan.federation.sites):
            payload = canonical_json(prediction_payload(log, sid)).encode("utf-8")
            ledger.append(
                new_record(
                    RecordKind.PREDICTION,
                    mid,
                    plan.model_hash,
                    payload,
                    experiment_id=log.experiment_id,
                    site_id=sid,
                ),
                payload,
            )
        sets.append(aset)
    return SimpleNamespace(
        ledger=ledger,
        ledger_path=ledger_path,
        models=[docs[m] for m in MODEL_IDS],
        artifacts=combine_artifact_sets(sets),
        logs=logs,
        plans=plans,
    )


def _rows(table):
    return {
        r.model_id: (r.traced_to_plan, r.traced_to_document, r.ontology_preserved)
        for r in table.rows
    }


def _mutate_artifact(aset: ArtifactSet, rel: str, mutate) -> ArtifactSet:
    arts = []
    for a in aset.artifacts:
        if a.relative_path == rel:
            content = mutate(a.content)
            arts.append(Artifact(a.relative_path, content, sha256_hex(content), a.trace))
        else:
            arts.append(a)
    return ArtifactSet(tuple(arts))


def _edit_ledger_line(path, predicate, mutate):
    lines = path.read_text("utf-8").splitlines()
    hit = False
    for i, line in enumerate(lines):
        raw = json.loads(line)
        if predicate(raw):
            lines[i] = canonical_json(mutate(raw))
            hit = True
            break
    assert hit, "tamper target not found"
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return Ledger(path)


def _flip_hex(digest: str) -> str:
    return ("0" if digest[0] != "0" else "1") + digest[1:]


# ---------------------------------------------------------------------------
# Clean-state behaviour
# ---------------------------------------------------------------------------


def test_clean_run_audits_green(state):
    table = audit(state.ledger, state.models, state.artifacts, state.logs)
    assert table.passed
    assert _rows(table) == {mid: (True, True, True) for mid in MODEL_IDS}
    assert [r.model_id for r in table.rows] == sorted(MODEL_IDS)


def test_export_text_and_csv(state):
    table = audit(state.ledger, state.models, state.artifacts, state.logs)
    text = export_table(table, "text")
    lines = text.strip().splitlines()
    assert lines[0].split()[:3] == ["model_id", "task_label", "traced_to_plan"]
    assert len(lines) == 1 + len(MODEL_IDS)
    assert all("✓" in line for line in lines[1:])

    csv_text = export_table(table, "csv")
    again = parse_table_csv(csv_text)
    assert _rows(again) == _rows(table)
    assert again.passed == table.passed

    payload = table.to_json_dict()
    assert all("pass" in row for row in payload["rows"])


def test_duplicate_artifact_records_are_benign(state, plans):
    # regenerating identical bytes appends duplicate records; audit must not care
    for a in state.artifacts.artifacts:
        mid = a.trace.model_id
        state.ledger.append(
            new_record(
                RecordKind.ARTIFACT,
                mid,
                plans[mid].model_hash,
                a.content,
                ontology_uris=a.trace.ontology_uris,
            ),
            a.content,
        )
    table = audit(state.ledger, state.models, state.artifacts, state.logs)
    assert table.passed


def test_records_before_the_latest_plan_are_out_of_scope(state, workspace, plans):
    # a rerun with a new seed starts by re-planning; stale round records from
    # the first run must not fail the fresh audit
    for mid in MODEL_IDS:
        plan = plans[mid]
        plan_bytes = state.artifacts.get(f"plans/{mid}_plan.json").content
        state.ledger.append(
            new_record(RecordKind.PLAN, mid, plan.model_hash, plan_bytes,
                       ontology_uris=tuple(sorted(plan.ontology_refs))),
            plan_bytes,
        )
        for a in state.artifacts.artifacts:
            if a.trace.model_id != mid:
                continue
            state.ledger.append(
                new_record(RecordKind.ARTIFACT, mid, plan.model_hash, a.content,
                           ontology_uris=a.trace.ontology_uris),
                a.content,
            )
        data = fixture_site_datasets(plan, workspace.sites, workspace.registry)
        fresh = run_session(plan, data, seed=7)
        state.logs[mid] = fresh
        for r in fresh.rounds:
            referent = canonical_json(r.to_json_dict()).encode("utf-8")
            state.ledger.append(
                new_record(RecordKind.ROUND, mid, plan.model_hash, referent,
                           ontology_uris=r.ontology_uris,
                           experiment_id=fresh.experiment_id, round=r.round),
                referent,
            )
    table = audit(state.ledger, state.models, state.artifacts, state.logs)
    assert table.passed


# ---------------------------------------------------------------------------
# Single-fault flips
# ---------------------------------------------------------------------------


def test_artifact_body_byte_flips_document_cell_only(state):
    tampered = _mutate_artifact(
        state.artifacts,
        "app/services/model_a_service.txt",
        lambda c: c.replace(b"learning_rate=0.5", b"learning_rate=0.9", 1),
    )
    table = audit(state.ledger, state.models, tampered, state.logs)
    rows = _rows(table)
    assert rows["model_a"] == (True, False, True)
    assert rows["model_b"] == (True, True, True)


def test_header_uri_byte_flips_ontology_cell_only(state):
    def bend_uri(content: bytes) -> bytes:
        lines = content.decode("utf-8").splitlines(keepends=True)
        assert lines[3].startswith("# mila:ontology=")
        lines[3] = lines[3].replace("concepts/age", "concepts/agf", 1)
        return "".join(lines).encode("utf-8")

    tampered = _mutate_artifact(state.artifacts, "app/services/model_a_service.txt", bend_uri)
    table = audit(state.ledger, state.models, tampered, state.logs)
    rows = _rows(table)
    assert rows["model_a"] == (True, True, False)
    assert rows["model_b"] == (True, True, True)


def test_header_model_hash_flips_document_cell(state):
    def bend_hash(content: bytes) -> bytes:
        text = content.decode("utf-8")
        lines = text.splitlines(keepends=True)
        digest = lines[1].split("=", 1)[1].strip()
        lines[1] = f"# mila:model_hash={_flip_hex(digest)}\n"
        return "".join(lines).encode("utf-8")

    tampered = _mutate_artifact(state.artifacts, "app/routes/model_b.txt", bend_hash)
    rows = _rows(audit(state.ledger, state.models, tampered, state.logs))
    assert rows["model_b"] == (True, False, True)
    assert rows["model_a"] == (True, True, True)


def test_unparseable_header_fails_document_and_ontology(state):
    def drop_header_line(content: bytes) -> bytes:
        lines = content.decode("utf-8").splitlines(keepends=True)
        del lines[3]  # the ontology line
        return "".join(lines).encode("utf-8")

    tampered = _mutate_artifact(state.artifacts, "app/routes/model_a.txt", drop_header_line)
    rows = _rows(audit(state.ledger, state.models, tampered, state.logs))
    assert rows["model_a"] == (True, False, False)


def test_round_record_hash_tamper_breaks_plan_chain(state):
    ledger = _edit_ledger_line(
        state.ledger_path,
        lambda r: r["kind"] == "round" and r["model_id"] == "model_a" and r["round"] == 2,
        lambda r: dict(r, content_hash=_flip_hex(r["content_hash"])),
    )
    rows = _rows(audit(ledger, state.models, state.artifacts, state.logs))
    assert rows["model_a"] == (False, True, True)
    assert rows["model_b"] == (True, True, True)


def test_round_record_uri_tamper_breaks_ontology(state):
    ledger = _edit_ledger_line(
        state.ledger_path,
        lambda r: r["kind"] == "round" and r["model_id"] == "model_b" and r["round"] == 1,
        lambda r: dict(r, ontology_uris=r["ontology_uris"][:-1]),
    )
    rows = _rows(audit(ledger, state.models, state.artifacts, state.logs))
    assert rows["model_b"] == (True, True, False)


def test_plan_record_hash_tamper_breaks_plan_and_document(state):
    ledger = _edit_ledger_line(
        state.ledger_path,
        lambda r: r["kind"] == "plan" and r["model_id"] == "model_a",
        lambda r: dict(r, model_hash=_flip_hex(r["model_hash"])),
    )
    rows = _rows(audit(ledger, state.models, state.artifacts, state.logs))
    assert rows["model_a"] == (False, False, True)
    assert rows["model_b"] == (True, True, True)


def test_session_log_tamper_breaks_plan_chain(state):
    log = state.logs["model_b"]
    doctored_round = dataclasses.replace(log.rounds[-1], global_loss=log.rounds[-1].global_loss + 1e-9)
    state.logs["model_b"] = dataclasses.replace(
        log, rounds=log.rounds[:-1] + (doctored_round,)
    )
    rows = _rows(audit(state.ledger, state.models, state.artifacts, state.logs))
    assert rows["model_b"] == (False, True, True)
    assert rows["model_a"] == (True, True, True)


def test_missing_session_log_breaks_plan_chain(state):
    del state.logs["model_a"]
    rows = _rows(audit(state.ledger, state.models, state.artifacts, state.logs))
    assert rows["model_a"] == (False, True, True)


def test_empty_ledger_fails_every_cell(tmp_path, state):
    empty = Ledger(tmp_path / "fresh.jsonl")
    rows = _rows(audit(empty, state.models, state.artifacts, state.logs))
    assert rows == {mid: (False, False, False) for mid in MODEL_IDS}


# ---------------------------------------------------------------------------
# Ledger mechanics
# ---------------------------------------------------------------------------


def test_append_numbers_monotonically_and_persists(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = Ledger(path)
    for i in range(3):
        referent = f"blob {i}".encode()
        stored = ledger.append(
            new_record(RecordKind.VALIDATION, "m", "0" * 64, referent), referent
        )
        assert stored.record_id == i + 1
        assert stored.logical_time == i + 1
    reopened = Ledger(path)
    assert [r.record_id for r in reopened.records] == [1, 2, 3]
    referent = b"later"
    assert reopened.append(
        new_record(RecordKind.VALIDATION, "m", "0" * 64, referent), referent
    ).record_id == 4


def test_append_verifies_the_referent(tmp_path):
    ledger = Ledger(tmp_path / "ledger.jsonl")
    record = new_record(RecordKind.ARTIFACT, "m", "0" * 64, b"original")
    with pytest.raises(MilaError) as exc:
        ledger.append(record, b"swapped")
    assert exc.value.code == "TA_HASH_MISMATCH"
    assert len(ledger) == 0


def test_unreadable_ledger_line_is_rejected_on_load(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = Ledger(path)
    ledger.append(new_record(RecordKind.VALIDATION, "m", "0" * 64, b"x"), b"x")
    path.write_text(path.read_text("utf-8") + "{broken\n", "utf-8")
    with pytest.raises(MilaError) as exc:
        Ledger(path)
    assert exc.value.code == "TA_HASH_MISMATCH"


def test_non_increasing_record_id_is_rejected_on_load(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = Ledger(path)
    ledger.append(new_record(RecordKind.VALIDATION, "m", "0" * 64, b"x"), b"x")
    line = path.read_text("utf-8").strip()
    path.write_text(line + "\n" + line + "\n", "utf-8")
    with pytest.raises(MilaError) as exc:
        Ledger(path)
    assert exc.value.code == "TA_HASH_MISMATCH"


def test_record_json_round_trip():
    record = new_record(
        RecordKind.ROUND,
        "m",
        "a" * 64,
        b"payload",
        element_paths=("/data_elements/0",),
        ontology_uris=("urn:x",),
        experiment_id="exp-1",
        round=2,
    )
    raw = record.to_json_dict()
    assert "site_id" not in raw  # unset optionals stay out of the serialization
    assert record_from_json_dict(raw) == record
