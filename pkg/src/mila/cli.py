"""Command-line driver binding the pipeline stages over a workspace directory.

A workspace holds one ontology catalog, one unit registry, site catalogs,
and model documents. Subcommands map onto the stages: validate (structure
through federation checks), plan (model to executable plan), generate
(plan to artifacts), simulate (federated training over fixture or synthetic
data), audit (traceability table), and demo (the whole chain).

Exit codes: 0 success, 1 validation or audit failure, 2 environment error.
Stdout in --format json mode is byte-stable for identical inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .canonical import canonical_json, pretty_json, sha256_hex
from .codegen import (
    Artifact,
    ArtifactSet,
    ArtifactTrace,
    combine_artifact_sets,
    generate_artifacts,
    load_templates,
    parse_provenance_header,
    provenance_header,
    strip_header_lines,
    write_artifacts,
)
from .diagnostics import Diagnostic, MilaError, Severity
from .fedsim import (
    LabeledDataset,
    RoundLog,
    SessionLog,
    SyntheticSpec,
    Weights,
    fixture_site_datasets,
    gen_synthetic,
    run_session,
)
from .model_core import ModelDocument, canonical_hash, parse_model
from .ontology import OntologyCatalog, load_catalog, validate_semantics
from .planner import Plan, plan_from_json_dict, transform, validate_federation
from .report import render_report
from .trace_audit import (
    Ledger,
    RecordKind,
    audit,
    export_table,
    new_record,
    prediction_payload,
)
from .units import UnitRegistry, load_registry
from .vdl import SiteCatalog, check_availability, load_site_catalog

PLAN_SUFFIX = "_plan.json"
SESSION_SUFFIX = "_session.jsonl"


class WorkspaceError(Exception):
    """Unusable workspace or missing stage outputs; maps to exit code 2."""


@dataclass
class ModelEntry:
    label: str
    text: str
    doc: ModelDocument | None
    structure: list[Diagnostic]


@dataclass
class Workspace:
    label: str
    catalog: OntologyCatalog
    registry: UnitRegistry
    models: list[ModelEntry]
    sites: dict[str, SiteCatalog]


def _workspace_root(arg: str | None):
    if arg:
        root = Path(arg)
    elif os.environ.get("MILA_WORKSPACE"):
        root = Path(os.environ["MILA_WORKSPACE"])
    else:
        return resources.files("mila").joinpath("data/workspace")
    if not root.is_dir():
        raise WorkspaceError(f"workspace directory not found: {root}")
    return root


def _read(root, name: str) -> str:
    try:
        return root.joinpath(name).read_text("utf-8")
    except (FileNotFoundError, NotADirectoryError, OSError) as exc:
        raise WorkspaceError(f"cannot read {name} in workspace: {exc}") from exc


def _json_files(root, sub: str):
    try:
        entries = [e for e in root.joinpath(sub).iterdir() if e.name.endswith(".json")]
    except (FileNotFoundError, NotADirectoryError, OSError) as exc:
        raise WorkspaceError(f"cannot list {sub}/ in workspace: {exc}") from exc
    return sorted(entries, key=lambda e: e.name)


def load_workspace(root) -> Workspace:
    registry, registry_diags = load_registry(_read(root, "registry.json"))
    if registry is None:
        raise WorkspaceError(
            "registry.json: " + "; ".join(d.message for d in registry_diags)
        )
    catalog, catalog_diags = load_catalog(_read(root, "ontology.json"))
    if catalog is None:
        raise WorkspaceError(
            "ontology.json: " + "; ".join(d.message for d in catalog_diags)
        )
    sites: dict[str, SiteCatalog] = {}
    for entry in _json_files(root, "sites"):
        site, site_diags = load_site_catalog(entry.read_text("utf-8"), registry)
        if site is None:
            raise WorkspaceError(
                f"sites/{entry.name}: " + "; ".join(d.message for d in site_diags)
            )
        sites[site.site_id] = site
    models: list[ModelEntry] = []
    for entry in _json_files(root, "models"):
        text = entry.read_text("utf-8")
        doc, diags = parse_model(text)
        models.append(ModelEntry(entry.name, text, doc, diags))
    return Workspace(str(root), catalog, registry, models, sites)


def _load_model_file(path: Path) -> ModelEntry:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise WorkspaceError(f"cannot read model file {path}: {exc}") from exc
    doc, diags = parse_model(text)
    return ModelEntry(Path(path).name, text, doc, diags)


def _has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diags)


def validate_entry(ws: Workspace, entry: ModelEntry, k_min: int | None) -> list[Diagnostic]:
    """Layered checks; a failing layer gates everything after it."""
    diags = list(entry.structure)
    if entry.doc is None or _has_errors(diags):
        return diags
    doc = entry.doc
    semantic = validate_semantics(doc, ws.catalog, ws.registry)
    diags.extend(semantic.diagnostics)
    if not semantic.passed:
        return diags
    participating = [ws.sites[s] for s in doc.federation.site_ids if s in ws.sites]
    effective = k_min if k_min is not None else doc.federation.min_local_instances
    availability = check_availability(doc, participating, ws.registry, effective)
    diags.extend(availability.combined().diagnostics)
    if not availability.passed:
        return diags
    diags.extend(validate_federation(doc, ws.sites).diagnostics)
    return diags


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _emit(args, text: str) -> None:
    if args.format == "text":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_json(args, payload: dict) -> None:
    if args.format == "json":
        sys.stdout.write(pretty_json(payload))


def _diag_line(label: str, d: Diagnostic) -> str:
    where = d.element_path if d.element_path else "/"
    return f"{label}:{where} {d.severity.value} {d.code}: {d.message}"


def _atomic_write(path: Path, content: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp = path.with_name(path.name + ".tmp")
    temp.write_bytes(content)
    os.replace(temp, path)


def _out_dir(args) -> Path:
    return Path(args.out)


def _ledger(args) -> Ledger:
    return Ledger(_out_dir(args) / "trace" / "ledger.jsonl")


def _valid_docs(ws: Workspace, args) -> list[tuple[ModelEntry, ModelDocument]]:
    """Entries that pass all validation layers, sorted by model id."""
    out = []
    for entry in ws.models:
        diags = validate_entry(ws, entry, args.k_min)
        if entry.doc is not None and not _has_errors(diags):
            out.append((entry, entry.doc))
    return sorted(out, key=lambda pair: pair[1].id)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    ws = load_workspace(_workspace_root(args.workspace))
    explicit = getattr(args, "paths", None)  # absent when invoked via demo
    if explicit:
        entries = [_load_model_file(Path(p)) for p in explicit]
    else:
        entries = ws.models
    results = []
    all_passed = True
    for entry in entries:
        diags = validate_entry(ws, entry, args.k_min)
        passed = entry.doc is not None and not _has_errors(diags)
        all_passed = all_passed and passed
        results.append((entry, diags, passed))
        for d in diags:
            _emit(args, _diag_line(entry.label, d))
        _emit(args, f"{entry.label}: {'pass' if passed else 'FAIL'}")
    _emit_json(
        args,
        {
            "models": [
                {
                    "model": entry.label,
                    "model_id": entry.doc.id if entry.doc is not None else None,
                    "passed": passed,
                    "diagnostics": [d.to_json_dict() for d in diags],
                }
                for entry, diags, passed in results
            ],
            "passed": all_passed,
        },
    )
    return 0 if all_passed else 1


def _write_plan_file(out: Path, plan: Plan, doc: ModelDocument, templates) -> bytes:
    header = provenance_header(
        doc.id, plan.model_hash, templates["plan_copy"].ref, doc.concept_uris()
    )
    content = (header + pretty_json(plan.to_json_dict())).encode("utf-8")
    _atomic_write(out / "plans" / f"{doc.id}{PLAN_SUFFIX}", content)
    return content


def cmd_plan(args) -> int:
    ws = load_workspace(_workspace_root(args.workspace))
    templates = load_templates()
    ledger = _ledger(args)
    out = _out_dir(args)
    planned: list[str] = []
    failures = False
    for entry in ws.models:
        diags = validate_entry(ws, entry, args.k_min)
        if entry.doc is None or _has_errors(diags):
            failures = True
            for d in diags:
                _emit(args, _diag_line(entry.label, d))
            continue
        doc = entry.doc
        report_payload = {
            "model_id": doc.id,
            "passed": True,
            "diagnostics": [d.to_json_dict() for d in diags],
        }
        referent = canonical_json(report_payload).encode("utf-8")
        ledger.append(
            new_record(
                RecordKind.VALIDATION,
                doc.id,
                canonical_hash(doc),
                referent,
                element_paths=tuple(e.path for e in doc.data_elements),
                ontology_uris=doc.concept_uris(),
            ),
            referent,
        )
        plan, plan_diags = transform(doc, ws.catalog, ws.sites, ws.registry, args.k_min)
        if plan is None:
            failures = True
            for d in plan_diags:
                _emit(args, _diag_line(entry.label, d))
            continue
        content = _write_plan_file(out, plan, doc, templates)
        ledger.append(
            new_record(
                RecordKind.PLAN,
                doc.id,
                plan.model_hash,
                content,
                element_paths=tuple(e.path for e in doc.data_elements),
                ontology_uris=plan.ontology_refs,
            ),
            content,
        )
        planned.append(doc.id)
        _emit(args, f"planned {doc.id} -> plans/{doc.id}{PLAN_SUFFIX}")
    _emit_json(args, {"planned": sorted(planned), "passed": not failures})
    return 1 if failures else 0


def _read_plan(out: Path, doc: ModelDocument) -> Plan:
    path = out / "plans" / f"{doc.id}{PLAN_SUFFIX}"
    if not path.is_file():
        raise WorkspaceError(f"no plan file for {doc.id}; run the plan stage first")
    raw = json.loads(strip_header_lines(path.read_text("utf-8")))
    plan = plan_from_json_dict(raw)
    if plan.model_hash != canonical_hash(doc):
        raise MilaError(
            "CLI_STALE_PLAN",
            f"plan for {doc.id} was built from a different document revision",
        )
    return plan


def cmd_generate(args) -> int:
    ws = load_workspace(_workspace_root(args.workspace))
    templates = load_templates()
    ledger = _ledger(args)
    out = _out_dir(args)
    sets = []
    for _, doc in _valid_docs(ws, args):
        plan = _read_plan(out, doc)
        sets.append(generate_artifacts(plan, doc, templates))
    combined = combine_artifact_sets(sets)
    manifest = write_artifacts(combined, out)
    for artifact in combined.artifacts:
        ledger.append(
            new_record(
                RecordKind.ARTIFACT,
                artifact.trace.model_id,
                artifact.trace.model_hash,
                artifact.content,
                element_paths=artifact.trace.element_paths,
                ontology_uris=artifact.trace.ontology_uris,
            ),
            artifact.content,
        )
        _emit(args, f"wrote {artifact.relative_path}")
    _atomic_write(out / "manifest.json", pretty_json(manifest).encode("utf-8"))
    _emit_json(args, {"manifest": manifest})
    return 0


def _synthetic_data(plan: Plan, seed: int) -> dict[str, LabeledDataset]:
    spec = SyntheticSpec(
        site_ids=plan.federation.sites,
        per_site_n=max(60, plan.federation.min_local_instances * 2),
        features=len(plan.preprocess.feature_layout),
        classes=len(plan.preprocess.label_classes),
        skew=0.25,
    )
    site_data, _ = gen_synthetic(spec, seed)
    return site_data


def cmd_simulate(args) -> int:
    ws = load_workspace(_workspace_root(args.workspace))
    ledger = _ledger(args)
    out = _out_dir(args)
    logs: dict[str, SessionLog] = {}
    for _, doc in _valid_docs(ws, args):
        plan = _read_plan(out, doc)
        if args.synthetic:
            seed = args.seed if args.seed is not None else plan.federation.seed
            site_data = _synthetic_data(plan, seed)
        else:
            site_data = fixture_site_datasets(plan, ws.sites, ws.registry)
        log = run_session(plan, site_data, seed=args.seed)
        logs[doc.id] = log
        content = log.to_jsonl().encode("utf-8")
        _atomic_write(out / "runs" / f"{doc.id}{SESSION_SUFFIX}", content)
        for entry in log.rounds:
            referent = canonical_json(entry.to_json_dict()).encode("utf-8")
            ledger.append(
                new_record(
                    RecordKind.ROUND,
                    doc.id,
                    plan.model_hash,
                    referent,
                    ontology_uris=log.ontology_uris,
                    experiment_id=log.experiment_id,
                    round=entry.round,
                ),
                referent,
            )
        final = log.rounds[-1]
        for site_id in sorted(final.site_metrics):
            referent = canonical_json(prediction_payload(log, site_id)).encode("utf-8")
            ledger.append(
                new_record(
                    RecordKind.PREDICTION,
                    doc.id,
                    plan.model_hash,
                    referent,
                    ontology_uris=log.ontology_uris,
                    experiment_id=log.experiment_id,
                    site_id=site_id,
                    round=final.round,
                ),
                referent,
            )
        _emit(
            args,
            f"simulated {doc.id}: rounds={len(log.rounds)} "
            f"accuracy={final.global_metrics['accuracy']:.3f} "
            f"log_hash={log.log_hash()[:16]}",
        )
    render_report(logs, out / "report")
    _emit_json(
        args,
        {"sessions": {model_id: logs[model_id].log_hash() for model_id in sorted(logs)}},
    )
    return 0


def _read_artifacts_from_disk(out: Path) -> ArtifactSet:
    """Rebuild the artifact set from disk for auditing; unreadable headers
    leave the artifact out, which the audit then flags as missing."""
    artifacts = []
    for sub in ("app/models", "app/services", "app/routes", "plans"):
        base = out / sub
        if not base.is_dir():
            continue
        for path in sorted(base.iterdir()):
            if not path.is_file() or path.name.endswith(".tmp"):
                continue
            content = path.read_bytes()
            try:
                header, _ = parse_provenance_header(content.decode("utf-8", "replace"))
            except MilaError:
                continue
            template_id, _, template_version = header["template"].partition("@")
            artifacts.append(
                Artifact(
                    relative_path=f"{sub}/{path.name}",
                    content=content,
                    content_hash=sha256_hex(content),
                    trace=ArtifactTrace(
                        model_id=header["model_id"],
                        model_hash=header["model_hash"],
                        template_id=template_id,
                        template_version=template_version,
                        element_paths=(),
                        ontology_uris=header["ontology"],
                    ),
                )
            )
    return ArtifactSet(artifacts=tuple(artifacts))


def _read_session_log(out: Path, doc: ModelDocument) -> SessionLog | None:
    path = out / "runs" / f"{doc.id}{SESSION_SUFFIX}"
    if not path.is_file():
        return None
    rounds = []
    experiment_id = ""
    for line in path.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            entry = RoundLog(
                experiment_id=raw["experiment_id"],
                round=raw["round"],
                prev_global_weights_hash=raw["prev_global_weights_hash"],
                global_weights_hash=raw["global_weights_hash"],
                site_ids=tuple(raw["site_ids"]),
                site_n=dict(raw["site_n"]),
                site_losses=dict(raw["site_losses"]),
                site_metrics=dict(raw["site_metrics"]),
                global_loss=raw["global_loss"],
                global_metrics=dict(raw["global_metrics"]),
                ontology_uris=tuple(raw["ontology_uris"]),
            )
        except (ValueError, KeyError, TypeError):
            return None
        rounds.append(entry)
        experiment_id = entry.experiment_id
    if not rounds:
        return None
    # Weights never persist to disk (only their hashes do), so the loaded
    # view carries an empty parameter block.
    return SessionLog(
        experiment_id=experiment_id,
        model_id=doc.id,
        model_hash="",
        plan_id="",
        rounds=tuple(rounds),
        final_weights=Weights(W=np.zeros((0, 0)), b=np.zeros(0)),
        ontology_uris=rounds[-1].ontology_uris,
    )


def cmd_audit(args) -> int:
    ws = load_workspace(_workspace_root(args.workspace))
    out = _out_dir(args)
    ledger_path = out / "trace" / "ledger.jsonl"
    if not ledger_path.is_file():
        raise WorkspaceError(f"no ledger at {ledger_path}; run the pipeline first")
    ledger = Ledger(ledger_path)
    docs = [entry.doc for entry in ws.models if entry.doc is not None]
    artifacts = _read_artifacts_from_disk(out)
    logs: dict[str, SessionLog] = {}
    for doc in docs:
        log = _read_session_log(out, doc)
        if log is not None:
            logs[doc.id] = log
    table = audit(ledger, docs, artifacts, logs)
    text = export_table(table, "text")
    _atomic_write(out / "trace" / "audit.txt", text.encode("utf-8"))
    _atomic_write(out / "trace" / "audit.csv", export_table(table, "csv").encode("utf-8"))
    _emit(args, text)
    _emit_json(args, table.to_json_dict())
    return 0 if table.passed else 1


def cmd_demo(args) -> int:
    """validate -> plan -> generate -> simulate -> audit, halting on failure."""
    for stage, runner in (
        ("validate", cmd_validate),
        ("plan", cmd_plan),
        ("generate", cmd_generate),
        ("simulate", cmd_simulate),
        ("audit", cmd_audit),
    ):
        _emit(args, f"== {stage} ==")
        code = runner(args)
        if code != 0:
            _emit(args, f"demo halted at {stage} (exit {code})")
            return code
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", help="workspace directory (default: $MILA_WORKSPACE or the bundled one)")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--seed", type=int, default=None, help="override the plan's training seed")
    common.add_argument("--k-min", type=int, default=None, dest="k_min", help="minimum usable instances per site")
    common.add_argument("--out", default="mila_out", help="output directory root")
    common.add_argument("--synthetic", action="store_true", help="simulate on generated data instead of site fixtures")

    parser = argparse.ArgumentParser(prog="mila", description="model-driven federated pipeline toolchain")
    sub = parser.add_subparsers(dest="command", required=True)
    validate = sub.add_parser("validate", parents=[common], help="run all validation layers")
    validate.add_argument("paths", nargs="*", help="model files (default: workspace models)")
    sub.add_parser("plan", parents=[common], help="transform valid models into plans")
    sub.add_parser("generate", parents=[common], help="render artifacts from plans")
    sub.add_parser("simulate", parents=[common], help="run federated training sessions")
    sub.add_parser("audit", parents=[common], help="check end-to-end traceability")
    sub.add_parser("demo", parents=[common], help="run every stage over the workspace")
    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "plan": cmd_plan,
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "demo": cmd_demo,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.k_min is not None and args.k_min < 1:
        sys.stderr.write("error: --k-min must be at least 1\n")
        return 2
    try:
        return _COMMANDS[args.command](args)
    except WorkspaceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except MilaError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc.message}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
