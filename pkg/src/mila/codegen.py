"""Deterministic artifact rendering: templates, provenance headers, layout.

The substitution engine supports exactly two constructs: ``{{name}}``
placeholders and line-delimited ``{% for item in list %} ... {% endfor %}``
expansion. No conditionals, no expressions; determinism and auditability are
the point. Every emitted file starts with a provenance header block of ``#``
lines carrying model id, model hash, template reference, and the full
ontology URI list, so any artifact can be traced back without side channels.

Generated content contains no timestamps and no absolute paths; regenerating
from unchanged inputs is byte-identical.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .canonical import pretty_json, sha256_hex
from .diagnostics import MilaError
from .model_core import ModelDocument
from .planner import Plan

HEADER_PREFIX = "# mila:"

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_.]*)\}\}")
_FOR_RE = re.compile(r"^\{% for ([A-Za-z_]\w*) in ([A-Za-z_]\w*) %\}$")
_ENDFOR = "{% endfor %}"
_DIRECTIVE_RE = re.compile(r"\{%.*?%\}")


@dataclass(frozen=True)
class Template:
    template_id: str
    version: str
    body: str
    placeholders: tuple[str, ...]

    @property
    def ref(self) -> str:
        return f"{self.template_id}@{self.version}"


@dataclass(frozen=True)
class ArtifactTrace:
    model_id: str
    model_hash: str
    template_id: str
    template_version: str
    element_paths: tuple[str, ...]
    ontology_uris: tuple[str, ...]
    experiment_id: str | None = None


@dataclass(frozen=True)
class Artifact:
    relative_path: str
    content: bytes
    content_hash: str
    trace: ArtifactTrace


@dataclass(frozen=True)
class ArtifactSet:
    artifacts: tuple[Artifact, ...]

    def paths(self) -> tuple[str, ...]:
        return tuple(a.relative_path for a in self.artifacts)

    def get(self, relative_path: str) -> Artifact:
        for a in self.artifacts:
            if a.relative_path == relative_path:
                return a
        raise KeyError(relative_path)


def _check_template(template: Template) -> None:
    depth = 0
    loop_vars: set[str] = set()
    for line in template.body.splitlines():
        stripped = line.strip()
        m = _FOR_RE.match(stripped)
        if m:
            depth += 1
            if depth > 1:
                raise MilaError("CG_BAD_TEMPLATE", f"{template.ref}: nested loops are not supported")
            loop_vars.add(m.group(1))
            if m.group(2) not in template.placeholders:
                raise MilaError(
                    "CG_BAD_TEMPLATE",
                    f"{template.ref}: loop list {m.group(2)!r} is not declared",
                )
            continue
        if stripped == _ENDFOR:
            depth -= 1
            if depth < 0:
                raise MilaError("CG_BAD_TEMPLATE", f"{template.ref}: endfor without a loop")
            continue
        if _DIRECTIVE_RE.search(line):
            raise MilaError("CG_BAD_TEMPLATE", f"{template.ref}: unrecognized directive in {line!r}")
    if depth != 0:
        raise MilaError("CG_BAD_TEMPLATE", f"{template.ref}: unterminated loop")
    for name in _PLACEHOLDER_RE.findall(template.body):
        root = name.split(".", 1)[0]
        if root not in loop_vars and root not in template.placeholders:
            raise MilaError(
                "CG_BAD_TEMPLATE",
                f"{template.ref}: placeholder {name!r} is not declared in the manifest",
            )


def load_templates(root=None) -> dict[str, Template]:
    """Load the template manifest and bodies (bundled set by default)."""
    base = root if root is not None else resources.files("mila").joinpath("data/templates")
    manifest = json.loads(base.joinpath("manifest.json").read_text("utf-8"))
    templates: dict[str, Template] = {}
    for entry in manifest["templates"]:
        body = ""
        if entry.get("file"):
            body = base.joinpath(entry["file"]).read_text("utf-8")
        template = Template(
            template_id=entry["template_id"],
            version=entry["version"],
            body=body,
            placeholders=tuple(entry.get("placeholders", ())),
        )
        _check_template(template)
        templates[template.template_id] = template
    return templates


def _format_value(value: object, ref: str, name: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return str(value)
    raise MilaError("CG_MISSING_BINDING", f"{ref}: placeholder {name!r} bound to a non-scalar")


def _substitute(text: str, scope: dict, ref: str) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1)
        target: object = scope
        for part in name.split("."):
            if not isinstance(target, dict) or part not in target:
                raise MilaError("CG_MISSING_BINDING", f"{ref}: no binding for placeholder {name!r}")
            target = target[part]
        return _format_value(target, ref, name)

    return _PLACEHOLDER_RE.sub(repl, text)


def render_template(template: Template, context: dict) -> str:
    """Deterministic substitution; list expansion preserves input order.

    Raises before producing any output, never partially renders.
    """
    _check_template(template)
    out_lines: list[str] = []
    lines = template.body.splitlines()
    i = 0
    while i < len(lines):
        m = _FOR_RE.match(lines[i].strip())
        if not m:
            out_lines.append(_substitute(lines[i], context, template.ref))
            i += 1
            continue
        var, list_name = m.group(1), m.group(2)
        if list_name not in context:
            raise MilaError("CG_MISSING_BINDING", f"{template.ref}: no binding for list {list_name!r}")
        items = context[list_name]
        if not isinstance(items, (list, tuple)):
            raise MilaError("CG_MISSING_BINDING", f"{template.ref}: {list_name!r} is not a list")
        body: list[str] = []
        i += 1
        while i < len(lines) and lines[i].strip() != _ENDFOR:
            body.append(lines[i])
            i += 1
        i += 1  # consume the endfor line
        for item in items:
            scope = dict(context)
            scope[var] = item
            for line in body:
                out_lines.append(_substitute(line, scope, template.ref))
    rendered = "\n".join(out_lines)
    if template.body.endswith("\n"):
        rendered += "\n"
    return rendered


# ---------------------------------------------------------------------------
# Provenance headers
# ---------------------------------------------------------------------------


def provenance_header(model_id: str, model_hash: str, template_ref: str, uris: tuple[str, ...]) -> str:
    return (
        f"{HEADER_PREFIX}model_id={model_id}\n"
        f"{HEADER_PREFIX}model_hash={model_hash}\n"
        f"{HEADER_PREFIX}template={template_ref}\n"
        f"{HEADER_PREFIX}ontology={','.join(uris)}\n"
    )


def parse_provenance_header(text: str) -> tuple[dict, str]:
    """Split an artifact into its header fields and the body below them."""
    fields: dict[str, str] = {}
    rest = []
    lines = text.splitlines(keepends=True)
    i = 0
    for line in lines:
        if not line.startswith(HEADER_PREFIX):
            break
        key, _, value = line[len(HEADER_PREFIX):].rstrip("\n").partition("=")
        fields[key] = value
        i += 1
    rest = "".join(lines[i:])
    for key in ("model_id", "model_hash", "template", "ontology"):
        if key not in fields:
            raise MilaError("CG_BAD_TEMPLATE", f"artifact header lacks {key!r}")
    header = {
        "model_id": fields["model_id"],
        "model_hash": fields["model_hash"],
        "template": fields["template"],
        "ontology": tuple(u for u in fields["ontology"].split(",") if u),
    }
    return header, rest


def strip_header_lines(text: str) -> str:
    """Drop the leading provenance block (used by JSON artifact readers)."""
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return "".join(lines[i:])


# ---------------------------------------------------------------------------
# Artifact generation
# ---------------------------------------------------------------------------

LAYOUT_RE = re.compile(r"^(app/(models|services|routes)|plans)/[A-Za-z0-9_.-]+$")


def _artifact(
    relative_path: str,
    body: str,
    doc: ModelDocument,
    template: Template,
) -> Artifact:
    header = provenance_header(
        doc.id, _doc_hash(doc), template.ref, doc.concept_uris()
    )
    content = (header + body).encode("utf-8")
    if not LAYOUT_RE.match(relative_path):
        raise MilaError("CG_PATH_COLLISION", f"path {relative_path!r} violates the layout")
    return Artifact(
        relative_path=relative_path,
        content=content,
        content_hash=sha256_hex(content),
        trace=ArtifactTrace(
            model_id=doc.id,
            model_hash=_doc_hash(doc),
            template_id=template.template_id,
            template_version=template.version,
            element_paths=tuple(e.path for e in doc.data_elements),
            ontology_uris=doc.concept_uris(),
        ),
    )


def _doc_hash(doc: ModelDocument) -> str:
    from .model_core import canonical_hash

    return canonical_hash(doc)


def _service_context(plan: Plan, doc: ModelDocument) -> dict:
    steps = []
    for step in plan.preprocess.steps:
        if step.op == "impute":
            steps.append({"line": f"impute {step.element} constant={step.constant!r}"})
        elif step.op == "encode":
            steps.append({"line": f"encode {step.element} categories={list(step.categories or ())}"})
        else:
            steps.append({"line": f"scale {step.element} offset={step.offset} factor={step.factor}"})
    return {
        "model_id": doc.id,
        "model_name": doc.name,
        "algorithm_tag": plan.training.algorithm_tag,
        "learning_rate": plan.training.learning_rate,
        "local_epochs": plan.training.local_epochs,
        "l2": plan.training.l2,
        "rounds": plan.federation.rounds,
        "aggregator": plan.federation.aggregator.value,
        "weighting": plan.federation.weighting,
        "sites": [
            {
                "site_id": sid,
                "dialect": plan.retrieval[sid].query.dialect.value,
                "actions": len(plan.retrieval[sid].harmonization_actions),
            }
            for sid in plan.federation.sites
        ],
        "columns": ", ".join(plan.retrieval[plan.federation.sites[0]].expected_columns),
        "steps": steps,
        "feature_width": len(plan.preprocess.feature_layout),
        "label_element": plan.preprocess.label_element,
        "label_classes": ", ".join(plan.preprocess.label_classes),
    }


def generate_artifacts(plan: Plan, doc: ModelDocument, templates: dict[str, Template]) -> ArtifactSet:
    """Render the per-model artifact set in the project layout:
    app/models/<Name>.json, plans/<id>_plan.json, app/services/<id>_service.txt,
    app/routes/<id>.txt."""
    if plan.model_hash != _doc_hash(doc):
        raise MilaError("CG_BAD_TEMPLATE", "plan does not belong to this document")
    artifacts = [
        _artifact(
            f"app/models/{doc.name}.json",
            pretty_json(doc.to_json_dict()),
            doc,
            templates["model_copy"],
        ),
        _artifact(
            f"plans/{doc.id}_plan.json",
            pretty_json(plan.to_json_dict()),
            doc,
            templates["plan_copy"],
        ),
        _artifact(
            f"app/services/{doc.id}_service.txt",
            render_template(templates["service_stub"], _service_context(plan, doc)),
            doc,
            templates["service_stub"],
        ),
        _artifact(
            f"app/routes/{doc.id}.txt",
            render_template(
                templates["route_stub"],
                {"model_id": doc.id, "model_name": doc.name},
            ),
            doc,
            templates["route_stub"],
        ),
    ]
    return ArtifactSet(artifacts=tuple(artifacts))


def combine_artifact_sets(sets: list[ArtifactSet]) -> ArtifactSet:
    seen: dict[str, str] = {}
    merged: list[Artifact] = []
    for artifact_set in sets:
        for artifact in artifact_set.artifacts:
            if artifact.relative_path in seen:
                raise MilaError(
                    "CG_PATH_COLLISION",
                    f"two artifacts want to write {artifact.relative_path!r}",
                )
            seen[artifact.relative_path] = artifact.content_hash
            merged.append(artifact)
    return ArtifactSet(artifacts=tuple(merged))


def write_artifacts(artifact_set: ArtifactSet, root: Path) -> dict[str, str]:
    """Write atomically (temp file + rename per artifact); returns the
    path -> content-hash manifest. Rerunning over unchanged inputs rewrites
    identical bytes."""
    root = Path(root)
    manifest: dict[str, str] = {}
    for artifact in artifact_set.artifacts:
        target = root / artifact.relative_path
        target.parent.mkdir(parents=True, exist_ok=True)
        temp = target.with_name(target.name + ".tmp")
        try:
            temp.write_bytes(artifact.content)
            os.replace(temp, target)
        except OSError:
            if temp.exists():
                temp.unlink()
            raise
        manifest[artifact.relative_path] = artifact.content_hash
    return dict(sorted(manifest.items()))
