#!/usr/bin/env python3
"""Freeze the generated retrieval queries as golden files.

One file per (model, site): goldens/queries/<model_id>/<site_id>.sql or .rq,
plus a manifest of content digests. Tests compare generator output against
these bytes; regenerate deliberately after any intended query-shape change
and review the diff.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from mila.canonical import sha256_hex
from mila.cli import _workspace_root, load_workspace
from mila.vdl import Dialect, generate_query

SUFFIX = {Dialect.SQL: ".sql", Dialect.SPARQL: ".rq"}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    default_root = Path(__file__).resolve().parent.parent / "goldens" / "queries"
    parser.add_argument("--root", type=Path, default=default_root)
    args = parser.parse_args()

    ws = load_workspace(_workspace_root(None))
    manifest: dict[str, str] = {}
    for entry in ws.models:
        doc = entry.doc
        assert doc is not None, entry.label
        for site_id in doc.federation.site_ids:
            site = ws.sites[site_id]
            q = generate_query(doc, site)
            rel = f"{doc.id}/{site_id}{SUFFIX[q.dialect]}"
            path = args.root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(q.text, "utf-8")
            manifest[rel] = sha256_hex(q.text.encode("utf-8"))
            print(f"wrote {path}")
    manifest_path = args.root.parent / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"wrote {manifest_path}")


if __name__ == "__main__":
    main()
