"""Acceptance gate: one test per numbered behavioural guarantee.

Expected values come from inline oracles (hand-rolled gradient descent,
central finite differences, linear scans of the raw catalog files) or pinned
fixture arithmetic, never from the code under test.
"""

import contextlib
import io
import itertools
import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from mila.canonical import canonical_json, sha256_hex
from mila.cli import _workspace_root, main
from mila.diagnostics import MilaError, Severity
from mila.fedsim import (
    LabeledDataset,
    SyntheticSpec,
    Weights,
    aggregate,
    evaluate,
    fixture_site_datasets,
    gen_synthetic,
    init_global,
    local_train,
    loss_and_grad,
    run_session,
)
from mila.model_core import TaskKind, parse_model
from mila.ontology import ConceptCategory, validate_semantics
from mila.trace_audit import parse_table_csv
from mila.vdl import Dialect, execute_fixture_query, generate_query

GOLDENS = Path(__file__).parent.parent / "goldens"
MODEL_IDS = ("model_a", "model_b", "model_c", "model_d")
MIRRORS = (("clinic_east", "clinic_south"), ("clinic_north", "clinic_west"))


def _run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv("MILA_WORKSPACE", raising=False)


def _naive_grad(W, b, X, y, l2):
    """Per-sample softmax-CE gradient accumulation, no vectorized shortcuts."""
    gW = np.zeros_like(W)
    gb = np.zeros_like(b)
    for i in range(X.shape[0]):
        z = W @ X[i] + b
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        p[y[i]] -= 1.0
        gW += np.outer(p, X[i])
        gb += p
    n = X.shape[0]
    return gW / n + l2 * W, gb / n


# ---------------------------------------------------------------------------


def test_criterion_01_fedavg_equals_centralized_full_batch_gd():
    rng = np.random.default_rng(8101)
    sites = ("s0", "s1", "s2", "s3")
    sizes = (35, 45, 55, 65)  # n = 200 total, deliberately unequal
    D, C, lr, l2 = 5, 2, 0.3, 0.02
    data = {
        sid: LabeledDataset(
            X=rng.standard_normal((n, D)), y=rng.integers(0, C, n), site_id=sid
        )
        for sid, n in zip(sites, sizes)
    }
    pooled_X = np.vstack([data[s].X for s in sites])
    pooled_y = np.concatenate([data[s].y for s in sites])

    start = time.perf_counter()
    fed = init_global(D, C, seed=0)
    cw, cb = fed.W.copy(), fed.b.copy()
    for _ in range(10):
        fed = aggregate([local_train(fed, data[s], lr, 1, l2) for s in sites])
        gW, gb = _naive_grad(cw, cb, pooled_X, pooled_y, l2)
        cw = cw - lr * gW
        cb = cb - lr * gb
        assert np.all(np.abs(fed.W - cw) <= 1e-9 * np.maximum(1.0, np.abs(cw)))
        assert np.all(np.abs(fed.b - cb) <= 1e-9 * np.maximum(1.0, np.abs(cb)))
    assert time.perf_counter() - start < 1.0


def test_criterion_02_federated_convergence_on_skewed_blobs(make_plan):
    sites = ("s0", "s1", "s2", "s3")
    spec = SyntheticSpec(
        site_ids=sites, per_site_n=80, features=4, classes=3, skew=0.5
    )
    assert spec.margin == 4.0
    site_data, held_out = gen_synthetic(spec, seed=2024)
    for i, sid in enumerate(sorted(sites)):
        counts = np.bincount(site_data[sid].y, minlength=3)
        assert counts[i % 3] == counts.max()  # the skew is real

    plan = make_plan(
        features=4, classes=3, sites=sites, rounds=50,
        learning_rate=0.5, local_epochs=1, l2=0.0, k_min=1, seed=11,
    )
    start = time.perf_counter()
    log = run_session(plan, site_data)
    held = evaluate(log.final_weights, held_out)

    pooled_X = np.vstack([site_data[s].X for s in sorted(sites)])
    pooled_y = np.concatenate([site_data[s].y for s in sorted(sites)])
    W, b = np.zeros((3, 4)), np.zeros(3)
    for _ in range(50):
        gW, gb = _naive_grad(W, b, pooled_X, pooled_y, 0.0)
        W -= 0.5 * gW
        b -= 0.5 * gb
    central_acc = float(np.mean(np.argmax(held_out.X @ W.T + b, axis=1) == held_out.y))
    elapsed = time.perf_counter() - start

    assert held.accuracy >= 0.95
    assert abs(held.accuracy - central_acc) <= 0.02
    assert elapsed < 5.0


def test_criterion_03_semantic_flagging_and_rule_table(workspace, docs, counterexample_text):
    doc, structure = parse_model(counterexample_text)
    assert doc is not None and structure == []
    report = validate_semantics(doc, workspace.catalog, workspace.registry)
    assert not report.passed
    errors = [
        (d.code, d.element_path)
        for d in report.diagnostics
        if d.severity is Severity.ERROR
    ]
    assert errors == [("SEM_RULE_DENY", "/data_elements/1")]

    for mid in MODEL_IDS:
        assert validate_semantics(docs[mid], workspace.catalog, workspace.registry).passed

    raw = json.loads(
        Path(str(_workspace_root(None))).joinpath("ontology.json").read_text("utf-8")
    )

    def oracle(kind, outcome, predictor) -> bool:
        for rule in raw["role_rules"]:
            if (
                rule["task_kind"] == kind.value
                and rule["outcome_category"] == outcome.value
                and rule["predictor_category"] == predictor.value
            ):
                return bool(rule["allowed"])
        return False

    for combo in itertools.product(TaskKind, ConceptCategory, ConceptCategory):
        assert workspace.catalog.rule_allows(*combo) == oracle(*combo)


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def demo_snapshot(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    mp.delenv("MILA_WORKSPACE", raising=False)
    out = tmp_path_factory.mktemp("accept_demo")
    code, _, err = _run_cli("demo", "--out", str(out))
    mp.undo()
    assert code == 0, err
    return out


def _append_byte(rel: str):
    def corrupt(root: Path) -> None:
        path = root / rel
        path.write_bytes(path.read_bytes() + b"\n")

    return corrupt


def _flip_hex(digest: str) -> str:
    return ("0" if digest[0] != "0" else "1") + digest[1:]


def _flip_round_record(mid: str):
    def corrupt(root: Path) -> None:
        ledger = root / "trace" / "ledger.jsonl"
        lines = ledger.read_text("utf-8").splitlines()
        for i, line in enumerate(lines):
            raw = json.loads(line)
            if raw["kind"] == "round" and raw["model_id"] == mid and raw["round"] == 2:
                raw["content_hash"] = _flip_hex(raw["content_hash"])
                lines[i] = canonical_json(raw)
                break
        else:
            raise AssertionError(f"no round record for {mid}")
        ledger.write_text("\n".join(lines) + "\n", "utf-8")

    return corrupt


def _flip_service_header(mid: str):
    def corrupt(root: Path) -> None:
        path = root / "app" / "services" / f"{mid}_service.txt"
        lines = path.read_text("utf-8").splitlines(keepends=True)
        digest = lines[1].split("=", 1)[1].strip()
        lines[1] = f"# mila:model_hash={_flip_hex(digest)}\n"
        path.write_text("".join(lines), "utf-8")

    return corrupt


def test_criterion_04_audit_verdicts_and_single_fault_sensitivity(
    demo_snapshot, docs, tmp_path
):
    table = parse_table_csv((demo_snapshot / "trace" / "audit.csv").read_text("utf-8"))
    assert [r.model_id for r in table.rows] == list(MODEL_IDS)
    assert all(
        r.traced_to_plan and r.traced_to_document and r.ontology_preserved
        for r in table.rows
    )

    injections = []
    for mid in MODEL_IDS:
        name = docs[mid].name
        for rel in (
            f"plans/{mid}_plan.json",
            f"app/models/{name}.json",
            f"app/services/{mid}_service.txt",
            f"app/routes/{mid}.txt",
        ):
            injections.append((mid, _append_byte(rel)))
        injections.append((mid, _flip_round_record(mid)))
        injections.append((mid, _flip_service_header(mid)))
    assert len(injections) >= 20

    for idx, (mid, corrupt) in enumerate(injections):
        work = tmp_path / f"inj{idx}"
        shutil.copytree(demo_snapshot, work)
        corrupt(work)
        code, _, _ = _run_cli("audit", "--out", str(work))
        assert code == 1, f"injection {idx} on {mid} went undetected"
        verdicts = parse_table_csv((work / "trace" / "audit.csv").read_text("utf-8"))
        failed = [
            r.model_id
            for r in verdicts.rows
            if not (r.traced_to_plan and r.traced_to_document and r.ontology_preserved)
        ]
        assert failed == [mid], f"injection {idx} flipped {failed}, wanted [{mid}]"


def test_criterion_05_deterministic_regeneration_and_uniform_site_plans(
    tmp_path, plans, workspace
):
    manifests = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert _run_cli("plan", "--out", str(out))[0] == 0
        assert _run_cli("generate", "--out", str(out))[0] == 0
        manifests.append((out / "manifest.json").read_bytes())
    assert manifests[0] == manifests[1]

    for plan in plans.values():
        views = [plan.site_view(sid) for sid in plan.federation.sites]
        assert len(views) == 4
        assert len({canonical_json(v["preprocess"]) for v in views}) == 1
        assert len({canonical_json(v["training"]) for v in views}) == 1

    plan = plans["model_a"]
    data = fixture_site_datasets(plan, workspace.sites, workspace.registry)
    base = run_session(plan, data, seed=5)
    hashes = {base.log_hash(), run_session(plan, data, seed=5).log_hash()}
    rng = np.random.default_rng(55)
    shuffled = list(plan.federation.sites)
    rng.shuffle(shuffled)
    for order in (tuple(reversed(plan.federation.sites)), tuple(shuffled)):
        hashes.add(run_session(plan, data, seed=5, client_order=order).log_hash())
    assert hashes == {base.log_hash()}


def test_criterion_06_sql_and_sparql_sites_agree_and_match_goldens(workspace, docs):
    manifest = json.loads((GOLDENS / "manifest.json").read_text("utf-8"))
    suffix = {Dialect.SQL: ".sql", Dialect.SPARQL: ".rq"}
    mirrored_pairs = 0
    for mid in MODEL_IDS:
        doc = docs[mid]
        queries = {}
        for sid in doc.federation.site_ids:
            q = generate_query(doc, workspace.sites[sid])
            queries[sid] = q
            rel = f"{mid}/{sid}{suffix[q.dialect]}"
            assert q.text == (GOLDENS / "queries" / rel).read_text("utf-8")
            assert manifest[rel] == sha256_hex(q.text.encode("utf-8"))
        for sql_site, rq_site in MIRRORS:
            if sql_site not in queries or rq_site not in queries:
                continue
            left = execute_fixture_query(
                queries[sql_site], workspace.sites[sql_site], workspace.registry
            )
            right = execute_fixture_query(
                queries[rq_site], workspace.sites[rq_site], workspace.registry
            )
            assert [c.local_name for c in left.columns] == [c.local_name for c in right.columns]
            assert [c.unit for c in left.columns] == [c.unit for c in right.columns]
            assert left.rows == right.rows
            assert left.rows
            mirrored_pairs += 1
    assert mirrored_pairs == 8


def test_criterion_07_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(7001)
    h = 1e-5
    instances = 0
    for _ in range(100):
        n = int(rng.integers(3, 9))
        d = int(rng.integers(2, 5))
        c = int(rng.integers(2, 4))
        X = rng.standard_normal((n, d))
        y = rng.integers(0, c, n)
        l2 = float(rng.uniform(0.0, 0.1))
        w = Weights(W=0.5 * rng.standard_normal((c, d)), b=0.5 * rng.standard_normal(c))
        _, dW, db = loss_and_grad(w, X, y, l2)
        flat = np.concatenate([w.W.ravel(), w.b])
        grad = np.concatenate([dW.ravel(), db])

        def loss_at(v):
            value, _, _ = loss_and_grad(
                Weights(W=v[: c * d].reshape(c, d), b=v[c * d :]), X, y, l2
            )
            return value

        for j in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[j] += h
            dn[j] -= h
            fd = (loss_at(up) - loss_at(dn)) / (2 * h)
            assert abs(fd - grad[j]) <= 1e-6 * max(1.0, abs(grad[j]))
        instances += 1
    assert instances == 100


def test_criterion_08_unit_harmonization_guarantees(workspace):
    registry = workspace.registry
    units = sorted(registry.dimensions)
    for unit in units:
        assert registry.convert(7.25, unit, unit) == 7.25

    assert registry.convert(5.0, "mmol/L", "mg/dL") == 90.0

    convertible = [
        pair
        for pair in itertools.permutations(units, 2)
        if registry.find_conversion(*pair) is not None
    ]
    assert convertible
    rng = np.random.default_rng(8008)
    for _ in range(1000):
        a, b = convertible[int(rng.integers(len(convertible)))]
        value = float(rng.uniform(-1e3, 1e3))
        back = registry.convert(registry.convert(value, a, b), b, a)
        assert abs(back - value) <= 1e-12 * max(1.0, abs(value))

    cross = 0
    for a, b in itertools.permutations(units, 2):
        if registry.dimension_of(a) is registry.dimension_of(b):
            continue
        with pytest.raises(MilaError) as exc:
            registry.convert(1.0, a, b)
        assert exc.value.code == "VDL_NO_CONVERSION"
        cross += 1
    assert cross > 0


MODEL_E = {
    "data_elements": [
        {
            "concept_uri": "http://clinical.example.org/concepts/treatment_response",
            "expected_datatype": "categorical",
            "local_name": "treatment_response",
            "role": "outcome",
        },
        {
            "concept_uri": "http://clinical.example.org/concepts/therapy_type",
            "expected_datatype": "categorical",
            "local_name": "therapy_type",
            "role": "predictor",
        },
        {
            "concept_uri": "http://clinical.example.org/concepts/crp",
            "expected_datatype": "numeric",
            "expected_unit": "mg/L",
            "local_name": "crp_level",
            "role": "predictor",
        },
        {
            "concept_uri": "http://clinical.example.org/concepts/age",
            "expected_datatype": "numeric",
            "expected_unit": "years",
            "local_name": "age",
            "role": "predictor",
        },
    ],
    "federation": {
        "aggregator": "fedavg",
        "min_local_instances": 6,
        "mode": "federated",
        "rounds": 3,
        "seed": 1733,
        "site_ids": ["clinic_east", "clinic_north", "clinic_south", "clinic_west"],
    },
    "id": "model_e",
    "metadata": {"owner": "outcomes group", "status": "demo"},
    "name": "Response_prediction",
    "task": {
        "description": "Predict treatment response from therapy and routine markers.",
        "kind": "generic_prediction",
    },
    "training": {
        "algorithm_tag": "logistic_regression",
        "executable": True,
        "l2": 0.01,
        "learning_rate": 0.5,
        "local_epochs": 2,
        "preprocessing": {
            "age": {"scale_factor": 12.0, "scale_offset": 58.0},
            "crp_level": {"scale_factor": 15.0, "scale_offset": 25.0},
        },
    },
    "version": "1.0.0",
}


def test_criterion_09_fifth_model_needs_json_authoring_only(tmp_path):
    ws = tmp_path / "ws"
    out = tmp_path / "out"
    shutil.copytree(Path(str(_workspace_root(None))), ws)
    (ws / "models" / "model_e.json").write_text(
        json.dumps(MODEL_E, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    code, _, err = _run_cli("demo", "--workspace", str(ws), "--out", str(out))
    assert code == 0, err
    assert (out / "plans" / "model_e_plan.json").is_file()
    assert (out / "runs" / "model_e_session.jsonl").is_file()
    assert (out / "app" / "models" / "Response_prediction.json").is_file()
    table = parse_table_csv((out / "trace" / "audit.csv").read_text("utf-8"))
    assert [r.model_id for r in table.rows] == list(MODEL_IDS) + ["model_e"]
    assert table.passed
