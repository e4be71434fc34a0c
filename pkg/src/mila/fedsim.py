"""Federated training session over a Plan: multinomial logistic regression
with full-batch gradient descent, FedAvg aggregation, metrics, round logs.

The local loss is a *mean* over the site's samples,
``L_k(w) = (1/n_k) sum_i CE(softmax(W x_i + b), y_i) + (lambda/2) ||W||^2``,
which makes the n_k-weighted FedAvg of single-step clients equal to one
pooled full-batch step. That equivalence is the main correctness oracle, so
no clamping or silent repair is done anywhere: any non-finite value aborts
the session.

Only Weights and scalar metrics cross the site boundary. The coordinator
structures (RoundLog, SessionLog) never hold row-level data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .canonical import canonical_json
from .diagnostics import MilaError
from .planner import Plan, PreprocessStep
from .units import UnitRegistry, default_registry
from .vdl import ResultTable, SiteCatalog, execute_fixture_query


@dataclass(frozen=True)
class Weights:
    W: np.ndarray  # [C, D]
    b: np.ndarray  # [C]

    @property
    def classes(self) -> int:
        return self.W.shape[0]

    @property
    def features(self) -> int:
        return self.W.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(order="C"), self.b])

    @staticmethod
    def from_flat(values: np.ndarray, classes: int, features: int) -> "Weights":
        values = np.asarray(values, dtype=np.float64)
        W = values[: classes * features].reshape(classes, features)
        return Weights(W=W.copy(), b=values[classes * features:].copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.W).all() and np.isfinite(self.b).all())

    def export(self) -> dict:
        """Flat row-major export with a (classes, features) header."""
        return {
            "shape": [self.classes, self.features],
            "values": [float(v) for v in self.flat()],
        }


def weights_hash(w: Weights) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(w.W.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(w.W, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(w.b, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray  # [n, D]
    y: np.ndarray  # [n] integer labels in [0, C)
    site_id: str

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ClientUpdate:
    site_id: str
    n_samples: int
    weights: Weights
    local_loss: float


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "confusion": [list(row) for row in self.confusion],
        }


@dataclass(frozen=True)
class RoundLog:
    experiment_id: str
    round: int
    prev_global_weights_hash: str
    global_weights_hash: str
    site_ids: tuple[str, ...]
    site_n: dict[str, int]
    site_losses: dict[str, float]
    site_metrics: dict[str, dict[str, float]]
    global_loss: float
    global_metrics: dict[str, float]
    ontology_uris: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "round": self.round,
            "prev_global_weights_hash": self.prev_global_weights_hash,
            "global_weights_hash": self.global_weights_hash,
            "site_ids": list(self.site_ids),
            "site_n": dict(self.site_n),
            "site_losses": dict(self.site_losses),
            "site_metrics": dict(self.site_metrics),
            "global_loss": self.global_loss,
            "global_metrics": dict(self.global_metrics),
            "ontology_uris": list(self.ontology_uris),
        }


@dataclass(frozen=True)
class SessionLog:
    experiment_id: str
    model_id: str
    model_hash: str
    plan_id: str
    rounds: tuple[RoundLog, ...]
    final_weights: Weights
    ontology_uris: tuple[str, ...]

    def to_jsonl(self) -> str:
        return "".join(canonical_json(r.to_json_dict()) + "\n" for r in self.rounds)

    def log_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Core math
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_dims(w: Weights, data: LabeledDataset) -> None:
    if data.X.ndim != 2 or data.X.shape[1] != w.features:
        raise MilaError(
            "FS_DIM_MISMATCH",
            f"site {data.site_id!r}: features have width {data.X.shape[-1] if data.X.ndim else '?'} "
            f"but weights expect {w.features}",
        )
    if data.y.ndim != 1 or data.y.shape[0] != data.X.shape[0]:
        raise MilaError("FS_DIM_MISMATCH", f"site {data.site_id!r}: label vector does not match X")
    if data.n and (data.y.min() < 0 or data.y.max() >= w.classes):
        raise MilaError(
            "FS_DIM_MISMATCH",
            f"site {data.site_id!r}: labels outside [0, {w.classes})",
        )


def loss_and_grad(
    w: Weights, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy plus (l2/2)||W||^2 and its gradient.

    The l2 term penalizes W only, never b.
    """
    n = X.shape[0]
    probs = _softmax(X @ w.W.T + w.b)
    data_loss = float(-np.mean(np.log(probs[np.arange(n), y])))
    loss = data_loss + 0.5 * l2 * float(np.sum(w.W * w.W))
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    delta = probs - onehot
    dW = delta.T @ X / n + l2 * w.W
    db = delta.mean(axis=0)
    return loss, dW, db


def init_global(
    features: int, classes: int, seed: int, scheme: str = "zeros", scale: float = 0.1
) -> Weights:
    """Initial global weights: all-zero, or i.i.d. uniform in [-scale, scale]."""
    if scheme == "zeros":
        return Weights(W=np.zeros((classes, features)), b=np.zeros(classes))
    if scheme == "uniform":
        rng = np.random.default_rng(seed)
        return Weights(
            W=rng.uniform(-scale, scale, (classes, features)),
            b=rng.uniform(-scale, scale, classes),
        )
    raise MilaError("FS_DIM_MISMATCH", f"unknown init scheme {scheme!r}")


def local_train(
    w0: Weights, data: LabeledDataset, learning_rate: float, epochs: int, l2: float
) -> ClientUpdate:
    """E full-batch gradient-descent steps on the local mean loss."""
    _check_dims(w0, data)
    if data.n == 0:
        raise MilaError("FS_EMPTY", f"site {data.site_id!r} has no rows")
    W, b = w0.W.copy(), w0.b.copy()
    for _ in range(epochs):
        _loss, dW, db = loss_and_grad(Weights(W, b), data.X, data.y, l2)
        W = W - learning_rate * dW
        b = b - learning_rate * db
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise MilaError(
                "FS_NONFINITE",
                f"local training diverged at site {data.site_id!r}",
            )
    final = Weights(W, b)
    final_loss, _, _ = loss_and_grad(final, data.X, data.y, l2)
    if not np.isfinite(final_loss):
        raise MilaError("FS_NONFINITE", f"non-finite loss at site {data.site_id!r}")
    return ClientUpdate(
        site_id=data.site_id, n_samples=data.n, weights=final, local_loss=final_loss
    )


def aggregate(updates: list[ClientUpdate]) -> Weights:
    """FedAvg: the n_k-weighted mean, summed in sorted site order so the
    result is bitwise independent of completion order."""
    if not updates:
        raise MilaError("FS_EMPTY", "nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.site_id)
    shape = (ordered[0].weights.classes, ordered[0].weights.features)
    for u in ordered:
        if (u.weights.classes, u.weights.features) != shape:
            raise MilaError("FS_DIM_MISMATCH", f"update from {u.site_id!r} has mismatched shape")
    total = sum(u.n_samples for u in ordered)
    W = np.zeros((shape[0], shape[1]))
    b = np.zeros(shape[0])
    for u in ordered:
        W += u.n_samples * u.weights.W
        b += u.n_samples * u.weights.b
    return Weights(W=W / total, b=b / total)


def evaluate(w: Weights, data: LabeledDataset) -> Metrics:
    """Argmax prediction, confusion matrix, accuracy, macro-F1.

    Classes with zero predicted and zero actual support are excluded from the
    macro-F1 denominator; any class that appears on either side contributes
    (with F1=0 when precision+recall is 0).
    """
    _check_dims(w, data)
    logits = data.X @ w.W.T + w.b
    predictions = np.argmax(logits, axis=1)
    classes = w.classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    for actual, predicted in zip(data.y, predictions):
        confusion[actual, predicted] += 1
    return metrics_from_confusion(confusion)


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    classes = confusion.shape[0]
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    precision, recall, f1s, included = [], [], [], []
    for c in range(classes):
        tp = confusion[c, c]
        predicted = confusion[:, c].sum()
        actual = confusion[c, :].sum()
        p = float(tp / predicted) if predicted else 0.0
        r = float(tp / actual) if actual else 0.0
        precision.append(p)
        recall.append(r)
        f1 = 2 * p * r / (p + r) if (p + r) else 0.0
        f1s.append(f1)
        included.append(not (predicted == 0 and actual == 0))
    kept = [f for f, keep in zip(f1s, included) if keep]
    macro_f1 = float(sum(kept) / len(kept)) if kept else 0.0
    return Metrics(
        accuracy=accuracy,
        macro_f1=macro_f1,
        precision=tuple(precision),
        recall=tuple(recall),
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
    )


# ---------------------------------------------------------------------------
# Session loop
# ---------------------------------------------------------------------------


def run_session(
    plan: Plan,
    site_data: dict[str, LabeledDataset],
    seed: int | None = None,
    client_order: tuple[str, ...] | None = None,
) -> SessionLog:
    """T synchronous rounds of broadcast, local training, and aggregation.

    ``client_order`` only permutes when clients run; aggregation re-sorts, so
    the log is identical for every order. Deterministic given (plan, data).
    """
    sites = plan.federation.sites
    effective_seed = plan.federation.seed if seed is None else seed
    features = len(plan.preprocess.feature_layout)
    classes = len(plan.preprocess.label_classes)
    k_min = plan.federation.min_local_instances
    for sid in sites:
        if sid not in site_data:
            raise MilaError("FS_INSUFFICIENT_DATA", f"no dataset for site {sid!r}")
        if site_data[sid].n < k_min:
            raise MilaError(
                "FS_INSUFFICIENT_DATA",
                f"site {sid!r} has {site_data[sid].n} rows, below the minimum {k_min}",
            )
    order = client_order if client_order is not None else sites
    if sorted(order) != sorted(sites):
        raise MilaError("FS_INSUFFICIENT_DATA", "client order must cover exactly the plan's sites")

    w = init_global(features, classes, effective_seed, scheme="zeros")
    experiment_id = f"{plan.plan_id}-seed{effective_seed}"
    rounds: list[RoundLog] = []
    prev_hash = weights_hash(w)
    config = plan.training
    for t in range(1, plan.federation.rounds + 1):
        updates = [
            local_train(w, site_data[sid], config.learning_rate, config.local_epochs, config.l2)
            for sid in order
        ]
        w = aggregate(updates)
        if not w.is_finite():
            raise MilaError("FS_NONFINITE", f"aggregated weights diverged in round {t}")
        current_hash = weights_hash(w)
        by_site = {u.site_id: u for u in updates}
        total_n = sum(u.n_samples for u in updates)
        site_metrics: dict[str, dict[str, float]] = {}
        pooled_confusion = np.zeros((classes, classes), dtype=np.int64)
        for sid in sites:
            local = evaluate(w, site_data[sid])
            site_metrics[sid] = {"accuracy": local.accuracy, "macro_f1": local.macro_f1}
            pooled_confusion += np.asarray(local.confusion, dtype=np.int64)
        pooled = metrics_from_confusion(pooled_confusion)
        rounds.append(
            RoundLog(
                experiment_id=experiment_id,
                round=t,
                prev_global_weights_hash=prev_hash,
                global_weights_hash=current_hash,
                site_ids=sites,
                site_n={sid: by_site[sid].n_samples for sid in sites},
                site_losses={sid: by_site[sid].local_loss for sid in sites},
                site_metrics=site_metrics,
                global_loss=float(
                    # summed in site order, not arrival order, so client_order
                    # cannot perturb the last float bit
                    sum(by_site[sid].n_samples * by_site[sid].local_loss for sid in sites)
                    / total_n
                ),
                global_metrics={"accuracy": pooled.accuracy, "macro_f1": pooled.macro_f1},
                ontology_uris=plan.ontology_refs,
            )
        )
        prev_hash = current_hash
    return SessionLog(
        experiment_id=experiment_id,
        model_id=plan.model_id,
        model_hash=plan.model_hash,
        plan_id=plan.plan_id,
        rounds=tuple(rounds),
        final_weights=w,
        ontology_uris=plan.ontology_refs,
    )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    site_ids: tuple[str, ...]
    per_site_n: int
    features: int
    classes: int
    skew: float = 0.0  # 0 = uniform class mix at every site, 1 = fully skewed
    margin: float = 4.0  # distance of each class mean from the origin, in sigmas
    test_n: int = 200


def _class_means(features: int, classes: int, margin: float) -> np.ndarray:
    means = np.zeros((classes, features))
    if features >= classes:
        for c in range(classes):
            means[c, c] = margin
    elif features >= 2:
        for c in range(classes):
            angle = 2.0 * np.pi * c / classes
            means[c, 0] = margin * np.cos(angle)
            means[c, 1] = margin * np.sin(angle)
    else:
        for c in range(classes):
            means[c, 0] = margin * c
    return means


def _class_counts(n: int, proportions: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of n * proportions to integers summing to n."""
    raw = n * proportions
    counts = np.floor(raw).astype(np.int64)
    remainder = int(n - counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def gen_synthetic(spec: SyntheticSpec, seed: int) -> tuple[dict[str, LabeledDataset], LabeledDataset]:
    """Per-class Gaussian blobs (sigma 1) with per-site class-proportion skew;
    site k over-represents class k mod C. Returns per-site training data plus
    a pooled held-out test set with a uniform class mix."""
    rng = np.random.default_rng(seed)
    classes = spec.classes
    means = _class_means(spec.features, classes, spec.margin)
    site_data: dict[str, LabeledDataset] = {}
    for i, sid in enumerate(sorted(spec.site_ids)):
        favored = i % classes
        proportions = np.full(classes, (1.0 - spec.skew) / classes)
        proportions[favored] += spec.skew
        counts = _class_counts(spec.per_site_n, proportions)
        labels = np.repeat(np.arange(classes), counts)
        X = means[labels] + rng.standard_normal((spec.per_site_n, spec.features))
        perm = rng.permutation(spec.per_site_n)
        site_data[sid] = LabeledDataset(X=X[perm], y=labels[perm], site_id=sid)
    test_labels = np.arange(spec.test_n) % classes
    test_X = means[test_labels] + rng.standard_normal((spec.test_n, spec.features))
    perm = rng.permutation(spec.test_n)
    test = LabeledDataset(X=test_X[perm], y=test_labels[perm], site_id="held_out")
    return site_data, test


# ---------------------------------------------------------------------------
# Fixture data pipeline: retrieval table -> features and labels
# ---------------------------------------------------------------------------


def _element_specs(steps: tuple[PreprocessStep, ...]) -> dict[str, dict]:
    specs: dict[str, dict] = {}
    for step in steps:
        spec = specs.setdefault(step.element, {})
        if step.op == "impute":
            spec["impute"] = step.constant
        elif step.op == "encode":
            spec["categories"] = step.categories
        elif step.op == "scale":
            spec["offset"] = step.offset
            spec["factor"] = step.factor
    return specs


def dataset_from_table(plan: Plan, table: ResultTable, site_id: str) -> LabeledDataset:
    """Apply the shared preprocessing plan to one site's retrieval table."""
    pp = plan.preprocess
    column_index = {c.local_name: i for i, c in enumerate(table.columns)}
    for needed in [s.element for s in pp.feature_layout] + [pp.label_element, *pp.cohort_filters]:
        if needed not in column_index:
            raise MilaError("FS_DIM_MISMATCH", f"retrieval table lacks column {needed!r}")

    rows = [
        row
        for row in table.rows
        if all(row[column_index[f]] is True for f in pp.cohort_filters)
    ]
    if not rows:
        raise MilaError("FS_EMPTY", f"site {site_id!r} has no rows after cohort filtering")

    specs = _element_specs(pp.steps)
    ordered_elements: list[str] = []
    for slot in pp.feature_layout:
        if slot.element not in ordered_elements:
            ordered_elements.append(slot.element)

    columns: list[np.ndarray] = []
    for element in ordered_elements:
        spec = specs.get(element, {})
        raw = [row[column_index[element]] for row in rows]
        if "categories" in spec:
            categories = list(spec["categories"])
            block = np.zeros((len(rows), len(categories)))
            for r, value in enumerate(raw):
                if value is None:
                    value = spec.get("impute")
                if value not in categories:
                    raise MilaError(
                        "FS_DIM_MISMATCH",
                        f"value {value!r} of {element!r} is outside the declared value set",
                    )
                block[r, categories.index(value)] = 1.0
            columns.append(block)
        elif "factor" in spec:
            values = np.array(
                [float(spec.get("impute", 0.0) if v is None else v) for v in raw]
            )
            columns.append(
                ((values - spec["offset"]) / spec["factor"]).reshape(-1, 1)
            )
        else:
            constant = spec.get("impute", False)
            values = np.array(
                [1.0 if (constant if v is None else v) else 0.0 for v in raw]
            )
            columns.append(values.reshape(-1, 1))
    X = np.hstack(columns) if columns else np.zeros((len(rows), 0))
    if X.shape[1] != len(pp.feature_layout):
        raise MilaError("FS_DIM_MISMATCH", "assembled features do not match the layout width")

    classes = list(pp.label_classes)
    y = np.zeros(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        value = row[column_index[pp.label_element]]
        key = ("true" if value else "false") if isinstance(value, bool) else value
        if key not in classes:
            raise MilaError(
                "FS_DIM_MISMATCH",
                f"outcome value {value!r} is outside the declared classes",
            )
        y[r] = classes.index(key)
    return LabeledDataset(X=X, y=y, site_id=site_id)


def fixture_site_datasets(
    plan: Plan, sites: dict[str, SiteCatalog], registry: UnitRegistry | None = None
) -> dict[str, LabeledDataset]:
    """Run every site's retrieval query against its fixture store and apply
    the shared preprocessing plan."""
    registry = registry or default_registry()
    out: dict[str, LabeledDataset] = {}
    for sid in plan.federation.sites:
        site = sites.get(sid)
        if site is None:
            raise MilaError("FS_INSUFFICIENT_DATA", f"no site catalog for {sid!r}")
        table = execute_fixture_query(plan.retrieval[sid].query, site, registry)
        out[sid] = dataset_from_table(plan, table, sid)
    return out
