"""Shared fixtures: the bundled workspace, loaded once per session."""

import pytest

from mila.cli import _workspace_root, load_workspace
from mila.planner import transform


@pytest.fixture(scope="session")
def workspace():
    return load_workspace(_workspace_root(None))


@pytest.fixture(scope="session")
def docs(workspace):
    out = {e.doc.id: e.doc for e in workspace.models if e.doc is not None}
    assert len(out) == len(workspace.models), "bundled models must all parse"
    return out


@pytest.fixture(scope="session")
def plans(workspace, docs):
    out = {}
    for doc in docs.values():
        plan, diags = transform(doc, workspace.catalog, workspace.sites, workspace.registry)
        assert plan is not None, [d.message for d in diags]
        out[doc.id] = plan
    return out


@pytest.fixture(scope="session")
def make_plan():
    """Factory for bare synthetic plans driving the training loop directly."""
    from mila.model_core import Aggregator, FederationMode
    from mila.planner import FeatureSlot, FederationPlan, Plan, PreprocessPlan, TrainingConfig

    def build(
        features,
        classes,
        sites,
        rounds=1,
        learning_rate=0.5,
        local_epochs=1,
        l2=0.0,
        k_min=1,
        seed=0,
    ):
        layout = tuple(FeatureSlot(f"x{i}", f"x{i}", i) for i in range(features))
        labels = tuple(f"c{i}" for i in range(classes))
        return Plan(
            plan_id=f"plan-synthetic{features}x{classes}",
            model_id="synthetic",
            model_hash="0" * 64,
            retrieval={},
            preprocess=PreprocessPlan(
                steps=(),
                feature_layout=layout,
                label_element="label",
                label_classes=labels,
                cohort_filters=(),
            ),
            training=TrainingConfig("logistic_regression", learning_rate, local_epochs, l2),
            federation=FederationPlan(
                mode=FederationMode.FEDERATED,
                sites=tuple(sorted(sites)),
                rounds=rounds,
                aggregator=Aggregator.FEDAVG,
                weighting="by_sample_count",
                min_local_instances=k_min,
                privacy_rules=("parameter_vectors_only", "scalar_metrics_only"),
                seed=seed,
            ),
            ontology_refs=("urn:example:synthetic",),
        )

    return build


@pytest.fixture(scope="session")
def counterexample_text():
    from importlib import resources

    return (
        resources.files("mila")
        .joinpath("data/workspace/counterexamples/hypertension_from_tumor_marker.json")
        .read_text("utf-8")
    )
