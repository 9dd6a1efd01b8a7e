"""Knowledge-graph reasoning workbench: retrieval, selection policies, probes."""

from ._core import (
    Instance,
    KgeModel,
    KnowledgeGraph,
    Pipeline,
    ProbeClassifier,
    RunConfig,
    SequencePolicy,
    build_error_set,
    build_instances,
    config_reference,
    continuous_ksg_mi,
    evaluate_policy,
    extract_representations,
    grpo_train,
    link_predict,
    load_instances,
    mixed_ksg_mi,
    random_projection_smi,
    save_instances,
    synthetic_graph,
    task_smi,
    train_kge,
    train_probe,
    train_sft,
    triple_classify,
)

__all__ = [
    "Instance",
    "KgeModel",
    "KnowledgeGraph",
    "Pipeline",
    "ProbeClassifier",
    "RunConfig",
    "SequencePolicy",
    "build_error_set",
    "build_instances",
    "config_reference",
    "continuous_ksg_mi",
    "evaluate_policy",
    "extract_representations",
    "grpo_train",
    "link_predict",
    "load_instances",
    "mixed_ksg_mi",
    "random_projection_smi",
    "save_instances",
    "synthetic_graph",
    "task_smi",
    "train_kge",
    "train_probe",
    "train_sft",
    "triple_classify",
]
