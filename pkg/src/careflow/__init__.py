"""careflow: clinical-pathway mining and patient-flow simulation.

The pipeline goes: ingest/synthesize timestamped event logs -> clean ->
encode cases as state strings -> cluster them by edit distance -> train a
decision tree on sequence features -> align members to per-cluster
templates and build flow graphs -> fit empirical distributions -> run a
queueing discrete-event simulation -> evaluate against observation.
"""

from .analysis import EvalReport, compare, ks_statistic, qq_points
from .classify import DecisionTree, train
from .cluster import ClusterModel, kmedoids, levenshtein, select_k
from .config import PipelineConfig, dump_defaults, load_config
from .cpmodel import (
    AlignedSequence,
    CPGraph,
    FlowDistributions,
    Template,
    align,
    build_cp_graph,
    derive_templates,
    fit_distributions,
    sample_arrivals,
)
from .eventlog import (
    CleanReport,
    ClinicalCase,
    RawEvent,
    SynthSpec,
    SynthTemplate,
    clean,
    ingest,
    serialize,
    synthesize,
)
from .pathway import CodeMap, DEFAULT_CODE_MAP, PathwaySequence, encode, encode_all, features
from .simengine import PatientRecord, ScenarioConfig, SimResult, run_replication, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AlignedSequence",
    "CPGraph",
    "CleanReport",
    "ClinicalCase",
    "ClusterModel",
    "CodeMap",
    "DEFAULT_CODE_MAP",
    "DecisionTree",
    "EvalReport",
    "FlowDistributions",
    "PathwaySequence",
    "PatientRecord",
    "PipelineConfig",
    "RawEvent",
    "ScenarioConfig",
    "SimResult",
    "SynthSpec",
    "SynthTemplate",
    "Template",
    "align",
    "build_cp_graph",
    "clean",
    "compare",
    "derive_templates",
    "dump_defaults",
    "encode",
    "encode_all",
    "features",
    "fit_distributions",
    "ingest",
    "kmedoids",
    "ks_statistic",
    "levenshtein",
    "load_config",
    "qq_points",
    "run_replication",
    "run_scenario",
    "sample_arrivals",
    "select_k",
    "serialize",
    "synthesize",
    "train",
]
