"""Post-hoc reasoning over the outputs of defect detection and classification models."""
from .analysis import DCSummary, NodeAnalysis, analyse_forest, summary_forest
from .features import (
    DC_NAMES,
    DCMatrix,
    FeatureRange,
    assemble_matrix,
    compute_feature_range,
    extract_dc,
    extract_features,
)
from .forest import (
    ForestConfig,
    ReasoningForest,
    Route,
    TreeNode,
    ValidationReport,
    best_split,
    climb_forest,
    plant_forest,
    val_forest,
)
from .ingest import (
    DatasetPaths,
    DefectInstance,
    MatchResult,
    ReasoningTargets,
    TaskMode,
    build_reasoning_targets,
    extract_components,
    match_predictions,
    process_dir,
    scan_dataset,
)
from .reasoner import DefectReasoner
from .report import ReportBundle, explain_forest, render_dc_chart, write_recommendations

__version__ = "0.1.0"
