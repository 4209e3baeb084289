//! Relative salience tooling: nested observer-agreement stacks, rank-by-detection with
//! the SOR score, detection and subitizing evaluation, and a small stage-wise
//! refinement network trained from scratch on CPU.

pub mod detection;
pub mod error;
pub mod harness;
pub mod io;
pub mod net;
pub mod ranking;
pub mod stack;
pub mod subitizing;

pub use detection::{
    auc, confusion_sweep, dataset_detection_report, evaluate_against_stack, f_measures, mae,
    write_curve_csv, BestReport, Curve, CurvePoint, DetectionAggregate, EvalOptions, SliceReport,
};
pub use error::{Error, Result};
pub use ranking::{
    dataset_sor, gt_rank_from_agreement, instance_rank_scores, rank_order, sor_score, spearman,
    DatasetSor, InstanceScore, RankVector, SorResult,
};
pub use stack::{
    build_nested_stack, collapse_stack, downsample_targets, normalize_saliency,
    threshold_agreement, AgreementMap, BinaryMap, InstanceMap, NestedStack, Resample, SaliencyMap,
    SoftStack,
};
pub use subitizing::{
    average_precision, class_distribution, count_to_class, subitizing_report, ApMethod, ApReport,
    CountScheme, SubitizingPrediction,
};
