//! Dataset manifests, synthetic data, end-to-end evaluation runs and rank overlays.

pub mod manifest;
pub mod overlay;
pub mod report;
pub mod samples;
pub mod synthetic;

pub use manifest::{load_manifest, write_manifest, DatasetManifest, GroundTruth, ManifestRecord};
pub use overlay::{palette_hex, render_rank_overlay, RANK_PALETTE};
pub use report::{
    ap_csv, run_eval, write_ap_csv, ImageRow, RunConfig, RunReport, SUBITIZING_FILE, TOOL_VERSION,
};
pub use samples::{manifest_count_samples, manifest_samples, synthetic_samples};
pub use synthetic::{generate_synthetic, synthesize, ShapeKind, SyntheticImage, SyntheticSpec};
