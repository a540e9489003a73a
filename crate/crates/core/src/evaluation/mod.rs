//! Registration metrics, runtime and size benchmarks, and the motion study.

pub mod bench;
pub mod metrics;
pub mod motion;

pub use bench::{benchmark_runtime, complexity_rows, ComplexityRow, RuntimeStats};
pub use metrics::{
    evaluate, score_predictions, EvalReport, EvalSummary, IdentityPredictor, OraclePredictor, PairMetrics, Predictor,
    Stat,
};
pub use motion::{
    default_rois, interior_mask, motion_study, phantom_series, select_reference_frames, CandidateSeries,
    MotionSettings, Roi, RoiSummary, SeriesConfig, TimeSeriesStudy, VoxelSeries,
};
