//! Trajectory data: ingestion, segmentation, lane-change detection,
//! labeling, and a synthetic generator with a known ground truth.

pub mod categorize;
pub mod lane_change;
pub mod pipeline;
pub mod record;
pub mod segment;
pub mod synthetic;

pub use categorize::{categorize, CategorizeParams, LabeledSample, Labeler, SampleRole};
pub use lane_change::{detect_lane_changes, LaneChangeEvent, LaneChangeParams};
pub use pipeline::{DataSummary, PipelineParams, PipelineStats};
pub use record::{read_records, write_records, RecordReader, RecordWriter, TrajectoryRecord};
pub use segment::{segment, split_tracks, SegmentParams, TrajectorySegment};
pub use synthetic::{generate_synthetic_ndd, GenerationReport, GroundTruth, SyntheticConfig, TruthModel};
