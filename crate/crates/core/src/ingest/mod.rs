//! Data model of the experiment grid, and parsing / persistence of records.

pub mod coverage;
pub mod manifest;
pub mod records;
pub mod table;

pub use coverage::{coverage_report, CellStatus, CoverageCell, CoverageReport};
pub use manifest::{parse_manifest, write_manifest, ModelConfig, SuiteManifest, TargetSpec};
pub use records::{parse_item_records, write_item_records, CheckpointKey, Choice, ItemScoreRecord};
pub use table::{read_metric_points, render_f64, write_metric_points, MetricPoint, PointIndex};
