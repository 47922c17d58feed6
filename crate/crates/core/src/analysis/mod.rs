//! Noise/spread, compute frontier and report emission.

pub mod frontier;
pub mod noise;
pub mod report;

pub use frontier::{pareto_frontier, FrontierPoint};
pub use noise::{noise_spread, NoiseSpreadPoint};
pub use report::{emit_frontier, emit_noise, emit_report, frontier_points, frontier_svg, noise_svg, ReportFormat, ReportSet};
