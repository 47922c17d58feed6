use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub method: String,
    pub flops: f64,
    pub decision_accuracy: f64,
    pub std: f64,
}

fn order(a: &FrontierPoint, b: &FrontierPoint) -> Ordering {
    a.flops
        .total_cmp(&b.flops)
        .then(b.decision_accuracy.total_cmp(&a.decision_accuracy))
        .then_with(|| a.method.cmp(&b.method))
        .then(a.std.total_cmp(&b.std))
}

/// Points not dominated by another with no more compute and no less accuracy
/// (one strictly better), ascending in compute. Duplicates collapse to one.
pub fn pareto_frontier(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut sorted: Vec<&FrontierPoint> = points.iter().collect();
    sorted.sort_by(|a, b| order(a, b));
    let mut out: Vec<FrontierPoint> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for p in sorted {
        if p.decision_accuracy > best {
            best = p.decision_accuracy;
            out.push(p.clone());
        }
    }
    out
}
