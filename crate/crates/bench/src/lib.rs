//! Inputs shared by the benchmarks: noiseless fit data and synthetic item records.

use datapick::fit::{DirectPoint, LinkPoint, LossPoint, PowerLawParams, SigmoidParams, SingleStepNdParams};
use datapick::ingest::{CheckpointKey, Choice};
use datapick::{ItemScoreRecord, ScalePoint};

pub const LAW: PowerLawParams = PowerLawParams {
    a: 180.0,
    alpha: 0.11,
    e: 1.4,
};

pub const LINK: SigmoidParams = SigmoidParams {
    a: 0.6,
    b: 0.25,
    k: -4.0,
    l0: 2.6,
};

/// Model sizes with 20 tokens per parameter.
pub fn ladder(n: usize) -> Vec<ScalePoint> {
    (0..n)
        .map(|i| {
            let params = 4e6 * 2f64.powf(i as f64);
            ScalePoint::new(params, 20.0 * params)
        })
        .collect()
}

pub fn loss_points(n: usize) -> Vec<LossPoint> {
    ladder(n)
        .into_iter()
        .map(|s| LossPoint {
            scale: s,
            loss: LAW.loss(s.compute()),
        })
        .collect()
}

/// `checkpoints` evenly spaced checkpoints per size.
pub fn link_points(n: usize, checkpoints: u64) -> Vec<LinkPoint> {
    ladder(n)
        .into_iter()
        .flat_map(|s| {
            (1..=checkpoints).map(move |i| {
                let l = LAW.loss(s.compute() * i as f64 / checkpoints as f64);
                LinkPoint {
                    loss: l,
                    value: LINK.value(l),
                    step: i,
                    final_step: checkpoints,
                }
            })
        })
        .collect()
}

pub fn nd_points() -> Vec<DirectPoint> {
    let truth = SingleStepNdParams {
        big_a: -90.0,
        alpha: 0.3,
        big_b: -700.0,
        beta: 0.32,
        e: 3.0,
        a: 0.6,
        b: 0.22,
    };
    let mut out = Vec::new();
    for &n in &[1e7, 4e7, 1.5e8, 5e8] {
        for &d in &[2e9, 1e10, 5e10] {
            let s = ScalePoint::new(n, d);
            out.push(DirectPoint {
                scale: s,
                value: truth.value(s),
            });
        }
    }
    out
}

/// `n` four-choice items for one checkpoint and task, with varied lengths.
pub fn items(n: usize) -> Vec<ItemScoreRecord> {
    let key = CheckpointKey::new("r", "150M", "default", 1000, 1_000_000);
    (0..n)
        .map(|i| ItemScoreRecord {
            key: key.clone(),
            task: "bench".into(),
            item: format!("i{i:06}"),
            choices: (0..4)
                .map(|c| {
                    let chars = 8 + ((i * 7 + c * 5) % 40) as u32;
                    Choice {
                        logprob: -0.05 * chars as f64 * (1.0 + ((i + 3 * c) % 9) as f64 / 4.0),
                        tokens: chars.div_ceil(4),
                        chars,
                        correct: c == i % 4,
                    }
                })
                .collect(),
        })
        .collect()
}
