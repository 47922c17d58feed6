//! Line-delimited per-item evaluation records.
//!
//! Each line is a JSON object:
//!
//! ```text
//! {"recipe":"dolma17","size":"150M","seed":"default","step":38157,"tokens_seen":15000000000,
//!  "task":"arc_easy","item":"q-17","choices":[{"logprob":-12.3,"tokens":4,"chars":19,"correct":true}, ...]}
//! ```
//!
//! Log-likelihoods are summed over continuation tokens, in nats.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one evaluated checkpoint of one training run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub recipe: String,
    #[serde(rename = "size")]
    pub size_label: String,
    pub seed: String,
    pub step: u64,
    pub tokens_seen: u64,
}

impl CheckpointKey {
    pub fn new(
        recipe: impl Into<String>,
        size_label: impl Into<String>,
        seed: impl Into<String>,
        step: u64,
        tokens_seen: u64,
    ) -> Self {
        Self {
            recipe: recipe.into(),
            size_label: size_label.into(),
            seed: seed.into(),
            step,
            tokens_seen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    /// Summed log-probability of the continuation, in nats.
    pub logprob: f64,
    pub tokens: u32,
    pub chars: u32,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScoreRecord {
    #[serde(flatten)]
    pub key: CheckpointKey,
    pub task: String,
    pub item: String,
    pub choices: Vec<Choice>,
}

impl ItemScoreRecord {
    pub fn validate(&self) -> Result<()> {
        let name = || format!("{}/{} @ {:?}", self.task, self.item, self.key);
        if self.choices.len() < 2 {
            return Err(Error::validation(
                "min-two-choices",
                format!("{} has {} choice(s)", name(), self.choices.len()),
            ));
        }
        let n_correct = self.choices.iter().filter(|c| c.correct).count();
        if n_correct != 1 {
            return Err(Error::validation(
                "exactly-one-correct",
                format!("{} has {n_correct} correct choices", name()),
            ));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if !c.logprob.is_finite() {
                return Err(Error::validation(
                    "logprob-finite",
                    format!("{} choice {i}: logprob {} is not finite", name(), c.logprob),
                ));
            }
            if c.logprob > 0.0 {
                return Err(Error::validation(
                    "logprob-nonpositive",
                    format!("{} choice {i}: logprob {} > 0", name(), c.logprob),
                ));
            }
            if c.tokens == 0 || c.chars == 0 {
                return Err(Error::validation(
                    "lengths-positive",
                    format!("{} choice {i}: tokens and chars must be >= 1", name()),
                ));
            }
        }
        Ok(())
    }

    pub fn correct_choice(&self) -> &Choice {
        self.choices
            .iter()
            .find(|c| c.correct)
            .expect("validated record has a correct choice")
    }
}

/// Parse one record per non-blank line, validating each. Input order is preserved.
pub fn parse_item_records<R: BufRead>(reader: R) -> Result<Vec<ItemScoreRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn parse_record_line(line: &str, line_no: usize) -> Result<ItemScoreRecord> {
    let rec: ItemScoreRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(Some(line_no), "record", e))?;
    rec.validate().map_err(|e| match e {
        Error::Validation { rule, detail } => Error::Validation {
            rule,
            detail: format!("line {line_no}: {detail}"),
        },
        other => other,
    })?;
    Ok(rec)
}

pub fn write_item_records<W: Write>(mut writer: W, records: &[ItemScoreRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| Error::parse(None, "record", e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
