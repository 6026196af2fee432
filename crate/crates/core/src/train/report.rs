//! Per-epoch training report, written as CSV with a fixed header.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

pub const REPORT_HEADER: &str =
    "epoch,mle_loss,critic_loss,actor_loss,mean_reward,mean_entropy,valid_bleu";

/// One report row. Fields that do not apply to the current stage or mode
/// stay None and render as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub mle_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub valid_bleu: Option<f64>,
}

impl EpochRow {
    fn render(&self) -> String {
        let cell = |v: &Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            cell(&self.mle_loss),
            cell(&self.critic_loss),
            cell(&self.actor_loss),
            cell(&self.mean_reward),
            cell(&self.mean_entropy),
            cell(&self.valid_bleu),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub rows: Vec<EpochRow>,
}

impl TrainingReport {
    pub fn push(&mut self, row: EpochRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.render());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn best_valid_bleu(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.valid_bleu)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}
