//! Sequential runner over a list of named configurations sharing one dataset.

use std::fmt::Write as _;
use std::path::Path;

use super::config::TrainConfig;
use super::train::{RunInputs, RunReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub name: String,
    pub config: TrainConfig,
}

impl GridPoint {
    /// Named after the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("no usable file name in {}", path.display())))?
            .to_string();
        Ok(Self {
            name,
            config: TrainConfig::load(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub name: String,
    pub report: RunReport,
}

impl GridResult {
    /// Final PSNR when a reference exists, otherwise minus the final
    /// data-consistency value, so larger is better either way.
    pub fn score(&self) -> f64 {
        match self.report.final_after_replacement {
            Some(m) => m.psnr,
            None => -self.report.dc_after_replacement,
        }
    }
}

/// Runs every point in order. Configuration errors surface before any
/// training starts.
pub fn run_grid(points: &[GridPoint], inputs: &RunInputs) -> Result<Vec<GridResult>> {
    for p in points {
        p.config
            .validate()
            .map_err(|e| Error::Config(format!("grid point {}: {e}", p.name)))?;
    }
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        log::info!("grid point {}/{}: {}", i + 1, points.len(), p.name);
        let run = inputs.run(&p.config)?;
        out.push(GridResult {
            name: p.name.clone(),
            report: run.report,
        });
    }
    Ok(out)
}

/// Markdown table, best score first; ties keep run order.
pub fn ranking_table(results: &[GridResult]) -> String {
    let mut order: Vec<&GridResult> = results.iter().collect();
    order.sort_by(|a, b| b.score().total_cmp(&a.score()));
    let mut out = String::from("| rank | name | PSNR (dB) | SSIM | final dc |\n|---|---|---|---|---|\n");
    for (i, r) in order.iter().enumerate() {
        let (psnr, ssim) = match r.report.final_after_replacement {
            Some(m) => (format!("{:.2}", m.psnr), format!("{:.4}", m.ssim)),
            None => ("n/a".into(), "n/a".into()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {psnr} | {ssim} | {:.4e} |",
            i + 1,
            r.name,
            r.report.dc_after_replacement
        );
    }
    out
}
