//! Loss-variant by model-variant comparison on one dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelKind, TrainConfig};
use super::train::{run_reconstruction, RunReport};
use crate::error::Result;
use crate::losses::LossVariant;
use crate::mri::{CoilSensitivities, ComplexImageSeries, Metrics, MultiCoilKSpace, SamplingMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub model: ModelKind,
    pub variant: LossVariant,
    pub report: RunReport,
}

impl AblationEntry {
    fn uses_tv(&self) -> bool {
        self.report.lambda_s > 0.0
    }

    fn uses_lr(&self) -> bool {
        self.report.lambda_l > 0.0
    }

    pub fn final_metrics(&self) -> Option<Metrics> {
        self.report.final_after_replacement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSuite {
    pub acceleration: f64,
    pub zero_filled: Option<Metrics>,
    pub entries: Vec<AblationEntry>,
}

/// Run order: patch model first, then global; loss variants in
/// `full, tv-only, lr-only, dc-only` order within each.
pub const ABLATION_MODELS: [ModelKind; 2] = [ModelKind::Patch, ModelKind::Global];

impl AblationSuite {
    pub fn get(&self, model: ModelKind, variant: LossVariant) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| e.model == model && e.variant == variant)
    }

    /// Markdown table with one row per run, full patch model last.
    pub fn table_markdown(&self) -> String {
        let mark = |b: bool| if b { "yes" } else { "no" };
        let mut out = String::new();
        out.push_str("| R | TV | LR | patch-based | PSNR (dB) | SSIM | RMSE |\n");
        out.push_str("|---|----|----|-------------|-----------|------|------|\n");
        if let Some(z) = self.zero_filled {
            let _ = writeln!(
                out,
                "| {:.0}x | zero-filled | | | {:.2} | {:.4} | {:.4} |",
                self.acceleration, z.psnr, z.ssim, z.rmse
            );
        }
        for e in self.display_order() {
            let cells = match e.final_metrics() {
                Some(m) => format!("{:.2} | {:.4} | {:.4}", m.psnr, m.ssim, m.rmse),
                None => "n/a | n/a | n/a".to_string(),
            };
            let _ = writeln!(
                out,
                "| {:.0}x | {} | {} | {} | {cells} |",
                self.acceleration,
                mark(e.uses_tv()),
                mark(e.uses_lr()),
                mark(e.model == ModelKind::Patch)
            );
        }
        out
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("acceleration,model,variant,lambda_s,lambda_l,psnr,ssim,rmse\n");
        for e in &self.entries {
            let m = e.final_metrics();
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let model = match e.model {
                ModelKind::Patch => "patch",
                ModelKind::Global => "global",
            };
            let _ = writeln!(
                out,
                "{},{model},{},{:e},{:e},{},{},{}",
                self.acceleration,
                e.variant,
                e.report.lambda_s,
                e.report.lambda_l,
                f(m.map(|m| m.psnr)),
                f(m.map(|m| m.ssim)),
                f(m.map(|m| m.rmse))
            );
        }
        out
    }

    /// Ablated patch variants, then the global full run, then the full patch run.
    fn display_order(&self) -> Vec<&AblationEntry> {
        let mut rows: Vec<&AblationEntry> = Vec::new();
        for v in [LossVariant::LrOnly, LossVariant::TvOnly, LossVariant::DcOnly] {
            rows.extend(self.get(ModelKind::Patch, v));
        }
        for v in [LossVariant::LrOnly, LossVariant::TvOnly, LossVariant::DcOnly, LossVariant::Full] {
            rows.extend(self.get(ModelKind::Global, v));
        }
        rows.extend(self.get(ModelKind::Patch, LossVariant::Full));
        rows
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.md"), self.table_markdown())?;
        fs::write(dir.join("ablation.csv"), self.table_csv())?;
        fs::write(
            dir.join("ablation.json"),
            serde_json::to_string_pretty(self).expect("suite serializes"),
        )?;
        Ok(())
    }
}

/// Runs every loss variant with both models on identical data and seed.
/// With an output directory, each run writes into `<dir>/<model>-<variant>`
/// and the tables land in `<dir>`.
pub fn run_ablation_suite(
    cfg: &TrainConfig,
    y: &MultiCoilKSpace,
    s: &CoilSensitivities,
    m: &SamplingMask,
    truth: Option<&ComplexImageSeries>,
) -> Result<AblationSuite> {
    cfg.validate()?;
    let mut entries = Vec::with_capacity(8);
    let mut zero_filled = None;
    for model in ABLATION_MODELS {
        for variant in LossVariant::ALL {
            let name = format!("{}-{variant}", if model == ModelKind::Patch { "patch" } else { "global" });
            log::info!("ablation run {name}");
            let run_cfg = TrainConfig {
                model,
                loss_variant: variant,
                output_dir: cfg.output_dir.as_ref().map(|d| d.join(&name)),
                ..cfg.clone()
            };
            let out = run_reconstruction(&run_cfg, y, s, m, truth)?;
            zero_filled = zero_filled.or(out.report.zero_filled);
            entries.push(AblationEntry {
                model,
                variant,
                report: out.report,
            });
        }
    }
    let suite = AblationSuite {
        acceleration: m.nominal_r(),
        zero_filled,
        entries,
    };
    if let Some(dir) = &cfg.output_dir {
        suite.write(dir)?;
    }
    Ok(suite)
}
