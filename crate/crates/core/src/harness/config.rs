//! Flat key-value run configuration (TOML syntax, no tables).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{DecayMode, DecayTarget, LrSchedule, WeightDecay};
use crate::error::{Error, Result};
use crate::losses::{LossVariant, LossWeights};
use crate::mri::MaskKind;
use crate::tenf::TenfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Patch-grouped tensor functions.
    Patch,
    /// One tensor function over the whole image.
    Global,
}

/// Every training hyperparameter plus data and output locations.
///
/// Keys in a config file equal the field names. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Image extents; checked against the data when present.
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nt: Option<usize>,

    pub acceleration: f64,
    pub mask_kind: MaskKind,
    pub mask_seed: u64,
    pub center_lines: usize,

    pub model: ModelKind,
    pub ranks: [usize; 5],
    /// Global-variant ranks; derived from the image extents when absent.
    pub global_ranks: Option<[usize; 4]>,
    pub patch_size: usize,
    pub k: usize,
    pub search_window: usize,
    pub hidden: usize,
    pub omega: f64,
    pub core_std: f64,
    pub strict_paper_init: bool,

    pub base_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub weight_decay: f64,
    pub decay_target: DecayTarget,
    pub decay_mode: DecayMode,

    pub lambda_s: f64,
    pub lambda_l: f64,
    pub loss_variant: LossVariant,
    pub magnitude_tv: bool,

    pub iterations: u64,
    pub metric_every: u64,
    pub seed: u64,

    /// Input arrays in the container format; a missing mask is generated.
    pub kspace: Option<PathBuf>,
    pub sensitivities: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tenf = TenfConfig::default();
        let sched = LrSchedule::default();
        let loss = LossWeights::default();
        Self {
            nx: None,
            ny: None,
            nt: None,
            acceleration: 8.0,
            mask_kind: MaskKind::VariableDensity,
            mask_seed: 0,
            center_lines: 4,
            model: ModelKind::Patch,
            ranks: tenf.ranks,
            global_ranks: None,
            patch_size: 2,
            k: 20,
            search_window: 10,
            hidden: tenf.hidden,
            omega: tenf.omega,
            core_std: tenf.core_std,
            strict_paper_init: tenf.strict_paper_init,
            base_lr: sched.base_lr,
            lr_decay: sched.decay_factor,
            lr_decay_every: sched.decay_every,
            weight_decay: 0.38,
            decay_target: DecayTarget::Networks,
            decay_mode: DecayMode::Decoupled,
            lambda_s: loss.lambda_s,
            lambda_l: loss.lambda_l,
            loss_variant: loss.variant,
            magnitude_tv: loss.magnitude_tv,
            iterations: 12000,
            metric_every: 250,
            seed: 0,
            kspace: None,
            sensitivities: None,
            mask: None,
            reference: None,
            output_dir: None,
        }
    }
}

/// Iteration budget used for desk-scale phantoms.
pub const DESK_ITERATIONS: u64 = 3000;

impl TrainConfig {
    /// Defaults with the desk-scale iteration budget.
    pub fn desk() -> Self {
        Self {
            iterations: DESK_ITERATIONS,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative data paths resolve against the config file
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.kspace, &mut cfg.sensitivities, &mut cfg.mask, &mut cfg.reference, &mut cfg.output_dir]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the serialized config with paths removed.
    pub fn hash(&self) -> String {
        let stripped = Self {
            kspace: None,
            sensitivities: None,
            mask: None,
            reference: None,
            output_dir: None,
            ..self.clone()
        };
        hex_digest(stripped.to_toml_string().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.acceleration >= 1.0) || !self.acceleration.is_finite() {
            return bad(format!("acceleration must be >= 1, got {}", self.acceleration));
        }
        if self.patch_size == 0 || self.k == 0 || self.hidden == 0 {
            return bad("patch_size, k and hidden must be >= 1".into());
        }
        if self.ranks.contains(&0) || self.global_ranks.is_some_and(|r| r.contains(&0)) {
            return bad("ranks must be >= 1".into());
        }
        if !(self.omega > 0.0) || !(self.core_std >= 0.0) {
            return bad("omega must be > 0 and core_std >= 0".into());
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("need base_lr > 0, 0 < lr_decay <= 1, lr_decay_every >= 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.metric_every == 0 {
            return bad("metric_every must be >= 1".into());
        }
        if [self.nx, self.ny, self.nt].contains(&Some(0)) {
            return bad("image extents must be >= 1".into());
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_s: self.lambda_s,
            lambda_l: self.lambda_l,
            variant: self.loss_variant,
            magnitude_tv: self.magnitude_tv,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            decay_factor: self.lr_decay,
            decay_every: self.lr_decay_every,
        }
    }

    pub fn decay(&self) -> WeightDecay {
        WeightDecay {
            coefficient: self.weight_decay,
            target: self.decay_target,
            mode: self.decay_mode,
        }
    }

    pub fn tenf(&self) -> TenfConfig {
        TenfConfig {
            ranks: self.ranks,
            hidden: self.hidden,
            omega: self.omega,
            core_std: self.core_std,
            strict_paper_init: self.strict_paper_init,
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
