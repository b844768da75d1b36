//! Finite-difference gradient checks of the full training objective on a
//! small synthetic problem.

use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom, PhantomSpec};
use crate::autodiff::{check_gradients, GradCheckReport};
use crate::error::Result;
use crate::losses::{total_loss, DcTerm, LossVariant, LossWeights};
use crate::mri::{adjoint_encode, make_vds_mask};
use crate::patching::{block_match, pad_replicate};
use crate::tenf::{ImageModel, TenfConfig, TenfModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuiteConfig {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub coils: usize,
    pub patch_size: usize,
    pub k: usize,
    pub ranks: [usize; 5],
    pub hidden: usize,
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    pub samples_per_param: usize,
    /// Regularizer weights checked in addition to the defaults, so that the
    /// regularizer gradients are not swamped by the data term.
    pub boosted_lambda: f64,
    /// Output-layer weights and biases are multiplied by this before the
    /// check, moving the evaluation point to where the image has roughly the
    /// scale of the data.
    pub output_gain: f64,
    pub seed: u64,
}

impl Default for GradientSuiteConfig {
    fn default() -> Self {
        Self {
            nx: 8,
            ny: 8,
            nt: 3,
            coils: 2,
            patch_size: 2,
            k: 2,
            ranks: [2, 2, 2, 2, 2],
            hidden: 126,
            step: 1e-6,
            floor: 1e-4,
            samples_per_param: 16,
            boosted_lambda: 0.1,
            output_gain: 10.0,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantCheck {
    pub variant: LossVariant,
    pub weights: LossWeights,
    pub report: GradCheckReport,
}

/// Checks every loss variant against central differences for the cores and
/// all five factor networks. Each variant runs with the default weights and
/// with both weights set to `boosted_lambda`.
///
/// At the initial point the image is about 1e-6 of the data, the loss is
/// just `||y||^2` and every gradient sits near the cancellation noise of a
/// difference quotient with step 1e-6. The check therefore starts from the
/// unscaled output-layer bounds and applies `output_gain`.
pub fn gradient_suite(cfg: &GradientSuiteConfig) -> Result<Vec<VariantCheck>> {
    let spec = PhantomSpec {
        nx: cfg.nx,
        ny: cfg.ny,
        nt: cfg.nt,
        coils: cfg.coils,
        seed: cfg.seed,
        ..PhantomSpec::default()
    };
    let ph = generate_phantom(&spec)?;
    let mask = make_vds_mask(cfg.nx, cfg.ny, cfg.nt, 2.0, 2, cfg.seed)?;
    let y = ph.kspace.masked(&mask)?;
    let x0 = adjoint_encode(&y, &ph.sensitivities, &mask)?;
    let (xp, pad) = pad_replicate(&x0, cfg.patch_size)?;
    let map = block_match(&xp, &pad, cfg.patch_size, cfg.k, 1)?;
    let tenf = TenfConfig {
        ranks: cfg.ranks,
        hidden: cfg.hidden,
        strict_paper_init: true,
        ..TenfConfig::default()
    };
    let model = TenfModel::init(&map, &tenf, cfg.seed)?;
    let mut point = model.params().clone();
    for i in 0..point.len() {
        let name = &point.get(i).name;
        if name.ends_with(".w2") || name.ends_with(".b2") {
            let v = point.value(i).scaled(cfg.output_gain);
            *point.value_mut(i) = v;
        }
    }
    let dc = DcTerm::new(&y, &ph.sensitivities, &mask)?;

    let mut out = Vec::new();
    for variant in LossVariant::ALL {
        let defaults = LossWeights {
            variant,
            ..LossWeights::default()
        };
        let boosted = LossWeights {
            lambda_s: cfg.boosted_lambda,
            lambda_l: cfg.boosted_lambda,
            ..defaults
        };
        for weights in [defaults, boosted] {
            let report = check_gradients(
                &point,
                |g, leaves| {
                    let img = model.build_image(g, leaves)?;
                    Ok(total_loss(g, img, &dc, &weights)?.total)
                },
                cfg.step,
                cfg.samples_per_param,
                cfg.floor,
                cfg.seed,
            )?;
            out.push(VariantCheck {
                variant,
                weights,
                report,
            });
        }
    }
    Ok(out)
}
