//! End-to-end reconstruction: zero-filled init, block matching, model fitting,
//! k-space replacement and reporting.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{hex_digest, ModelKind, TrainConfig};
use super::io::{encode_tensor, load_image, load_kspace, load_mask, load_sensitivities, save_tensor};
use crate::autodiff::{adam_step, AdamState, Graph};
use crate::error::{Error, Result};
use crate::losses::{dc_value, kspace_replacement, total_loss, DcTerm, LossValues, LossVariant};
use crate::mri::{adjoint_encode, make_mask, CoilSensitivities, ComplexImageSeries, Metrics, MultiCoilKSpace, SamplingMask};
use crate::patching::{block_match, min_candidate_count, pad_replicate, PatchIndexMap};
use crate::tenf::{global_default_ranks, save_checkpoint, GlobalModel, ImageModel, TenfModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: LossValues,
    /// Present when a reference image was supplied.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub mask_hash: String,
    pub x_init_hash: String,
    pub model: ModelKind,
    pub variant: LossVariant,
    /// Weights after the variant pattern has been applied.
    pub lambda_s: f64,
    pub lambda_l: f64,
    pub iterations: u64,
    pub ranks: Vec<usize>,
    pub k: Option<usize>,
    pub groups: Option<usize>,
    pub parameter_count: usize,
    /// Every automatic adjustment of the requested settings.
    pub clips: Vec<String>,
    pub zero_filled: Option<Metrics>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub loss_history: Vec<LossValues>,
    pub final_before_replacement: Option<Metrics>,
    pub final_after_replacement: Option<Metrics>,
    pub dc_before_replacement: f64,
    pub dc_after_replacement: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Wall-clock figures, kept apart from the report so reports stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub setup_secs: f64,
    pub train_secs: f64,
    pub per_iteration_ms: f64,
    pub finish_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Final reconstruction after k-space replacement.
    pub image: ComplexImageSeries,
    pub before_replacement: ComplexImageSeries,
    pub x_init: ComplexImageSeries,
    pub patch_map: Option<PatchIndexMap>,
    pub report: RunReport,
    pub timing: Timing,
}

/// Arrays named by a config: k-space, coil maps, mask and optional reference.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub kspace: MultiCoilKSpace,
    pub sensitivities: CoilSensitivities,
    pub mask: SamplingMask,
    pub reference: Option<ComplexImageSeries>,
}

impl RunInputs {
    /// Loads the files listed in `cfg`. Without a mask file, one is generated
    /// from the mask settings and the k-space extents.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone().ok_or_else(|| Error::Config(format!("`{key}` is required")))
        };
        let kspace = load_kspace(&need(&cfg.kspace, "kspace")?)?;
        let sensitivities = load_sensitivities(&need(&cfg.sensitivities, "sensitivities")?)?;
        let (nx, ny, nt, _) = kspace.dims();
        let mask = match &cfg.mask {
            Some(p) => load_mask(p, cfg.mask_kind)?,
            None => make_mask(cfg.mask_kind, nx, ny, nt, cfg.acceleration, cfg.center_lines, cfg.mask_seed)?,
        };
        let reference = cfg.reference.as_deref().map(load_image).transpose()?;
        Ok(Self {
            kspace,
            sensitivities,
            mask,
            reference,
        })
    }

    pub fn run(&self, cfg: &TrainConfig) -> Result<RunOutput> {
        run_reconstruction(cfg, &self.kspace, &self.sensitivities, &self.mask, self.reference.as_ref())
    }
}

fn tensor_hash(t: &crate::tensor::DenseTensor) -> String {
    hex_digest(&encode_tensor(t))
}

fn build_patch_model(
    cfg: &TrainConfig,
    x_init: &ComplexImageSeries,
    clips: &mut Vec<String>,
) -> Result<TenfModel> {
    let p = cfg.patch_size;
    let (xp, pad) = pad_replicate(x_init, p)?;
    let (px, py) = pad.padded();
    let available = min_candidate_count(px, py, p, cfg.search_window);
    let mut k = cfg.k;
    if k > available {
        clips.push(format!("k {k} -> {available} (candidates within the search window)"));
        k = available;
    }
    let mut tenf = cfg.tenf();
    let nt = x_init.dims().2;
    if tenf.ranks[2] > nt {
        clips.push(format!("r3 {} -> {nt} (frame count)", tenf.ranks[2]));
        tenf.ranks[2] = nt;
    }
    if tenf.ranks[4] > k {
        clips.push(format!("r5 {} -> {k} (similar patches)", tenf.ranks[4]));
        tenf.ranks[4] = k;
    }
    for c in clips.iter() {
        log::info!("clipped {c}");
    }
    let map = block_match(&xp, &pad, p, k, cfg.search_window)?;
    TenfModel::init(&map, &tenf, cfg.seed).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })
}

fn build_global_model(cfg: &TrainConfig, dims: (usize, usize, usize)) -> Result<GlobalModel> {
    let ranks = cfg
        .global_ranks
        .unwrap_or_else(|| global_default_ranks(dims.0, dims.1, dims.2));
    GlobalModel::init(dims, ranks, &cfg.tenf(), cfg.seed).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })
}

fn check_inputs(cfg: &TrainConfig, y: &MultiCoilKSpace, s: &CoilSensitivities, m: &SamplingMask) -> Result<()> {
    let (nx, ny, nt, ns) = y.dims();
    for (name, want, got) in [("nx", cfg.nx, nx), ("ny", cfg.ny, ny), ("nt", cfg.nt, nt)] {
        if want.is_some_and(|w| w != got) {
            return Err(Error::Config(format!("{name} = {} but the data has {got}", want.unwrap())));
        }
    }
    if s.dims() != (nx, ny, ns) || m.dims() != (nx, ny, nt) {
        return Err(Error::invalid(format!(
            "k-space {:?}, sensitivities {:?} and mask {:?} disagree",
            y.dims(),
            s.dims(),
            m.dims()
        )));
    }
    Ok(())
}

fn snapshot(iteration: u64, lr: f64, loss: &LossValues, model: &dyn ImageModel) -> String {
    let params: Vec<String> = model
        .params()
        .iter()
        .map(|p| {
            let max = p.value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            format!("{} max|.|={max:e} finite={}", p.name, p.value.is_finite())
        })
        .collect();
    format!(
        "non-finite loss at iteration {iteration} (lr {lr:e}): total {:e}, dc {:e}, tv {:e}, lr-term {:e}; {}",
        loss.total,
        loss.dc,
        loss.tv,
        loss.lr,
        params.join(", ")
    )
}

/// Fits the configured model to undersampled data `y` and returns the
/// reconstruction plus its report. `truth` enables metric tracking.
pub fn run_reconstruction(
    cfg: &TrainConfig,
    y: &MultiCoilKSpace,
    s: &CoilSensitivities,
    m: &SamplingMask,
    truth: Option<&ComplexImageSeries>,
) -> Result<RunOutput> {
    let t0 = Instant::now();
    cfg.validate()?;
    check_inputs(cfg, y, s, m)?;
    let (nx, ny, nt, _) = y.dims();
    if let Some(t) = truth {
        if t.dims() != (nx, ny, nt) {
            return Err(Error::invalid(format!("reference {:?} does not match the data", t.dims())));
        }
    }
    let y = y.masked(m)?;
    let x_init = adjoint_encode(&y, s, m)?;
    let metrics = |x: &ComplexImageSeries| truth.map(|t| Metrics::compute(x, t)).transpose();

    let mut clips = Vec::new();
    let (mut model, patch_map, ranks, k, groups): (Box<dyn ImageModel>, _, _, _, _) = match cfg.model {
        ModelKind::Patch => {
            let m = build_patch_model(cfg, &x_init, &mut clips)?;
            let map = m.map().clone();
            let ranks = m.config().ranks.to_vec();
            let (k, l) = (map.k, map.l_count());
            (Box::new(m), Some(map), ranks, Some(k), Some(l))
        }
        ModelKind::Global => {
            let m = build_global_model(cfg, (nx, ny, nt))?;
            let ranks = m.ranks().to_vec();
            (Box::new(m), None, ranks, None, None)
        }
    };

    let dc = DcTerm::new(&y, s, m)?;
    let weights = cfg.loss_weights();
    let (lambda_s, lambda_l) = weights.effective();
    let schedule = cfg.schedule();
    let decay = cfg.decay();
    let mut adam = AdamState::new(model.params());

    let mut report = RunReport {
        config_hash: cfg.hash(),
        mask_hash: tensor_hash(m.pattern()),
        x_init_hash: tensor_hash(x_init.tensor()),
        model: cfg.model,
        variant: cfg.loss_variant,
        lambda_s,
        lambda_l,
        iterations: cfg.iterations,
        ranks,
        k,
        groups,
        parameter_count: model.params().scalar_count(),
        clips,
        zero_filled: metrics(&x_init)?,
        checkpoints: Vec::new(),
        loss_history: Vec::with_capacity(cfg.iterations as usize),
        final_before_replacement: None,
        final_after_replacement: None,
        dc_before_replacement: 0.0,
        dc_after_replacement: 0.0,
    };
    let setup_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    for it in 0..cfg.iterations {
        let lr = schedule.lr_at(it);
        let mut g = Graph::new();
        let leaves = model.params().leaves(&mut g);
        let image = model.build_image(&mut g, &leaves)?;
        let nodes = total_loss(&mut g, image, &dc, &weights)?;
        let loss = nodes.values(&g);
        if !loss.total.is_finite() {
            return Err(Error::Numerical(snapshot(it, lr, &loss, model.as_ref())));
        }
        report.loss_history.push(loss);
        if it % cfg.metric_every == 0 {
            let current = ComplexImageSeries::from_tensor(g.value(image).clone())?;
            report.checkpoints.push(CheckpointRecord {
                iteration: it,
                lr,
                loss,
                metrics: metrics(&current)?,
            });
            log::debug!("iteration {it}: loss {:.6e} (dc {:.6e})", loss.total, loss.dc);
        }
        let mut grads = g.backward(nodes.total)?;
        let grads: Vec<_> = leaves
            .iter()
            .map(|&l| grads.take(l).ok_or_else(|| Error::Internal("missing parameter gradient".into())))
            .collect::<Result<_>>()?;
        adam_step(model.params_mut(), &grads, &mut adam, lr, &decay)?;
    }
    let train_secs = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    // with no training the model is never consulted
    let before = if cfg.iterations == 0 { x_init.clone() } else { model.reconstruct()? };
    if !before.tensor().is_finite() {
        return Err(Error::Numerical("final reconstruction is not finite".into()));
    }
    let image = kspace_replacement(&before, &y, s, m)?;
    report.dc_before_replacement = dc_value(&before, &dc)?;
    report.dc_after_replacement = dc_value(&image, &dc)?;
    report.final_before_replacement = metrics(&before)?;
    report.final_after_replacement = metrics(&image)?;
    {
        let mut g = Graph::new();
        let node = g.constant(before.tensor().clone());
        let loss = total_loss(&mut g, node, &dc, &weights)?.values(&g);
        report.checkpoints.push(CheckpointRecord {
            iteration: cfg.iterations,
            lr: schedule.lr_at(cfg.iterations),
            loss,
            metrics: report.final_before_replacement,
        });
    }

    let out = RunOutput {
        image,
        before_replacement: before,
        x_init,
        patch_map,
        report,
        timing: Timing {
            setup_secs,
            train_secs,
            per_iteration_ms: if cfg.iterations > 0 {
                1e3 * train_secs / cfg.iterations as f64
            } else {
                0.0
            },
            finish_secs: t2.elapsed().as_secs_f64(),
        },
    };
    if let Some(dir) = &cfg.output_dir {
        write_run(dir, cfg, &out, model.params(), cfg.omega)?;
    }
    Ok(out)
}

/// Writes every artifact of a run into `dir` (created if missing).
pub fn write_run(
    dir: &Path,
    cfg: &TrainConfig,
    out: &RunOutput,
    params: &crate::autodiff::ParamStore,
    omega: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    fs::write(dir.join("report.json"), out.report.to_json())?;
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&out.timing).expect("timing serializes"),
    )?;
    if let Some(map) = &out.patch_map {
        fs::write(dir.join("patch_map.json"), serde_json::to_string(map).expect("map serializes"))?;
    }
    save_tensor(out.x_init.tensor(), &dir.join("x_init.bin"))?;
    save_tensor(out.before_replacement.tensor(), &dir.join("recon_raw.bin"))?;
    save_tensor(out.image.tensor(), &dir.join("recon.bin"))?;
    save_checkpoint(params, omega, dir, "model")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::phantom::{generate_phantom, PhantomSpec};
    use crate::mri::make_vds_mask;

    fn tiny() -> (super::super::phantom::Phantom, SamplingMask, TrainConfig) {
        let spec = PhantomSpec {
            nx: 12,
            ny: 10,
            nt: 4,
            coils: 2,
            ..PhantomSpec::default()
        };
        let ph = generate_phantom(&spec).unwrap();
        let mask = make_vds_mask(12, 10, 4, 3.0, 2, 5).unwrap();
        let cfg = TrainConfig {
            iterations: 6,
            metric_every: 4,
            k: 4,
            search_window: 2,
            hidden: 16,
            ..TrainConfig::default()
        };
        (ph, mask, cfg)
    }

    #[test]
    fn zero_iterations_replace_the_initial_image() {
        let (ph, mask, cfg) = tiny();
        let cfg = TrainConfig { iterations: 0, ..cfg };
        let out = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
        let y = ph.kspace.masked(&mask).unwrap();
        let expect = kspace_replacement(&out.x_init, &y, &ph.sensitivities, &mask).unwrap();
        assert_eq!(out.image, expect);
        assert_eq!(out.before_replacement, out.x_init);
        assert_eq!(out.report.checkpoints.len(), 1);
        assert!(out.report.loss_history.is_empty());
    }

    #[test]
    fn report_contents_and_clipping() {
        let (ph, mask, cfg) = tiny();
        let out = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
        let r = &out.report;
        // r3 = 16 exceeds 4 frames
        assert_eq!(r.ranks, vec![2, 2, 4, 2, 4]);
        assert_eq!(r.clips.len(), 2, "{:?}", r.clips);
        assert_eq!(r.loss_history.len(), 6);
        let iters: Vec<u64> = r.checkpoints.iter().map(|c| c.iteration).collect();
        assert_eq!(iters, vec![0, 4, 6]);
        assert!(r.checkpoints.iter().all(|c| c.metrics.is_some()));
        assert!(r.dc_after_replacement <= r.dc_before_replacement);
        assert_eq!(r.groups, Some(30));
        assert!(r.zero_filled.is_some());
    }

    #[test]
    fn inconsistent_inputs() {
        let (ph, mask, cfg) = tiny();
        let bad = TrainConfig { nx: Some(13), ..cfg.clone() };
        assert!(matches!(
            run_reconstruction(&bad, &ph.kspace, &ph.sensitivities, &mask, None),
            Err(Error::Config(_))
        ));
        let other = make_vds_mask(12, 10, 3, 3.0, 2, 5).unwrap();
        assert!(run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &other, None).is_err());
        let too_big = TrainConfig { ranks: [3, 2, 2, 2, 2], ..cfg };
        assert!(matches!(
            run_reconstruction(&too_big, &ph.kspace, &ph.sensitivities, &mask, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn repeated_runs_are_identical_and_written() {
        let (ph, mask, cfg) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            output_dir: Some(dir.path().to_path_buf()),
            ..cfg
        };
        let a = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
        let first = fs::read(dir.path().join("report.json")).unwrap();
        let b = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.image, b.image);
        assert_eq!(first, fs::read(dir.path().join("report.json")).unwrap());
        for f in ["config.toml", "timing.json", "patch_map.json", "x_init.bin", "recon.bin", "recon_raw.bin", "model.json", "model.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = super::super::io::load_image(&dir.path().join("recon.bin")).unwrap();
        assert_eq!(back, a.image);
    }

    #[test]
    fn global_model_runs() {
        let (ph, mask, cfg) = tiny();
        let cfg = TrainConfig {
            model: ModelKind::Global,
            ..cfg
        };
        let out = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth)).unwrap();
        assert_eq!(out.report.ranks, vec![8, 6, 4, 2]);
        assert!(out.patch_map.is_none() && out.report.k.is_none());
    }
}
