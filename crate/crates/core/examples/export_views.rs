//! Graymap views and per-frame metrics for a short reconstruction.
//!
//! `cargo run --release --example export_views [out_dir]`

use std::path::PathBuf;

use dynrecon::harness::{export_views, generate_phantom, run_reconstruction, PhantomSpec, TrainConfig};
use dynrecon::mri::{adjoint_encode, make_vds_mask};

fn main() -> dynrecon::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dynrecon-views"));
    let spec = PhantomSpec {
        nx: 32,
        ny: 32,
        nt: 6,
        ..PhantomSpec::default()
    };
    let ph = generate_phantom(&spec)?;
    let mask = make_vds_mask(spec.nx, spec.ny, spec.nt, 6.0, 4, 0)?;
    let cfg = TrainConfig {
        iterations: 200,
        metric_every: 200,
        k: 12,
        search_window: 4,
        ..TrainConfig::default()
    };
    let run = run_reconstruction(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth))?;
    let zero_filled = adjoint_encode(&ph.kspace.masked(&mask)?, &ph.sensitivities, &mask)?;

    for (name, img) in [("truth", &ph.truth), ("zero-filled", &zero_filled), ("recon", &run.image)] {
        let dir = out.join(name);
        let v = export_views(img, Some(&ph.truth), &dir)?;
        println!("{name}: {} frames, profiles and error maps in {}", v.frames.len(), dir.display());
        if let Some(csv) = v.metrics_csv {
            let all = std::fs::read_to_string(csv)?;
            println!("  {}", all.lines().last().unwrap_or_default());
        }
    }
    Ok(())
}
