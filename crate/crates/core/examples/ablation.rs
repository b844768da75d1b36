//! Loss and model ablation on a reduced phantom.
//!
//! `cargo run --release --example ablation [iterations] [out_dir]`
//! The full-size comparison is `dynrecon ablate <config>`.

use std::path::PathBuf;

use dynrecon::harness::{generate_phantom, run_ablation_suite, PhantomSpec, TrainConfig};
use dynrecon::mri::make_mask;

fn main() -> dynrecon::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().map_or(400, |a| a.parse().expect("iterations must be an integer"));
    let spec = PhantomSpec {
        nx: 32,
        ny: 32,
        nt: 6,
        ..PhantomSpec::default()
    };
    let cfg = TrainConfig {
        iterations,
        metric_every: iterations.max(1),
        k: 12,
        search_window: 4,
        output_dir: args.get(1).map(PathBuf::from),
        ..TrainConfig::default()
    };
    let ph = generate_phantom(&spec)?;
    let mask = make_mask(cfg.mask_kind, spec.nx, spec.ny, spec.nt, cfg.acceleration, cfg.center_lines, cfg.mask_seed)?;
    let suite = run_ablation_suite(&cfg, &ph.kspace, &ph.sensitivities, &mask, Some(&ph.truth))?;
    print!("{}", suite.table_markdown());
    Ok(())
}
