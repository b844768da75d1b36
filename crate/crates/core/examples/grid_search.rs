//! Sequential grid over the two regularization weights on a reduced phantom.
//!
//! `cargo run --release --example grid_search [iterations] [configs...]`
//! Config files, when given, replace the built-in grid; their data paths are
//! ignored and the phantom is used instead.

use dynrecon::harness::{generate_phantom, ranking_table, run_grid, GridPoint, PhantomSpec, RunInputs, TrainConfig};
use dynrecon::mri::make_vds_mask;

fn main() -> dynrecon::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations: u64 = args.first().map_or(300, |a| a.parse().expect("iterations must be an integer"));
    let spec = PhantomSpec {
        nx: 32,
        ny: 32,
        nt: 6,
        ..PhantomSpec::default()
    };
    let ph = generate_phantom(&spec)?;
    let inputs = RunInputs {
        mask: make_vds_mask(spec.nx, spec.ny, spec.nt, 8.0, 4, 0)?,
        kspace: ph.kspace,
        sensitivities: ph.sensitivities,
        reference: Some(ph.truth),
    };

    let base = TrainConfig {
        iterations,
        metric_every: iterations.max(1),
        k: 12,
        search_window: 4,
        ..TrainConfig::default()
    };
    let mut points = Vec::new();
    if args.len() > 1 {
        for path in &args[1..] {
            let mut p = GridPoint::load(path.as_ref())?;
            p.config.iterations = iterations;
            points.push(p);
        }
    } else {
        for lambda_s in [0.0, 1e-3, 1e-2] {
            for lambda_l in [0.0, 5e-6, 5e-5] {
                points.push(GridPoint {
                    name: format!("tv {lambda_s:e}, lr {lambda_l:e}"),
                    config: TrainConfig {
                        lambda_s,
                        lambda_l,
                        ..base.clone()
                    },
                });
            }
        }
    }
    let results = run_grid(&points, &inputs)?;
    print!("{}", ranking_table(&results));
    Ok(())
}
