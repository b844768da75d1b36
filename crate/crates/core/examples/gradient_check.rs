//! Central-difference check of every loss variant on an 8x8x3 toy problem.
//!
//! `cargo run --example gradient_check [samples_per_param]`

use dynrecon::harness::diagnostics::{gradient_suite, GradientSuiteConfig};

fn main() -> dynrecon::Result<()> {
    let mut cfg = GradientSuiteConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.samples_per_param = n.parse().expect("samples per parameter must be an integer");
    }
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for c in gradient_suite(&cfg)? {
        println!(
            "{:<8} lambda_s {:<7} lambda_l {:<7} max rel error {:.2e} over {} tensors",
            c.variant.to_string(),
            c.weights.lambda_s,
            c.weights.lambda_l,
            c.report.max_rel_error,
            c.report.per_param.len()
        );
        worst = worst.max(c.report.max_rel_error);
    }
    println!("worst {worst:.2e} in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
