//! Sampling masks of every kind at several accelerations.
//!
//! `cargo run --example masks [out_dir]` prints achieved accelerations and,
//! given a directory, writes each mask as a graymap with frames side by side.

use std::path::PathBuf;

use dynrecon::harness::io::write_pgm16;
use dynrecon::mri::{make_mask, MaskKind};

fn main() -> dynrecon::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let (nx, ny, nt) = (64, 64, 8);
    println!("{:<16} {:>4} {:>9} {:>7} {:>8}", "kind", "R", "achieved", "error", "center");
    for kind in [MaskKind::VariableDensity, MaskKind::PseudoRadial, MaskKind::PseudoSpiral] {
        for r in [8.0, 12.0, 16.0, 21.0] {
            let m = make_mask(kind, nx, ny, nt, r, 4, 0)?;
            let achieved = m.achieved_acceleration();
            let center = (0..nt).all(|t| m.is_sampled(nx / 2, ny / 2, t));
            println!(
                "{:<16} {:>4} {:>9.2} {:>6.1}% {:>8}",
                kind.to_string(),
                r,
                achieved,
                100.0 * (achieved - r).abs() / r,
                center
            );
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
                let mut px = Vec::with_capacity(nx * ny * nt);
                for y in 0..ny {
                    for t in 0..nt {
                        px.extend((0..nx).map(|x| if m.is_sampled(x, y, t) { 1.0 } else { 0.0 }));
                    }
                }
                write_pgm16(&dir.join(format!("{kind}-r{r}.pgm")), nx * nt, ny, &px)?;
            }
        }
    }
    Ok(())
}
