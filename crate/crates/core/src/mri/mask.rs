//! Undersampling pattern generators.
//!
//! All generators are deterministic in `(shape, r, seed)`. The k-space center
//! sits at `(nx / 2, ny / 2)`, matching the centered FFT.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    #[serde(alias = "vds")]
    VariableDensity,
    #[serde(alias = "radial")]
    PseudoRadial,
    #[serde(alias = "spiral")]
    PseudoSpiral,
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskKind::VariableDensity => "variable-density",
            MaskKind::PseudoRadial => "pseudo-radial",
            MaskKind::PseudoSpiral => "pseudo-spiral",
        })
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variable-density" | "vds" => Ok(MaskKind::VariableDensity),
            "pseudo-radial" | "radial" => Ok(MaskKind::PseudoRadial),
            "pseudo-spiral" | "spiral" => Ok(MaskKind::PseudoSpiral),
            other => Err(Error::invalid(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Binary `(nx, ny, nt)` pattern (entries 0.0 / 1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pattern: DenseTensor,
    nominal_r: f64,
    kind: MaskKind,
}

impl SamplingMask {
    pub fn from_pattern(pattern: DenseTensor, nominal_r: f64, kind: MaskKind) -> Result<Self> {
        if pattern.rank() != 3 {
            return Err(Error::invalid(format!(
                "mask must be (nx, ny, nt), got {:?}",
                pattern.shape()
            )));
        }
        if pattern.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(Self {
            pattern,
            nominal_r,
            kind,
        })
    }

    /// Every location sampled.
    pub fn full(nx: usize, ny: usize, nt: usize) -> Self {
        Self {
            pattern: DenseTensor::filled(&[nx, ny, nt], 1.0).expect("valid extents"),
            nominal_r: 1.0,
            kind: MaskKind::VariableDensity,
        }
    }

    pub fn pattern(&self) -> &DenseTensor {
        &self.pattern
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.pattern.shape();
        (s[0], s[1], s[2])
    }

    pub fn nominal_r(&self) -> f64 {
        self.nominal_r
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn is_sampled(&self, x: usize, y: usize, t: usize) -> bool {
        self.pattern.get(&[x, y, t]) != 0.0
    }

    pub fn sampled_count(&self) -> usize {
        self.pattern.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn frame_count(&self, t: usize) -> usize {
        let (nx, ny, _) = self.dims();
        let plane = nx * ny;
        self.pattern.data()[t * plane..(t + 1) * plane]
            .iter()
            .filter(|&&v| v != 0.0)
            .count()
    }

    /// `nx * ny * nt / count(ones)`; infinite for an empty mask.
    pub fn achieved_acceleration(&self) -> f64 {
        self.pattern.len() as f64 / self.sampled_count() as f64
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::invalid(format!("acceleration must be >= 1, got {r}")));
    }
    Ok(())
}

/// Seeded Gaussian variable-density ky-t sampling with fully sampled readout.
/// The `center_lines` block around `ny / 2` is always sampled, shrunk to the
/// per-frame line budget when that is smaller.
pub fn make_vds_mask(
    nx: usize,
    ny: usize,
    nt: usize,
    r: f64,
    center_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    check_r(r)?;
    if center_lines == 0 {
        return Err(Error::invalid("center_lines must be >= 1"));
    }
    let lines = ((ny as f64 / r).round() as usize).clamp(1, ny);
    // the line budget wins over the requested center block
    if center_lines > lines {
        log::warn!("acceleration {r} leaves {lines} lines per frame; center block shrinks from {center_lines}");
    }
    let center_lines = center_lines.min(lines);
    let c = ny / 2;
    let first_center = c - center_lines / 2;
    let center: Vec<usize> = (first_center..first_center + center_lines).collect();
    let sigma = ny as f64 / 6.0;
    let candidates: Vec<usize> = (0..ny).filter(|ky| !center.contains(ky)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern = DenseTensor::zeros(&[nx, ny, nt])?;
    for t in 0..nt {
        let mut chosen = center.clone();
        let extra = lines - center_lines;
        if extra > 0 {
            let picked = candidates
                .choose_multiple_weighted(&mut rng, extra, |&ky| {
                    let d = ky as f64 - c as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .map_err(|e| Error::Internal(format!("weighted line draw failed: {e}")))?;
            chosen.extend(picked.copied());
        }
        for ky in chosen {
            for x in 0..nx {
                pattern.set(&[x, ky, t], 1.0);
            }
        }
    }
    SamplingMask::from_pattern(pattern, r, MaskKind::VariableDensity)
}

/// Marks the grid point nearest to `(px, py)` if it lies inside the grid.
fn mark(plane: &mut [f64], nx: usize, ny: usize, px: f64, py: f64) {
    let (x, y) = (px.round(), py.round());
    if x >= 0.0 && y >= 0.0 && (x as usize) < nx && (y as usize) < ny {
        plane[x as usize + nx * y as usize] = 1.0;
    }
}

// Golden-angle increments: diameters repeat every pi, spiral arms every 2 pi.
const GOLDEN_DIAMETER: f64 = PI * 0.618_033_988_749_894_8;
const GOLDEN_ARM: f64 = 2.0 * PI * (1.0 - 0.618_033_988_749_894_8);

/// Radial pattern from one continuous golden-angle spoke stream. Frame `t`
/// receives spokes `floor(t * s)..floor((t + 1) * s)` for `s` spokes per
/// frame on average; `s < 1` is raised to one spoke per frame.
pub fn pseudo_radial_with_spokes(nx: usize, ny: usize, nt: usize, spokes: f64) -> Result<DenseTensor> {
    if !(spokes > 0.0) || !spokes.is_finite() {
        return Err(Error::invalid(format!("spokes per frame must be positive, got {spokes}")));
    }
    let spokes = spokes.max(1.0);
    let mut pattern = DenseTensor::zeros(&[nx, ny, nt])?;
    let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
    let reach = (nx as f64).hypot(ny as f64) / 2.0 + 1.0;
    let steps = (2.0 * reach / 0.5).ceil() as i64;
    let plane = nx * ny;
    for t in 0..nt {
        let frame = &mut pattern.data_mut()[t * plane..(t + 1) * plane];
        let first = (t as f64 * spokes).floor() as usize;
        let last = ((t + 1) as f64 * spokes).floor() as usize;
        for j in first..last {
            let theta = j as f64 * GOLDEN_DIAMETER;
            let (dx, dy) = (theta.cos(), theta.sin());
            for s in -steps / 2..=steps / 2 {
                let d = s as f64 * 0.5;
                mark(frame, nx, ny, cx + d * dx, cy + d * dy);
            }
        }
    }
    Ok(pattern)
}

/// Archimedean spiral pattern: `arms` interleaves per frame, each making
/// `turns` revolutions out to the grid corner.
pub fn pseudo_spiral_with_turns(
    nx: usize,
    ny: usize,
    nt: usize,
    arms: usize,
    turns: f64,
) -> Result<DenseTensor> {
    let mut pattern = DenseTensor::zeros(&[nx, ny, nt])?;
    let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
    let kmax = (nx as f64).hypot(ny as f64) / 2.0;
    let arc = kmax * (1.0 + (2.0 * PI * turns).powi(2)).sqrt();
    let steps = (arc / 0.25).ceil().max(1.0) as usize;
    let plane = nx * ny;
    for t in 0..nt {
        let frame = &mut pattern.data_mut()[t * plane..(t + 1) * plane];
        let base = t as f64 * GOLDEN_ARM;
        for a in 0..arms {
            let phi0 = base + 2.0 * PI * a as f64 / arms as f64;
            for s in 0..=steps {
                let u = s as f64 / steps as f64;
                let rho = kmax * u;
                let phi = phi0 + 2.0 * PI * turns * u;
                mark(frame, nx, ny, cx + rho * phi.cos(), cy + rho * phi.sin());
            }
        }
    }
    Ok(pattern)
}

fn count_ones(t: &DenseTensor) -> usize {
    t.data().iter().filter(|&&v| v != 0.0).count()
}

/// Golden-angle pseudo-radial mask. The average spoke count per frame is
/// bisected so that the achieved acceleration matches `r` to within one
/// spoke over the whole series.
pub fn make_pseudo_radial_mask(nx: usize, ny: usize, nt: usize, r: f64, _seed: u64) -> Result<SamplingMask> {
    check_r(r)?;
    let total = (nx * ny * nt) as f64;
    let target = total / r;
    let count = |s: f64| pseudo_radial_with_spokes(nx, ny, nt, s).map(|p| count_ones(&p) as f64);
    let (mut lo, mut hi) = (1.0, 1.0);
    let limit = 16.0 * nx.max(ny) as f64;
    while count(hi)? < target && hi < limit {
        lo = hi;
        hi *= 2.0;
    }
    // one spoke in the whole series is the useful resolution
    while (hi - lo) * nt as f64 > 0.5 {
        let mid = 0.5 * (lo + hi);
        if count(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut best = (f64::INFINITY, lo, None);
    for s in [lo, hi] {
        let p = pseudo_radial_with_spokes(nx, ny, nt, s)?;
        let err = (total / count_ones(&p) as f64 - r).abs();
        if err < best.0 {
            best = (err, s, Some(p));
        }
    }
    log::debug!("pseudo-radial: {:.3} spokes per frame for r={r}", best.1);
    SamplingMask::from_pattern(best.2.expect("at least one candidate"), r, MaskKind::PseudoRadial)
}

/// Two-arm Archimedean pseudo-spiral mask with per-frame golden rotation.
/// The number of turns is bisected to match `r`.
pub fn make_pseudo_spiral_mask(nx: usize, ny: usize, nt: usize, r: f64, _seed: u64) -> Result<SamplingMask> {
    check_r(r)?;
    const ARMS: usize = 2;
    let total = (nx * ny * nt) as f64;
    let target = total / r;
    let count = |turns: f64| pseudo_spiral_with_turns(nx, ny, nt, ARMS, turns).map(|p| count_ones(&p));
    let (mut lo, mut hi) = (0.0_f64, 4.0 * nx.max(ny) as f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if (count(mid)? as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (plo, phi) = (
        pseudo_spiral_with_turns(nx, ny, nt, ARMS, lo)?,
        pseudo_spiral_with_turns(nx, ny, nt, ARMS, hi)?,
    );
    let err = |p: &DenseTensor| (total / count_ones(p) as f64 - r).abs();
    let pattern = if err(&plo) <= err(&phi) { plo } else { phi };
    SamplingMask::from_pattern(pattern, r, MaskKind::PseudoSpiral)
}

/// Dispatches on the mask kind. `center_lines` only applies to the
/// variable-density pattern.
pub fn make_mask(
    kind: MaskKind,
    nx: usize,
    ny: usize,
    nt: usize,
    r: f64,
    center_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    match kind {
        MaskKind::VariableDensity => make_vds_mask(nx, ny, nt, r, center_lines, seed),
        MaskKind::PseudoRadial => make_pseudo_radial_mask(nx, ny, nt, r, seed),
        MaskKind::PseudoSpiral => make_pseudo_spiral_mask(nx, ny, nt, r, seed),
    }
}
